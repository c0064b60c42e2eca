from __future__ import annotations

import sys
from pathlib import Path

from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

# Derandomized so every run of the suite sees the same examples.
settings.register_profile(
    "fairramp", derandomize=True, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("fairramp")

_ACCEPTANCE_LINES: list = []


def record_acceptance(line: str) -> None:
    """Stores one acceptance verdict; all verdicts are printed at the end of the run."""
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: (int(s.split()[1].rstrip(":").split("-")[0]), s)):
            terminalreporter.write_line(line)
