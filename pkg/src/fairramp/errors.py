"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (CLI exit code 1);
runtime failures such as an unstable load or a stalled solver derive from
:class:`RuntimeFailure` (CLI exit code 2).
"""


class FairRampError(Exception):
    """Base class for all package errors."""


class ValidationError(FairRampError, ValueError):
    pass


class RankDeficient(ValidationError):
    pass


class EmptyRoute(ValidationError):
    pass


class NonpositiveCapacity(ValidationError):
    pass


class CapacityNotDecreasing(ValidationError):
    pass


class CapacityOrdering(ValidationError):
    pass


class CycleDetected(ValidationError):
    pass


class NotLinearNetwork(ValidationError):
    pass


class OutsideCone(ValidationError):
    """A workload vector lies outside the workload cone."""


class RuntimeFailure(FairRampError, RuntimeError):
    pass


class UnstableLoad(RuntimeFailure):
    """Load meets or exceeds capacity, so no stationary law exists."""


class SolverDiverged(RuntimeFailure):
    """The allocation solver hit its iteration cap before meeting KKT tolerance."""


class SingularGamma(RuntimeFailure):
    pass
