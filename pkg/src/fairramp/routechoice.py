"""Parallel roads with route choice: virtual resources and delay-greedy sources.

Three parallel roads feed a fourth road that carries everything.  Source 1
must use line 1, source 2 may use lines 1 or 2, source 3 any of lines 1-3
and source 4 only line 4.  The freedom to choose turns partial sums of the
first three capacities into virtual resources ``C_bar = (C1, C1+C2,
C1+C2+C3, C4)`` with incidence ``A_bar`` lower triangular, which enlarges
the stability region beyond ``A rho < C``.

Metering is proportionally fair on the physical network and knows nothing
of the choices.  Lines are indexed from zero in code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import UnstableLoad, ValidationError
from .motorway import MotorwayResult, StationaryLaw, law_from_rates, simulate_motorway, trend_statistic
from .network import TrafficParams, parallel_roads_virtual
from .rng import SeedLike

__all__ = [
    "ChoiceModel",
    "EnlargedStabilityReport",
    "VirtualLaw",
    "RouteChoiceResult",
    "enlarged_stability",
    "zeta_params",
    "choose_line",
    "simulate_route_choice",
    "virtual_duals",
]

_N_LINES = 4


@dataclass(frozen=True)
class ChoiceModel:
    """Admissible lines per source, ties broken towards the lowest index."""

    choice_sets: tuple = ((0,), (0, 1), (0, 1, 2), (3,))
    tie_break: str = "lowest"

    def __post_init__(self):
        sets = tuple(tuple(sorted(int(k) for k in s)) for s in self.choice_sets)
        if len(sets) != _N_LINES:
            raise ValidationError(f"need {_N_LINES} choice sets, got {len(sets)}")
        for s in sets:
            if not s:
                raise ValidationError("every choice set must be nonempty")
            if s[0] < 0 or s[-1] >= _N_LINES:
                raise ValidationError(f"line index out of range in choice set {s}")
        if any(3 in s for s in sets[:3]) or sets[3] != (3,):
            raise ValidationError("line 4 must be reachable by source 4 only")
        if self.tie_break != "lowest":
            raise ValidationError("only the lowest-index tie break is supported")
        object.__setattr__(self, "choice_sets", sets)

    def matrix(self) -> np.ndarray:
        """Boolean sources x lines matrix of admissible lines."""
        out = np.zeros((_N_LINES, _N_LINES), dtype=bool)
        for s, lines in enumerate(self.choice_sets):
            out[s, list(lines)] = True
        return out


@dataclass(frozen=True)
class EnlargedStabilityReport:
    """Virtual margins ``C_bar - A_bar rho`` next to the physical margins."""

    margins: np.ndarray
    stable: bool
    physical_margins: np.ndarray
    physically_stable: bool

    @property
    def enlarged_only(self) -> bool:
        """Stable only because sources can choose their road."""
        return self.stable and not self.physically_stable


@dataclass(frozen=True)
class VirtualLaw:
    """Exponential virtual duals and the delay and line-size maps.

    ``mean_delay[i] = sum_{j >= i} 1/zeta_j`` and ``mean_m = rho * mean_delay``.
    """

    zeta: np.ndarray
    A_bar: np.ndarray
    C_bar: np.ndarray
    mean_delay: np.ndarray
    mean_m: np.ndarray
    var_delay: np.ndarray
    law: StationaryLaw = field(repr=False)


def _vectors(rho, C):
    rho = np.asarray(rho, dtype=float).reshape(-1)
    C = np.asarray(C, dtype=float).reshape(-1)
    if rho.size != _N_LINES or C.size != _N_LINES:
        raise ValidationError("route choice needs length-4 rho and C")
    if np.any(rho < 0) or np.any(C <= 0):
        raise ValidationError("need rho >= 0 and C > 0")
    return rho, C


def _virtual(C):
    A_bar = np.tril(np.ones((_N_LINES, _N_LINES)))
    C_bar = np.array([C[0], C[0] + C[1], C[0] + C[1] + C[2], C[3]])
    return A_bar, C_bar


def enlarged_stability(rho, C) -> EnlargedStabilityReport:
    """Prefix conditions ``sum_{i<=j} rho_i < sum_{i<=j} C_i`` (j = 1..3) and
    ``sum rho < C_4``, together with the physical conditions ``A rho < C``."""
    rho, C = _vectors(rho, C)
    A_bar, C_bar = _virtual(C)
    margins = C_bar - A_bar @ rho
    phys = C - np.array([rho[0], rho[1], rho[2], rho.sum()])
    return EnlargedStabilityReport(
        margins=margins,
        stable=bool(margins.min() > 0),
        physical_margins=phys,
        physically_stable=bool(phys.min() > 0),
    )


def zeta_params(rho, C, sigma2: float = 1.0, n_samples: int = 0, seed: SeedLike = 0) -> VirtualLaw:
    """Rates ``zeta = (2/sigma2)(C_bar - A_bar rho)`` of the virtual duals.

    Raises
    ------
    UnstableLoad
        If the enlarged stability condition fails.
    """
    if not (np.isfinite(sigma2) and sigma2 > 0):
        raise ValidationError("sigma2 must be positive")
    rep = enlarged_stability(rho, C)
    if not rep.stable:
        raise UnstableLoad(f"virtual margins {rep.margins.tolist()} are not all positive")
    rho, C = _vectors(rho, C)
    A_bar, C_bar = _virtual(C)
    zeta = 2.0 / sigma2 * rep.margins
    law = law_from_rates(A_bar, rho, zeta, n_samples, seed)
    return VirtualLaw(zeta, A_bar, C_bar, law.mean_delay, law.mean_m, law.var_delay, law)


def choose_line(choice_set: Sequence[int], d) -> int:
    """Admissible line with the least delay estimate; ties to the lowest index."""
    lines = sorted(int(k) for k in choice_set)
    if not lines:
        raise ValidationError("empty choice set")
    d = np.asarray(d, dtype=float)
    return min(lines, key=lambda k: (d[k], k))


def virtual_duals(rho, C, m) -> np.ndarray:
    """Virtual duals ``(A_bar [rho] A_bar')^-1 A_bar m``.

    A diagnostic: exact for states of the form ``m = [rho] A_bar' q``.
    """
    rho, C = _vectors(rho, C)
    A_bar, _ = _virtual(C)
    G = A_bar @ np.diag(rho) @ A_bar.T
    return np.linalg.solve(G, A_bar @ np.asarray(m, dtype=float).T).T


@dataclass
class RouteChoiceResult:
    """Simulation output plus the virtual-resource view of it."""

    result: MotorwayResult
    stability: EnlargedStabilityReport
    law: Optional[VirtualLaw]
    virtual_dual_of_mean: np.ndarray
    trend: tuple

    @property
    def mean_m(self) -> np.ndarray:
        return self.result.mean_m

    @property
    def mean_delay(self) -> np.ndarray:
        """Time-average nominal delays ``A_bar' Q_bar``."""
        return self.result.mean_D

    def summary(self) -> dict:
        out = self.result.summary()
        out["virtual_margins"] = self.stability.margins.tolist()
        out["physical_margins"] = self.stability.physical_margins.tolist()
        out["enlarged_only"] = self.stability.enlarged_only
        out["virtual_dual_of_mean_m"] = self.virtual_dual_of_mean.tolist()
        out["virtual_dual_note"] = "diagnostic: linear solve on time-averaged workloads"
        out["trend_slope"], out["trend_t"] = self.trend
        if self.law is not None:
            out["zeta"] = self.law.zeta.tolist()
            out["expected_delay"] = self.law.mean_delay.tolist()
        return out


def simulate_route_choice(
    params: TrafficParams,
    mode: str = "brownian",
    T: float = 1e3,
    h: float = 1e-3,
    seed: SeedLike = 0,
    *,
    C,
    model: Optional[ChoiceModel] = None,
    replications: int = 1,
    burn_in: float = 0.2,
    choose_by: str = "nominal",
    reflection: Optional[str] = None,
    record_every: Optional[int] = None,
) -> RouteChoiceResult:
    """Route choice under proportionally fair metering on the physical roads.

    Each arriving job (``jobs`` mode) or each source's whole Euler increment
    (``brownian`` mode) joins its admissible line with the least delay
    estimate.

    Parameters
    ----------
    choose_by : {"nominal", "pf"}
        ``"nominal"`` (default) compares nominal delays ``A_bar' Q_bar`` with
        ``Q_bar`` the virtual duals of the current lines, so a source starts
        to overflow exactly when the nominal delays of its lines meet.
        ``"pf"`` compares the physical ratios ``m_i / Lambda_i = q_i + q_4``.
    reflection : {"cone", "orthant"}, optional
        Brownian boundary behaviour.  The default ``"cone"`` keeps the
        virtual workload ``A_bar m`` in the virtual workload cone with the
        least idleness.
    """
    model = ChoiceModel() if model is None else model
    rho = params.rho
    net, vnet = parallel_roads_virtual(C)
    rep = enlarged_stability(rho, C)
    try:
        law = zeta_params(rho, C, params.sigma2)
    except UnstableLoad:
        law = None
    A_bar = vnet.A.astype(float)
    Kmap = np.linalg.pinv(A_bar @ np.diag(rho) @ A_bar.T) @ A_bar
    if reflection is None:
        reflection = "cone"
    res = simulate_motorway(
        net,
        params,
        policy="pf",
        mode=mode,
        T=T,
        h=h,
        seed=seed,
        replications=replications,
        burn_in=burn_in,
        record_every=record_every,
        choice=model.matrix(),
        dual_map=(Kmap, A_bar),
        reflection=reflection,
        cone_matrix=A_bar,
        choose_by=choose_by,
    )
    res.config["model"] = "route_choice"
    res.config["choice_sets"] = [list(s) for s in model.choice_sets]
    q_bar = Kmap @ res.mean_m
    slopes = [
        trend_statistic(r.records["t"], r.records["m"].sum(axis=1) if "m" in r.records else r.records["total"])
        for r in res.runs
    ]
    worst = max(slopes, key=lambda st: st[1])
    return RouteChoiceResult(res, rep, law, q_bar, worst)
