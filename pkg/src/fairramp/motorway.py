"""Controlled motorway: metering policies, line dynamics and stationary laws.

Lines of vehicles (measured in units of work) wait at entry points of a
road network; the metering policy sets the rate ``Lambda_i`` at which each
line is released.  Two arrival models are simulated:

* ``brownian``: the direct Brownian model, Euler steps of length ``h`` with
  inflow increments ``rho_i h + sqrt(rho_i) sigma sqrt(h) xi_i``.  Under the
  proportionally fair policy the workload is reflected back into the
  workload cone after each step (see ``reflection``); the priority policies
  clip lines at zero;
* ``jobs``: unit-work jobs arriving as Poisson processes of rate ``rho_i``,
  simulated event by event.

Nominal delays are computed from workloads: with ``w = A m`` the dual
vector is ``Q = (A [rho] A')^-1 w`` and the nominal delay of line ``i`` is
``(A' Q)_i``.  For states on the invariant manifold ``m = [rho] A' Q`` this
recovers ``Q`` exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import _kernels as K
from .allocation import CS_TOL, FEAS_TOL, KKT_TOL, MAX_ITER, allocate, rate_kernel
from .errors import NotLinearNetwork, UnstableLoad, ValidationError
from .network import Network, TrafficParams, is_linear, stability_margin, validate
from .rng import SeedLike, make_rng, spawn_seeds

__all__ = [
    "POLICIES",
    "MODES",
    "StationaryLaw",
    "MotorwayRun",
    "MotorwayResult",
    "brownian_inflows",
    "pf_rates",
    "upstream_priority_rates",
    "downstream_priority_rates",
    "simulate_motorway",
    "stationary_law",
    "law_from_rates",
    "nominal_delays",
    "empirical_dual_map",
    "collapsed_network",
    "first_strategy_cone_check",
    "trend_statistic",
    "dominance_gap",
    "poisson_arrivals",
]

POLICIES = {
    "pf": K.POLICY_PF,
    "upstream": K.POLICY_UPSTREAM,
    "downstream": K.POLICY_DOWNSTREAM,
}
MODES = ("brownian", "jobs")
_POLICY_ALIASES = {
    "proportional_fair": "pf",
    "upstream_priority": "upstream",
    "downstream_priority": "downstream",
    "poisson_jobs": "jobs",
}


def _canon(name: str) -> str:
    return _POLICY_ALIASES.get(name, name)


# ---------------------------------------------------------------------------
# rates


def brownian_inflows(params: TrafficParams, h: float, rng: np.random.Generator) -> np.ndarray:
    """One step of inflow: ``rho_i h + sqrt(rho_i) sigma sqrt(h) xi_i``.

    Increments can be negative; the dynamics reflect line sizes back into the
    state space.
    """
    if h <= 0:
        raise ValidationError("h must be positive")
    rho = params.rho
    return rho * h + np.sqrt(rho * params.sigma2 * h) * rng.standard_normal(rho.size)


def pf_rates(net: Network, m):
    """Proportionally fair metering rates, duals and delay estimates ``A'q``."""
    alloc = allocate(net, m)
    return alloc.lam, alloc.q, net.A.T @ alloc.q


def _require_linear(net: Network) -> None:
    if not is_linear(net):
        raise NotLinearNetwork(f"policy defined only for the linear road, got {net.name!r}")


def upstream_priority_rates(net: Network, m, inflow_rate_bound=0.0) -> np.ndarray:
    """Greedy cascade that serves upstream entry points first.

    Line ``J`` gets ``C_J``; line ``j`` gets what is left of ``C_j``.  An
    empty line receives ``min(cascade bound, inflow_rate_bound_j)``, the
    rate at which work is currently arriving to it.
    """
    _require_linear(net)
    m = np.asarray(m, dtype=float)
    allowance = np.broadcast_to(np.asarray(inflow_rate_bound, dtype=float), m.shape).copy()
    lam = np.zeros(net.I)
    K.upstream_rates(net.C, m, allowance, lam)
    return lam


def downstream_priority_rates(net: Network, m) -> np.ndarray:
    """The lowest-indexed nonempty line gets its section capacity, others zero."""
    _require_linear(net)
    lam = np.zeros(net.I)
    K.downstream_rates(net.C, np.asarray(m, dtype=float), lam)
    return lam


def nominal_delays(net: Network, q) -> np.ndarray:
    """``A' q``."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValidationError("dual variables must be non-negative")
    return net.A.T @ q


def empirical_dual_map(net: Network, rho) -> np.ndarray:
    """Matrix ``(A [rho] A')^+ A`` taking line sizes to dual estimates."""
    A = net.A.astype(float)
    G = A @ np.diag(np.asarray(rho, dtype=float)) @ A.T
    return np.linalg.pinv(G) @ A


# ---------------------------------------------------------------------------
# stationary law


@dataclass(frozen=True)
class StationaryLaw:
    """Independent exponential duals ``Q_j ~ Exp(zeta_j)`` and the linear maps
    ``D = A' Q`` (nominal delays) and ``M = [rho] A' Q`` (line sizes)."""

    zeta: np.ndarray
    A: np.ndarray
    rho: np.ndarray
    mean_q: np.ndarray
    mean_delay: np.ndarray
    var_delay: np.ndarray
    mean_m: np.ndarray
    var_m: np.ndarray
    quantiles: dict = field(default_factory=dict)

    def sample_duals(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.exponential(1.0 / self.zeta, size=(int(n), self.zeta.size))

    def sample_delays(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_duals(n, rng) @ self.A

    def sample_lines(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_delays(n, rng) * self.rho


def law_from_rates(A, rho, zeta, n_samples: int = 0, seed: SeedLike = 0, probs=(0.5, 0.9, 0.99)) -> StationaryLaw:
    A = np.asarray(A, dtype=float)
    rho = np.asarray(rho, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    mean_q = 1.0 / zeta
    mean_d = A.T @ mean_q
    var_d = A.T @ (mean_q**2)
    quant = {}
    law = StationaryLaw(zeta, A, rho, mean_q, mean_d, var_d, rho * mean_d, rho**2 * var_d, quant)
    if n_samples > 0:
        D = law.sample_delays(n_samples, make_rng(seed))
        for p in probs:
            quant[f"delay_q{p:g}"] = np.quantile(D, p, axis=0)
            quant[f"m_q{p:g}"] = np.quantile(D * rho, p, axis=0)
    return law


def stationary_law(
    net: Network, params: TrafficParams, n_samples: int = 0, seed: SeedLike = 0
) -> StationaryLaw:
    """Exponential stationary duals with rates ``zeta_j = (2/sigma2)(C_j - (A rho)_j)``.

    ``n_samples > 0`` adds Monte Carlo quantiles of delays and line sizes.

    Raises
    ------
    UnstableLoad
        If some ``zeta_j <= 0``.
    """
    rep = stability_margin(net, params)
    if not rep.stable:
        raise UnstableLoad(f"stability margins {rep.margins.tolist()} are not all positive")
    zeta = 2.0 / params.sigma2 * rep.margins
    return law_from_rates(net.A, params.rho, zeta, n_samples, seed)


def collapsed_network(net: Network, j: int) -> Network:
    """Drop resource ``j`` (zero-based) of a linear road, as if that section
    had unlimited capacity."""
    _require_linear(net)
    if not 0 <= j < net.J:
        raise ValidationError(f"resource index {j} out of range for J={net.J}")
    keep = [k for k in range(net.J) if k != j]
    return validate(net.A[keep], net.C[keep], name=f"{net.name}-collapsed{j}")


def first_strategy_cone_check(w, tol: float = 0.0) -> bool:
    """``0 <= w_J <= ... <= w_1``."""
    w = np.asarray(w, dtype=float)
    return bool(w.size == 0 or (w[-1] >= -tol and np.all(np.diff(w) <= tol)))


# ---------------------------------------------------------------------------
# simulation


@dataclass
class MotorwayRun:
    """One replication.  Time averages exclude the burn-in period."""

    seed_key: tuple
    mean_m: np.ndarray
    mean_lam: np.ndarray
    mean_q: np.ndarray
    mean_d: np.ndarray
    mean_Q: np.ndarray
    mean_D: np.ndarray
    utilization: np.ndarray
    unused: np.ndarray
    counters: dict
    records: dict
    events: dict = field(default_factory=dict)


@dataclass
class MotorwayResult:
    policy: str
    mode: str
    config: dict
    runs: list

    def _avg(self, name):
        return np.mean([getattr(r, name) for r in self.runs], axis=0)

    @property
    def mean_m(self):
        return self._avg("mean_m")

    @property
    def mean_lam(self):
        return self._avg("mean_lam")

    @property
    def mean_q(self):
        return self._avg("mean_q")

    @property
    def mean_d(self):
        return self._avg("mean_d")

    @property
    def mean_Q(self):
        return self._avg("mean_Q")

    @property
    def mean_D(self):
        return self._avg("mean_D")

    @property
    def utilization(self):
        return self._avg("utilization")

    def dual_samples(self, burn_in: bool = True) -> np.ndarray:
        """Recorded empirical duals ``Q`` from all replications, after burn-in."""
        t0 = self.config.get("burn_in_time", 0.0) if burn_in else -np.inf
        out = [r.records["Q"][r.records["t"] >= t0] for r in self.runs]
        return np.concatenate(out) if out else np.empty((0, 0))

    def summary(self) -> dict:
        out = {
            "policy": self.policy,
            "mode": self.mode,
            "replications": len(self.runs),
            "mean_m": self.mean_m.tolist(),
            "mean_total_m": float(self.mean_m.sum()),
            "mean_lambda": self.mean_lam.tolist(),
            "mean_q_pf": self.mean_q.tolist(),
            "mean_d_pf": self.mean_d.tolist(),
            "mean_dual_from_workload": self.mean_Q.tolist(),
            "mean_nominal_delay": self.mean_D.tolist(),
            "utilization": self.utilization.tolist(),
            "counters": [r.counters for r in self.runs],
            "config": self.config,
        }
        if self.mode == "jobs":
            out["mean_realised_delay"] = np.nanmean(
                [r.events["mean_realised_delay"] for r in self.runs], axis=0
            ).tolist()
        return out


def _cone_data(net: Network, rho, cone_matrix):
    B = net.A.astype(float) if cone_matrix is None else np.asarray(cone_matrix, dtype=float)
    line_rho = rho if rho.size == net.I else np.ones(net.I)
    if np.any(line_rho <= 0):
        raise ValidationError("cone reflection needs a positive load on every line")
    G = B @ np.diag(line_rho) @ B.T
    try:
        Minv = np.linalg.inv(G)
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise ValidationError("cone matrix B [rho] B' is singular") from exc
    P = np.diag(line_rho) @ B.T
    return np.ascontiguousarray(B), np.ascontiguousarray(Minv), np.ascontiguousarray(P)


def _choice_identity(I: int) -> np.ndarray:
    return np.eye(I, dtype=np.bool_)


def _laminar(net: Network) -> bool:
    sets = [frozenset(np.flatnonzero(row)) for row in net.A]
    return all(a <= b or b <= a or not (a & b) for a in sets for b in sets)


def poisson_arrivals(rates, T: float, rng: np.random.Generator):
    """Merged Poisson stream on ``[0, T)``: arrival times and source labels."""
    rates = np.asarray(rates, dtype=float)
    total = float(rates.sum())
    if total <= 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    n = rng.poisson(total * T)
    t = np.sort(rng.uniform(0.0, T, n))
    src = rng.choice(rates.size, size=n, p=rates / total).astype(np.int64)
    return t, src


def _brownian_run(
    net, kind, policy, rho, sd, h, T, burn_in, choice, Kmap, Ad, m0, rng, record_every, chunk, cone,
    choose_nominal=False,
):
    J, I = net.A.shape
    A = net.A.astype(float)
    C = np.ascontiguousarray(net.C, dtype=float)
    S = rho.size
    n_steps = int(round(T / h))
    n_burn = int(round(burn_in * n_steps))
    if record_every is None:
        record_every = max(1, n_steps // 100_000)
    cap = n_steps // record_every + 2
    JQ = Kmap.shape[0]
    rec = {
        "t": np.empty(cap),
        "m": np.empty((cap, I)),
        "lam": np.empty((cap, I)),
        "q": np.empty((cap, J)),
        "d": np.empty((cap, I)),
        "u": np.empty((cap, J)),
        "Q": np.empty((cap, JQ)),
        "D": np.empty((cap, I)),
    }
    rec_count = np.zeros(1, dtype=np.int64)
    acc = np.zeros((6, max(I, J, JQ)))
    scratch = np.zeros_like(acc)
    u = np.zeros(J)
    u_at_burn = np.zeros(J)
    counters = np.zeros(4, dtype=np.int64)
    m = np.array(m0, dtype=float)
    q = np.zeros(J)
    if cone is None:
        reflect, B, Minv, P = 0, np.zeros((1, I)), np.eye(1), np.zeros((I, 1))
    else:
        reflect, B, Minv, P = 1, *cone
    done = 0
    while done < n_steps:
        if done < n_burn:
            n = min(chunk, n_burn - done)
            target = scratch
        else:
            n = min(chunk, n_steps - done)
            target = acc
        xi = rng.standard_normal((n, S))
        K.brownian_chunk(
            kind, policy, A, C, rho, sd, h, choice, Kmap, Ad,
            m, q, xi, done * h, record_every, done, KKT_TOL, MAX_ITER,
            rec["t"], rec["m"], rec["lam"], rec["q"], rec["d"], rec["u"], rec["Q"], rec["D"], rec_count,
            target, u, counters, reflect, B, Minv, P, choose_nominal,
        )
        done += n
        if done == n_burn:
            u_at_burn = u.copy()
    nrec = int(rec_count[0])
    records = {k: v[:nrec] for k, v in rec.items()}
    span = (n_steps - n_burn) * h
    means = acc / span if span > 0 else acc * np.nan
    unused = u - u_at_burn
    return dict(
        mean_m=means[0, :I].copy(),
        mean_lam=means[1, :I].copy(),
        mean_q=means[2, :J].copy(),
        mean_d=means[3, :I].copy(),
        mean_Q=means[4, :JQ].copy(),
        mean_D=means[5, :I].copy(),
        utilization=1.0 - unused / (C * span) if span > 0 else np.full(J, np.nan),
        unused=unused.copy(),
        counters={
            "feasibility_violations": int(counters[0]),
            "face_violations": int(counters[1]),
            "solver_failures": int(counters[2]),
            "reflection_steps": int(counters[3]),
        },
        records=records,
    )


def _jobs_run(
    net, kind, policy, rho, T, burn_in, choice, Kmap, Ad, m0, rng, max_dt, record_segments, choose_nominal=False,
    record_states=False,
):
    J, I = net.A.shape
    A = net.A.astype(float)
    C = np.ascontiguousarray(net.C, dtype=float)
    arr_t, arr_src = poisson_arrivals(rho, T, rng)
    n = arr_t.size
    JQ = Kmap.shape[0]
    ev_t = np.empty(n)
    ev_total = np.empty(n)
    ev_line = np.empty(n, dtype=np.int64)
    delays = np.full(n, np.nan)
    delay_line = np.empty(n, dtype=np.int64)
    u = np.zeros(J)
    counters = np.zeros(3, dtype=np.int64)
    seg_cap = (n * (I + 2) + 2) if record_segments else 0
    seg_t = np.empty(seg_cap)
    seg_g = np.empty(seg_cap)
    seg_count = np.zeros(1, dtype=np.int64)
    acc = np.zeros((3, max(I, JQ)))
    ns = n if record_states else 0
    ev_m = np.zeros((ns, I))
    ev_lam = np.zeros((ns, I))
    ev_q = np.zeros((ns, J))
    ev_u = np.zeros((ns, J))
    m = np.array(m0, dtype=float)
    ch = choice if choice is not None else np.zeros((0, I), dtype=np.bool_)
    t_burn = burn_in * T
    # the kernel integrates over [0, T]; run burn-in and main period
    # separately so averages exclude the transient exactly
    split = np.searchsorted(arr_t, t_burn)
    acc_burn = np.zeros_like(acc)
    u_burn = np.zeros(J)
    K.jobs_run(
        kind, policy, A, C, ch, Kmap, Ad, arr_t[:split], arr_src[:split], 1.0, t_burn,
        max_dt, KKT_TOL, MAX_ITER, m,
        ev_t[:split], ev_total[:split], ev_line[:split], acc_burn, u_burn,
        delays[:split], delay_line[:split], counters,
        seg_t, seg_g, seg_count, choose_nominal,
        ev_m[:split], ev_lam[:split], ev_q[:split], ev_u[:split],
    )
    n1 = int(seg_count[0])
    # continue from t_burn: shift the clock so the kernel starts at zero
    rest_t = arr_t[split:] - t_burn
    sub_delays = np.full(n - split, np.nan)
    seg_t2 = np.empty(max(seg_cap - n1, 0))
    seg_g2 = np.empty_like(seg_t2)
    seg_count2 = np.zeros(1, dtype=np.int64)
    K.jobs_run(
        kind, policy, A, C, ch, Kmap, Ad, rest_t, arr_src[split:], 1.0, T - t_burn,
        max_dt, KKT_TOL, MAX_ITER, m,
        ev_t[split:], ev_total[split:], ev_line[split:], acc, u,
        sub_delays, delay_line[split:], counters,
        seg_t2, seg_g2, seg_count2, choose_nominal,
        ev_m[split:], ev_lam[split:], ev_q[split:], ev_u[split:],
    )
    if record_states:
        # the main period starts its own idleness count at zero
        ev_u[split:] += u_burn
    ev_t[split:] += t_burn
    delays[split:] = sub_delays
    n2 = int(seg_count2[0])
    seg = None
    if record_segments:
        seg_t = np.concatenate((seg_t[:n1], seg_t2[:n2] + t_burn))
        seg_g = np.concatenate((seg_g[:n1], seg_g2[:n2] - split))
        seg = (seg_t, seg_g)
    span = T - t_burn
    means = acc / span
    realised = np.full(I, np.nan)
    ok = np.isfinite(delays)
    post = ok & (arr_t >= t_burn)
    for i in range(I):
        sel = post & (delay_line == i)
        if sel.any():
            realised[i] = delays[sel].mean()
    mean_m = means[0, :I].copy()
    return dict(
        mean_m=mean_m,
        mean_lam=np.full(I, np.nan),
        mean_q=np.full(J, np.nan),
        mean_d=np.full(I, np.nan),
        mean_Q=means[2, :JQ].copy(),
        mean_D=means[1, :I].copy(),
        utilization=1.0 - u / (C * span),
        unused=u.copy(),
        counters={
            "feasibility_violations": int(counters[0]),
            "face_violations": 0,
            "solver_failures": int(counters[2]),
        },
        records=dict(
            {"t": ev_t, "total": ev_total, "line": ev_line},
            **({"m": ev_m, "lam": ev_lam, "q": ev_q, "d": ev_q @ A, "u": ev_u} if record_states else {}),
        ),
        events={
            "arrival_times": arr_t,
            "sources": arr_src,
            "segments": seg,
            "realised_delays": delays,
            "delay_line": delay_line,
            "mean_realised_delay": realised,
        },
    )


def simulate_motorway(
    net: Network,
    params: TrafficParams,
    policy: str = "pf",
    mode: str = "brownian",
    T: float = 1e3,
    h: float = 1e-3,
    seed: SeedLike = 0,
    replications: int = 1,
    burn_in: float = 0.2,
    m0=None,
    record_every: Optional[int] = None,
    record_segments: bool = False,
    max_dt: Optional[float] = None,
    choice=None,
    dual_map=None,
    reflection: Optional[str] = None,
    cone_matrix=None,
    choose_by: str = "pf",
    chunk: int = 1 << 16,
    record_states: bool = False,
) -> MotorwayResult:
    """Simulate metered lines on ``net`` under one policy.

    Parameters
    ----------
    policy : {"pf", "upstream", "downstream"}
        Priority policies need the linear road.
    mode : {"brownian", "jobs"}
    T, h : float
        Horizon and Euler step (``h`` unused in jobs mode).
    seed : int or SeedSequence
        Replication ``k`` uses child ``k`` of ``SeedSequence(seed)``; in jobs
        mode the arrival stream depends only on that child and ``rho``, so
        two policies run with the same seed see identical arrivals.
    choice : bool array (sources x lines), optional
        Admissible lines per source.  Each arrival (or Brownian increment)
        joins the admissible line with the least delay estimate ``A'q``,
        ties to the lowest index.  Default: source ``i`` feeds line ``i``.
    choose_by : {"pf", "nominal"}
        Delay estimate used by choosing sources: the proportionally fair
        ``A'q`` or the workload-based nominal delay ``Ad' Kmap m``.
    dual_map : (Kmap, Ad), optional
        Empirical dual ``Q = Kmap m`` and nominal delay ``Ad' Q``; defaults
        to the workload-based map of :func:`empirical_dual_map`.
    reflection : {"cone", "orthant"}, optional
        Boundary behaviour in brownian mode.  ``"cone"`` (the default for
        the proportionally fair policy) is the Brownian network model: after
        each Euler step the workload ``A m`` is returned to the workload cone
        ``A [rho] A' R_+`` with the least idleness, so a resource loses
        utilization only on its face of the cone.  ``"orthant"`` (the only
        choice for the priority policies) just clips each line at zero.
    cone_matrix : array, optional
        Matrix ``B`` whose workload ``B m`` is reflected in cone mode;
        defaults to ``A``.  Route choice passes the virtual-resource matrix.
    record_states : bool
        Jobs mode only: store line sizes, rates, duals and cumulative unused
        capacity just after every arrival (otherwise only totals).
    max_dt : float, optional
        Longest interval without recomputing rates in jobs mode.  Rates are
        constant between events when the resources' route sets are nested
        or disjoint (linear road, trees, parallel roads), so the default is
        exact (0 = no cap) there, and 0.01 otherwise.
    """
    policy = _canon(policy)
    mode = _canon(mode)
    if policy not in POLICIES:
        raise ValidationError(f"unknown policy {policy!r}; expected one of {sorted(POLICIES)}")
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}")
    if choose_by not in ("pf", "nominal"):
        raise ValidationError(f"unknown choose_by {choose_by!r}; expected 'pf' or 'nominal'")
    if policy != "pf":
        _require_linear(net)
    if mode == "brownian" and not h > 0:
        raise ValidationError("h must be positive in brownian mode")
    if not T > 0:
        raise ValidationError("T must be positive")
    rho = np.ascontiguousarray(params.rho, dtype=float)
    if choice is None:
        if rho.size != net.I:
            raise ValidationError(f"traffic has {rho.size} sources, network has {net.I} lines")
        choice_arr = _choice_identity(net.I)
    else:
        choice_arr = np.ascontiguousarray(np.asarray(choice, dtype=np.bool_))
        if choice_arr.shape != (rho.size, net.I) or not choice_arr.any(axis=1).all():
            raise ValidationError("choice must be a sources x lines boolean matrix with a line per source")
    if choice is None:
        rep = stability_margin(net, params)
        if not rep.stable:
            warnings.warn(f"load violates capacity: margins {rep.margins.tolist()}", RuntimeWarning, stacklevel=2)
    if dual_map is None:
        Kmap = empirical_dual_map(net, rho if rho.size == net.I else np.ones(net.I))
        Ad = net.A.astype(float)
    else:
        Kmap, Ad = (np.ascontiguousarray(x, dtype=float) for x in dual_map)
    m0 = np.zeros(net.I) if m0 is None else np.asarray(m0, dtype=float)
    if reflection is None:
        reflection = "cone" if policy == "pf" else "orthant"
    if reflection not in ("cone", "orthant"):
        raise ValidationError(f"unknown reflection {reflection!r}; expected 'cone' or 'orthant'")
    if reflection == "cone" and policy != "pf":
        raise ValidationError("cone reflection is defined for the proportionally fair policy only")
    cone = None
    if mode == "brownian" and reflection == "cone":
        cone = _cone_data(net, rho, cone_matrix)
    kind = rate_kernel(net)
    pol = POLICIES[policy]
    if max_dt is None:
        max_dt = 0.0 if _laminar(net) else 0.01
    sd = np.sqrt(rho * params.sigma2 * h)
    runs = []
    for k, ss in enumerate(spawn_seeds(seed, replications)):
        rng = make_rng(ss)
        if mode == "brownian":
            out = _brownian_run(
                net, kind, pol, rho, sd, h, T, burn_in, choice_arr, Kmap, Ad, m0, rng, record_every, chunk, cone,
                choose_by == "nominal",
            )
        else:
            out = _jobs_run(
                net, kind, pol, rho, T, burn_in,
                choice_arr if choice is not None else None,
                Kmap, Ad, m0, rng, max_dt, record_segments, choose_by == "nominal", record_states,
            )
        runs.append(MotorwayRun(seed_key=tuple(ss.spawn_key), **out))
    config = {
        "network": {"A": net.A.tolist(), "C": net.C.tolist(), "name": net.name},
        "rho": rho.tolist(),
        "sigma2": params.sigma2,
        "policy": policy,
        "mode": mode,
        "T": T,
        "h": h if mode == "brownian" else None,
        "reflection": reflection if mode == "brownian" else None,
        "choose_by": choose_by if choice is not None else None,
        "burn_in": burn_in,
        "burn_in_time": burn_in * T,
        "replications": replications,
        "seed": None if isinstance(seed, np.random.SeedSequence) else seed,
    }
    return MotorwayResult(policy=policy, mode=mode, config=config, runs=runs)


# ---------------------------------------------------------------------------
# trend and dominance diagnostics


def trend_statistic(t, y, last_fraction: float = 0.5, n_blocks: int = 50):
    """Least-squares slope of ``y`` on ``t`` over the final part of a run.

    The last ``last_fraction`` of the time span is cut into ``n_blocks``
    equal-length blocks; the slope is fitted to the block means, which are
    close to independent when blocks are long, so the usual regression
    t-statistic is meaningful.  Returns ``(slope, t_stat)``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    t0 = t[0] + (1.0 - last_fraction) * (t[-1] - t[0])
    edges = np.linspace(t0, t[-1], n_blocks + 1)
    k = np.digitize(t, edges) - 1
    sel = (k >= 0) & (k < n_blocks)
    cnt = np.bincount(k[sel], minlength=n_blocks)
    ok = cnt > 0
    ym = np.bincount(k[sel], weights=y[sel], minlength=n_blocks)[ok] / cnt[ok]
    tm = np.bincount(k[sel], weights=t[sel], minlength=n_blocks)[ok] / cnt[ok]
    fit = stats.linregress(tm, ym)
    if fit.stderr == 0:
        return float(fit.slope), float(np.inf if fit.slope > 0 else -np.inf if fit.slope < 0 else 0.0)
    return float(fit.slope), float(fit.slope / fit.stderr)


def dominance_gap(run_a: MotorwayRun, run_b: MotorwayRun) -> float:
    """Largest value of ``sum(m_a) - sum(m_b)`` over the whole path.

    Both runs must come from jobs mode with ``record_segments=True`` and the
    same arrivals.  The difference is continuous and piecewise linear with
    kinks only at the recorded breakpoints, so evaluating it at the union of
    breakpoints is exact.
    """
    ta, ga = run_a.events["segments"]
    tb, gb = run_b.events["segments"]
    grid = np.union1d(ta, tb)
    return float(np.max(np.interp(grid, ta, ga) - np.interp(grid, tb, gb)))
