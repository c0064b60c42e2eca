"""Connection-level model: exact CTMC, fluid model and stationary approximation.

Connections on route ``i`` arrive as a Poisson process of rate ``nu_i`` and
bring exponential work of mean ``1/mu_i``; bandwidth is shared
proportionally fairly, so the count ``n_i`` falls at rate ``mu_i
Lambda_i(n)``.  The workload is ``w = A [mu]^-1 n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .allocation import KKT_TOL, MAX_ITER, allocate, lift_delta_qp, rate_kernel
from .errors import SolverDiverged, UnstableLoad, ValidationError
from .network import Network, TrafficParams, stability_margin
from .queue import batch_means
from .rng import SeedLike, make_rng

__all__ = [
    "ApproxLaw",
    "CTMCResult",
    "FluidResult",
    "workload_of",
    "approx_stationary",
    "simulate_ctmc",
    "integrate_fluid",
    "lift_many",
    "lyapunov_gap",
]


def _check_params(net: Network, params: TrafficParams) -> None:
    if params.I != net.I:
        raise ValidationError(f"traffic has {params.I} routes, network has {net.I}")


def workload_of(net: Network, params: TrafficParams, n) -> np.ndarray:
    """``w = A [mu]^-1 n``; ``n`` may be a single state or a stack of states."""
    _check_params(net, params)
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise ValidationError("occupancies must be non-negative")
    return (n / params.mu) @ net.A.T.astype(float)


# ---------------------------------------------------------------------------
# stationary approximation


@dataclass(frozen=True)
class ApproxLaw:
    """Independent duals ``Q_j ~ Exp(C_j - (A rho)_j)`` and ``N = [rho] A' Q``."""

    exp_rates: np.ndarray
    A: np.ndarray
    rho: np.ndarray
    mean_q: np.ndarray
    mean_n: np.ndarray
    var_n: np.ndarray

    def map_duals(self, q) -> np.ndarray:
        """``n = [rho] A' q`` for one or many dual vectors."""
        return (np.asarray(q, dtype=float) @ self.A) * self.rho

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        q = rng.exponential(1.0 / self.exp_rates, size=(int(size), self.exp_rates.size))
        return self.map_duals(q)


def approx_stationary(net: Network, params: TrafficParams) -> ApproxLaw:
    """Heavy-traffic approximation to the stationary number of connections.

    Raises
    ------
    UnstableLoad
        If some margin ``C_j - (A rho)_j`` is not positive.
    """
    rep = stability_margin(net, params)
    if not rep.stable:
        raise UnstableLoad(f"stability margins {rep.margins.tolist()} are not all positive")
    A = net.A.astype(float)
    rho = params.rho
    rates = rep.margins
    mean_q = 1.0 / rates
    return ApproxLaw(
        exp_rates=rates,
        A=A,
        rho=rho,
        mean_q=mean_q,
        mean_n=rho * (A.T @ mean_q),
        var_n=rho**2 * (A.T @ mean_q**2),
    )


# ---------------------------------------------------------------------------
# CTMC


@dataclass
class CTMCResult:
    """Gillespie path and time averages over the post-burn-in period."""

    times: np.ndarray
    n: np.ndarray
    w: np.ndarray
    lam: np.ndarray
    mean_n: np.ndarray
    std_err_n: np.ndarray
    mean_w: np.ndarray
    burn_in_time: float
    collapse_residual: float
    cache_size: int
    config: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "mean_n": self.mean_n.tolist(),
            "std_err_n": self.std_err_n.tolist(),
            "mean_w": self.mean_w.tolist(),
            "burn_in_time": self.burn_in_time,
            "end_time": float(self.times[-1]),
            "collapse_residual": self.collapse_residual,
            "distinct_states": self.cache_size,
            "config": self.config,
        }


def simulate_ctmc(
    net: Network,
    params: TrafficParams,
    T_events: int,
    seed: SeedLike,
    n0=None,
    burn_in: float = 0.2,
    n_batches: int = 50,
) -> CTMCResult:
    """Exact simulation of the connection-level chain.

    Arrivals on route ``i`` occur at rate ``nu_i``, departures at rate
    ``mu_i Lambda_i(n)``.  Allocations are cached per visited state.  The
    first ``burn_in`` fraction of events is excluded from the averages.

    The collapse residual is the time average of
    ``|n - [rho] A' q(n)| / |n|`` over nonempty states, with ``q(n)`` the
    allocation duals: small values mean the chain stays near the invariant
    manifold.
    """
    _check_params(net, params)
    T_events = int(T_events)
    if T_events < 1:
        raise ValidationError("T_events must be at least 1")
    if not 0.0 <= burn_in < 1.0:
        raise ValidationError("burn_in must lie in [0, 1)")
    rng = make_rng(seed)
    I = net.I
    nu, mu, rho = params.nu, params.mu, params.rho
    A = net.A
    n = np.zeros(I, dtype=np.int64) if n0 is None else np.array(n0, dtype=np.int64)
    if n.shape != (I,) or np.any(n < 0):
        raise ValidationError("n0 must be a non-negative integer vector of length I")
    times = np.empty(T_events + 1)
    path = np.empty((T_events + 1, I), dtype=np.int64)
    lams = np.empty((T_events + 1, I))
    resid = np.empty(T_events + 1)
    expo = rng.standard_exponential(T_events)
    unif = rng.random(T_events)
    cache: dict = {}
    step = np.eye(I, dtype=np.int64)
    t = 0.0
    for k in range(T_events + 1):
        key = n.tobytes()
        ent = cache.get(key)
        if ent is None:
            alloc = allocate(net, n)
            cum = np.cumsum(np.concatenate((nu, mu * alloc.lam)))
            nrm = float(np.linalg.norm(n))
            r = float(np.linalg.norm(n - rho * (A.T @ alloc.q))) / nrm if nrm > 0 else 0.0
            ent = (cum, alloc.lam, r)
            cache[key] = ent
        cum, lam, r = ent
        times[k] = t
        path[k] = n
        lams[k] = lam
        resid[k] = r
        if k == T_events:
            break
        total = cum[-1]
        if total <= 0.0:
            times[k + 1 :] = np.inf
            path[k + 1 :] = n
            lams[k + 1 :] = lam
            resid[k + 1 :] = r
            break
        t += expo[k] / total
        e = int(np.searchsorted(cum, unif[k] * total, side="right"))
        e = min(e, 2 * I - 1)
        if e < I:
            n = n + step[e]
        else:
            n = n - step[e - I]
    n_burn = int(burn_in * T_events)
    # an absorbed chain (no events possible) has infinite times past the
    # absorption; statistics use the finite part
    fin = int(np.count_nonzero(np.isfinite(times)))
    n_burn = min(n_burn, fin - 1)
    t0, t1 = times[n_burn], times[fin - 1]
    w = (path / mu) @ A.T.astype(float)
    if t1 > t0:
        tf = times[:fin]
        stats = [batch_means(tf, path[:fin, i], t0, t1, n_batches) for i in range(I)]
        mean_n = np.array([s[0] for s in stats])
        se_n = np.array([s[1] for s in stats])
        mean_w = np.array([batch_means(tf, w[:fin, j], t0, t1, n_batches)[0] for j in range(net.J)])
        collapse = batch_means(tf, resid[:fin], t0, t1, n_batches)[0]
    else:
        mean_n = path[fin - 1].astype(float)
        se_n = np.zeros(I)
        mean_w = w[fin - 1].copy()
        collapse = float(resid[fin - 1])
    config = {
        "network": {"A": net.A.tolist(), "C": net.C.tolist(), "name": net.name},
        "nu": nu.tolist(),
        "mu": mu.tolist(),
        "T_events": T_events,
        "burn_in": burn_in,
        "seed": None if isinstance(seed, np.random.SeedSequence) else seed,
    }
    return CTMCResult(times, path, w, lams, mean_n, se_n, mean_w, float(t0), float(collapse), len(cache), config)


# ---------------------------------------------------------------------------
# fluid model


def _qp_active_sets(G: np.ndarray, w: np.ndarray):
    """Solve ``min q'Gq - 2 q'w`` over ``q >= 0`` row by row by trying every
    support set.  The problem is strictly convex, so the first set meeting
    the KKT conditions gives the optimum."""
    J = G.shape[0]
    best = np.full(w.shape, np.nan)
    found = np.zeros(w.shape[0], dtype=bool)
    scale = 1e-10 * (1.0 + np.abs(w).max(axis=1))[:, None]
    for mask in range(1 << J):
        S = [j for j in range(J) if mask >> j & 1]
        q = np.zeros_like(w)
        if S:
            q[:, S] = np.linalg.solve(G[np.ix_(S, S)], w[:, S].T).T
        grad = q @ G - w
        ok = np.all(q >= -scale, axis=1) & np.all(grad >= -scale, axis=1) & ~found
        best[ok] = np.maximum(q[ok], 0.0)
        found |= ok
        if found.all():
            break
    return best, found


def lift_many(net: Network, params: TrafficParams, w) -> np.ndarray:
    """Lift ``Delta(w)`` for a stack of workloads.

    The closed form ``[rho] A' G^-1 w`` is used where ``G^-1 w >= 0``.
    Elsewhere the quadratic program is solved exactly by support-set
    enumeration when ``J`` is small, and by non-negative least squares
    otherwise.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    A = net.A.astype(float)
    G = A @ np.diag(params.nu / params.mu**2) @ A.T
    q = np.linalg.solve(G, w.T).T
    out = (q @ A) * params.rho
    scale = np.maximum(1.0, np.abs(q).max(axis=1))
    bad = np.flatnonzero(np.any(q < -1e-12 * scale[:, None], axis=1))
    if bad.size == 0:
        return out
    if net.J <= 6:
        qb, found = _qp_active_sets(G, w[bad])
        out[bad[found]] = (qb[found] @ A) * params.rho
        bad = bad[~found]
    for r in bad:
        out[r] = lift_delta_qp(net, params, w[r])
    return out


def lyapunov_gap(net: Network, params: TrafficParams, n) -> np.ndarray:
    """``F(n) - F(Delta(w(n)))`` with ``F(n) = sum n_i^2 / nu_i``, row by row."""
    n = np.atleast_2d(np.asarray(n, dtype=float))
    lifted = lift_many(net, params, workload_of(net, params, n))
    return np.sum(n * n / params.nu, axis=1) - np.sum(lifted * lifted / params.nu, axis=1)


@dataclass
class FluidResult:
    """Euler trajectory of the fluid model.

    ``distance`` is ``|n - Delta(w(n))|`` and ``lyapunov`` is
    ``F(n) - F(Delta(w(n)))`` at each recorded time.  When the path reaches
    the origin under a stable load it rests there and recording stops.
    """

    times: np.ndarray
    n: np.ndarray
    w: np.ndarray
    lam: np.ndarray
    distance: np.ndarray
    lyapunov: np.ndarray
    reached_origin: bool
    h: float
    solver_failures: int = 0

    @property
    def terminal_distance(self) -> float:
        return float(self.distance[-1])


def integrate_fluid(
    net: Network,
    params: TrafficParams,
    n0,
    T: float,
    h: float,
    record_every: int = 1,
) -> FluidResult:
    """Explicit Euler for ``dn/dt = nu - mu Lambda(n)``, clipping ``n`` at 0.

    A numerical surrogate for the fluid model: on the boundary the rates may
    jitter, and the projection keeps the path non-negative.
    """
    _check_params(net, params)
    n = np.array(n0, dtype=float).reshape(-1)
    if n.size != net.I or np.any(n < 0) or not np.all(np.isfinite(n)):
        raise ValidationError("n0 must be a finite non-negative vector of length I")
    if not h > 0 or not T >= 0:
        raise ValidationError("need h > 0 and T >= 0")
    if np.any(params.nu <= 0):
        raise ValidationError("the fluid lift needs nu > 0 on every route")
    record_every = max(1, int(record_every))
    n_steps = int(np.ceil(T / h - 1e-9))
    cap = n_steps // record_every + 3
    rec_t = np.empty(cap)
    rec_n = np.empty((cap, net.I))
    rec_lam = np.empty((cap, net.I))
    counters = np.zeros(1, dtype=np.int64)
    rest = stability_margin(net, params).stable
    r = K.fluid_euler(
        rate_kernel(net), net.A.astype(float), np.ascontiguousarray(net.C, dtype=float),
        params.nu, params.mu, n, float(h), n_steps, record_every, KKT_TOL, MAX_ITER, rest,
        rec_t, rec_n, rec_lam, counters,
    )
    if counters[0]:
        raise SolverDiverged(f"allocation failed at {int(counters[0])} fluid steps")
    rec_t, rec_n, rec_lam = rec_t[:r], rec_n[:r], rec_lam[:r]
    w = workload_of(net, params, rec_n)
    lifted = lift_many(net, params, w)
    dist = np.linalg.norm(rec_n - lifted, axis=1)
    V = np.sum(rec_n**2 / params.nu, axis=1) - np.sum(lifted**2 / params.nu, axis=1)
    reached = bool(rest and r > 0 and not np.any(rec_n[-1] > 0))
    return FluidResult(rec_t, rec_n, w, rec_lam, dist, V, reached, float(h), int(counters[0]))
