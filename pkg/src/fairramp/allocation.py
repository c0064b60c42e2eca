"""Proportionally fair allocation, its duals, and the fluid-model geometry.

The allocation maximises ``sum_{n_i > 0} n_i log lam_i`` subject to
``A lam <= C``, ``lam_i = 0`` where ``n_i = 0``.  It is computed on the dual
side, where the problem has only ``J`` variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize, nnls

from . import _kernels as K
from .errors import OutsideCone, SingularGamma, SolverDiverged, ValidationError
from .network import Network, TrafficParams, is_linear

__all__ = [
    "Allocation",
    "BrownianSpec",
    "allocate",
    "delays_from_duals",
    "lift_delta",
    "lift_delta_qp",
    "lyapunov_F",
    "covariance_gamma",
    "cone_contains",
    "linear_cone_check",
    "rate_kernel",
    "FEAS_TOL",
    "CS_TOL",
]

FEAS_TOL = 1e-9
CS_TOL = 1e-8
KKT_TOL = 1e-10
MAX_ITER = 200


@dataclass(frozen=True)
class Allocation:
    lam: np.ndarray
    q: np.ndarray
    active: frozenset
    objective: float
    iterations: int = 0


@dataclass(frozen=True)
class BrownianSpec:
    """Drift, covariance and cone map of a Brownian network model.

    ``cone_map`` is the matrix ``G`` with workload cone ``G R_+^J``.
    """

    theta: np.ndarray
    gamma: np.ndarray
    cone_map: np.ndarray
    model: str = "flow"


def rate_kernel(net: Network) -> int:
    """Pick the structured solver usable for ``net``."""
    if is_linear(net):
        return K.KIND_LINEAR
    J, I = net.A.shape
    if J == I and J >= 2:
        star = np.zeros((J, J), dtype=np.int64)
        star[: J - 1, : J - 1] = np.eye(J - 1, dtype=np.int64)
        star[J - 1, :] = 1
        if np.array_equal(net.A, star):
            return K.KIND_STAR
    return K.KIND_GENERAL


def _objective(n: np.ndarray, lam: np.ndarray) -> float:
    pos = n > 0
    return float(np.sum(n[pos] * np.log(lam[pos])))


def _min_norm_duals(net: Network, n: np.ndarray, lam: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Smallest-norm optimal dual consistent with the (unique) rates ``lam``."""
    pos = n > 0
    load = net.A @ lam
    tight = np.abs(net.C - load) <= 1e-8 * (1.0 + net.C)
    q = np.where(tight, q, 0.0)
    if not pos.any() or not tight.any():
        return q
    M = net.A[np.ix_(tight, pos)].T.astype(float)  # |P| x |T|
    if np.linalg.matrix_rank(M) == M.shape[1]:
        return q
    target = n[pos] / lam[pos]
    cand = np.linalg.pinv(M) @ target
    if np.all(cand >= -1e-12) and np.allclose(M @ np.maximum(cand, 0.0), target, rtol=1e-10, atol=1e-12):
        out = np.zeros_like(q)
        out[tight] = np.maximum(cand, 0.0)
        return out
    x0 = q[tight]
    res = minimize(
        lambda x: 0.5 * x @ x,
        x0,
        jac=lambda x: x,
        method="SLSQP",
        bounds=[(0.0, None)] * x0.size,
        constraints=[{"type": "eq", "fun": lambda x: M @ x - target, "jac": lambda x: M}],
        options={"ftol": 1e-15, "maxiter": 500},
    )
    out = np.zeros_like(q)
    out[tight] = np.maximum(res.x, 0.0) if res.success else x0
    return out


def allocate(net: Network, n, tol: float = KKT_TOL, max_iter: int = MAX_ITER) -> Allocation:
    """Proportionally fair rates and dual prices for route occupancies ``n``.

    Parameters
    ----------
    net : Network
    n : array_like
        Non-negative occupancy per route (connections, or line sizes).
    tol : float
        KKT residual at which the dual iteration stops.

    Returns
    -------
    Allocation
        When some duals are not unique (routes with ``n_i = 0``) the
        minimum-Euclidean-norm optimal dual is returned.

    Raises
    ------
    SolverDiverged
        If the iteration cap is hit before the KKT tolerance is met.
    """
    n = np.asarray(n, dtype=float).reshape(-1)
    if n.size != net.I:
        raise ValidationError(f"n has length {n.size}, network has {net.I} routes")
    if np.any(n < 0) or not np.all(np.isfinite(n)):
        raise ValidationError("n must be finite and non-negative")
    if not np.any(n > 0):
        return Allocation(np.zeros(net.I), np.zeros(net.J), frozenset(), 0.0, 0)
    # rates are invariant under n -> c n and duals scale by c, so solve at unit scale
    scale = float(n.max())
    ns = n / scale
    A = net.A.astype(float)
    q = (A @ ns) / net.C + 1.0
    lam = np.zeros(net.I)
    iters, status = K.pf_newton(A, net.C, ns, q, lam, tol, max_iter)
    if status != K.STATUS_OK:
        raise SolverDiverged(f"no KKT point within {max_iter} iterations (n={n.tolist()})")
    q = _min_norm_duals(net, ns, lam, q) * scale
    active = frozenset(int(j) for j in np.flatnonzero(q > 0))
    return Allocation(lam=lam, q=q, active=active, objective=_objective(n, lam), iterations=int(iters))


def delays_from_duals(net: Network, q) -> np.ndarray:
    """Per-route delay estimates ``A' q``."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValidationError("dual variables must be non-negative")
    return net.A.T @ q


def _flow_cone_map(net: Network, params: TrafficParams) -> np.ndarray:
    A = net.A.astype(float)
    return A @ np.diag(params.nu / params.mu**2) @ A.T


def lift_delta(net: Network, params: TrafficParams, w, tol: float = 1e-10) -> np.ndarray:
    """Closed-form lift ``[rho] A' (A [mu]^-1 [nu] [mu]^-1 A')^-1 w``.

    Raises
    ------
    OutsideCone
        If ``w`` is not in the workload cone (the closed form would go negative).
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    G = _flow_cone_map(net, params)
    q = np.linalg.solve(G, w)
    scale = max(1.0, float(np.max(np.abs(q))))
    if np.any(q < -tol * scale):
        raise OutsideCone(f"w={w.tolist()} is outside the workload cone (q={q.tolist()})")
    return params.rho * (net.A.T @ q)


def lift_delta_qp(net: Network, params: TrafficParams, w) -> np.ndarray:
    """Lift by solving ``min F(n)`` s.t. ``A [mu]^-1 n >= w``, ``n >= 0``.

    Works for any ``w >= 0``.  The optimum has the form ``n = [rho] A' q``
    with ``q >= 0`` minimising ``q'Gq - 2 q'w``; writing ``G = B B'`` this is
    a non-negative least-squares problem in ``q``.
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    B = net.A.astype(float) * (np.sqrt(params.nu) / params.mu)[None, :]
    b = np.linalg.lstsq(B, w, rcond=None)[0]  # B b = w since B has full row rank
    q, _ = nnls(B.T, b, maxiter=50 * net.J + 100)
    return params.rho * (net.A.T @ q)


def lyapunov_F(params: TrafficParams, n) -> float:
    """``F(n) = sum_i n_i^2 / nu_i``."""
    n = np.asarray(n, dtype=float)
    return float(np.sum(n * n / params.nu))


def covariance_gamma(net: Network, params: TrafficParams, model: str = "flow") -> BrownianSpec:
    """Brownian network data for the connection-level (``flow``) or motorway model."""
    A = net.A.astype(float)
    rho = params.rho
    if model == "flow":
        G = _flow_cone_map(net, params)
        gamma = 2.0 * G
    elif model == "motorway":
        G = A @ np.diag(rho) @ A.T
        gamma = params.sigma2 * G
    else:
        raise ValidationError(f"unknown model {model!r}; expected 'flow' or 'motorway'")
    try:
        np.linalg.cholesky(gamma)
    except np.linalg.LinAlgError as exc:
        raise SingularGamma("covariance matrix is not positive definite") from exc
    return BrownianSpec(theta=net.C - A @ rho, gamma=gamma, cone_map=G, model=model)


def cone_contains(spec_or_map, w, tol: float = 1e-10):
    """Membership of ``w`` in ``G R_+^J``.

    Returns ``(inside, q)``.  For square ``G``, ``q = G^-1 w`` (possibly
    negative when outside).  For non-square ``G`` the best non-negative ``q``
    from NNLS is returned and ``inside`` means residual <= 1e-8.
    """
    G = spec_or_map.cone_map if isinstance(spec_or_map, BrownianSpec) else np.asarray(spec_or_map, float)
    w = np.asarray(w, dtype=float).reshape(-1)
    if G.shape[0] == G.shape[1]:
        q = np.linalg.solve(G, w)
        scale = max(1.0, float(np.max(np.abs(q))))
        return bool(np.all(q >= -tol * scale)), q
    q, resid = nnls(G, w)
    return bool(resid <= 1e-8), q


def linear_cone_check(rho, w) -> bool:
    """Workload-cone test for the linear road written as slope inequalities.

    ``(w_{j-1} - w_j)/rho_{j-1} <= (w_j - w_{j+1})/rho_j`` for every ``j``,
    with ``w_{J+1} = 0`` and the left side read as 0 for ``j = 1``.
    """
    rho = np.asarray(rho, dtype=float)
    w = np.asarray(w, dtype=float)
    slopes = -np.diff(np.append(w, 0.0)) / rho  # (w_j - w_{j+1}) / rho_j
    left = np.concatenate(([0.0], slopes[:-1]))
    scale = 1e-12 * max(1.0, float(np.max(np.abs(slopes))))
    return bool(np.all(left <= slopes + scale))
