"""Random instance generators shared by the tests."""

from __future__ import annotations

import numpy as np

from fairramp.network import Network, TrafficParams, matrix_rank_exact, validate


def random_network(rng: np.random.Generator, J_max: int = 4, I_max: int = 6, local: bool = False) -> Network:
    """Random 0/1 incidence of full row rank with no empty rows or columns.

    ``local=True`` starts from one single-resource route per resource (the
    identity columns) and adds random multi-resource routes.
    """
    while True:
        J = int(rng.integers(1, J_max + 1))
        if local:
            extra = int(rng.integers(0, max(I_max - J, 0) + 1))
            A = np.concatenate([np.eye(J, dtype=int), rng.integers(0, 2, size=(J, extra))], axis=1)
        else:
            I = int(rng.integers(J, max(I_max, J) + 1))
            A = rng.integers(0, 2, size=(J, I))
        if A.shape[1] == 0 or np.any(A.sum(axis=0) == 0) or np.any(A.sum(axis=1) == 0):
            continue
        if matrix_rank_exact(A) < J:
            continue
        C = rng.uniform(0.5, 2.0, size=J)
        return validate(A, C, name="random")


def random_stable_params(
    rng: np.random.Generator, net: Network, load: tuple = (0.3, 0.9), sigma2: float = 1.0
) -> TrafficParams:
    """Loads scaled so the busiest resource sits at a random fraction of capacity."""
    rho = rng.uniform(0.2, 1.0, size=net.I)
    target = rng.uniform(*load)
    rho *= target / np.max(net.A @ rho / net.C)
    mu = rng.uniform(0.5, 2.0, size=net.I)
    return TrafficParams(nu=rho * mu, mu=mu, sigma2=sigma2)


def pf_oracle(net: Network, n: np.ndarray, rng: np.random.Generator, starts: int = 4) -> tuple[float, np.ndarray]:
    """Independent multi-start maximiser of ``sum n_i log lam_i`` s.t. ``A lam <= C``.

    Works in ``x = log lam`` on the routes with ``n_i > 0``, where the program
    is a linear objective over the convex set ``A exp(x) <= C``, and solves it
    with SLSQP from several random feasible starts.  Returns the best
    objective and rates.
    """
    from scipy.optimize import minimize

    A = net.A.astype(float)
    pos = np.flatnonzero(n > 0)
    Ap, npos = A[:, pos], n[pos]
    best = (-np.inf, None)
    for _ in range(starts):
        lam0 = rng.uniform(0.05, 1.0, size=pos.size)
        lam0 *= 0.9 / np.max(Ap @ lam0 / net.C)
        res = minimize(
            lambda x: -npos @ x,
            np.log(lam0),
            jac=lambda x: -npos,
            method="SLSQP",
            constraints=[{
                "type": "ineq",
                "fun": lambda x: net.C - Ap @ np.exp(x),
                "jac": lambda x: -Ap * np.exp(x)[None, :],
            }],
            options={"ftol": 1e-15, "maxiter": 1000},
        )
        lam = np.exp(res.x)
        lam /= max(1.0, float(np.max(Ap @ lam / net.C)))  # restore exact feasibility
        obj = float(npos @ np.log(lam))
        if obj > best[0]:
            full = np.zeros(net.I)
            full[pos] = lam
            best = (obj, full)
    return best


def batch_pmf_test(times, values, t0: float, t1: float, target: np.ndarray, n_batches: int = 50) -> float:
    """p-value of a chi-square-type test that a path's time-weighted pmf is ``target``.

    Path samples are autocorrelated, so the test works on batch pmfs: the
    window ``[t0, t1]`` is cut into ``n_batches`` batches, each gives a pmf
    over the bins of ``target`` (with the tail lumped into the last bin), and
    Hotelling's T^2 on the batch vectors (one bin dropped) is referred to
    its F distribution.
    """
    from scipy import stats

    from fairramp.queue import time_weighted_pmf

    k = target.size
    edges = np.linspace(t0, t1, n_batches + 1)
    rows = []
    for a, b in zip(edges[:-1], edges[1:]):
        p = time_weighted_pmf(times, values, a, b)
        row = np.zeros(k)
        row[: min(k, p.size)] = p[:k]
        row[-1] += p[k:].sum()
        rows.append(row)
    X = np.asarray(rows)[:, :-1]
    mu = np.append(target[:-1], 0.0)[:-1]
    d = X.mean(axis=0) - mu
    S = np.cov(X, rowvar=False)
    p_dim, n = X.shape[1], X.shape[0]
    t2 = n * d @ np.linalg.solve(S, d)
    f = (n - p_dim) / (p_dim * (n - 1)) * t2
    return float(stats.f.sf(f, p_dim, n - p_dim))
