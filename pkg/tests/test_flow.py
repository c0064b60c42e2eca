from __future__ import annotations

import numpy as np
import pytest
from helpers import random_network, random_stable_params
from hypothesis import given, settings
from hypothesis import strategies as st

from fairramp.allocation import allocate, lift_delta_qp
from fairramp.errors import UnstableLoad, ValidationError
from fairramp.flow import approx_stationary, integrate_fluid, lift_many, lyapunov_gap, simulate_ctmc, workload_of
from fairramp.network import TrafficParams, linear_network, validate

ONE = validate([[1]], [1.0])
LOCAL_COMMON = validate([[1, 0, 1], [0, 1, 1]], [1.0, 1.0])


def test_workload_examples():
    p = TrafficParams(nu=[1.0], mu=[2.0])
    assert np.allclose(workload_of(ONE, p, [0.0]), [0.0])
    assert np.allclose(workload_of(ONE, p, [4.0]), [2.0])
    lin = linear_network(2, [2, 1])
    assert np.allclose(workload_of(lin, TrafficParams(nu=[1, 1], mu=[1, 1]), [1, 2]), [3, 2])
    with pytest.raises(ValidationError):
        workload_of(lin, TrafficParams(nu=[1, 1], mu=[1, 1]), [-1, 0])


def test_approx_examples():
    law = approx_stationary(ONE, TrafficParams(nu=[0.8], mu=[1.0]))
    assert law.mean_n[0] == pytest.approx(4.0)
    lin = linear_network(2, [2, 1])
    law = approx_stationary(lin, TrafficParams(nu=[0.5, 0.5], mu=[1, 1]))
    assert np.allclose(law.exp_rates, [1.0, 0.5])
    assert law.mean_n[1] == pytest.approx(1.5)
    with pytest.raises(UnstableLoad):
        approx_stationary(ONE, TrafficParams(nu=[1.0], mu=[1.0]))


def test_approx_sampling_matches_moments():
    law = approx_stationary(LOCAL_COMMON, TrafficParams(nu=[0.3, 0.3, 0.4], mu=[1, 1, 1]))
    x = law.sample(200_000, np.random.default_rng(0))
    assert np.allclose(x.mean(axis=0), law.mean_n, rtol=0.02)
    assert np.allclose(x.var(axis=0), law.var_n, rtol=0.05)


def test_ctmc_bookkeeping():
    p = TrafficParams(nu=[0.4, 0.4, 0.4], mu=[1.0, 2.0, 1.5])
    r = simulate_ctmc(LOCAL_COMMON, p, 20_000, seed=1)
    assert np.allclose(r.w, workload_of(LOCAL_COMMON, p, r.n))
    assert np.all(r.n >= 0)
    steps = np.abs(np.diff(r.n, axis=0)).sum(axis=1)
    assert np.all(steps == 1)
    # empty routes get no service
    assert np.all(r.lam[r.n == 0] == 0)
    assert np.all(r.lam @ LOCAL_COMMON.A.T <= LOCAL_COMMON.C + 1e-9)


def test_ctmc_allocation_cache_is_exact():
    p = TrafficParams(nu=[0.4, 0.4, 0.4], mu=[1, 1, 1])
    r = simulate_ctmc(LOCAL_COMMON, p, 5_000, seed=2)
    for k in range(0, r.n.shape[0], 500):
        assert np.allclose(r.lam[k], allocate(LOCAL_COMMON, r.n[k]).lam)


def test_ctmc_reproducible():
    p = TrafficParams(nu=[0.4, 0.4, 0.4], mu=[1, 1, 1])
    a = simulate_ctmc(LOCAL_COMMON, p, 5_000, seed=3)
    b = simulate_ctmc(LOCAL_COMMON, p, 5_000, seed=3)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.n, b.n)


def test_ctmc_mm1_mean():
    r = simulate_ctmc(ONE, TrafficParams(nu=[0.5], mu=[1.0]), 400_000, seed=4)
    assert abs(r.mean_n[0] - 1.0) < 4 * r.std_err_n[0] + 0.02


def test_ctmc_with_no_arrivals_absorbs():
    r = simulate_ctmc(ONE, TrafficParams(nu=[0.0], mu=[1.0]), 100, seed=0, n0=[3])
    assert r.n[-1, 0] == 0


def test_fluid_single_resource_example():
    f = integrate_fluid(ONE, TrafficParams(nu=[0.5], mu=[1.0]), [1.0], 1.0, 1e-3)
    assert f.n[-1, 0] == pytest.approx(0.5, abs=1e-9)


def test_fluid_rests_on_manifold_at_critical_load():
    # A rho = C, so points [rho] A' q are fixed points of the fluid model
    p = TrafficParams(nu=[0.3, 0.3, 0.7], mu=[1, 1, 1])
    q = np.array([2.0, 1.0])
    n0 = p.rho * (LOCAL_COMMON.A.T @ q)
    f = integrate_fluid(LOCAL_COMMON, p, n0, 1.0, 1e-3)
    assert np.allclose(f.lam, p.rho, atol=1e-8)
    assert np.allclose(f.n[-1], n0, atol=1e-8)
    assert np.max(f.distance) < 1e-8


def test_lift_many_matches_single_lifts():
    rng = np.random.default_rng(0)
    for _ in range(20):
        net = random_network(rng)
        p = random_stable_params(rng, net)
        n = rng.uniform(0, 3, size=(5, net.I))
        w = workload_of(net, p, n)
        lifted = lift_many(net, p, w)
        for k in range(5):
            assert np.allclose(lifted[k], lift_delta_qp(net, p, w[k]), atol=1e-9)
        assert np.all(lyapunov_gap(net, p, n) >= -1e-9)


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_fluid_converges_to_manifold(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng)
    p = random_stable_params(rng, net, load=(0.3, 0.8))
    margin = float(np.min(net.C - net.A @ p.rho))
    n0 = rng.uniform(0, 3, net.I)
    f = integrate_fluid(net, p, n0, min(50.0 / margin, 200.0), 1e-2, record_every=100)
    assert f.solver_failures == 0
    assert f.terminal_distance <= 1e-3


def test_fluid_argument_checks():
    p = TrafficParams(nu=[0.5], mu=[1.0])
    with pytest.raises(ValidationError):
        integrate_fluid(ONE, p, [-1.0], 1.0, 1e-3)
    with pytest.raises(ValidationError):
        integrate_fluid(ONE, p, [1.0], 1.0, 0.0)
    with pytest.raises(ValidationError):
        integrate_fluid(ONE, TrafficParams(nu=[0.0], mu=[1.0]), [1.0], 1.0, 1e-3)
