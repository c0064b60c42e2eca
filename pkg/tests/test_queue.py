from __future__ import annotations

import numpy as np
import pytest
from helpers import batch_pmf_test
from hypothesis import given
from hypothesis import strategies as st

from fairramp.errors import UnstableLoad, ValidationError
from fairramp.queue import (
    QueuePath,
    WorkDistribution,
    autocorrelation_time,
    batch_means,
    forward_recurrence_cdf,
    mm1_stationary,
    rbm1_path,
    rbm1_stationary_mean,
    scale_workload,
    simulate_mg1_ps,
    simulate_mm1,
    snapshot_ratio,
    time_weighted_pmf,
)


def test_mm1_stationary_examples():
    p = mm1_stationary(0.5, 3)
    assert np.allclose(p, [0.5, 0.25, 0.125, 0.0625])
    assert mm1_stationary(0.0).tolist() == [1.0]
    assert mm1_stationary(0.8).sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(UnstableLoad):
        mm1_stationary(1.0)


def test_rbm_mean_examples():
    assert rbm1_stationary_mean(0.5, 1.0) == pytest.approx(0.5)
    assert rbm1_stationary_mean(0.9, 1.0) == pytest.approx(4.5)
    assert rbm1_stationary_mean(0.5, 2.0) == pytest.approx(1.0)
    with pytest.raises(UnstableLoad):
        rbm1_stationary_mean(1.0, 1.0)


def test_forward_recurrence_examples():
    x = np.linspace(0, 5, 11)
    G = WorkDistribution.exponential(2.0)
    assert np.allclose(forward_recurrence_cdf(G, x), G.cdf(x))
    D = WorkDistribution.deterministic(2.0)
    assert np.allclose(forward_recurrence_cdf(D, x), np.minimum(x / 2.0, 1.0))
    assert forward_recurrence_cdf(G, 0.0) == 0.0


def test_general_distribution_matches_deterministic_limit():
    # a uniform law on [0, 2] written as a table
    U = WorkDistribution.general([0.0, 2.0], [0.0, 1.0])
    assert U.mean == pytest.approx(1.0)
    assert U.second_moment == pytest.approx(4.0 / 3.0)
    x = np.linspace(0, 2, 9)
    # G*(x) = x - x^2/4 for the uniform law on [0, 2] with mean 1
    assert np.allclose(forward_recurrence_cdf(U, x), x - x * x / 4)
    s = U.sample(np.random.default_rng(0), 100_000)
    assert abs(s.mean() - 1.0) < 0.01
    with pytest.raises(ValidationError):
        WorkDistribution.general([0.0, 1.0], [0.2, 1.0])


def test_time_weighted_pmf_and_batch_means():
    times = np.array([0.0, 1.0, 3.0, 4.0])
    values = np.array([0, 2, 1, 1])
    p = time_weighted_pmf(times, values, 0.0, 4.0)
    assert np.allclose(p, [0.25, 0.25, 0.5])
    mean, se = batch_means(times, values, 0.0, 4.0, n_batches=4)
    assert mean == pytest.approx(1.25)


def test_mm1_simulation_is_deterministic_and_balanced():
    a = simulate_mm1(0.8, 1.0, 20_000, seed=3)
    b = simulate_mm1(0.8, 1.0, 20_000, seed=3)
    assert np.array_equal(a.path.times, b.path.times) and np.array_equal(a.path.N, b.path.N)
    assert np.all(np.abs(np.diff(a.path.N)) == 1)
    assert np.all(a.path.N >= 0)
    # idle time grows only while the queue is empty
    dU = np.diff(a.path.U)
    assert np.all(dU[a.path.N[:-1] > 0] == 0)


def test_mm1_with_no_arrivals_drains():
    r = simulate_mm1(0.0, 1.0, 10, seed=0, n0=3)
    assert r.path.N[-1] == 0


def test_ps_workload_balance():
    r = simulate_mg1_ps(0.7, WorkDistribution.deterministic(1.0), 2_000.0, seed=4)
    p = r.path
    assert np.allclose(p.W, p.arrived - p.times + p.U, atol=1e-7)
    assert np.all(np.diff(p.U)[p.N[:-1] > 0] <= 1e-12)


def test_ps_matches_mm1_law_for_exponential_work():
    rho = 0.8
    T = 1e6 / (2 * rho)  # about 10^6 arrival and departure events
    r = simulate_mg1_ps(rho, WorkDistribution.exponential(1.0), T, seed=11, sample_dt=50.0)
    target = mm1_stationary(rho, 15)
    target[-1] += 1.0 - target.sum()
    assert batch_pmf_test(r.path.times, r.path.N, 0.2 * T, T, target) > 0.01


def test_rbm_zero_noise_is_deterministic_drain():
    r = rbm1_path(0.5, 0.0, 4.0, 0.01, seed=0, w0=1.0)
    assert np.allclose(r.path.W, np.maximum(0.0, 1.0 - 0.5 * r.path.times), atol=1e-12)


def test_rbm_reflection_acts_only_at_zero():
    r = rbm1_path(0.9, 1.0, 200.0, 1e-3, seed=1)
    assert r.reflection_violations == 0
    dU = np.diff(r.path.U)
    assert np.all(r.path.W[1:][dU > 0] <= 1e-12)


def test_rbm_reproducible_across_chunk_sizes():
    a = rbm1_path(0.9, 1.0, 50.0, 1e-3, seed=2, chunk=1 << 20)
    b = rbm1_path(0.9, 1.0, 50.0, 1e-3, seed=2, chunk=1 << 20)
    assert a.time_average == b.time_average
    with pytest.raises(UnstableLoad):
        rbm1_path(1.0, 1.0, 1.0, 1e-3, seed=0)


def test_scale_workload_examples():
    path = QueuePath(times=np.array([0.0, 1.0, 2.0]), N=None, W=np.full(3, 2.0), U=np.zeros(3))
    same = scale_workload(path, 0.0)
    assert np.array_equal(same.times, path.times) and np.array_equal(same.W, path.W)
    sc = scale_workload(path, 0.5)
    assert np.allclose(sc.W, 1.0) and np.allclose(sc.times, [0.0, 0.25, 0.5])


def test_scaled_mm1_mean_near_heavy_traffic_value():
    rho = 0.95
    r = simulate_mm1(rho, 1.0, 2_000_000, seed=5)
    scaled_mean = (1 - rho) * r.mean
    # exponential work has E S^2 / E S = 2, so the scaled mean is about rho
    assert abs(scaled_mean - rho) < 0.15 * rho


def test_snapshot_principle_at_high_load():
    r = rbm1_path(0.95, 1.0, 4e4, 0.01, seed=1)
    assert snapshot_ratio(r.path, 0.5) < 0.2


def test_autocorrelation_time_of_white_noise_is_small():
    x = np.random.default_rng(0).standard_normal(10_000)
    assert autocorrelation_time(x, 1.0) < 1.0
    assert autocorrelation_time(np.ones(10), 1.0) == 0.0


@given(st.floats(0.05, 0.95), st.floats(0.1, 5.0))
def test_rbm_mean_formula_consistent_with_residual_mean(rho, mean_work):
    # rho sigma^2 / (2 (1 - rho)) with sigma^2 = E S^2 / E S equals rho/(1-rho) E[S*]
    for G in (WorkDistribution.exponential(1 / mean_work), WorkDistribution.deterministic(mean_work)):
        residual_mean = G.second_moment / (2 * G.mean)
        assert rbm1_stationary_mean(rho, G.sigma2) == pytest.approx(rho / (1 - rho) * residual_mean)


@given(st.floats(0.1, 5.0), st.floats(0.0, 20.0))
def test_forward_recurrence_is_a_cdf(mean_work, x):
    for G in (WorkDistribution.exponential(1 / mean_work), WorkDistribution.deterministic(mean_work)):
        v = float(forward_recurrence_cdf(G, x))
        assert 0.0 <= v <= 1.0
        assert float(forward_recurrence_cdf(G, x + 0.5)) >= v
