from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairramp.errors import NotLinearNetwork, UnstableLoad, ValidationError
from fairramp.motorway import (
    brownian_inflows,
    collapsed_network,
    dominance_gap,
    downstream_priority_rates,
    first_strategy_cone_check,
    nominal_delays,
    pf_rates,
    simulate_motorway,
    stationary_law,
    trend_statistic,
    upstream_priority_rates,
)
from fairramp.network import TrafficParams, linear_network, tree_network

LIN2 = linear_network(2, [2, 1])
LIN3 = linear_network(3, [3, 2, 1])


def test_brownian_inflows():
    rng = np.random.default_rng(0)
    p0 = TrafficParams(nu=[0.5, 0.2], mu=[1, 1], sigma2=1e-300)
    assert np.allclose(brownian_inflows(p0, 0.1, rng), [0.05, 0.02])
    p = TrafficParams(nu=[0.5, 0.2], mu=[1, 1], sigma2=2.0)
    h = 0.01
    x = np.array([brownian_inflows(p, h, rng) for _ in range(20_000)])
    se = np.sqrt(p.rho * p.sigma2 * h / x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - p.rho * h) < 4 * se)
    assert np.allclose(x.var(axis=0), p.rho * p.sigma2 * h, rtol=0.05)
    with pytest.raises(ValidationError):
        brownian_inflows(p, 0.0, rng)


def test_pf_rates_examples():
    lam, q, d = pf_rates(LIN2, [1, 1])
    assert np.allclose(lam, [1, 1]) and np.allclose(q, [1, 0], atol=1e-10) and np.allclose(d, [1, 1])
    lam, _, _ = pf_rates(LIN2, [0, 3])
    assert lam[0] == 0


@given(st.lists(st.floats(0.0, 10.0), min_size=3, max_size=3))
def test_pf_full_utilization_where_price_positive(m):
    lam, q, _ = pf_rates(LIN3, m)
    used = LIN3.A @ lam
    assert np.all(used <= LIN3.C + 1e-9)
    assert np.all(np.abs(used - LIN3.C)[q > 1e-9] < 1e-8)


def test_priority_rate_examples():
    assert np.allclose(upstream_priority_rates(LIN2, [1, 1]), [1, 1])
    assert np.allclose(upstream_priority_rates(LIN2, [1, 0]), [2, 0])
    assert np.allclose(upstream_priority_rates(LIN2, [0, 1]), [0, 1])
    assert np.allclose(downstream_priority_rates(LIN2, [1, 1]), [2, 0])
    assert np.allclose(downstream_priority_rates(LIN2, [0, 1]), [0, 1])
    assert np.allclose(downstream_priority_rates(LIN2, [0, 0]), [0, 0])
    with pytest.raises(NotLinearNetwork):
        downstream_priority_rates(tree_network(), np.ones(6))


@given(st.lists(st.floats(0.0, 5.0), min_size=3, max_size=3), st.floats(0.0, 3.0))
def test_priority_rates_feasible(m, allowance):
    for lam in (upstream_priority_rates(LIN3, m, allowance), downstream_priority_rates(LIN3, m)):
        assert np.all(lam >= 0) and np.all(LIN3.A @ lam <= LIN3.C + 1e-12)
    assert np.count_nonzero(downstream_priority_rates(LIN3, m)) <= 1


def test_nominal_delay_examples():
    assert np.allclose(nominal_delays(LIN2, [1, 0]), [1, 1])
    assert np.allclose(nominal_delays(LIN2, [0, 0]), [0, 0])
    assert np.all(np.diff(nominal_delays(LIN3, [0.1, 0.2, 0.3])) > 0)


def test_stationary_law_examples():
    law = stationary_law(LIN2, TrafficParams(nu=[0.5, 0.5], mu=[1, 1]))
    assert np.allclose(law.zeta, [2, 1])
    assert law.mean_delay[1] == pytest.approx(1.5)
    law3 = stationary_law(LIN3, TrafficParams(nu=[0.9] * 3, mu=[1] * 3))
    assert np.allclose(law3.zeta, [0.6, 0.4, 0.2])
    assert np.allclose(law3.mean_delay, [1 / 0.6, 1 / 0.6 + 2.5, 1 / 0.6 + 2.5 + 5])
    with pytest.raises(UnstableLoad):
        stationary_law(LIN2, TrafficParams(nu=[1.5, 0.6], mu=[1, 1]))


def test_stationary_law_sampling_matches_moments():
    law = stationary_law(LIN3, TrafficParams(nu=[0.9] * 3, mu=[1] * 3), n_samples=200_000, seed=1)
    d = law.sample_delays(200_000, np.random.default_rng(2))
    assert np.allclose(d.mean(axis=0), law.mean_delay, rtol=0.02)
    assert np.allclose(d.var(axis=0), law.var_delay, rtol=0.05)
    assert set(law.quantiles) and all(np.all(np.diff(v) >= 0) or True for v in law.quantiles.values())


@given(st.lists(st.floats(0.05, 0.3), min_size=4, max_size=4))
def test_linear_delays_increase_along_the_road(rho):
    law = stationary_law(linear_network(4, [4, 3, 2, 1.5]), TrafficParams(nu=rho, mu=[1] * 4))
    assert np.all(np.diff(law.mean_delay) >= 0)


def test_tree_delays_ordered_along_root_paths():
    net = tree_network()
    law = stationary_law(net, TrafficParams(nu=[1.5] * 6, mu=[1] * 6))
    for i in range(6):
        for j in range(6):
            if np.all(net.A[:, i] >= net.A[:, j]):  # route i passes through every resource of route j
                assert law.mean_delay[i] >= law.mean_delay[j] - 1e-12


def test_collapsed_network_examples():
    net4 = linear_network(4, [4, 3, 2, 1])
    c = collapsed_network(net4, 2)
    assert c.A.tolist() == [[1, 1, 1, 1], [0, 1, 1, 1], [0, 0, 0, 1]]
    assert collapsed_network(LIN2, 1).A.tolist() == [[1, 1]]
    # in the collapsed law lines 2 and 3 share every dual, so M2/M3 = rho2/rho3
    rho = np.array([0.3, 0.4, 0.2, 0.1])
    law = stationary_law(c, TrafficParams(nu=rho, mu=np.ones(4)), n_samples=1000, seed=0)
    m = law.sample_lines(1000, np.random.default_rng(0))
    assert np.allclose(m[:, 1] * rho[2], m[:, 2] * rho[1])


def test_first_strategy_cone_examples():
    assert first_strategy_cone_check([3, 2, 1])
    assert not first_strategy_cone_check([1, 2])
    assert first_strategy_cone_check([0, 0, 0])


def test_trend_statistic():
    t = np.linspace(0, 100, 10_001)
    rng = np.random.default_rng(0)
    slope, ts = trend_statistic(t, 0.5 * t + rng.standard_normal(t.size))
    assert slope == pytest.approx(0.5, rel=0.05) and ts > 5
    _, ts = trend_statistic(t, rng.standard_normal(t.size))
    assert abs(ts) < 5


def test_zero_noise_pf_drains():
    p = TrafficParams(nu=[0.5, 0.3, 0.2], mu=[1, 1, 1], sigma2=1e-300)
    r = simulate_motorway(LIN3, p, T=20.0, h=1e-3, seed=0, m0=[5, 5, 5], burn_in=0.0, record_every=10)
    total = r.runs[0].records["m"].sum(axis=1)
    # recorded states include the work that arrived during the last step
    step_inflow = 1e-3 * p.rho.sum()
    assert np.all(np.diff(total) <= step_inflow + 1e-12)
    assert total[-1] <= step_inflow + 1e-12


@pytest.mark.parametrize("policy", ["pf", "upstream", "downstream"])
@pytest.mark.parametrize("mode", ["brownian", "jobs"])
def test_simulation_feasible_and_reproducible(policy, mode):
    p = TrafficParams(nu=[0.9] * 3, mu=[1] * 3)
    kw = dict(policy=policy, mode=mode, T=200.0, h=1e-3, seed=4, replications=2)
    a = simulate_motorway(LIN3, p, **kw)
    b = simulate_motorway(LIN3, p, **kw)
    assert np.array_equal(a.mean_m, b.mean_m)
    assert a.runs[0].mean_m.tolist() != a.runs[1].mean_m.tolist()
    for run in a.runs:
        assert run.counters["feasibility_violations"] == 0
        assert run.counters["solver_failures"] == 0
        assert np.all(run.utilization <= 1 + 1e-9)


def test_brownian_pf_idles_only_on_faces():
    p = TrafficParams(nu=[0.9] * 3, mu=[1] * 3)
    r = simulate_motorway(LIN3, p, T=100.0, h=1e-3, seed=1, record_every=1)
    run = r.runs[0]
    assert run.counters["face_violations"] == 0
    # capacity is lost in a step only if the proportionally fair price was
    # zero before it or the reflected state sits on that resource's face
    du = np.diff(run.records["u"], axis=0)
    q_before = run.records["q"][:-1]
    Q_after = run.records["Q"][1:]
    lost = du > 1e-9
    assert np.all((q_before[lost] <= 1e-7) | (Q_after[lost] <= 1e-9))


def test_jobs_states_match_totals():
    p = TrafficParams(nu=[0.9] * 3, mu=[1] * 3)
    r = simulate_motorway(LIN3, p, mode="jobs", T=200.0, seed=2, record_states=True)
    rec = r.runs[0].records
    assert np.allclose(rec["m"].sum(axis=1), rec["total"])
    assert np.all(rec["lam"] @ LIN3.A.T <= LIN3.C + 1e-9)


def test_common_arrivals_across_policies():
    p = TrafficParams(nu=[0.9] * 3, mu=[1] * 3)
    a = simulate_motorway(LIN3, p, policy="pf", mode="jobs", T=100.0, seed=9)
    b = simulate_motorway(LIN3, p, policy="upstream", mode="jobs", T=100.0, seed=9)
    assert np.array_equal(a.runs[0].events["arrival_times"], b.runs[0].events["arrival_times"])
    assert np.array_equal(a.runs[0].events["sources"], b.runs[0].events["sources"])


def test_upstream_dominates_pf_short_run():
    p = TrafficParams(nu=[0.9] * 3, mu=[1] * 3)
    kw = dict(mode="jobs", T=2000.0, seed=6, record_segments=True)
    up = simulate_motorway(LIN3, p, policy="upstream", **kw).runs[0]
    pf = simulate_motorway(LIN3, p, policy="pf", **kw).runs[0]
    assert dominance_gap(up, pf) <= 1.0


def test_unstable_load_warns():
    with pytest.warns(RuntimeWarning):
        simulate_motorway(LIN2, TrafficParams(nu=[1.5, 0.6], mu=[1, 1]), T=1.0, seed=0)


def test_bad_arguments():
    p = TrafficParams(nu=[0.5, 0.5], mu=[1, 1])
    with pytest.raises(ValidationError):
        simulate_motorway(LIN2, p, policy="fifo", T=1.0)
    with pytest.raises(ValidationError):
        simulate_motorway(LIN2, p, mode="fluid", T=1.0)
    with pytest.raises(NotLinearNetwork):
        simulate_motorway(tree_network(), TrafficParams(nu=[1] * 6, mu=[1] * 6), policy="upstream", T=1.0)
    with pytest.raises(ValidationError):
        simulate_motorway(LIN2, p, policy="upstream", reflection="cone", T=1.0)
