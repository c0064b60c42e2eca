from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairramp.errors import (
    CapacityNotDecreasing,
    CapacityOrdering,
    CycleDetected,
    EmptyRoute,
    NonpositiveCapacity,
    RankDeficient,
    ValidationError,
)
from fairramp.network import (
    TREE6_PARENTS,
    TrafficParams,
    linear_network,
    matrix_rank_exact,
    parallel_roads_virtual,
    stability_margin,
    tree_network,
    validate,
)


def test_validate_accepts_identity():
    net = validate([[1, 0], [0, 1]], [1.0, 2.0])
    assert (net.J, net.I) == (2, 2)


@pytest.mark.parametrize(
    "A, C, exc",
    [
        ([[1, 1], [1, 1]], [1, 1], RankDeficient),
        ([[1, 0], [1, 0]], [1, 1], EmptyRoute),
        ([[1]], [0.0], NonpositiveCapacity),
        ([[1, 2]], [1.0], ValidationError),
        ([[1]], [1.0, 2.0], ValidationError),
    ],
)
def test_validate_rejects(A, C, exc):
    with pytest.raises(exc):
        validate(A, C)


def test_network_arrays_are_read_only():
    net = linear_network(2, [2, 1])
    with pytest.raises(ValueError):
        net.A[0, 0] = 0


def test_rank_exact():
    assert matrix_rank_exact([[1, 1, 0], [0, 1, 1], [1, 0, 1]]) == 3
    assert matrix_rank_exact([[1, 1, 0], [0, 1, 1], [1, 2, 1]]) == 2


def test_stability_margin_examples():
    rep = stability_margin(validate([[1]], [1.0]), TrafficParams(nu=[0.8], mu=[1.0]))
    assert np.allclose(rep.margins, [0.2]) and rep.stable
    rep = stability_margin(linear_network(2, [2, 1]), TrafficParams(nu=[0.5, 0.5], mu=[1, 1]))
    assert np.allclose(rep.margins, [1.0, 0.5]) and rep.stable
    rep = stability_margin(linear_network(2, [1, 0.6]), TrafficParams(nu=[0.55, 0.3], mu=[1, 1]))
    assert np.allclose(rep.margins, [0.15, 0.3]) and rep.stable
    assert rep.harmonic_load == pytest.approx(1.05)


def test_linear_network_examples():
    assert linear_network(1, [1]).A.tolist() == [[1]]
    assert linear_network(2, [2, 1]).A.tolist() == [[1, 1], [0, 1]]
    assert np.array_equal(linear_network(4, [4, 3, 2, 1]).A, np.triu(np.ones((4, 4), dtype=int)))
    with pytest.raises(CapacityNotDecreasing):
        linear_network(2, [1, 1])


def test_tree_examples():
    assert tree_network([-1]).A.tolist() == [[1]]
    assert tree_network([-1, 0, 0]).A.tolist() == [[1, 1, 1], [0, 1, 0], [0, 0, 1]]
    with pytest.raises(CycleDetected):
        tree_network([-1, 2, 1])
    net = tree_network()
    assert net.A.shape == (6, 6) and net.name == "tree6"
    # resource j is used by route i iff j is on the path from i to the root
    for i, p in enumerate(TREE6_PARENTS):
        if p >= 0:
            assert np.all(net.A[:, i] >= net.A[:, p])


def test_parallel_roads_examples():
    net, vnet = parallel_roads_virtual([2, 1, 1, 6])
    assert np.allclose(vnet.C, [2, 3, 4, 6])
    assert vnet.A[3].tolist() == [1, 1, 1, 1]
    assert net.A[3].tolist() == [1, 1, 1, 1]
    with pytest.raises(CapacityOrdering):
        parallel_roads_virtual([1, 1, 1, 2])
    inv = np.linalg.inv(vnet.A)
    assert np.allclose(np.diag(vnet.A), 1) and np.all(np.isin(np.round(inv), [-1, 0, 1]))
    assert np.allclose(inv, np.round(inv))


@given(st.lists(st.floats(0.1, 10.0), min_size=1, max_size=6, unique=True))
def test_linear_network_validates_for_decreasing_capacities(caps):
    C = sorted(caps, reverse=True)
    net = linear_network(len(C), C)
    assert np.array_equal(net.A, np.triu(np.ones((len(C), len(C)), dtype=int)))


@given(st.lists(st.floats(0.0, 2.0), min_size=3, max_size=3))
def test_margins_plus_load_is_capacity(rho):
    net = linear_network(3, [3, 2, 1])
    rep = stability_margin(net, TrafficParams(nu=rho, mu=[1, 1, 1]))
    assert np.allclose(rep.margins + net.A @ np.asarray(rho), net.C, atol=1e-12)


def test_traffic_params_validation():
    with pytest.raises(ValidationError):
        TrafficParams(nu=[1.0], mu=[0.0])
    with pytest.raises(ValidationError):
        TrafficParams(nu=[-1.0], mu=[1.0])
    with pytest.raises(ValidationError):
        TrafficParams(nu=[1.0], mu=[1.0], sigma2=0.0)
    p = TrafficParams(nu=[1.0, 2.0], mu=[2.0, 4.0])
    assert np.allclose(p.rho, [0.5, 0.5])


def test_spawned_streams_are_stable():
    from fairramp.rng import make_rng, spawn_seeds

    ss = np.random.SeedSequence(5)
    a = [make_rng(s).random() for s in spawn_seeds(ss, 3)]
    b = [make_rng(s).random() for s in spawn_seeds(ss, 3)]
    c = [make_rng(s).random() for s in spawn_seeds(5, 3)]
    assert a == b == c and len(set(a)) == 3
