import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrconsensus.costs import QuadraticCost, random_quadratics
from nrconsensus.engine import NoLoss, RoundRobinScheduler, SubgradientNetwork, simulate
from nrconsensus.graph import from_edge_list
from nrconsensus.subgradient import (
    SubgradientMessage,
    SubgradientParams,
    sg_broadcast,
    sg_initialize,
    sg_receive,
)


def unit(dim=1, a=None):
    return QuadraticCost(np.eye(dim), np.zeros(dim) if a is None else a)


def test_initialize():
    s = sg_initialize([0.0])
    assert s.x.tolist() == [0.0] and s.t == 1
    assert sg_initialize([3.5, -1.0], node=2).t == 1
    a, b = sg_initialize([1.0, 2.0]), sg_initialize([1.0, 2.0])
    assert np.array_equal(a.x, b.x) and a.t == b.t


def test_alpha_validation():
    SubgradientParams(0.0)
    with pytest.raises(ValueError):
        SubgradientParams(-1e-3)


def test_broadcast_payload_is_gradient():
    msg = sg_broadcast(sg_initialize([1.0, 0.0]), unit(2))
    np.testing.assert_array_equal(msg.payload, [1.0, 0.0])
    np.testing.assert_array_equal(msg.x, [1.0, 0.0])
    at_min = sg_broadcast(sg_initialize([2.0]), unit(1, np.array([2.0])))
    np.testing.assert_array_equal(at_min.payload, [0.0])
    assert len(msg.to_flat()) == 1 + 2 + 2


def test_zero_gradients_give_midpoint():
    s = sg_initialize([4.0])
    cost = unit(1, np.array([4.0]))
    msg = SubgradientMessage(1, np.array([4.0]), np.zeros(1))
    sg_receive(s, cost, SubgradientParams(0.5), msg)
    assert s.x.tolist() == [4.0] and s.t == 2
    s = sg_initialize([0.0])
    sg_receive(s, unit(), SubgradientParams(0.0), SubgradientMessage(1, np.array([2.0]), np.array([9.0])))
    assert s.x.tolist() == [1.0]


def test_pair_step_sign():
    # midpoint 1, both gradients 1, alpha / t = 1
    cost = unit()
    j = sg_initialize([1.0])
    i = sg_initialize([1.0], node=1)
    sg_receive(j, cost, SubgradientParams(1.0), sg_broadcast(i, cost))
    assert j.x.tolist() == [-1.0]
    assert j.t == 2


def test_step_shrinks_with_counter():
    cost = unit()
    s = sg_initialize([1.0])
    s.t = 4
    sg_receive(s, cost, SubgradientParams(1.0), SubgradientMessage(1, np.array([1.0]), np.array([1.0])))
    assert s.x.tolist() == [0.5]


def test_variant_adds_cost_values():
    cost = unit()
    p = SubgradientParams(1.0, add_cost_values=True)
    i = sg_initialize([2.0], node=1)
    msg = sg_broadcast(i, cost, p)
    np.testing.assert_array_equal(msg.payload, [2.0])  # (2 - 0)^2 / 2
    j = sg_initialize([0.0])
    sg_receive(j, cost, p, msg)
    assert j.x.tolist() == [1.0 + 2.0 + 0.0]


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_pure_averaging_is_nonexpansive(n, seed):
    rng = np.random.default_rng(seed)
    g = from_edge_list(n, [(i, j) for i in range(n) for j in range(n) if i != j])
    net = SubgradientNetwork(g, random_quadratics(n, rng), SubgradientParams(0.0), np.zeros(1))
    for s in net.states:
        s.x = rng.normal(scale=5.0, size=1)
    spread = np.ptp(net.estimates())
    order = rng.integers(n, size=40)
    for i in order:
        msg = net.broadcast(int(i))
        for j in g.out_neighbors(int(i)):
            net.deliver(j, msg)
        new = np.ptp(net.estimates())
        assert new <= spread + 1e-12
        spread = new


def test_identical_pair_error_decreases():
    g = from_edge_list(2, [(0, 1), (1, 0)])
    costs = [QuadraticCost([[1.0]], [3.0])] * 2
    net = SubgradientNetwork(g, costs, SubgradientParams(0.1), np.zeros(1))
    rec = simulate(net, RoundRobinScheduler(2), NoLoss(), 2000, np.array([3.0]))
    assert rec.mean_err[-1] < rec.mean_err[0]
    assert rec.mean_err[-1] < rec.mean_err[200]
