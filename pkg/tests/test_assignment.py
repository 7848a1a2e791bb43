"""Congestion equilibrium solvers: deterministic, stochastic, capacity limit."""

import numpy as np
import pytest

from transeq import (
    Affine,
    DemandMatrix,
    Edge,
    HardCap,
    Network,
    PathBudgetError,
    SolveConfig,
    beckmann,
    cost_map,
    dual_value,
    lp_limit,
    reconstruct_path_flows,
    solve_stochastic,
    solve_wardrop,
    wardrop_residual,
)

from conftest import (
    braess_network,
    pigou_demand,
    pigou_network,
    random_affine_instance,
    steep_bpr_network,
    two_parallel_capacity_network,
    two_path_logit_network,
)


# ------------------------------------------------------------ potential values

def test_beckmann_hand_value():
    net = pigou_network()
    f = np.array([0.3, 0.7])
    # edge 0: integral of 1 -> 0.3; edge 1: integral of f -> 0.245
    assert beckmann(net, f) == pytest.approx(0.545)


def test_dual_hand_value():
    net = pigou_network()
    dem = pigou_demand(1.0)
    t = np.array([1.0, 1.0])
    # min od cost 1 times demand 1, minus conjugates (0 and 0.5)
    assert dual_value(net, dem, t) == pytest.approx(0.5)


def test_beckmann_input_checks():
    net = pigou_network()
    with pytest.raises(ValueError):
        beckmann(net, np.array([1.0]))
    with pytest.raises(ValueError):
        beckmann(net, np.array([-0.1, 0.2]))


# ------------------------------------------------------------- deterministic

def test_pigou_equilibrium():
    net = pigou_network()
    res = solve_wardrop(net, pigou_demand(1.0), SolveConfig(tol=1e-8))
    assert res.converged
    assert np.allclose(res.flows, [0.0, 1.0], atol=1e-4)
    assert np.allclose(res.times, [1.0, 1.0], atol=1e-4)
    assert res.gap <= 1e-6
    assert res.wardrop_residual <= 1e-4


def test_weak_duality_along_iterates():
    net = braess_network(with_shortcut=True)
    res = solve_wardrop(net, pigou_demand(1.0), SolveConfig(tol=1e-8))
    trace = res.trace
    assert len(trace["dual"]) == len(trace["beckmann"])
    for dual, primal in zip(trace["dual"], trace["beckmann"]):
        assert dual <= primal + 1e-10


def test_braess_cost_shift():
    dem = pigou_demand(1.0)
    cfg = SolveConfig(tol=1e-9)
    before = cost_map(braess_network(False), dem, cfg).times[("s", "t")]
    after = cost_map(braess_network(True), dem, cfg).times[("s", "t")]
    assert before == pytest.approx(1.5, abs=1e-3)
    assert after == pytest.approx(2.0, abs=1e-3)


def test_equilibrium_cost_monotone_in_demand():
    net = pigou_network()
    cfg = SolveConfig(tol=1e-9)
    costs = [cost_map(net, pigou_demand(d), cfg).times[("s", "t")]
             for d in (0.25, 0.5, 1.0, 2.0)]
    assert all(b >= a - 1e-9 for a, b in zip(costs, costs[1:]))


def test_random_instances_close_gap_and_conserve_flow():
    rng = np.random.default_rng(2026)
    for _ in range(5):
        net, dem = random_affine_instance(rng)
        res = solve_wardrop(net, dem, SolveConfig(tol=1e-5, max_iter=500000))
        assert res.converged
        assert res.gap <= 1e-5
        assert res.dual_value <= res.beckmann + 1e-10
        # node balance: out minus in equals demand at the endpoints
        balance = np.zeros(net.n_nodes)
        for k, e in enumerate(net.edges):
            balance[net.node_index[e.tail]] += res.flows[k]
            balance[net.node_index[e.head]] -= res.flows[k]
        (o, d), val = next(iter(dem.aggregate().items()))
        expect = np.zeros(net.n_nodes)
        expect[net.node_index[o]] = val
        expect[net.node_index[d]] = -val
        assert np.allclose(balance, expect, atol=1e-8)


def test_solver_deterministic(rng):
    net, dem = random_affine_instance(rng)
    a = solve_wardrop(net, dem, SolveConfig(tol=1e-7))
    b = solve_wardrop(net, dem, SolveConfig(tol=1e-7))
    assert np.array_equal(a.flows, b.flows)
    assert a.gap == b.gap


def test_empty_demand_is_trivial():
    net = pigou_network()
    res = solve_wardrop(net, DemandMatrix({}), SolveConfig())
    assert res.converged
    assert np.allclose(res.flows, 0.0)
    assert res.gap == 0.0


def test_demand_validation():
    with pytest.raises(ValueError):
        DemandMatrix({("s", "t"): -1.0})
    with pytest.raises(ValueError):
        DemandMatrix({("s", "s"): 1.0})
    net = pigou_network()
    with pytest.raises(ValueError, match="admissible"):
        solve_wardrop(net, DemandMatrix({("t", "s"): 1.0}))


# ----------------------------------------------------------------- residuals

def test_wardrop_residual_example():
    net = pigou_network()
    # even split leaves the constant edge overpriced by 0.5 at t=(1, 0.5)
    x = {("s", "t"): {(0,): 0.5, (1,): 0.5}}
    assert wardrop_residual(net, x) == pytest.approx(0.5)


def test_wardrop_residual_zero_at_equilibrium():
    net = pigou_network()
    x = {("s", "t"): {(0,): 0.0, (1,): 1.0}}
    assert wardrop_residual(net, x) == pytest.approx(0.0, abs=1e-12)


def test_wardrop_residual_rejects_bad_paths():
    net = pigou_network()
    with pytest.raises(ValueError, match="negative"):
        wardrop_residual(net, {("s", "t"): {(0,): -0.5}})


def test_reconstruct_path_flows_matches_edges():
    net = braess_network(True)
    res = solve_wardrop(net, pigou_demand(1.0), SolveConfig(tol=1e-9))
    x = reconstruct_path_flows(net, {("s", "t"): 1.0}, res.flows)
    f = np.zeros(net.n_edges)
    for (o, d), per_path in x.items():
        for path, val in per_path.items():
            for k in path:
                f[k] += val
    assert np.allclose(f, res.flows, atol=1e-6)
    assert wardrop_residual(net, x, res.times) <= 1e-4


# ---------------------------------------------------------------- cost map

def test_cost_map_pigou():
    net = pigou_network()
    cm = cost_map(net, pigou_demand(1.0), SolveConfig(tol=1e-9))
    assert cm.times[("s", "t")] == pytest.approx(1.0, abs=1e-4)
    assert cm.phi == pytest.approx(0.5, abs=1e-6)


def test_cost_map_finite_difference():
    net = Network(
        nodes=("s", "t"),
        edges=(Edge("s", "t", Affine(1.0, 1.0)),
               Edge("s", "t", Affine(1.5, 0.5)),
               Edge("s", "t", Affine(0.5, 2.0))),
        od_pairs=(("s", "t"),),
    )
    cfg = SolveConfig(tol=1e-9)
    d0 = 2.0
    eps = 1e-4
    cm = cost_map(net, DemandMatrix({("s", "t"): d0}), cfg)
    up = cost_map(net, DemandMatrix({("s", "t"): d0 + eps}), cfg).phi
    dn = cost_map(net, DemandMatrix({("s", "t"): d0 - eps}), cfg).phi
    fd = (up - dn) / (2 * eps)
    assert fd == pytest.approx(cm.times[("s", "t")], abs=1e-3)


# ---------------------------------------------------------------- stochastic

def test_stochastic_logit_split():
    net = two_path_logit_network(np.log(3.0))
    res = solve_stochastic(net, pigou_demand(1.0),
                           SolveConfig(tol=1e-10, gamma_tilde=1.0))
    assert res.converged
    x = res.path_flows[("s", "t")]
    assert x[(0,)] == pytest.approx(0.75, abs=1e-6)
    assert x[(1,)] == pytest.approx(0.25, abs=1e-6)
    assert res.residual <= 1e-10


def test_stochastic_small_temperature_approaches_deterministic():
    net = pigou_network()
    res = solve_stochastic(net, pigou_demand(1.0),
                           SolveConfig(tol=1e-10, gamma_tilde=1e-4))
    assert np.allclose(res.flows, [0.0, 1.0], atol=1e-2)


def test_stochastic_large_temperature_splits_evenly():
    net = pigou_network()
    res = solve_stochastic(net, pigou_demand(1.0),
                           SolveConfig(tol=1e-12, gamma_tilde=1e6))
    assert np.allclose(res.flows, [0.5, 0.5], atol=1e-5)


def test_stochastic_identical_paths_split_evenly():
    net = two_path_logit_network(0.0)
    res = solve_stochastic(net, pigou_demand(1.0),
                           SolveConfig(tol=1e-12, gamma_tilde=0.37))
    x = res.path_flows[("s", "t")]
    assert x[(0,)] == pytest.approx(0.5, abs=1e-9)


def test_stochastic_fixed_point_condition():
    net = braess_network(True)
    gt = 0.5
    res = solve_stochastic(net, pigou_demand(1.0),
                           SolveConfig(tol=1e-11, gamma_tilde=gt))
    t = braess_network(True).costs.tau(res.flows)
    x = res.path_flows[("s", "t")]
    paths = sorted(x)
    costs = np.array([sum(t[k] for k in p) for p in paths])
    w = np.exp(-(costs - costs.min()) / gt)
    expect = w / w.sum()
    got = np.array([x[p] for p in paths])
    assert np.max(np.abs(got - expect)) <= 1e-9


def test_stochastic_path_budget_error():
    net = braess_network(True)
    with pytest.raises(PathBudgetError):
        solve_stochastic(net, pigou_demand(1.0),
                         SolveConfig(path_budget=1))


# ------------------------------------------------------------ capacity limit

def test_lp_limit_single_edge():
    net = Network(nodes=("s", "t"),
                  edges=(Edge("s", "t", HardCap(1.0, 5.0)),),
                  od_pairs=(("s", "t"),))
    res = lp_limit(net, DemandMatrix({("s", "t"): 3.0}))
    assert np.allclose(res.flows, [3.0])
    assert np.allclose(res.times, [1.0])
    assert res.objective == pytest.approx(3.0)


def test_lp_limit_two_parallel():
    net = two_parallel_capacity_network()
    res = lp_limit(net, DemandMatrix({("s", "t"): 2.0}))
    assert np.allclose(res.flows, [1.0, 1.0], atol=1e-9)
    assert res.objective == pytest.approx(3.0)
    # saturated cheap edge inherits the marginal time, slack edge stays free
    assert np.allclose(res.times, [2.0, 2.0], atol=1e-9)


def test_lp_limit_equal_caps():
    net = Network(nodes=("s", "t"),
                  edges=(Edge("s", "t", HardCap(1.0, 1.0)),
                         Edge("s", "t", HardCap(1.0, 1.0))),
                  od_pairs=(("s", "t"),))
    res = lp_limit(net, DemandMatrix({("s", "t"): 2.0}))
    assert np.allclose(res.flows, [1.0, 1.0])
    assert res.objective == pytest.approx(2.0)


def test_lp_limit_infeasible_names_cut():
    net = two_parallel_capacity_network()
    with pytest.raises(ValueError, match="cut"):
        lp_limit(net, DemandMatrix({("s", "t"): 12.0}))


def test_lp_limit_requires_hardcaps():
    net = pigou_network()
    with pytest.raises(ValueError, match="HardCap"):
        lp_limit(net, pigou_demand(1.0))


def test_steep_bpr_tracks_capacity_limit():
    lp = lp_limit(two_parallel_capacity_network(), DemandMatrix({("s", "t"): 2.0}))
    res = solve_wardrop(steep_bpr_network(mu=1e-2, rho=1.0),
                        DemandMatrix({("s", "t"): 2.0}),
                        SolveConfig(tol=1e-9, max_iter=60000))
    assert np.max(np.abs(res.flows - lp.flows)) <= 5e-2
