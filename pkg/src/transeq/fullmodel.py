"""Joint market-network equilibrium with explicit dual edge times.

The market saddle prices shipments through a fixed table or an inner
assignment solve; here the carrier's dual is opened up instead.  Edge
times t join the saddle as a maximizing block bounded below by free
flow, pair costs become shortest-path distances under t, and each
edge pays its conjugate congestion penalty.  At the saddle the
t-block carries the equilibrium travel times and the shipped masses
induce a user equilibrium on the network, recovered explicitly
afterwards together with its path decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .assignment import (DemandMatrix, PathBudgetError, SolveConfig,
                         reconstruct_path_flows, solve_wardrop)
from .market import (MarketEquilibrium, MarketInstance, _agent_value,
                     _market_responses, _mass_cap, _price_grads,
                     _recover_bundles, _split_mass, _timescales,
                     productivity_check, walras_residuals)
from .network import NO_PRED, Affine, Network
from .saddle import (BlockSpec, HalfBounded, Orthant, SaddleProblem,
                     mirror_prox)

T_CAP_FACTOR = 1e6  # diagnostic upper bound on dual edge times


@dataclass(frozen=True)
class FullInstance:
    """A market whose transport layer is a congestible network.

    mu is the capacity-smoothing scale echoed to reports for runs that
    approximate hard capacities with steep delay curves; the smoothing
    itself lives in the edge cost families.
    """

    market: MarketInstance
    mu: float = 1e-2

    def __post_init__(self):
        if not isinstance(self.market.transport, Network):
            raise ValueError("the full model needs a network transport layer")
        if not (self.mu > 0):
            raise ValueError(f"mu must be positive, got {self.mu}")

    @property
    def network(self) -> Network:
        return self.market.transport


@dataclass
class FullEquilibrium(MarketEquilibrium):
    """Market equilibrium plus the network side of the solution.

    t is the dual edge-time block at convergence, x the recovered path
    flows per od pair, f the recovered edge flows.  time_consistency
    is the largest gap between pair costs under t and under the
    recovered assignment's times.
    """

    t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x: dict = field(default_factory=dict)
    f: np.ndarray = field(default_factory=lambda: np.zeros(0))
    wardrop_residual: float = 0.0
    time_consistency: float = 0.0


def _route_terms(net: Network, pairs: tuple, origin_list: list, t: np.ndarray,
                 s: np.ndarray):
    """Pair distances under t and edge loads of mass-weighted shortest paths."""
    T = np.zeros(len(pairs))
    loads = np.zeros(net.n_edges)
    for o in origin_list:
        dist, pred = net.shortest_path(t, o)
        for p, (i, j) in enumerate(pairs):
            if i != o:
                continue
            v = net.node_index[j]
            T[p] = dist[v]
            mass = float(s[p])
            if mass > 0.0:
                while pred[v] != NO_PRED:
                    k = pred[v]
                    loads[k] += mass
                    v = net.node_index[net.edges[k].tail]
    return T, loads


def assemble_full(instance: FullInstance) -> SaddleProblem:
    """Saddle problem joining the market blocks with dual edge times.

    Min block: pair mass s (entropy geometry, weight gamma).  Max
    blocks: origin prices, destination prices, resource rents, and
    edge times t >= free flow.  The t gradient loads each pair's mass
    onto its shortest path and subtracts the conjugate slope, so at
    the saddle the loads reproduce the congestion curve's flow at t.
    Constant-time edges are pinned at free flow (their conjugate is a
    hard wall there); every other edge is capped at free flow times
    1e6 for compactness, flagged if the cap ever binds.
    """
    market = instance.market
    net = instance.network
    O, D, pairs, m = market.origins, market.destinations, market.pairs, market.m
    if not pairs:
        raise ValueError("no admissible od pairs between producers and consumers")
    nO, nD, nP, q = len(O), len(D), len(pairs), len(market.b)
    gamma = market.gamma
    origin_list = sorted({i for i, _ in pairs}, key=net.node_index.get)

    t_low = net.free_flow_times()
    pinned = np.array([isinstance(e.cost, Affine) and e.cost.b == 0.0
                       for e in net.edges])
    t_high = np.where(pinned, t_low, t_low * T_CAP_FACTOR)

    mass_scale, price_scale = _timescales(gamma)
    blocks = [
        BlockSpec("s", "min", nP, Orthant(cap=_mass_cap(market)),
                  geometry="entropy", entropy_weight=gamma, entropy_ref=1.0,
                  step_scale=mass_scale),
        BlockSpec("lamL", "max", nO * m, Orthant(), step_scale=price_scale),
        BlockSpec("lamW", "max", nD * m, Orthant(), step_scale=price_scale),
    ]
    if q:
        blocks.append(BlockSpec("y", "max", q, Orthant(), step_scale=price_scale))
    blocks.append(BlockSpec("t", "max", net.n_edges,
                            HalfBounded(lower=tuple(t_low), upper=tuple(t_high)),
                            step_scale=price_scale))

    def unpack(z):
        lam_L = z[1].reshape(nO, m)
        lam_W = z[2].reshape(nD, m)
        y = z[3] if q else np.zeros(0)
        return z[0], lam_L, lam_W, y, z[-1]

    def oracle(z):
        s, lam_L, lam_W, y, t = unpack(z)
        T, loads = _route_terms(net, pairs, origin_list, t, s)
        split, pi = _split_mass(market, s, lam_L, lam_W)
        Ls, Ws = _market_responses(market, lam_L, lam_W, y)
        g_L, g_W, use = _price_grads(market, split, Ls, Ws)
        out = [T + pi, g_L.ravel(), g_W.ravel()]
        if q:
            out.append(use - market.b)
        out.append(loads - net.costs.sigma_conj_prime(t))
        return out

    def objective(z):
        s, lam_L, lam_W, y, t = unpack(z)
        T, _ = _route_terms(net, pairs, origin_list, t, np.zeros(nP))
        _, pi = _split_mass(market, s, lam_L, lam_W)
        Ls, Ws = _market_responses(market, lam_L, lam_W, y)
        penalty = float(net.costs.sigma_conj(t).sum())
        return float(T @ s) + _agent_value(market, s, pi, Ls, Ws, y) - penalty

    def aux(z):
        s, lam_L, lam_W, y, _ = unpack(z)
        split, _ = _split_mass(market, s, lam_L, lam_W)
        Ls, Ws = _market_responses(market, lam_L, lam_W, y)
        return {"d": split.ravel(),
                "L": np.concatenate([r.L for r in Ls]),
                "W": np.concatenate([r.W for r in Ws])}

    return SaddleProblem(blocks=blocks, oracle=oracle, objective=objective, aux=aux)


def solve_full(instance: FullInstance, cfg: SolveConfig | None = None,
               require_productive: bool = True) -> FullEquilibrium:
    """Full equilibrium: prices, shipments, edge times, and path flows.

    Runs mirror-prox on the assembled saddle, recovers bundles from
    the ergodic averages like the market solver, then re-solves the
    assignment at the recovered aggregate demand to expose edge flows,
    a path decomposition, and the two network-side residuals (Wardrop,
    and consistency of pair costs between the t-block and the
    recovered times).
    """
    cfg = cfg or SolveConfig(tol=1e-7, max_iter=100000, step=0.1)
    market = instance.market
    net = instance.network
    check = productivity_check(market)
    if require_productive and not check.ok:
        raise ValueError(f"productivity check failed: {check.violated}")

    problem = assemble_full(instance)
    sol = mirror_prox(problem, cfg, averaging="tail")

    q = len(market.b)
    pairs = market.pairs
    nO, nD, m = len(market.origins), len(market.destinations), market.m
    lam_L_avg = sol.z_avg[1].reshape(nO, m)
    lam_W_avg = sol.z_avg[2].reshape(nD, m)
    y_avg = sol.z_avg[3] if q else np.zeros(0)
    t_avg = sol.z_avg[-1]
    d, L, W, lam_L, lam_W, alpha, beta = _recover_bundles(
        market, sol.aux_avg, lam_L_avg, lam_W_avg)
    walras = walras_residuals(market, d, L, W, y_avg, lam_L, lam_W)

    agg = {pair: float(np.asarray(d[pair], dtype=float).sum()) for pair in pairs}
    demands = DemandMatrix(agg)
    inner = replace(cfg, tol=min(1e-8, cfg.tol / 100.0))
    assign = solve_wardrop(net, demands, inner)
    try:
        x = reconstruct_path_flows(net, demands.aggregate(), assign.flows,
                                   cfg.path_budget)
    except PathBudgetError:
        x = {}

    origin_list = sorted({i for i, _ in pairs}, key=net.node_index.get)
    T_block, _ = _route_terms(net, pairs, origin_list, t_avg, np.zeros(len(pairs)))
    T_rec, _ = _route_terms(net, pairs, origin_list, assign.times, np.zeros(len(pairs)))
    time_consistency = float(np.abs(T_block - T_rec).max(initial=0.0))

    return FullEquilibrium(
        d=d, L=L, alpha=alpha, W=W, beta=beta, y=y_avg, lam_L=lam_L, lam_W=lam_W,
        walras=walras, gap=sol.gap, iterations=sol.iterations,
        converged=sol.converged and assign.converged,
        flags=dict(sol.flags, productivity_ok=check.ok),
        t=t_avg, x=x, f=assign.flows,
        wardrop_residual=assign.wardrop_residual,
        time_consistency=time_consistency)
