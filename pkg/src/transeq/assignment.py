"""Traffic assignment on congested networks.

Deterministic equilibrium is computed by Frank-Wolfe on the potential
(sum of per-edge integrals of the delay), with an exact bisection line
search and an all-or-nothing direction on current shortest paths.  The
dual value at t = tau(f) certifies the duality gap at every iterate.
Entropy-smoothed loading works on explicitly enumerated simple paths,
and the hard-capacity limit problem is solved as an exact linear
program with per-od edge flows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse

from .network import NO_PRED, HardCap, Network

FLOW_EPS = 1e-9  # flows below this are treated as zero in reports
PATH_BUDGET = 64  # default cap on enumerated simple paths per od pair
LINE_SEARCH_ITERS = 64  # bisection steps for the exact 1-D minimization
CAP_SLACK = 1e-7  # relative slack for calling a capacity constraint tight


class PathBudgetError(ValueError):
    """Simple-path enumeration exceeded its budget for some od pair."""


class DemandMatrix:
    """Nonnegative trip demands keyed by (origin, destination).

    Values are scalars or 1-D arrays (one entry per commodity); zero
    demands are allowed and dropped by the solvers.
    """

    def __init__(self, demands: dict):
        self.pairs = {}
        for (o, d), val in demands.items():
            arr = np.atleast_1d(np.asarray(val, dtype=float))
            if arr.ndim != 1:
                raise ValueError(f"demand for ({o!r}, {d!r}) must be scalar or 1-D")
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"demand for ({o!r}, {d!r}) must be finite and nonnegative")
            if o == d:
                raise ValueError(f"demand pair ({o!r}, {o!r}) is degenerate")
            self.pairs[(o, d)] = arr

    def aggregate(self) -> dict:
        """Per-pair totals over commodities, zero pairs dropped."""
        out = {}
        for pair, arr in self.pairs.items():
            tot = float(arr.sum())
            if tot > 0.0:
                out[pair] = tot
        return out

    @property
    def total(self) -> float:
        return float(sum(a.sum() for a in self.pairs.values()))


@dataclass
class SolveConfig:
    """Tolerances and knobs shared by the iterative solvers."""

    tol: float = 1e-6
    max_iter: int = 20000
    line_search: str = "exact"  # "exact" | "vanishing" (2/(k+2))
    gamma: float = 1.0  # entropy scale for distribution/market problems
    gamma_tilde: float = 1.0  # entropy scale for path-choice smoothing
    mu: float = 1e-2  # capacity-smoothing scale, echoed for steep-BPR runs
    step: float = 0.5  # dynamics / engine step size
    seed: int = 0
    path_budget: int = PATH_BUDGET

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter >= 1")
        if self.line_search not in ("exact", "vanishing"):
            raise ValueError(f"unknown line_search {self.line_search!r}")


@dataclass
class AssignmentResult:
    flows: np.ndarray
    times: np.ndarray
    beckmann: float
    dual_value: float
    gap: float
    wardrop_residual: float
    iterations: int
    converged: bool
    trace: dict = field(default_factory=dict)


@dataclass
class CostMap:
    """Equilibrium od costs T and the optimal potential value."""

    times: dict
    phi: float
    result: AssignmentResult


@dataclass
class StochasticResult:
    path_flows: dict
    flows: np.ndarray
    objective: float
    residual: float
    iterations: int
    converged: bool


@dataclass
class LpLimitResult:
    flows: np.ndarray
    times: np.ndarray
    objective: float


def beckmann(network: Network, f: np.ndarray) -> float:
    """Potential value: sum over edges of the integral of tau up to f_e."""
    f = np.asarray(f, dtype=float)
    if f.shape != (network.n_edges,):
        raise ValueError(f"expected {network.n_edges} flows, got shape {f.shape}")
    if np.any(f < 0):
        raise ValueError("flows must be nonnegative")
    return float(network.costs.sigma(f).sum())


def _check_demand_pairs(network: Network, agg: dict) -> None:
    admissible = set(network.od_pairs)
    for pair in agg:
        if pair not in admissible:
            raise ValueError(f"demand pair {pair!r} is not an admissible od pair")


def _all_or_nothing(network: Network, t: np.ndarray, agg: dict):
    """Load each od demand on its shortest path under times t.

    Returns (y, cost) where y is the edge loading and cost the total
    demand-weighted shortest path cost.
    """
    y = np.zeros(network.n_edges)
    cost = 0.0
    by_origin: dict = {}
    for (o, d), val in agg.items():
        by_origin.setdefault(o, []).append((d, val))
    for o in sorted(by_origin, key=network.node_index.get):
        dist, pred = network.shortest_path(t, o)
        for d, val in by_origin[o]:
            v = network.node_index[d]
            if not math.isfinite(dist[v]):
                raise ValueError(f"demand pair ({o!r}, {d!r}) is disconnected under current times")
            cost += val * dist[v]
            while pred[v] != NO_PRED:
                k = pred[v]
                y[k] += val
                v = network.node_index[network.edges[k].tail]
    return y, cost


def dual_value(network: Network, demands: DemandMatrix, t: np.ndarray) -> float:
    """Lower bound on the potential from feasible edge times t.

    t must dominate the free-flow times componentwise.  Edges whose
    conjugate is infinite at t (constant-time edges priced above their
    time) drive the bound to -inf.
    """
    t = np.asarray(t, dtype=float)
    free = network.costs.free
    if np.any(t < free - 1e-12):
        bad = int(np.argmax(free - t))
        raise ValueError(f"time on edge {bad} is below free flow ({t[bad]} < {free[bad]})")
    agg = demands.aggregate()
    _check_demand_pairs(network, agg)
    _, cost = _all_or_nothing(network, t, agg)
    conj = network.costs.sigma_conj(t)
    if np.any(np.isinf(conj)):
        return -math.inf
    return float(cost - conj.sum())


def _exact_step(network: Network, f: np.ndarray, delta: np.ndarray) -> float:
    """Bisection on the directional derivative of the potential."""
    tau = network.costs.tau

    def dphi(alpha: float) -> float:
        return float(delta @ tau(f + alpha * delta))

    if dphi(1.0) <= 0.0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(LINE_SEARCH_ITERS):
        mid = 0.5 * (lo + hi)
        if dphi(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def solve_wardrop(network: Network, demands: DemandMatrix, cfg: SolveConfig | None = None) -> AssignmentResult:
    """Deterministic user equilibrium by Frank-Wolfe.

    Multi-commodity demands are summed per od pair (assignment is
    commodity blind).  Stops when the duality gap at t = tau(f) drops
    to cfg.tol; a run that exhausts max_iter comes back with
    converged=False rather than raising.

    Returns:
        AssignmentResult with flows, times, both bound values, the gap,
        a path-reconstruction Wardrop residual, and a per-iterate trace.
    """
    cfg = cfg or SolveConfig()
    agg = demands.aggregate()
    _check_demand_pairs(network, agg)
    if network.costs.has_hardcap:
        raise ValueError("hardcap edges have no finite congestion curve; use lp_limit")
    trace = {"beckmann": [], "dual": [], "gap": [], "step": []}
    if not agg:
        f = np.zeros(network.n_edges)
        t = network.costs.tau(f)
        beck = beckmann(network, f)
        return AssignmentResult(f, t, beck, beck, 0.0, 0.0, 0, True, trace)
    f, _ = _all_or_nothing(network, network.free_flow_times(), agg)
    gap = math.inf
    beck = dual = 0.0
    iterations = 0
    converged = False
    for k in range(1, cfg.max_iter + 1):
        iterations = k
        t = network.costs.tau(f)
        y, sp_cost = _all_or_nothing(network, t, agg)
        beck = float(network.costs.sigma(f).sum())
        dual = float(sp_cost - network.costs.sigma_conj(t).sum())
        gap = beck - dual
        trace["beckmann"].append(beck)
        trace["dual"].append(dual)
        trace["gap"].append(gap)
        if gap <= cfg.tol:
            converged = True
            trace["step"].append(0.0)
            break
        delta = y - f
        if cfg.line_search == "exact":
            alpha = _exact_step(network, f, delta)
        else:
            alpha = 2.0 / (k + 2.0)
        trace["step"].append(alpha)
        f = (1.0 - alpha) * f + alpha * y
    t = network.costs.tau(f)
    residual = _reconstruction_residual(network, agg, f, t, cfg.path_budget)
    return AssignmentResult(f, t, beck, dual, gap, residual, iterations, converged, trace)


def enumerate_simple_paths(network: Network, origin, dest, budget: int = PATH_BUDGET) -> list:
    """All simple directed paths origin->dest, as edge-index tuples.

    Paths come out in lexicographic edge-index order.  Raises
    PathBudgetError as soon as the count would exceed the budget.
    """
    s = network.node_index[origin]
    goal = network.node_index[dest]
    heads = network._heads
    tails = network._tails
    out = network._out
    paths: list = []
    stack: list[int] = []
    on_path = {s}

    def visit(u: int):
        for k in out[u]:
            v = heads[k]
            if v in on_path:
                continue
            stack.append(k)
            if v == goal:
                if len(paths) >= budget:
                    raise PathBudgetError(
                        f"more than {budget} simple paths for od pair ({origin!r}, {dest!r})")
                paths.append(tuple(stack))
            else:
                on_path.add(v)
                visit(v)
                on_path.discard(v)
            stack.pop()

    visit(s)
    if not paths:
        raise ValueError(f"od pair ({origin!r}, {dest!r}) has no directed path")
    return paths


def _path_incidence(network: Network, paths: list) -> np.ndarray:
    theta = np.zeros((len(paths), network.n_edges))
    for i, p in enumerate(paths):
        for k in p:
            theta[i, k] += 1.0
    return theta


def reconstruct_path_flows(network: Network, agg: dict, f: np.ndarray,
                           budget: int = PATH_BUDGET, iters: int = 2000) -> dict:
    """Project link flows onto per-od path flows (least squares).

    Frank-Wolfe on 0.5*||Theta^T x - f||^2 over the product of scaled
    simplices; good enough to identify which paths carry flow at desk
    scale.
    """
    pairs = sorted(agg, key=lambda p: (network.node_index[p[0]], network.node_index[p[1]]))
    paths_by_pair = {p: enumerate_simple_paths(network, p[0], p[1], budget) for p in pairs}
    thetas = {p: _path_incidence(network, paths_by_pair[p]) for p in pairs}
    x = {p: np.full(len(paths_by_pair[p]), agg[p] / len(paths_by_pair[p])) for p in pairs}
    for _ in range(iters):
        phi = np.zeros(network.n_edges)
        for p in pairs:
            phi += thetas[p].T @ x[p]
        r = phi - f
        if float(np.abs(r).max(initial=0.0)) <= 1e-12:
            break
        direction = {}
        for p in pairs:
            grad = thetas[p] @ r
            s = np.zeros_like(x[p])
            s[int(np.argmin(grad))] = agg[p]
            direction[p] = s - x[p]
        dir_link = np.zeros(network.n_edges)
        for p in pairs:
            dir_link += thetas[p].T @ direction[p]
        denom = float(dir_link @ dir_link)
        if denom <= 1e-18:
            break
        alpha = min(1.0, max(0.0, -float(r @ dir_link) / denom))
        if alpha <= 0.0:
            break
        for p in pairs:
            x[p] = x[p] + alpha * direction[p]
    return {p: {paths_by_pair[p][i]: float(x[p][i]) for i in range(len(paths_by_pair[p]))}
            for p in pairs}


def _reconstruction_residual(network: Network, agg: dict, f: np.ndarray,
                             t: np.ndarray, budget: int) -> float:
    if not agg:
        return 0.0
    try:
        flows = reconstruct_path_flows(network, agg, f, budget)
    except PathBudgetError:
        return math.nan  # too many paths to certify; gap still bounds optimality
    return wardrop_residual(network, flows, times=t)


def wardrop_residual(network: Network, path_flows: dict, times: np.ndarray | None = None) -> float:
    """Max excess cost of a used path over its od's shortest cost.

    path_flows maps (origin, dest) to {path: flow}; link times default
    to tau at the implied link flows.  Paths that do not connect their
    od pair are rejected.
    """
    f = np.zeros(network.n_edges)
    for (o, d), flows in path_flows.items():
        for path, val in flows.items():
            if val < 0:
                raise ValueError(f"negative path flow on {path} for ({o!r}, {d!r})")
            nodes = network.path_nodes(list(path))
            if nodes[0] != o or nodes[-1] != d:
                raise ValueError(f"path {path} does not connect ({o!r}, {d!r})")
            for k in path:
                f[k] += val
    t = network.costs.tau(f) if times is None else np.asarray(times, dtype=float)
    worst = 0.0
    for (o, d), flows in path_flows.items():
        dist, _ = network.shortest_path(t, o)
        best = dist[network.node_index[d]]
        for path, val in flows.items():
            if val > FLOW_EPS:
                worst = max(worst, network.path_cost(list(path), t) - best)
    return float(worst)


def cost_map(network: Network, demands: DemandMatrix, cfg: SolveConfig | None = None) -> CostMap:
    """Equilibrium od travel costs and the optimal potential value.

    The cost vector is the gradient of the optimal-value function of
    the assignment problem in the demands, which is what makes its
    finite-difference check meaningful.
    """
    cfg = cfg or SolveConfig()
    result = solve_wardrop(network, demands, cfg)
    agg = demands.aggregate()
    times: dict = {}
    origins = sorted({o for o, _ in demands.pairs}, key=network.node_index.get)
    for o in origins:
        dist, _ = network.shortest_path(result.times, o)
        for (oo, d) in demands.pairs:
            if oo == o:
                times[(o, d)] = float(dist[network.node_index[d]])
    return CostMap(times=times, phi=result.beckmann, result=result)


def _logit_response(G: np.ndarray, mass: float, gamma_tilde: float) -> np.ndarray:
    z = -G / gamma_tilde
    z -= z.max()
    w = np.exp(z)
    return mass * w / w.sum()


def solve_stochastic(network: Network, demands: DemandMatrix,
                     cfg: SolveConfig | None = None) -> StochasticResult:
    """Entropy-smoothed path loading over enumerated simple paths.

    Minimizes the potential plus gamma_tilde * sum x ln(x/d) per od by
    entropic mirror descent with a monotone backtracking step; the
    fixed point is the logit loading on current path costs.
    """
    cfg = cfg or SolveConfig()
    gt = cfg.gamma_tilde
    if gt <= 0:
        raise ValueError("gamma_tilde must be positive")
    agg = demands.aggregate()
    _check_demand_pairs(network, agg)
    pairs = sorted(agg, key=lambda p: (network.node_index[p[0]], network.node_index[p[1]]))
    if not pairs:
        return StochasticResult({}, np.zeros(network.n_edges), 0.0, 0.0, 0, True)
    paths = {p: enumerate_simple_paths(network, p[0], p[1], cfg.path_budget) for p in pairs}
    thetas = {p: _path_incidence(network, paths[p]) for p in pairs}

    def link_flows(x: dict) -> np.ndarray:
        f = np.zeros(network.n_edges)
        for p in pairs:
            f += thetas[p].T @ x[p]
        return f

    def objective(x: dict, f: np.ndarray) -> float:
        val = float(network.costs.sigma(f).sum())
        for p in pairs:
            xp = x[p]
            val += gt * float(np.sum(xp * np.log(np.maximum(xp, 1e-300) / agg[p])))
        return val

    def damped(x: dict, response: dict, th: float) -> dict:
        out = {}
        for p in pairs:
            logs = th * np.log(np.maximum(x[p], 1e-300)) \
                + (1.0 - th) * np.log(np.maximum(response[p], 1e-300))
            logs -= logs.max()
            w = np.exp(logs)
            out[p] = agg[p] * w / w.sum()
        return out

    t0 = network.free_flow_times()
    x = {}
    for p in pairs:
        G0 = thetas[p] @ t0
        x[p] = _logit_response(G0, agg[p], gt)
    f = link_flows(x)
    obj = objective(x, f)
    theta = 0.5  # geometric damping toward the logit response (1 = stay put)
    residual = math.inf
    iterations = 0
    converged = False
    for k in range(1, cfg.max_iter + 1):
        iterations = k
        t = network.costs.tau(f)
        response = {}
        residual = 0.0
        for p in pairs:
            G = thetas[p] @ t
            response[p] = _logit_response(G, agg[p], gt)
            residual = max(residual, float(np.abs(x[p] - response[p]).max()))
        if residual <= cfg.tol:
            converged = True
            break
        # Try a ladder of damping levels around the current one and keep
        # the best objective; moving the level in log space lets the
        # step adapt by orders of magnitude in a few iterations.
        best = None
        for th in (theta ** 1.5, theta, theta ** (2.0 / 3.0)):
            th = min(max(th, 1e-3), 0.999)
            x_try = damped(x, response, th)
            f_try = link_flows(x_try)
            obj_try = objective(x_try, f_try)
            if best is None or obj_try < best[0] - 1e-18:
                best = (obj_try, th, x_try, f_try)
        if best[0] <= obj + 1e-15:
            obj, theta, x, f = best
        else:
            theta = min(0.999, 0.5 + 0.5 * theta)  # overshoot: damp harder
    path_flows = {p: {paths[p][i]: float(x[p][i]) for i in range(len(paths[p]))} for p in pairs}
    return StochasticResult(path_flows, f, obj, residual, iterations, converged)


def _bfs_max_flow(n_nodes: int, arcs: list, supply: dict, demand: dict):
    """Edmonds-Karp on an aggregate graph; returns (value, cut_nodes).

    arcs are (tail, head, capacity); a super source/sink wires up the
    supplies and demands.  Used only to name a violated cut when the
    LP is infeasible.
    """
    S, T = n_nodes, n_nodes + 1
    cap: dict = {}

    def add(u, v, c):
        cap[(u, v)] = cap.get((u, v), 0.0) + c
        cap.setdefault((v, u), 0.0)

    for u, v, c in arcs:
        add(u, v, c)
    for v, s in supply.items():
        add(S, v, s)
    for v, s in demand.items():
        add(v, T, s)
    adj: dict = {}
    for (u, v) in cap:
        adj.setdefault(u, []).append(v)
    total = 0.0
    while True:
        parent = {S: None}
        queue = [S]
        while queue and T not in parent:
            u = queue.pop(0)
            for v in adj.get(u, []):
                if v not in parent and cap[(u, v)] > 1e-12:
                    parent[v] = u
                    queue.append(v)
        if T not in parent:
            break
        bottleneck = math.inf
        v = T
        while parent[v] is not None:
            u = parent[v]
            bottleneck = min(bottleneck, cap[(u, v)])
            v = u
        v = T
        while parent[v] is not None:
            u = parent[v]
            cap[(u, v)] -= bottleneck
            cap[(v, u)] += bottleneck
            v = u
        total += bottleneck
    reachable = {S}
    queue = [S]
    while queue:
        u = queue.pop(0)
        for v in adj.get(u, []):
            if v not in reachable and cap[(u, v)] > 1e-12:
                reachable.add(v)
                queue.append(v)
    return total, {v for v in reachable if v < n_nodes}


def lp_limit(network: Network, demands: DemandMatrix) -> LpLimitResult:
    """Exact min-cost routing when every edge is a HardCap.

    Solves the per-od edge-flow linear program (shared capacities,
    paired demands) and reads congestion prices off the capacity duals,
    so t >= t0 with t_e > t0_e only on saturated edges.
    """
    if not all(isinstance(e.cost, HardCap) for e in network.edges):
        raise ValueError("lp_limit needs every edge to be a HardCap")
    agg = demands.aggregate()
    _check_demand_pairs(network, agg)
    E, V = network.n_edges, network.n_nodes
    t0 = network.free_flow_times()
    caps = network.costs.hard_cap
    if not agg:
        return LpLimitResult(np.zeros(E), t0, 0.0)
    pairs = sorted(agg, key=lambda p: (network.node_index[p[0]], network.node_index[p[1]]))
    W = len(pairs)
    inc = scipy.sparse.lil_matrix((V, E))
    for k in range(E):
        inc[network._tails[k], k] += 1.0
        inc[network._heads[k], k] -= 1.0
    a_eq = scipy.sparse.block_diag([inc] * W, format="csr")
    b_eq = np.zeros(W * V)
    for i, (o, d) in enumerate(pairs):
        b_eq[i * V + network.node_index[o]] = agg[(o, d)]
        b_eq[i * V + network.node_index[d]] = -agg[(o, d)]
    a_ub = scipy.sparse.hstack([scipy.sparse.identity(E)] * W, format="csr")
    res = scipy.optimize.linprog(
        c=np.tile(t0, W), A_ub=a_ub, b_ub=caps, A_eq=a_eq, b_eq=b_eq,
        bounds=(0, None), method="highs")
    if res.status == 2:
        _raise_infeasible(network, agg)
    if not res.success:
        raise RuntimeError(f"capacitated routing LP failed: {res.message}")
    per_od = res.x.reshape(W, E)
    f = per_od.sum(axis=0)
    eta = np.maximum(-res.ineqlin.marginals, 0.0)
    slack = caps - f
    eta[slack > CAP_SLACK * np.maximum(1.0, caps)] = 0.0  # keep prices only on tight edges
    return LpLimitResult(f, t0 + eta, float(res.fun))


def _raise_infeasible(network: Network, agg: dict):
    arcs = [(int(network._tails[k]), int(network._heads[k]), float(network.costs.hard_cap[i]))
            for i, k in enumerate(network.costs.hard)]
    for (o, d), val in agg.items():
        value, cut = _bfs_max_flow(network.n_nodes,
                                   arcs,
                                   {network.node_index[o]: val},
                                   {network.node_index[d]: val})
        if value < val - 1e-9:
            names = sorted((network.nodes[v] for v in cut), key=str)
            raise ValueError(
                f"demand {val} for od pair ({o!r}, {d!r}) exceeds the capacity {value} "
                f"of the cut around nodes {names}")
    supply: dict = {}
    demand: dict = {}
    for (o, d), val in agg.items():
        supply[network.node_index[o]] = supply.get(network.node_index[o], 0.0) + val
        demand[network.node_index[d]] = demand.get(network.node_index[d], 0.0) + val
    total = sum(supply.values())
    value, cut = _bfs_max_flow(network.n_nodes, arcs, supply, demand)
    if value < total - 1e-9:
        names = sorted((network.nodes[v] for v in cut), key=str)
        raise ValueError(
            f"total demand {total} exceeds the capacity {value} of the cut around nodes {names}")
    raise ValueError("capacitated routing is infeasible for the paired demands")
