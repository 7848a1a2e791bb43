"""Directed networks with separable congestion costs on edges.

Each edge carries one cost family: affine delay, BPR-style polynomial
delay, or a hard capacity (linear time up to a cap, used by the LP
limit solver).  Parallel edges are allowed; edges are identified by
their position in the edge list.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

NO_PRED = -1  # predecessor sentinel for origins and unreachable nodes
CONJ_TOL = 1e-12  # slack when deciding whether t is below free flow


@dataclass(frozen=True)
class Affine:
    """Travel time a + b*f.

    a is the free-flow time (>= 0), b the congestion slope (>= 0).
    b = 0 gives a constant-time edge whose conjugate is a hard wall at a.
    """

    a: float
    b: float = 0.0

    def __post_init__(self):
        if not (self.a >= 0.0) or not math.isfinite(self.a):
            raise ValueError(f"affine cost needs a >= 0, got a={self.a}")
        if not (self.b >= 0.0) or not math.isfinite(self.b):
            raise ValueError(f"affine cost needs b >= 0, got b={self.b}")

    def tau(self, f: float) -> float:
        return self.a + self.b * f

    def sigma(self, f: float) -> float:
        return self.a * f + 0.5 * self.b * f * f

    def sigma_conj(self, t: float) -> float:
        if t <= self.a + CONJ_TOL:
            return 0.0
        if self.b == 0.0:
            return math.inf  # dom sigma* is (-inf, a] for constant edges
        return (t - self.a) ** 2 / (2.0 * self.b)

    def sigma_conj_prime(self, t: float) -> float:
        if t <= self.a or self.b == 0.0:
            return 0.0
        return (t - self.a) / self.b

    def free_flow(self) -> float:
        return self.a


@dataclass(frozen=True)
class BPR:
    """Travel time t0 * (1 + rho * (f/cap)**power)."""

    t0: float
    cap: float
    rho: float = 0.15
    power: float = 4.0

    def __post_init__(self):
        if not (self.t0 > 0.0):
            raise ValueError(f"bpr cost needs t0 > 0, got {self.t0}")
        if not (self.cap > 0.0):
            raise ValueError(f"bpr cost needs cap > 0, got {self.cap}")
        if not (self.rho > 0.0):
            raise ValueError(f"bpr cost needs rho > 0, got {self.rho}")
        if not (self.power >= 1.0):
            raise ValueError(f"bpr cost needs power >= 1, got {self.power}")

    def tau(self, f: float) -> float:
        return self.t0 * (1.0 + self.rho * (f / self.cap) ** self.power)

    def sigma(self, f: float) -> float:
        q = self.power
        return self.t0 * f + self.t0 * self.rho * self.cap / (q + 1.0) * (f / self.cap) ** (q + 1.0)

    def inverse_tau(self, t: float) -> float:
        """Flow at which the delay equals t (0 below free flow)."""
        if t <= self.t0:
            return 0.0
        return self.cap * ((t / self.t0 - 1.0) / self.rho) ** (1.0 / self.power)

    def sigma_conj(self, t: float) -> float:
        if t <= self.t0 + CONJ_TOL:
            return 0.0
        f = self.inverse_tau(t)
        return f * t - self.sigma(f)

    def sigma_conj_prime(self, t: float) -> float:
        return self.inverse_tau(t)

    def free_flow(self) -> float:
        return self.t0


@dataclass(frozen=True)
class HardCap:
    """Constant time t0 up to flow cap, infeasible above.

    Only the LP limit solver accepts these edges; the Beckmann
    machinery rejects them.  The conjugate cap*(t - t0)_+ is what the
    capacitated dual needs.
    """

    t0: float
    cap: float

    def __post_init__(self):
        if not (self.t0 > 0.0):
            raise ValueError(f"hardcap cost needs t0 > 0, got {self.t0}")
        if not (self.cap > 0.0):
            raise ValueError(f"hardcap cost needs cap > 0, got {self.cap}")

    def tau(self, f: float) -> float:
        raise ValueError("hardcap edges have no finite congestion curve; use lp_limit")

    def sigma(self, f: float) -> float:
        if f > self.cap:
            return math.inf
        return self.t0 * f

    def sigma_conj(self, t: float) -> float:
        return self.cap * max(t - self.t0, 0.0)

    def sigma_conj_prime(self, t: float) -> float:
        return self.cap if t > self.t0 else 0.0

    def free_flow(self) -> float:
        return self.t0


CostFunction = Affine | BPR | HardCap


@dataclass(frozen=True)
class Edge:
    tail: Hashable
    head: Hashable
    cost: CostFunction


class _CostArrays:
    """Vectorized per-edge cost evaluation, grouped by family."""

    def __init__(self, costs: Sequence[CostFunction]):
        self.n = len(costs)
        kinds = np.array([0 if isinstance(c, Affine) else 1 if isinstance(c, BPR) else 2
                          for c in costs])
        self.aff = np.where(kinds == 0)[0]
        self.bpr = np.where(kinds == 1)[0]
        self.hard = np.where(kinds == 2)[0]
        self.aff_a = np.array([costs[i].a for i in self.aff], dtype=float)
        self.aff_b = np.array([costs[i].b for i in self.aff], dtype=float)
        self.bpr_t0 = np.array([costs[i].t0 for i in self.bpr], dtype=float)
        self.bpr_cap = np.array([costs[i].cap for i in self.bpr], dtype=float)
        self.bpr_rho = np.array([costs[i].rho for i in self.bpr], dtype=float)
        self.bpr_q = np.array([costs[i].power for i in self.bpr], dtype=float)
        self.hard_t0 = np.array([costs[i].t0 for i in self.hard], dtype=float)
        self.hard_cap = np.array([costs[i].cap for i in self.hard], dtype=float)
        self.free = np.empty(self.n)
        self.free[self.aff] = self.aff_a
        self.free[self.bpr] = self.bpr_t0
        self.free[self.hard] = self.hard_t0

    @property
    def has_hardcap(self) -> bool:
        return self.hard.size > 0

    def tau(self, f: np.ndarray) -> np.ndarray:
        if self.has_hardcap:
            raise ValueError("hardcap edges have no finite congestion curve; use lp_limit")
        out = np.empty(self.n)
        out[self.aff] = self.aff_a + self.aff_b * f[self.aff]
        if self.bpr.size:
            ratio = f[self.bpr] / self.bpr_cap
            out[self.bpr] = self.bpr_t0 * (1.0 + self.bpr_rho * ratio ** self.bpr_q)
        return out

    def sigma(self, f: np.ndarray) -> np.ndarray:
        if self.has_hardcap:
            raise ValueError("hardcap edges have no finite congestion curve; use lp_limit")
        out = np.empty(self.n)
        fa = f[self.aff]
        out[self.aff] = self.aff_a * fa + 0.5 * self.aff_b * fa * fa
        if self.bpr.size:
            fb = f[self.bpr]
            ratio = fb / self.bpr_cap
            out[self.bpr] = (self.bpr_t0 * fb
                             + self.bpr_t0 * self.bpr_rho * self.bpr_cap / (self.bpr_q + 1.0)
                             * ratio ** (self.bpr_q + 1.0))
        return out

    def sigma_conj(self, t: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        if self.aff.size:
            ta = t[self.aff]
            above = ta > self.aff_a + CONJ_TOL
            pos_b = self.aff_b > 0.0
            quad = above & pos_b
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = np.where(quad, (ta - self.aff_a) ** 2 / (2.0 * self.aff_b), 0.0)
            vals = np.where(above & ~pos_b, np.inf, vals)  # hard wall for b = 0
            out[self.aff] = vals
        if self.bpr.size:
            tb = t[self.bpr]
            fb = self._bpr_inverse(tb)
            ratio = fb / self.bpr_cap
            sig = (self.bpr_t0 * fb
                   + self.bpr_t0 * self.bpr_rho * self.bpr_cap / (self.bpr_q + 1.0)
                   * ratio ** (self.bpr_q + 1.0))
            out[self.bpr] = np.where(tb > self.bpr_t0 + CONJ_TOL, fb * tb - sig, 0.0)
        if self.hard.size:
            out[self.hard] = self.hard_cap * np.maximum(t[self.hard] - self.hard_t0, 0.0)
        return out

    def _bpr_inverse(self, tb: np.ndarray) -> np.ndarray:
        arg = np.maximum(tb / self.bpr_t0 - 1.0, 0.0) / self.bpr_rho
        return self.bpr_cap * arg ** (1.0 / self.bpr_q)

    def sigma_conj_prime(self, t: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        if self.aff.size:
            ta = t[self.aff]
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = np.where(self.aff_b > 0.0,
                                np.maximum(ta - self.aff_a, 0.0) / self.aff_b, 0.0)
            out[self.aff] = vals
        if self.bpr.size:
            out[self.bpr] = self._bpr_inverse(t[self.bpr])
        if self.hard.size:
            out[self.hard] = np.where(t[self.hard] > self.hard_t0, self.hard_cap, 0.0)
        return out


class Network:
    """Node/edge container with deterministic shortest-path machinery.

    Args:
        nodes: hashable node ids, unique.
        edges: Edge records; order fixes the edge indexing used everywhere.
        sources: nodes allowed as trip origins.
        sinks: nodes allowed as trip destinations.
        od_pairs: admissible (origin, destination) pairs, a subset of
            sources x sinks.  Defaults to the full product.
    """

    def __init__(self, nodes, edges, sources=None, sinks=None, od_pairs=None):
        self.nodes = list(nodes)
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("duplicate node ids")
        self.node_index = {v: i for i, v in enumerate(self.nodes)}
        self.edges = [e if isinstance(e, Edge) else Edge(*e) for e in edges]
        for k, e in enumerate(self.edges):
            if e.tail not in self.node_index or e.head not in self.node_index:
                raise ValueError(f"edge {k} endpoints {e.tail!r}->{e.head!r} not in nodes")
            if e.tail == e.head:
                raise ValueError(f"edge {k} is a self loop at {e.tail!r}")
        self.sources = list(sources) if sources is not None else list(self.nodes)
        self.sinks = list(sinks) if sinks is not None else list(self.nodes)
        for v in self.sources + self.sinks:
            if v not in self.node_index:
                raise ValueError(f"source/sink {v!r} not in nodes")
        if od_pairs is None:
            od_pairs = [(o, d) for o in self.sources for d in self.sinks if o != d]
        self.od_pairs = [tuple(p) for p in od_pairs]
        for o, d in self.od_pairs:
            if o not in self.sources or d not in self.sinks:
                raise ValueError(f"od pair ({o!r}, {d!r}) not within sources x sinks")
            if o == d:
                raise ValueError(f"od pair ({o!r}, {o!r}) is degenerate")
        self._tails = np.array([self.node_index[e.tail] for e in self.edges], dtype=int)
        self._heads = np.array([self.node_index[e.head] for e in self.edges], dtype=int)
        # out_edges[v] lists edge indices in increasing order (tie-break order)
        self._out = [[] for _ in self.nodes]
        for k in range(len(self.edges)):
            self._out[self._tails[k]].append(k)
        self.costs = _CostArrays([e.cost for e in self.edges])
        for o, d in self.od_pairs:
            if not self._reachable(o, d):
                raise ValueError(f"od pair ({o!r}, {d!r}) has no directed path")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def free_flow_times(self) -> np.ndarray:
        return self.costs.free.copy()

    def _reachable(self, origin, dest) -> bool:
        seen = {self.node_index[origin]}
        stack = [self.node_index[origin]]
        target = self.node_index[dest]
        while stack:
            u = stack.pop()
            if u == target:
                return True
            for k in self._out[u]:
                h = self._heads[k]
                if h not in seen:
                    seen.add(h)
                    stack.append(h)
        return target in seen

    def shortest_path(self, t: np.ndarray, origin) -> tuple[np.ndarray, np.ndarray]:
        """Dijkstra distances and predecessor edges from one origin.

        t must be nonnegative edge times.  Ties are broken by rescanning
        edges in index order, so the predecessor of v is the smallest
        edge index attaining dist[tail] + t = dist[v].  Unreachable
        nodes get dist = inf and predecessor NO_PRED.

        Returns:
            (dist, pred): float distances per node and the predecessor
            edge index per node (NO_PRED at the origin and off-tree).
        """
        t = np.asarray(t, dtype=float)
        if t.shape != (self.n_edges,):
            raise ValueError(f"expected {self.n_edges} edge times, got shape {t.shape}")
        if np.any(t < 0) or np.any(np.isnan(t)):
            raise ValueError("edge times must be nonnegative")
        n = self.n_nodes
        dist = np.full(n, math.inf)
        done = np.zeros(n, dtype=bool)
        s = self.node_index[origin]
        dist[s] = 0.0
        heap = [(0.0, s)]
        while heap:
            du, u = heapq.heappop(heap)
            if done[u] or du > dist[u]:
                continue
            done[u] = True
            for k in self._out[u]:
                v = self._heads[k]
                nd = du + t[k]
                if nd < dist[v]:
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        pred = np.full(n, NO_PRED, dtype=int)
        for k in range(self.n_edges):
            v = self._heads[k]
            u = self._tails[k]
            if pred[v] == NO_PRED and v != s and math.isfinite(dist[v]) \
                    and dist[u] + t[k] == dist[v]:
                pred[v] = k
        return dist, pred

    def path_nodes(self, path: Sequence[int]) -> list:
        """Node sequence visited by a path given as edge indices."""
        self.validate_path(path)
        nodes = [self.edges[path[0]].tail]
        nodes += [self.edges[k].head for k in path]
        return nodes

    def validate_path(self, path: Sequence[int]) -> None:
        """Reject non-consecutive or non-simple edge sequences."""
        if len(path) == 0:
            raise ValueError("empty path")
        for k in path:
            if not (0 <= k < self.n_edges):
                raise ValueError(f"edge index {k} out of range")
        for a, b in zip(path, path[1:]):
            if self.edges[a].head != self.edges[b].tail:
                raise ValueError(f"edges {a} and {b} are not consecutive")
        visited = [self.edges[path[0]].tail] + [self.edges[k].head for k in path]
        if len(set(visited)) != len(visited):
            raise ValueError("path revisits a node")

    def path_cost(self, path: Sequence[int], t: np.ndarray) -> float:
        return float(sum(t[k] for k in path))


def edge_tau(cost: CostFunction, f: float) -> float:
    """Travel time of one edge at flow f (f >= 0)."""
    if f < 0:
        raise ValueError(f"flow must be nonnegative, got {f}")
    return cost.tau(f)


def edge_sigma(cost: CostFunction, f: float) -> float:
    """Integral of the travel time from 0 to f."""
    if f < 0:
        raise ValueError(f"flow must be nonnegative, got {f}")
    return cost.sigma(f)


def edge_sigma_conjugate(cost: CostFunction, t: float) -> float:
    """Convex conjugate of edge_sigma over f >= 0 (inf where undefined)."""
    return cost.sigma_conj(t)


def shortest_path(network: Network, t: np.ndarray, origin):
    """Module-level alias for Network.shortest_path."""
    return network.shortest_path(t, origin)
