"""Deterministic population dynamics over path and trip choices.

Two mean-field update rules share every rest point with the
entropy-smoothed solvers: the Logit rule mixes each block toward the
softmax load on current costs, and the imitation-Logit rule is the
multiplicative (mirror) version of the same descent, which preserves
the support of the starting state.  Each trajectory records the
entropic objective it descends (its Lyapunov function) and the
fixed-point residual of the exact Logit map, so convergence claims
are checkable per step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .assignment import (PATH_BUDGET, DemandMatrix, SolveConfig,
                         _check_demand_pairs, _logit_response,
                         _path_incidence, enumerate_simple_paths)
from .distribution import (DistributionInstance, Potential, _cost_table,
                           _default_dbar, _pair_costs, _potential_objective)
from .network import Network
from .saddle import ENTROPY_FLOOR, xlogx

KINDS = ("logit", "imitation_logit")


@dataclass(frozen=True)
class DynamicsConfig:
    """Update rule, temperature, step, horizon, and seed.

    The dynamics are deterministic; the seed only feeds randomized
    initial conditions when a simulation is asked to draw one.
    """

    kind: str = "logit"
    temperature: float = 1.0
    h: float = 0.5
    horizon: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dynamics kind {self.kind!r}")
        if not (self.temperature > 0):
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not (0.0 < self.h <= 1.0):
            raise ValueError(f"step h must lie in (0, 1], got {self.h}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be at least 1, got {self.horizon}")


@dataclass
class Trajectory:
    """States with per-step Lyapunov values and equilibrium distances.

    states has one row per recorded step (the start plus horizon
    updates); labels name its columns.  distance is the sup-norm
    fixed-point residual of the exact Logit map, which is independent
    of the step size.
    """

    states: np.ndarray
    lyapunov: np.ndarray
    distance: np.ndarray
    labels: list

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", *self.labels, "lyapunov", "distance"])
            for k in range(self.states.shape[0]):
                writer.writerow([k, *(repr(float(v)) for v in self.states[k]),
                                 repr(float(self.lyapunov[k])),
                                 repr(float(self.distance[k]))])


def _step_block(x: np.ndarray, G: np.ndarray, mass: float,
                cfg: DynamicsConfig) -> np.ndarray:
    """One update of a single simplex block, mass preserved."""
    if cfg.kind == "logit":
        resp = _logit_response(G, mass, cfg.temperature)
        new = (1.0 - cfg.h) * x + cfg.h * resp
    else:
        # multiplicative rule: support never grows, zeros stay zero
        logs = np.where(x > 0,
                        (1.0 - cfg.h) * np.log(np.maximum(x, ENTROPY_FLOOR))
                        - cfg.h * G / cfg.temperature, -math.inf)
        logs = logs - logs.max()
        new = np.exp(logs)
    return mass * new / new.sum()


def _initial_block(x0, mass: float, dim: int, rng: np.random.Generator,
                   label: str) -> np.ndarray:
    if x0 is None:
        return np.full(dim, mass / dim)
    if isinstance(x0, str) and x0 == "random":
        return mass * rng.dirichlet(np.ones(dim))
    x = np.asarray(x0, dtype=float)
    if x.shape != (dim,):
        raise ValueError(f"{label}: expected {dim} entries, got shape {x.shape}")
    if np.any(x < 0):
        raise ValueError(f"{label}: negative mass")
    total = float(x.sum())
    if not math.isclose(total, mass, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"{label}: mass {total} does not match demand {mass}")
    return x.copy()


def simulate_path_logit(network: Network, demands: DemandMatrix,
                        cfg: DynamicsConfig | None = None, x0=None,
                        budget: int = PATH_BUDGET) -> Trajectory:
    """Logit dynamics of path flows, one simplex block per od pair.

    x0 may be None (uniform), "random" (seeded Dirichlet draw per
    pair), or a dict keyed by od pair with flows aligned to the
    lexicographic path enumeration.  The recorded Lyapunov value is
    the congestion potential plus temperature-weighted entropy, whose
    minimizer is the stochastic loading.
    """
    cfg = cfg or DynamicsConfig()
    agg = demands.aggregate()
    _check_demand_pairs(network, agg)
    pairs = sorted(agg, key=lambda p: (network.node_index[p[0]], network.node_index[p[1]]))
    if not pairs:
        raise ValueError("no positive demand to simulate")
    paths = {p: enumerate_simple_paths(network, p[0], p[1], budget) for p in pairs}
    thetas = {p: _path_incidence(network, paths[p]) for p in pairs}
    rng = np.random.default_rng(cfg.seed)
    x = {}
    for p in pairs:
        given = x0.get(p) if isinstance(x0, dict) else x0
        x[p] = _initial_block(given, agg[p], len(paths[p]), rng, f"x0[{p!r}]")

    labels = [f"x[{o}->{d}][{'|'.join(str(k) for k in path)}]"
              for (o, d) in pairs for path in paths[(o, d)]]

    def costs(x):
        f = np.zeros(network.n_edges)
        for p in pairs:
            f += thetas[p].T @ x[p]
        t = network.costs.tau(f)
        return {p: thetas[p] @ t for p in pairs}, f

    def lyapunov(x, f):
        val = float(network.costs.sigma(f).sum())
        for p in pairs:
            val += cfg.temperature * float(xlogx(x[p], ref=agg[p]).sum())
        return val

    def distance(x, G):
        worst = 0.0
        for p in pairs:
            resp = _logit_response(G[p], agg[p], cfg.temperature)
            worst = max(worst, float(np.abs(x[p] - resp).max()))
        return worst

    states = np.empty((cfg.horizon + 1, len(labels)))
    lya = np.empty(cfg.horizon + 1)
    dist = np.empty(cfg.horizon + 1)
    for k in range(cfg.horizon + 1):
        G, f = costs(x)
        states[k] = np.concatenate([x[p] for p in pairs])
        lya[k] = lyapunov(x, f)
        dist[k] = distance(x, G)
        if k == cfg.horizon:
            break
        x = {p: _step_block(x[p], G[p], agg[p], cfg) for p in pairs}
    return Trajectory(states=states, lyapunov=lya, distance=dist, labels=labels)


def simulate_corr_logit(instance: DistributionInstance,
                        cfg: DynamicsConfig | None = None, x0=None,
                        solve_cfg: SolveConfig | None = None) -> Trajectory:
    """Logit dynamics of trip distribution on the capped-mass simplex.

    The state couples every od pair with a zero-cost idle option so
    total mass stays at the cap; pair costs come from the site
    marginals plus od travel times (re-solved per step for network
    transports, the fast variable tracking the slow one).  The
    recorded Lyapunov value is the distribution objective plus
    temperature-weighted entropy.
    """
    cfg = cfg or DynamicsConfig()
    solve_cfg = solve_cfg or SolveConfig()
    if not isinstance(instance.mode, Potential):
        raise ValueError("instance is not in the potential regime")
    n, m = len(instance.sources), len(instance.sinks)
    dbar = instance.mode.d_bar if instance.mode.d_bar is not None else _default_dbar(instance)
    rng = np.random.default_rng(cfg.seed)
    state = _initial_block(x0, dbar, n * m + 1, rng, "x0")

    labels = [f"d[{i}->{j}]" for i in instance.sources for j in instance.sinks]
    labels.append("idle")

    def costs(state):
        d = state[:-1].reshape(n, m)
        T, phi = _cost_table(instance, d, solve_cfg)
        G = np.append(_pair_costs(instance, d, T).ravel(), 0.0)
        return G, phi

    def lyapunov(state, phi):
        d = state[:-1].reshape(n, m)
        val = _potential_objective(instance, d, phi)
        return val + cfg.temperature * float(xlogx(state).sum())

    states = np.empty((cfg.horizon + 1, n * m + 1))
    lya = np.empty(cfg.horizon + 1)
    dist = np.empty(cfg.horizon + 1)
    for k in range(cfg.horizon + 1):
        G, phi = costs(state)
        resp = _logit_response(G, dbar, cfg.temperature)
        states[k] = state
        lya[k] = lyapunov(state, phi)
        dist[k] = float(np.abs(state - resp).max())
        if k == cfg.horizon:
            break
        state = _step_block(state, G, dbar, cfg)
    return Trajectory(states=states, lyapunov=lya, distance=dist, labels=labels)
