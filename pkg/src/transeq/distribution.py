"""Origin-destination mass formation over a congested or fixed cost map.

Two regimes are covered.  In the potential regime each origin carries a
convex production cost and each destination a concave utility (stored
as a convex penalty), and the od matrix minimizes their sum plus the
assignment potential; a fictitious zero-cost option absorbs the unused
mass so the feasible set is a scaled simplex.  In the constrained
regime row and column margins are pinned instead, the site potentials
become multipliers, and the problem is a saddle over the transport
simplex handled by the mirror-prox engine.  An alternating-scaling
solver for the fixed-cost case doubles as an independent oracle.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.special

from .assignment import FLOW_EPS, DemandMatrix, SolveConfig, cost_map
from .network import Network
from .saddle import (BlockSpec, Reals, SaddleProblem, Simplex, _project_simplex,
                     mirror_prox, xlogx)

ARMIJO_C = 1e-4  # sufficient-decrease fraction for projected gradient
STEP_FLOOR = 1e-12  # backtracking gives up below this step


@dataclass(frozen=True)
class SigmaSite:
    """Quadratic site penalty alpha * f + beta * f**2 / 2.

    Production sites price output of the origin; consumption sites
    store utility with flipped sign, so alpha is typically negative
    there.  beta >= 0 keeps the penalty convex.
    """

    node: str
    role: str  # "production" | "consumption"
    alpha: float
    beta: float = 0.0

    def __post_init__(self):
        if self.role not in ("production", "consumption"):
            raise ValueError(f"unknown site role {self.role!r}")
        if self.beta < 0:
            raise ValueError(f"site {self.node!r} needs beta >= 0, got {self.beta}")

    def value(self, f: float) -> float:
        return self.alpha * f + 0.5 * self.beta * f * f

    def marginal(self, f: float) -> float:
        return self.alpha + self.beta * f


@dataclass(frozen=True)
class FixedCosts:
    """Constant od cost table; the degenerate linear cost map."""

    sources: tuple
    sinks: tuple
    T: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.T, dtype=float)
        if T.shape != (len(self.sources), len(self.sinks)):
            raise ValueError(
                f"cost table shape {T.shape} does not match "
                f"{len(self.sources)} sources x {len(self.sinks)} sinks")
        if not np.all(np.isfinite(T)):
            raise ValueError("cost table must be finite")
        object.__setattr__(self, "T", T)


@dataclass(frozen=True)
class Potential:
    """Free-mass regime; d_bar caps total mass (None = derived bound)."""

    d_bar: float | None = None

    def __post_init__(self):
        if self.d_bar is not None and not (self.d_bar > 0):
            raise ValueError(f"d_bar must be positive, got {self.d_bar}")


@dataclass(frozen=True)
class Constrained:
    """Pinned margins; gamma weights the entropy of the coupling."""

    L: np.ndarray
    W: np.ndarray
    gamma: float

    def __post_init__(self):
        L = np.asarray(self.L, dtype=float)
        W = np.asarray(self.W, dtype=float)
        if np.any(L < 0) or np.any(W < 0):
            raise ValueError("margins must be nonnegative")
        scale = max(float(L.sum()), float(W.sum()), 1.0)
        if abs(float(L.sum()) - float(W.sum())) > 1e-9 * scale:
            raise ValueError(
                f"margins must balance: sum L = {float(L.sum())}, sum W = {float(W.sum())}")
        if not (self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "W", W)

    @property
    def N(self) -> float:
        return float(np.asarray(self.L).sum())


@dataclass
class DistributionInstance:
    """Transport layer (network or fixed table), sites, and the regime."""

    transport: Network | FixedCosts
    mode: Potential | Constrained
    sites: tuple = ()

    def __post_init__(self):
        self.sites = tuple(self.sites)
        srcs, snks = self.sources, self.sinks
        if isinstance(self.transport, Network):
            admissible = set(self.transport.od_pairs)
            for i in srcs:
                for j in snks:
                    if (i, j) not in admissible:
                        raise ValueError(
                            f"od pair ({i!r}, {j!r}) is missing from the network")
        if isinstance(self.mode, Potential):
            prod = {s.node for s in self.sites if s.role == "production"}
            cons = {s.node for s in self.sites if s.role == "consumption"}
            if len(prod) + len(cons) != len(self.sites):
                raise ValueError("duplicate site declarations")
            if prod != set(srcs) or cons != set(snks):
                raise ValueError(
                    "potential regime needs one production site per source "
                    "and one consumption site per sink")
        else:
            if self.sites:
                raise ValueError(
                    "pinned margins replace site potentials; constrained "
                    "instances take no sites")
            if len(self.mode.L) != len(srcs) or len(self.mode.W) != len(snks):
                raise ValueError(
                    f"margin lengths ({len(self.mode.L)}, {len(self.mode.W)}) do not "
                    f"match {len(srcs)} sources x {len(snks)} sinks")

    @property
    def sources(self) -> tuple:
        if isinstance(self.transport, Network):
            return tuple(self.transport.sources)
        return tuple(self.transport.sources)

    @property
    def sinks(self) -> tuple:
        if isinstance(self.transport, Network):
            return tuple(self.transport.sinks)
        return tuple(self.transport.sinks)

    def site(self, node: str, role: str) -> SigmaSite:
        for s in self.sites:
            if s.node == node and s.role == role:
                return s
        raise KeyError(f"no {role} site at {node!r}")


@dataclass
class DistributionResult:
    d: np.ndarray
    objective: float
    residual: float
    iterations: int
    converged: bool
    d0: float | None = None
    dbar_binds: bool = False
    lam_L: np.ndarray | None = None
    lam_W: np.ndarray | None = None
    margin_residual: float | None = None
    gap: float | None = None


@dataclass
class SinkhornResult:
    d: np.ndarray
    residual: float
    iterations: int
    converged: bool


def _inner_cfg(cfg: SolveConfig) -> SolveConfig:
    # Danskin gradient error feeds the outer residual linearly
    return replace(cfg, tol=min(1e-8, cfg.tol / 100.0))


def _cost_table(instance: DistributionInstance, d: np.ndarray, cfg: SolveConfig):
    """Od cost matrix and potential value at the coupling d."""
    srcs, snks = instance.sources, instance.sinks
    if isinstance(instance.transport, FixedCosts):
        T = instance.transport.T
        return T, float(np.sum(T * d))
    demands = DemandMatrix({(i, j): float(d[a, b])
                            for a, i in enumerate(srcs)
                            for b, j in enumerate(snks)})
    cm = cost_map(instance.transport, demands, _inner_cfg(cfg))
    T = np.array([[cm.times[(i, j)] for j in snks] for i in srcs])
    return T, cm.phi


def _default_dbar(instance: DistributionInstance) -> float:
    """Ten times a stationarity bound on the total mass.

    For each pair the single-pair mass where combined marginals cross
    zero bounds its demand; pairs with zero curvature and negative
    combined marginal cost have no such bound and need an explicit cap.
    """
    srcs, snks = instance.sources, instance.sinks
    if isinstance(instance.transport, FixedCosts):
        T_low = instance.transport.T
    else:
        T_low = np.zeros((len(srcs), len(snks)))  # times are nonnegative
    total = 0.0
    for a, i in enumerate(srcs):
        si = instance.site(i, "production")
        for b, j in enumerate(snks):
            sj = instance.site(j, "consumption")
            drift = si.alpha + sj.alpha + float(T_low[a, b])
            curv = si.beta + sj.beta
            if drift >= 0:
                continue
            if curv <= 0:
                raise ValueError(
                    f"pair ({i!r}, {j!r}) has zero curvature and negative "
                    "combined marginal cost; give an explicit d_bar")
            total += -drift / curv
    return 10.0 * total if total > 0 else 1.0


def _potential_objective(instance: DistributionInstance, d: np.ndarray,
                         phi: float) -> float:
    rows = d.sum(axis=1)
    cols = d.sum(axis=0)
    val = phi
    for a, i in enumerate(instance.sources):
        val += instance.site(i, "production").value(float(rows[a]))
    for b, j in enumerate(instance.sinks):
        val += instance.site(j, "consumption").value(float(cols[b]))
    return float(val)


def _pair_costs(instance: DistributionInstance, d: np.ndarray, T: np.ndarray) -> np.ndarray:
    """G_ij = marginal production + od time + marginal consumption."""
    rows = d.sum(axis=1)
    cols = d.sum(axis=0)
    mi = np.array([instance.site(i, "production").marginal(float(rows[a]))
                   for a, i in enumerate(instance.sources)])
    mj = np.array([instance.site(j, "consumption").marginal(float(cols[b]))
                   for b, j in enumerate(instance.sinks)])
    return mi[:, None] + T + mj[None, :]


def _excess_residual(G: np.ndarray, d: np.ndarray, d0: float) -> float:
    """Largest regret of an active option against the best one.

    The fictitious option has cost zero, so the benchmark is the
    smaller of zero and the cheapest pair.
    """
    m = min(float(G.min()), 0.0)
    worst = 0.0
    active = d > FLOW_EPS
    if np.any(active):
        worst = float((G[active] - m).max())
    if d0 > FLOW_EPS:
        worst = max(worst, -m)
    return worst


def solve_potential(instance: DistributionInstance,
                    cfg: SolveConfig | None = None) -> DistributionResult:
    """Projected gradient over {d >= 0, total mass <= d_bar}.

    The slack mass rides along as an extra zero-cost coordinate, so
    every iterate is a Euclidean projection onto the d_bar-simplex.
    Stops when no active option overpays the best one by more than
    cfg.tol.
    """
    if not isinstance(instance.mode, Potential):
        raise ValueError("instance is not in the potential regime")
    cfg = cfg or SolveConfig()
    srcs, snks = instance.sources, instance.sinks
    n, m = len(srcs), len(snks)
    dbar = instance.mode.d_bar if instance.mode.d_bar is not None else _default_dbar(instance)
    d = np.zeros((n, m))
    d0 = dbar
    T, phi = _cost_table(instance, d, cfg)
    obj = _potential_objective(instance, d, phi)
    eta = 1.0
    residual = math.inf
    iterations = 0
    converged = False
    for k in range(1, cfg.max_iter + 1):
        iterations = k
        G = _pair_costs(instance, d, T)
        residual = _excess_residual(G, d, d0)
        if residual <= cfg.tol:
            converged = True
            break
        x = np.concatenate([d.ravel(), [d0]])
        g = np.concatenate([G.ravel(), [0.0]])
        accepted = False
        while eta >= STEP_FLOOR:
            x_new = _project_simplex(x - eta * g, dbar)
            d_new = x_new[:-1].reshape(n, m)
            T_new, phi_new = _cost_table(instance, d_new, cfg)
            obj_new = _potential_objective(instance, d_new, phi_new)
            decrease = float(g @ (x_new - x))
            if obj_new <= obj + ARMIJO_C * decrease + 1e-15:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break  # step floor: report the residual we are stuck at
        d, d0 = d_new, float(x_new[-1])
        T, obj = T_new, obj_new
        eta = min(eta * 1.5, 1e6)
    binds = d0 <= FLOW_EPS
    if binds:
        warnings.warn("mass cap d_bar binds at the optimum; enlarge it to "
                      "recover the free equilibrium", RuntimeWarning)
    return DistributionResult(d=d, objective=obj, residual=residual,
                              iterations=iterations, converged=converged,
                              d0=d0, dbar_binds=binds)


def assemble_constrained(instance: DistributionInstance,
                         cfg: SolveConfig | None = None) -> SaddleProblem:
    """Saddle problem for the pinned-margin coupling.

    The coupling lives on the N-simplex with entropy geometry; the two
    multiplier blocks are unconstrained and collect the margin
    residuals as their gradients.
    """
    if not isinstance(instance.mode, Constrained):
        raise ValueError("instance is not in the constrained regime")
    cfg = cfg or SolveConfig()
    mode = instance.mode
    srcs, snks = instance.sources, instance.sinks
    n, m = len(srcs), len(snks)
    N = mode.N
    gamma = mode.gamma

    blocks = [
        BlockSpec("d", "min", n * m, Simplex(N), geometry="entropy",
                  entropy_weight=gamma, entropy_ref=N),
        BlockSpec("lamL", "max", n, Reals()),
        BlockSpec("lamW", "max", m, Reals()),
    ]

    def oracle(z):
        d = z[0].reshape(n, m)
        T, _ = _cost_table(instance, d, cfg)
        g_d = T + z[1][:, None] + z[2][None, :]
        return [g_d.ravel(), d.sum(axis=1) - mode.L, d.sum(axis=0) - mode.W]

    def objective(z):
        d = z[0].reshape(n, m)
        _, phi = _cost_table(instance, d, cfg)
        val = phi + gamma * float(xlogx(z[0], N).sum())
        val += float(z[1] @ (d.sum(axis=1) - mode.L))
        val += float(z[2] @ (d.sum(axis=0) - mode.W))
        return val

    return SaddleProblem(blocks=blocks, oracle=oracle, objective=objective)


def solve_constrained(instance: DistributionInstance,
                      cfg: SolveConfig | None = None) -> DistributionResult:
    """Entropy-regularized coupling with pinned margins via mirror-prox."""
    cfg = cfg or SolveConfig()
    problem = assemble_constrained(instance, cfg)
    mode = instance.mode
    srcs, snks = instance.sources, instance.sinks
    n, m = len(srcs), len(snks)
    N = mode.N
    gamma = mode.gamma
    # iterates contract here, so averaging the trailing half is far
    # more accurate than the full ergodic mean
    sol = mirror_prox(problem, cfg, averaging="tail")
    d = sol.z_avg[0].reshape(n, m)
    margin = max(float(np.abs(d.sum(axis=1) - mode.L).max()),
                 float(np.abs(d.sum(axis=0) - mode.W).max()))
    _, phi = _cost_table(instance, d, cfg)
    primal = phi + gamma * float(xlogx(d.ravel(), N).sum())
    return DistributionResult(
        d=d, objective=primal, residual=sol.gap, iterations=sol.iterations,
        converged=sol.converged and margin <= max(cfg.tol, 1e-6),
        lam_L=sol.z_avg[1], lam_W=sol.z_avg[2],
        margin_residual=margin, gap=sol.gap)


def gravity_sinkhorn(T: np.ndarray, L: np.ndarray, W: np.ndarray, gamma: float,
                     N: float | None = None,
                     cfg: SolveConfig | None = None) -> SinkhornResult:
    """Alternating scaling for the fixed-cost constrained coupling.

    Solves min <T, d> + gamma * sum d ln(d/N) over nonnegative d with
    the given margins; the optimal coupling factorizes as
    u_i * exp(-T_ij / gamma) * v_j, so matching margins alternately is
    exact coordinate maximization of the dual.  Runs in log domain.
    """
    cfg = cfg or SolveConfig()
    T = np.asarray(T, dtype=float)
    L = np.asarray(L, dtype=float)
    W = np.asarray(W, dtype=float)
    if not (gamma > 0):
        raise ValueError(f"gamma must be positive, got {gamma}")
    scale = max(float(L.sum()), float(W.sum()), 1.0)
    if abs(float(L.sum()) - float(W.sum())) > 1e-9 * scale:
        raise ValueError(
            f"margins must balance: sum L = {float(L.sum())}, sum W = {float(W.sum())}")
    if N is None:
        N = float(L.sum())
    logK = -T / gamma + math.log(N) - 1.0
    logL = np.log(np.maximum(L, 1e-300))
    logW = np.log(np.maximum(W, 1e-300))
    a = np.zeros(len(L))
    b = np.zeros(len(W))
    residual = math.inf
    iterations = 0
    converged = False
    for k in range(1, cfg.max_iter + 1):
        iterations = k
        a = logL - scipy.special.logsumexp(logK + b[None, :], axis=1)
        b = logW - scipy.special.logsumexp(logK + a[:, None], axis=0)
        d = np.exp(a[:, None] + logK + b[None, :])
        residual = max(float(np.abs(d.sum(axis=1) - L).max()),
                       float(np.abs(d.sum(axis=0) - W).max()))
        if residual <= cfg.tol:
            converged = True
            break
    d = np.exp(a[:, None] + logK + b[None, :])
    return SinkhornResult(d=d, residual=residual, iterations=iterations,
                          converged=converged)
