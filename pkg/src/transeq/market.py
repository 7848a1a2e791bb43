"""Competitive equilibrium between producers, consumers, and a carrier.

Producers sell at origin prices, consumers buy at destination prices,
and the carrier hauls aggregate od mass over the congested (or fixed)
cost map, paying origin prices and earning destination prices.  The
equilibrium prices and flows form the saddle point of a convex-concave
objective: mass minimizes haul cost plus an entropy term, while the
price and resource-rent blocks maximize.  Producer and consumer terms
enter through their closed-form best responses, whose maximizers are
exact supergradients.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from .assignment import DemandMatrix, SolveConfig, cost_map
from .distribution import FixedCosts
from .network import Network
from .saddle import BlockSpec, Orthant, SaddleProblem, mirror_prox, xlogx

VERTEX_LIMIT = 6  # commodity / property counts served by vertex enumeration
TIE_EPS = 1e-12  # commodity margins closer than this split the pair mass
PROFIT_EPS = 1e-12  # strict-sign threshold for participation


@dataclass(frozen=True)
class Producer:
    """Box technology [0, u_max] with linear costs and resource use."""

    site: str
    u_max: np.ndarray
    chi: float = 0.0
    c: np.ndarray | None = None
    A: np.ndarray | None = None
    R: np.ndarray | None = None

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u_max, dtype=float))
        m = len(u)
        if np.any(u < 0) or not np.all(np.isfinite(u)):
            raise ValueError(f"producer {self.site!r} needs finite u_max >= 0")
        if self.chi < 0:
            raise ValueError(f"producer {self.site!r} needs chi >= 0")
        c = np.zeros(m) if self.c is None else np.atleast_1d(np.asarray(self.c, dtype=float))
        A = np.zeros((m, m)) if self.A is None else np.asarray(self.A, dtype=float)
        R = np.zeros((0, m)) if self.R is None else np.atleast_2d(np.asarray(self.R, dtype=float))
        if c.shape != (m,):
            raise ValueError(f"producer {self.site!r}: c has shape {c.shape}, want ({m},)")
        if A.shape != (m, m):
            raise ValueError(f"producer {self.site!r}: A has shape {A.shape}, want ({m}, {m})")
        if R.shape[1] != m:
            raise ValueError(f"producer {self.site!r}: R has {R.shape[1]} columns, want {m}")
        if np.any(c < 0) or np.any(A < 0) or np.any(R < 0):
            raise ValueError(f"producer {self.site!r}: c, A, R must be nonnegative")
        object.__setattr__(self, "u_max", u)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "R", R)

    @property
    def m(self) -> int:
        return len(self.u_max)


@dataclass(frozen=True)
class Consumer:
    """Demand set V = {W >= 0 : Q W >= sigma_min} and an income."""

    site: str
    Q: np.ndarray
    sigma_min: np.ndarray
    tau_inc: float

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        sig = np.atleast_1d(np.asarray(self.sigma_min, dtype=float))
        if Q.shape[0] != len(sig):
            raise ValueError(
                f"consumer {self.site!r}: {Q.shape[0]} property rows vs "
                f"{len(sig)} minimum levels")
        if np.any(sig < 0):
            raise ValueError(f"consumer {self.site!r}: sigma_min must be nonnegative")
        if self.tau_inc < 0:
            raise ValueError(f"consumer {self.site!r}: income must be nonnegative")
        if Q.shape[0] > VERTEX_LIMIT or Q.shape[1] > VERTEX_LIMIT:
            raise ValueError(
                f"consumer {self.site!r}: vertex enumeration handles at most "
                f"{VERTEX_LIMIT} goods and {VERTEX_LIMIT} properties")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "sigma_min", sig)
        if _feasible_vertices(Q, sig) == []:
            raise ValueError(f"consumer {self.site!r}: demand set is empty")

    @property
    def m(self) -> int:
        return self.Q.shape[1]


def _feasible_vertices(Q: np.ndarray, sigma: np.ndarray) -> list:
    """Vertices of {W >= 0 : QW >= sigma} by active-set enumeration."""
    s, m = Q.shape
    G = np.vstack([np.eye(m), Q])
    h = np.concatenate([np.zeros(m), sigma])
    scale = max(float(np.abs(h).max(initial=0.0)), 1.0)
    out = []
    for rows in itertools.combinations(range(m + s), m):
        sub = G[list(rows)]
        try:
            W = np.linalg.solve(sub, h[list(rows)])
        except np.linalg.LinAlgError:
            continue
        if np.all(G @ W >= h - 1e-9 * scale):
            out.append(np.maximum(W, 0.0))
    return out


def _min_cost_point(cn: Consumer, price: np.ndarray) -> np.ndarray:
    """Cheapest feasible bundle; exact for diagonal Q, vertex scan else."""
    Q, sig = cn.Q, cn.sigma_min
    s, m = Q.shape
    if s == m and np.count_nonzero(Q - np.diag(np.diagonal(Q))) == 0 \
            and np.all(np.diagonal(Q) > 0):
        return sig / np.diagonal(Q)
    best = None
    for W in _feasible_vertices(Q, sig):
        cost = float(price @ W)
        key = (cost, tuple(W))
        if best is None or key < best[0]:
            best = (key, W)
    return best[1]


@dataclass
class ProducerResponse:
    profit: float
    L: np.ndarray
    alpha: float


@dataclass
class ConsumerResponse:
    surplus: float
    W: np.ndarray
    beta: float


def producer_best_response(p: Producer, lam_L: np.ndarray, lam_W: np.ndarray,
                           y: np.ndarray) -> ProducerResponse:
    """Bang-bang output on the box under the net unit margin.

    The margin nets out input purchases at the local consumer price
    and resource rents; participation collapses to the profit sign.
    """
    margin = lam_L - p.c - p.A.T @ lam_W - p.R.T @ y
    gross = float(p.u_max @ np.maximum(margin, 0.0))
    profit = max(gross - p.chi, 0.0)
    if profit > PROFIT_EPS:
        return ProducerResponse(profit, np.where(margin > 0, p.u_max, 0.0), 1.0)
    return ProducerResponse(0.0, np.zeros(p.m), 0.0)


def consumer_best_response(cn: Consumer, lam_W: np.ndarray) -> ConsumerResponse:
    """Cheapest acceptable bundle; buy only when income covers it."""
    W = _min_cost_point(cn, lam_W)
    surplus = max(cn.tau_inc - float(lam_W @ W), 0.0)
    if surplus > PROFIT_EPS:
        return ConsumerResponse(surplus, W, 1.0)
    return ConsumerResponse(0.0, np.zeros(cn.m), 0.0)


@dataclass
class MarketInstance:
    """Agents, resource limits, transport layer, and entropy weight."""

    producers: tuple
    consumers: tuple
    transport: Network | FixedCosts
    gamma: float
    b: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.producers = tuple(self.producers)
        self.consumers = tuple(self.consumers)
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if not self.producers or not self.consumers:
            raise ValueError("a market needs at least one producer and one consumer")
        if not (self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        ms = {p.m for p in self.producers} | {c.m for c in self.consumers}
        if len(ms) != 1:
            raise ValueError(f"inconsistent commodity counts: {sorted(ms)}")
        if np.any(self.b < 0):
            raise ValueError("resource limits must be nonnegative")
        q = len(self.b)
        for p in self.producers:
            if p.R.shape[0] not in (0, q):
                raise ValueError(
                    f"producer {p.site!r}: R has {p.R.shape[0]} resource rows, "
                    f"but b has {q}")
        if len({p.site for p in self.producers}) != len(self.producers):
            raise ValueError("duplicate producer sites")
        if len({c.site for c in self.consumers}) != len(self.consumers):
            raise ValueError("duplicate consumer sites")
        srcs, snks = self._transport_ends()
        for p in self.producers:
            if p.site not in srcs:
                raise ValueError(f"producer site {p.site!r} is not a transport source")
        for c in self.consumers:
            if c.site not in snks:
                raise ValueError(f"consumer site {c.site!r} is not a transport sink")
        consumer_sites = {c.site for c in self.consumers}
        for p in self.producers:
            if np.any(p.A > 0):
                if p.site not in consumer_sites:
                    raise ValueError(
                        f"producer {p.site!r} uses intermediate inputs but has "
                        "no local consumer price to buy them at")
                if not any(j == p.site for _, j in self.pairs):
                    warnings.warn(
                        f"producer {p.site!r} needs inbound shipments for its "
                        "intermediate inputs but no od pair ends there",
                        RuntimeWarning)

    def _transport_ends(self):
        return tuple(self.transport.sources), tuple(self.transport.sinks)

    @property
    def m(self) -> int:
        return self.producers[0].m

    @property
    def origins(self) -> tuple:
        srcs, _ = self._transport_ends()
        by_site = {p.site: p for p in self.producers}
        return tuple(s for s in srcs if s in by_site)

    @property
    def destinations(self) -> tuple:
        _, snks = self._transport_ends()
        by_site = {c.site: c for c in self.consumers}
        return tuple(s for s in snks if s in by_site)

    @property
    def pairs(self) -> tuple:
        O, D = self.origins, self.destinations
        if isinstance(self.transport, Network):
            admissible = set(self.transport.od_pairs)
            return tuple((i, j) for i in O for j in D if (i, j) in admissible)
        return tuple((i, j) for i in O for j in D)

    def producer_at(self, site: str) -> Producer:
        for p in self.producers:
            if p.site == site:
                return p
        raise KeyError(f"no producer at {site!r}")

    def consumer_at(self, site: str) -> Consumer:
        for c in self.consumers:
            if c.site == site:
                return c
        raise KeyError(f"no consumer at {site!r}")


@dataclass
class ProductivityReport:
    ok: bool
    L_bar: dict
    W_bar: dict
    violated: str | None = None


@dataclass
class WalrasResiduals:
    """Per law group: (constraint violation, |complementarity|)."""

    groups: dict

    @property
    def max_violation(self) -> float:
        return max(v for v, _ in self.groups.values())

    @property
    def max_complementarity(self) -> float:
        return max(c for _, c in self.groups.values())

    @property
    def max_all(self) -> float:
        return max(self.max_violation, self.max_complementarity)


@dataclass
class MarketEquilibrium:
    d: dict
    L: dict
    alpha: dict
    W: dict
    beta: dict
    y: np.ndarray
    lam_L: dict
    lam_W: dict
    walras: WalrasResiduals
    gap: float
    iterations: int
    converged: bool
    flags: dict = field(default_factory=dict)


def _min_norm_point(cn: Consumer) -> np.ndarray:
    """Smallest-norm bundle of the demand set (witness for productivity)."""
    x0 = _min_cost_point(cn, np.ones(cn.m))
    res = scipy.optimize.minimize(
        lambda W: float(W @ W), x0, jac=lambda W: 2.0 * W, method="SLSQP",
        bounds=[(0.0, None)] * cn.m,
        constraints=[{"type": "ineq",
                      "fun": lambda W: cn.Q @ W - cn.sigma_min,
                      "jac": lambda W: cn.Q}],
        options={"ftol": 1e-12, "maxiter": 200})
    W = np.maximum(res.x, 0.0)
    if not np.all(cn.Q @ W >= cn.sigma_min - 1e-7):
        return x0  # keep the feasible vertex if the polish drifted
    return W


def productivity_check(instance: MarketInstance,
                       margin_eps: float = 1e-9) -> ProductivityReport:
    """Try the full-output / minimum-demand witness pair.

    Checks that producing at capacity strictly covers intermediate
    inputs plus the smallest acceptable consumption, inside strict
    resource slack.  Failure of this one candidate pair does not prove
    the instance unproductive; it only withholds the guarantee.
    """
    L_bar = {p.site: p.u_max.copy() for p in instance.producers}
    W_bar = {c.site: _min_norm_point(c) for c in instance.consumers}
    net = sum(p.u_max - p.A @ p.u_max for p in instance.producers)
    need = sum(W_bar.values())
    slack = net - need
    for k in range(instance.m):
        if slack[k] <= margin_eps:
            return ProductivityReport(
                False, L_bar, W_bar,
                f"net output of commodity {k} is {float(net[k]):.6g}, "
                f"not strictly above the required {float(need[k]):.6g}")
    if len(instance.b):
        use = sum(p.R @ p.u_max for p in instance.producers)
        for r in range(len(instance.b)):
            if instance.b[r] - use[r] <= margin_eps:
                return ProductivityReport(
                    False, L_bar, W_bar,
                    f"resource {r} use {float(use[r]):.6g} is not strictly "
                    f"below the limit {float(instance.b[r]):.6g}")
    return ProductivityReport(True, L_bar, W_bar)


def _inflow(instance: MarketInstance, d: dict, site: str) -> np.ndarray:
    total = np.zeros(instance.m)
    for (i, j), val in d.items():
        if j == site:
            total = total + np.asarray(val, dtype=float)
    return total


def _outflow(instance: MarketInstance, d: dict, site: str) -> np.ndarray:
    total = np.zeros(instance.m)
    for (i, j), val in d.items():
        if i == site:
            total = total + np.asarray(val, dtype=float)
    return total


def walras_residuals(instance: MarketInstance, d: dict, L: dict, W: dict,
                     y: np.ndarray, lam_L: dict, lam_W: dict) -> WalrasResiduals:
    """Violation and complementarity of the four balance law groups."""
    origins = set(instance.origins)
    dests = set(instance.destinations)
    groups = {}
    viol = comp = 0.0
    for i in instance.origins:
        slack = _outflow(instance, d, i) - np.asarray(L[i], dtype=float)
        viol = max(viol, float(np.maximum(slack, 0.0).max(initial=0.0)))
        comp = max(comp, abs(float(np.asarray(lam_L[i]) @ slack)))
    groups["source_balance"] = (viol, comp)
    viol = comp = 0.0
    for j in sorted(origins & dests, key=instance.destinations.index):
        p = instance.producer_at(j)
        slack = (np.asarray(W[j], dtype=float) + p.A @ np.asarray(L[j], dtype=float)
                 - _inflow(instance, d, j))
        viol = max(viol, float(np.maximum(slack, 0.0).max(initial=0.0)))
        comp = max(comp, abs(float(np.asarray(lam_W[j]) @ slack)))
    groups["origin_site_balance"] = (viol, comp)
    viol = comp = 0.0
    for j in instance.destinations:
        if j in origins:
            continue
        slack = np.asarray(W[j], dtype=float) - _inflow(instance, d, j)
        viol = max(viol, float(np.maximum(slack, 0.0).max(initial=0.0)))
        comp = max(comp, abs(float(np.asarray(lam_W[j]) @ slack)))
    groups["sink_balance"] = (viol, comp)
    viol = comp = 0.0
    if len(instance.b):
        use = sum(instance.producer_at(i).R @ np.asarray(L[i], dtype=float)
                  for i in instance.origins)
        slack = use - instance.b
        viol = float(np.maximum(slack, 0.0).max(initial=0.0))
        comp = abs(float(np.asarray(y) @ slack))
    groups["resource"] = (viol, comp)
    return WalrasResiduals(groups)


def _pair_costs(instance: MarketInstance, s: np.ndarray, cfg: SolveConfig):
    """Carrier cost vector over pairs and the potential value at mass s."""
    pairs = instance.pairs
    if isinstance(instance.transport, FixedCosts):
        tab = instance.transport
        idx = {(i, j): (tab.sources.index(i), tab.sinks.index(j)) for i, j in pairs}
        T = np.array([tab.T[idx[p]] for p in pairs])
        return T, float(T @ s)
    inner = replace(cfg, tol=min(1e-8, cfg.tol / 100.0))
    dm = DemandMatrix({p: float(s[k]) for k, p in enumerate(pairs)})
    cm = cost_map(instance.transport, dm, inner)
    return np.array([cm.times[p] for p in pairs]), cm.phi


def _split_mass(instance: MarketInstance, s: np.ndarray, lam_L: np.ndarray,
                lam_W: np.ndarray):
    """Assign each pair's mass to its best-margin commodities.

    Returns (split, pi) where split is (pairs, m) and pi the carrier's
    per-unit net cost min_k (origin price - destination price).
    """
    O, D = instance.origins, instance.destinations
    oi = {site: k for k, site in enumerate(O)}
    di = {site: k for k, site in enumerate(D)}
    pairs = instance.pairs
    split = np.zeros((len(pairs), instance.m))
    pi = np.zeros(len(pairs))
    for p, (i, j) in enumerate(pairs):
        margins = lam_W[di[j]] - lam_L[oi[i]]
        best = float(margins.max())
        pi[p] = -best
        mask = margins >= best - TIE_EPS
        split[p] = s[p] * mask / mask.sum()
    return split, pi


def _timescales(gamma: float) -> tuple[float, float]:
    """Step scales (mass, price) taming the small-gamma stiffness.

    Small gamma makes the mass block exponentially stiff: its prox
    moves log mass by about the step while the quasi-static response
    to a price move of delta is a log jump of delta / gamma.  Run the
    mass fast (1 / gamma) so it tracks its best response and the
    prices slow (sqrt gamma) so the price orbit around the agent kinks
    stays within the gamma-smoothed region.
    """
    return max(1.0, 1.0 / gamma), min(1.0, math.sqrt(gamma))


def _mass_cap(instance: MarketInstance) -> float:
    # no equilibrium ships more than total production capacity, so a
    # slack cap on pair mass only disciplines off-saddle iterates
    return 10.0 * max(sum(float(p.u_max.sum()) for p in instance.producers), 1.0)


def _market_responses(instance: MarketInstance, lam_L: np.ndarray,
                      lam_W: np.ndarray, y: np.ndarray) -> tuple[list, list]:
    """Producer and consumer best responses at stacked price rows."""
    O, D = instance.origins, instance.destinations
    dest_set = set(D)
    Ls, Ws = [], []
    for k, i in enumerate(O):
        p = instance.producer_at(i)
        local = lam_W[D.index(i)] if i in dest_set else np.zeros(instance.m)
        Ls.append(producer_best_response(p, lam_L[k], local, y))
    for k, j in enumerate(D):
        Ws.append(consumer_best_response(instance.consumer_at(j), lam_W[k]))
    return Ls, Ws


def _price_grads(instance: MarketInstance, split: np.ndarray, Ls: list, Ws: list):
    """Slack supergradients for the price blocks plus resource use."""
    O, D, pairs = instance.origins, instance.destinations, instance.pairs
    dest_set = set(D)
    g_L = np.zeros((len(O), instance.m))
    g_W = np.zeros((len(D), instance.m))
    for p, (i, j) in enumerate(pairs):
        g_L[O.index(i)] += split[p]
        g_W[D.index(j)] -= split[p]
    for k, i in enumerate(O):
        g_L[k] -= Ls[k].L
        if i in dest_set:
            g_W[D.index(i)] += instance.producer_at(i).A @ Ls[k].L
    for k in range(len(D)):
        g_W[k] += Ws[k].W
    use = np.zeros(len(instance.b))
    if len(instance.b):
        use = sum(instance.producer_at(i).R @ Ls[k].L for k, i in enumerate(O))
    return g_L, g_W, use


def _agent_value(instance: MarketInstance, s: np.ndarray, pi: np.ndarray,
                 Ls: list, Ws: list, y: np.ndarray) -> float:
    """Entropy, carrier revenue, and agent terms shared by the saddles."""
    val = instance.gamma * float(xlogx(s).sum()) + float(s @ pi)
    val -= sum(r.profit for r in Ls) + sum(r.surplus for r in Ws)
    if len(instance.b):
        val -= float(y @ instance.b)
    return val


def _recover_bundles(instance: MarketInstance, aux_avg: dict,
                     lam_L_avg: np.ndarray, lam_W_avg: np.ndarray):
    """Dict-shaped bundles and participation shares from the averages."""
    O, D, pairs, m = (instance.origins, instance.destinations,
                      instance.pairs, instance.m)
    d_avg = aux_avg["d"].reshape(len(pairs), m)
    L_avg = aux_avg["L"].reshape(len(O), m)
    W_avg = aux_avg["W"].reshape(len(D), m)
    d = {pair: d_avg[p] for p, pair in enumerate(pairs)}
    L = {i: L_avg[k] for k, i in enumerate(O)}
    W = {j: W_avg[k] for k, j in enumerate(D)}
    lam_L = {i: lam_L_avg[k] for k, i in enumerate(O)}
    lam_W = {j: lam_W_avg[k] for k, j in enumerate(D)}
    alpha = {}
    for k, i in enumerate(O):
        u = instance.producer_at(i).u_max
        ratios = np.where(u > 0, L_avg[k] / np.where(u > 0, u, 1.0), 0.0)
        alpha[i] = float(np.clip(ratios.max(initial=0.0), 0.0, 1.0))
    beta = {}
    for k, j in enumerate(D):
        cn = instance.consumer_at(j)
        quality = cn.Q @ W_avg[k]
        live = cn.sigma_min > 0
        if np.any(live):
            beta[j] = float(np.clip((quality[live] / cn.sigma_min[live]).min(), 0.0, 1.0))
        else:
            beta[j] = 1.0 if float(W_avg[k].sum()) > 0 else 0.0
    return d, L, W, lam_L, lam_W, alpha, beta


def solve_market(instance: MarketInstance, cfg: SolveConfig | None = None,
                 require_productive: bool = True) -> MarketEquilibrium:
    """Equilibrium prices and shipments by mirror-prox on the saddle.

    Pair mass is the minimizing block (entropy geometry, weight gamma);
    origin prices, destination prices, and resource rents maximize.
    Producer and consumer best responses supply exact supergradients
    and ride along as auxiliary outputs whose ergodic averages recover
    the equilibrium bundles, including fractional participation at
    zero-profit boundaries.

    The default config runs many small steps: quantity averages carry
    a bias quadratic in the price orbit amplitude, so halving the step
    quarters the bias at only double the travel time.
    """
    cfg = cfg or SolveConfig(tol=1e-7, max_iter=100000, step=0.1)
    check = productivity_check(instance)
    if require_productive and not check.ok:
        raise ValueError(f"productivity check failed: {check.violated}")
    O, D = instance.origins, instance.destinations
    pairs = instance.pairs
    if not pairs:
        raise ValueError("no admissible od pairs between producers and consumers")
    m = instance.m
    nO, nD, nP, q = len(O), len(D), len(pairs), len(instance.b)
    gamma = instance.gamma

    mass_scale, price_scale = _timescales(gamma)
    blocks = [
        BlockSpec("s", "min", nP, Orthant(cap=_mass_cap(instance)), geometry="entropy",
                  entropy_weight=gamma, entropy_ref=1.0, step_scale=mass_scale),
        BlockSpec("lamL", "max", nO * m, Orthant(), step_scale=price_scale),
        BlockSpec("lamW", "max", nD * m, Orthant(), step_scale=price_scale),
    ]
    if q:
        blocks.append(BlockSpec("y", "max", q, Orthant(), step_scale=price_scale))

    def unpack(z):
        lam_L = z[1].reshape(nO, m)
        lam_W = z[2].reshape(nD, m)
        y = z[3] if q else np.zeros(0)
        return z[0], lam_L, lam_W, y

    def oracle(z):
        s, lam_L, lam_W, y = unpack(z)
        T, _ = _pair_costs(instance, s, cfg)
        split, pi = _split_mass(instance, s, lam_L, lam_W)
        Ls, Ws = _market_responses(instance, lam_L, lam_W, y)
        g_L, g_W, use = _price_grads(instance, split, Ls, Ws)
        out = [T + pi, g_L.ravel(), g_W.ravel()]
        if q:
            out.append(use - instance.b)
        return out

    def objective(z):
        s, lam_L, lam_W, y = unpack(z)
        _, phi = _pair_costs(instance, s, cfg)
        _, pi = _split_mass(instance, s, lam_L, lam_W)
        Ls, Ws = _market_responses(instance, lam_L, lam_W, y)
        return phi + _agent_value(instance, s, pi, Ls, Ws, y)

    def aux(z):
        s, lam_L, lam_W, y = unpack(z)
        split, _ = _split_mass(instance, s, lam_L, lam_W)
        Ls, Ws = _market_responses(instance, lam_L, lam_W, y)
        return {"d": split.ravel(),
                "L": np.concatenate([r.L for r in Ls]),
                "W": np.concatenate([r.W for r in Ws])}

    problem = SaddleProblem(blocks=blocks, oracle=oracle, objective=objective, aux=aux)
    # agent terms are piecewise linear, so constant steps orbit the
    # price kinks; averaging the trailing half keeps only the tight
    # part of the orbit and its bias scales with the price step
    sol = mirror_prox(problem, cfg, averaging="tail")

    _, lam_L_avg, lam_W_avg, y_avg = unpack(sol.z_avg)
    d, L, W, lam_L, lam_W, alpha, beta = _recover_bundles(
        instance, sol.aux_avg, lam_L_avg, lam_W_avg)
    walras = walras_residuals(instance, d, L, W, y_avg, lam_L, lam_W)
    return MarketEquilibrium(
        d=d, L=L, alpha=alpha, W=W, beta=beta, y=y_avg, lam_L=lam_L, lam_W=lam_W,
        walras=walras, gap=sol.gap, iterations=sol.iterations,
        converged=sol.converged, flags=dict(sol.flags, productivity_ok=check.ok))
