"""Shared instance builders for the test suite."""

import numpy as np
import pytest

from transeq import (
    Affine,
    BPR,
    Consumer,
    Constrained,
    DemandMatrix,
    DistributionInstance,
    Edge,
    FixedCosts,
    HardCap,
    MarketInstance,
    Network,
    Potential,
    Producer,
    SigmaSite,
)


def pigou_network():
    """Two parallel edges s->t: edge 0 constant time 1, edge 1 time f."""
    return Network(
        nodes=("s", "t"),
        edges=(
            Edge("s", "t", Affine(1.0, 0.0)),
            Edge("s", "t", Affine(0.0, 1.0)),
        ),
        od_pairs=(("s", "t"),),
    )


def pigou_demand(total=1.0):
    return DemandMatrix({("s", "t"): float(total)})


def braess_network(with_shortcut):
    """Classic four-node diamond, optionally with the zero-cost shortcut.

    Demand 1 from s to t.  Without the shortcut both routes cost 1.5 at
    equilibrium; adding the shortcut drives every traveler through it and
    the common cost rises to 2.
    """
    edges = [
        Edge("s", "a", Affine(0.0, 1.0)),   # tau = f
        Edge("s", "b", Affine(1.0, 0.0)),   # tau = 1
        Edge("a", "t", Affine(1.0, 0.0)),   # tau = 1
        Edge("b", "t", Affine(0.0, 1.0)),   # tau = f
    ]
    if with_shortcut:
        edges.append(Edge("a", "b", Affine(0.0, 0.0)))  # tau = 0
    return Network(
        nodes=("s", "a", "b", "t"),
        edges=tuple(edges),
        od_pairs=(("s", "t"),),
    )


def two_path_logit_network(offset=np.log(3.0)):
    """Two constant-cost parallel edges with cost gap `offset`."""
    return Network(
        nodes=("s", "t"),
        edges=(
            Edge("s", "t", Affine(0.0, 0.0)),
            Edge("s", "t", Affine(float(offset), 0.0)),
        ),
        od_pairs=(("s", "t"),),
    )


def two_parallel_capacity_network():
    """HardCap pair from the flow-limit examples: t0=(1,2), caps=(1,10)."""
    return Network(
        nodes=("s", "t"),
        edges=(
            Edge("s", "t", HardCap(1.0, 1.0)),
            Edge("s", "t", HardCap(2.0, 10.0)),
        ),
        od_pairs=(("s", "t"),),
    )


def steep_bpr_network(mu=1e-2, rho=1.0):
    """Same two-parallel layout with steep BPR costs, power = 1/mu."""
    q = 1.0 / mu
    return Network(
        nodes=("s", "t"),
        edges=(
            Edge("s", "t", BPR(1.0, 1.0, rho=rho, power=q)),
            Edge("s", "t", BPR(2.0, 10.0, rho=rho, power=q)),
        ),
        od_pairs=(("s", "t"),),
    )


def random_affine_instance(rng, n_mid=8):
    """Layered random DAG with affine costs and one od pair.

    Ten nodes total: source, sink, and two middle layers.  Path count
    stays well under the default path budget.
    """
    half = n_mid // 2
    layer1 = [f"u{i}" for i in range(half)]
    layer2 = [f"v{i}" for i in range(n_mid - half)]
    nodes = ["s"] + layer1 + layer2 + ["t"]
    edges = []

    def affine():
        return Affine(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.0, 1.0)))

    for u in layer1:
        edges.append(Edge("s", u, affine()))
    for u in layer1:
        for v in layer2:
            if rng.random() < 0.6:
                edges.append(Edge(u, v, affine()))
    for v in layer2:
        edges.append(Edge(v, "t", affine()))
    # guarantee connectivity through the first pair
    edges.append(Edge(layer1[0], layer2[0], affine()))
    demand = DemandMatrix({("s", "t"): float(rng.uniform(1.0, 3.0))})
    return Network(nodes=tuple(nodes), edges=tuple(edges),
                   od_pairs=(("s", "t"),)), demand


def potential_line_instance(T=1.0, alpha_sink=-2.0):
    """One producer site, one consumer site, fixed transport cost T.

    Production penalty f^2/2 at the origin, linear utility alpha_sink*f
    at the sink.  The scalar objective T*d + d^2/2 + alpha_sink*d has
    its unconstrained optimum at d = -(alpha_sink + T).
    """
    fc = FixedCosts(sources=("o",), sinks=("q",), T=np.array([[float(T)]]))
    sites = (
        SigmaSite("o", "production", alpha=0.0, beta=1.0),
        SigmaSite("q", "consumption", alpha=float(alpha_sink), beta=0.0),
    )
    return DistributionInstance(transport=fc, mode=Potential(), sites=sites)


def coupling_instance(gamma=1.0):
    """2x2 pinned-margin toy: T = [[1,2],[2,1]], unit margins."""
    fc = FixedCosts(
        sources=("o1", "o2"),
        sinks=("q1", "q2"),
        T=np.array([[1.0, 2.0], [2.0, 1.0]]),
    )
    mode = Constrained(L=np.array([1.0, 1.0]), W=np.array([1.0, 1.0]),
                       gamma=float(gamma))
    return DistributionInstance(transport=fc, mode=mode)


def toy_market(gamma=1e-3, tau_inc=10.0, resource=False):
    """Single producer at s, single consumer at t, fixed cost T=1.

    Hand solution at tau_inc=10: d = L = W = 2, lam_L ~ 1, lam_W ~ 2.
    With tau_inc=3 the consumer cannot afford the bundle and trade
    collapses.  With resource=True one unit of a shared input caps
    production at 1.
    """
    fc = FixedCosts(sources=("s",), sinks=("t",), T=np.array([[1.0]]))
    if resource:
        producer = Producer("s", u_max=np.array([10.0]), chi=0.0,
                            c=np.array([1.0]), R=np.array([[1.0]]))
        b = np.array([1.0])
    else:
        producer = Producer("s", u_max=np.array([10.0]), chi=0.0,
                            c=np.array([1.0]))
        b = np.zeros(0)
    consumer = Consumer("t", Q=np.array([[1.0]]),
                        sigma_min=np.array([2.0]), tau_inc=float(tau_inc))
    return MarketInstance(producers=(producer,), consumers=(consumer,),
                          transport=fc, gamma=float(gamma), b=b)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
