"""Versioned JSON instance files: loading, validation, model assembly.

An instance file is one UTF-8 JSON document.  Sections are optional so
one file can serve several commands; each command checks that the
sections it needs are present.  Validation is strict: unknown fields
anywhere are rejected, and every diagnostic names the offending field
by its full path (for example ``market.producers[0].u_max[2]``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .assignment import DemandMatrix
from .distribution import (Constrained, DistributionInstance, FixedCosts,
                           Potential, SigmaSite)
from .fullmodel import FullInstance
from .market import Consumer, MarketInstance, Producer
from .network import BPR, Affine, Edge, HardCap, Network

FORMAT = "transeq-instance"
VERSION = 1

# node ids appear inside composite report keys, so the separators are reserved
RESERVED = ("->", "|")


class SchemaError(ValueError):
    """Instance file violates the schema; the message names the path."""


def _fail(path: str, msg: str):
    raise SchemaError(f"{path}: {msg}")


def _obj(node, path: str, required: tuple = (), optional: tuple = ()) -> dict:
    if not isinstance(node, dict):
        _fail(path, f"expected an object, got {type(node).__name__}")
    allowed = set(required) | set(optional)
    for key in node:
        if key not in allowed:
            _fail(f"{path}.{key}", "unknown field")
    for key in required:
        if key not in node:
            _fail(f"{path}.{key}", "missing required field")
    return node


def _list(node, path: str) -> list:
    if not isinstance(node, list):
        _fail(path, f"expected an array, got {type(node).__name__}")
    return node


def _num(node, path: str, *, nonneg: bool = False, positive: bool = False) -> float:
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        _fail(path, f"expected a number, got {type(node).__name__}")
    v = float(node)
    if positive and not v > 0:
        _fail(path, f"expected a positive number, got {v}")
    if nonneg and v < 0:
        _fail(path, f"expected a nonnegative number, got {v}")
    return v


def _int(node, path: str, *, minimum: int | None = None) -> int:
    if isinstance(node, bool) or not isinstance(node, int):
        _fail(path, f"expected an integer, got {type(node).__name__}")
    if minimum is not None and node < minimum:
        _fail(path, f"expected an integer >= {minimum}, got {node}")
    return node


def _str(node, path: str, choices: tuple | None = None) -> str:
    if not isinstance(node, str):
        _fail(path, f"expected a string, got {type(node).__name__}")
    if choices is not None and node not in choices:
        _fail(path, f"expected one of {list(choices)}, got {node!r}")
    return node


def _node_id(node, path: str) -> str:
    s = _str(node, path)
    if not s:
        _fail(path, "node id must be a non-empty string")
    for sep in RESERVED:
        if sep in s:
            _fail(path, f"node id {s!r} contains reserved separator {sep!r}")
    return s


def _vector(node, path: str, *, nonneg: bool = False) -> list:
    return [_num(v, f"{path}[{i}]", nonneg=nonneg)
            for i, v in enumerate(_list(node, path))]


def _matrix(node, path: str, *, nonneg: bool = False) -> list:
    return [_vector(row, f"{path}[{i}]", nonneg=nonneg)
            for i, row in enumerate(_list(node, path))]


def _id_list(node, path: str) -> list:
    return [_node_id(v, f"{path}[{i}]") for i, v in enumerate(_list(node, path))]


# --- section parsers ---

def _parse_cost(node, path: str):
    spec = _obj(node, path, required=("family",),
                optional=("a", "b", "t0", "cap", "rho", "power"))
    family = _str(spec["family"], f"{path}.family",
                  choices=("affine", "bpr", "hardcap"))
    fields = {"affine": (("a",), ("b",)),
              "bpr": (("t0", "cap"), ("rho", "power")),
              "hardcap": (("t0", "cap"), ())}[family]
    _obj(node, path, required=("family",) + fields[0],
         optional=fields[1])
    if family == "affine":
        return Affine(a=_num(spec["a"], f"{path}.a"),
                      b=_num(spec.get("b", 0.0), f"{path}.b"))
    if family == "bpr":
        return BPR(t0=_num(spec["t0"], f"{path}.t0"),
                   cap=_num(spec["cap"], f"{path}.cap"),
                   rho=_num(spec.get("rho", 0.15), f"{path}.rho"),
                   power=_num(spec.get("power", 4.0), f"{path}.power"))
    return HardCap(t0=_num(spec["t0"], f"{path}.t0"),
                   cap=_num(spec["cap"], f"{path}.cap"))


def _parse_network(node, path: str) -> Network:
    spec = _obj(node, path, required=("nodes", "edges"),
                optional=("sources", "sinks", "od_pairs"))
    nodes = _id_list(spec["nodes"], f"{path}.nodes")
    edges = []
    for k, e in enumerate(_list(spec["edges"], f"{path}.edges")):
        epath = f"{path}.edges[{k}]"
        rec = _obj(e, epath, required=("tail", "head", "cost"))
        edges.append(Edge(tail=_node_id(rec["tail"], f"{epath}.tail"),
                          head=_node_id(rec["head"], f"{epath}.head"),
                          cost=_parse_cost(rec["cost"], f"{epath}.cost")))
    kwargs = {}
    if "sources" in spec:
        kwargs["sources"] = _id_list(spec["sources"], f"{path}.sources")
    if "sinks" in spec:
        kwargs["sinks"] = _id_list(spec["sinks"], f"{path}.sinks")
    if "od_pairs" in spec:
        pairs = []
        for k, p in enumerate(_list(spec["od_pairs"], f"{path}.od_pairs")):
            pair = _list(p, f"{path}.od_pairs[{k}]")
            if len(pair) != 2:
                _fail(f"{path}.od_pairs[{k}]", f"expected [origin, destination], got {len(pair)} items")
            pairs.append((_node_id(pair[0], f"{path}.od_pairs[{k}][0]"),
                          _node_id(pair[1], f"{path}.od_pairs[{k}][1]")))
        kwargs["od_pairs"] = pairs
    try:
        return Network(nodes, edges, **kwargs)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def _parse_table(node, path: str) -> FixedCosts:
    spec = _obj(node, path, required=("sources", "sinks", "T"))
    try:
        return FixedCosts(sources=tuple(_id_list(spec["sources"], f"{path}.sources")),
                          sinks=tuple(_id_list(spec["sinks"], f"{path}.sinks")),
                          T=np.array(_matrix(spec["T"], f"{path}.T"), dtype=float))
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{path}: {exc}") from exc


def _parse_demands(node, path: str) -> DemandMatrix:
    demands = {}
    for k, rec in enumerate(_list(node, path)):
        rpath = f"{path}[{k}]"
        spec = _obj(rec, rpath, required=("origin", "destination", "value"))
        od = (_node_id(spec["origin"], f"{rpath}.origin"),
              _node_id(spec["destination"], f"{rpath}.destination"))
        if od in demands:
            _fail(rpath, f"duplicate od pair {od[0]}->{od[1]}")
        demands[od] = _num(spec["value"], f"{rpath}.value", nonneg=True)
    return DemandMatrix(demands)


def _parse_sites(node, path: str) -> tuple:
    sites = []
    for k, rec in enumerate(_list(node, path)):
        rpath = f"{path}[{k}]"
        spec = _obj(rec, rpath, required=("node", "role", "alpha"), optional=("beta",))
        try:
            sites.append(SigmaSite(
                node=_node_id(spec["node"], f"{rpath}.node"),
                role=_str(spec["role"], f"{rpath}.role",
                          choices=("production", "consumption")),
                alpha=_num(spec["alpha"], f"{rpath}.alpha"),
                beta=_num(spec.get("beta", 0.0), f"{rpath}.beta")))
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"{rpath}: {exc}") from exc
    return tuple(sites)


def _parse_mode(node, path: str):
    spec = _obj(node, path, required=("kind",),
                optional=("d_bar", "L", "W", "gamma"))
    kind = _str(spec["kind"], f"{path}.kind", choices=("potential", "constrained"))
    if kind == "potential":
        _obj(node, path, required=("kind",), optional=("d_bar",))
        d_bar = None
        if "d_bar" in spec:
            d_bar = _num(spec["d_bar"], f"{path}.d_bar", positive=True)
        return Potential(d_bar=d_bar)
    _obj(node, path, required=("kind", "L", "W", "gamma"))
    try:
        return Constrained(L=np.array(_vector(spec["L"], f"{path}.L", nonneg=True)),
                           W=np.array(_vector(spec["W"], f"{path}.W", nonneg=True)),
                           gamma=_num(spec["gamma"], f"{path}.gamma", positive=True))
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{path}: {exc}") from exc


def _parse_producer(node, path: str) -> Producer:
    spec = _obj(node, path, required=("site", "u_max"),
                optional=("chi", "c", "A", "R"))
    kwargs = {"site": _node_id(spec["site"], f"{path}.site"),
              "u_max": np.array(_vector(spec["u_max"], f"{path}.u_max", nonneg=True))}
    if "chi" in spec:
        kwargs["chi"] = _num(spec["chi"], f"{path}.chi", nonneg=True)
    if "c" in spec:
        kwargs["c"] = np.array(_vector(spec["c"], f"{path}.c", nonneg=True))
    if "A" in spec:
        kwargs["A"] = np.array(_matrix(spec["A"], f"{path}.A", nonneg=True))
    if "R" in spec:
        kwargs["R"] = np.array(_matrix(spec["R"], f"{path}.R", nonneg=True))
    try:
        return Producer(**kwargs)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def _parse_consumer(node, path: str) -> Consumer:
    spec = _obj(node, path, required=("site", "Q", "sigma_min", "tau_inc"))
    try:
        return Consumer(site=_node_id(spec["site"], f"{path}.site"),
                        Q=np.array(_matrix(spec["Q"], f"{path}.Q")),
                        sigma_min=np.array(_vector(spec["sigma_min"],
                                                   f"{path}.sigma_min", nonneg=True)),
                        tau_inc=_num(spec["tau_inc"], f"{path}.tau_inc", nonneg=True))
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{path}: {exc}") from exc


@dataclass
class MarketSection:
    producers: tuple
    consumers: tuple
    gamma: float
    b: np.ndarray


def _parse_market(node, path: str) -> MarketSection:
    spec = _obj(node, path, required=("producers", "consumers", "gamma"),
                optional=("b",))
    producers = tuple(_parse_producer(p, f"{path}.producers[{i}]")
                      for i, p in enumerate(_list(spec["producers"], f"{path}.producers")))
    consumers = tuple(_parse_consumer(c, f"{path}.consumers[{i}]")
                      for i, c in enumerate(_list(spec["consumers"], f"{path}.consumers")))
    b = np.zeros(0)
    if "b" in spec:
        b = np.array(_vector(spec["b"], f"{path}.b", nonneg=True))
    return MarketSection(producers=producers, consumers=consumers,
                         gamma=_num(spec["gamma"], f"{path}.gamma", positive=True),
                         b=b)


def _parse_dynamics(node, path: str) -> dict:
    spec = _obj(node, path, optional=("kind", "game", "temperature", "h",
                                      "horizon", "seed", "x0"))
    out = {}
    if "kind" in spec:
        out["kind"] = _str(spec["kind"], f"{path}.kind",
                           choices=("logit", "imitation_logit"))
    if "game" in spec:
        out["game"] = _str(spec["game"], f"{path}.game",
                           choices=("paths", "correspondence"))
    if "temperature" in spec:
        out["temperature"] = _num(spec["temperature"], f"{path}.temperature",
                                  positive=True)
    if "h" in spec:
        out["h"] = _num(spec["h"], f"{path}.h", positive=True)
    if "horizon" in spec:
        out["horizon"] = _int(spec["horizon"], f"{path}.horizon", minimum=1)
    if "seed" in spec:
        out["seed"] = _int(spec["seed"], f"{path}.seed", minimum=0)
    if "x0" in spec:
        out["x0"] = _str(spec["x0"], f"{path}.x0", choices=("uniform", "random"))
    return out


@dataclass
class Instance:
    """Validated instance file; sections are None when absent."""

    path: str
    network: Network | None = None
    table: FixedCosts | None = None
    demands: DemandMatrix | None = None
    sites: tuple = ()
    mode: Potential | Constrained | None = None
    market: MarketSection | None = None
    mu: float | None = None
    gamma_tilde: float | None = None
    dynamics: dict | None = None

    @property
    def transport(self):
        """The network when present, else the fixed-cost table."""
        if self.network is not None:
            return self.network
        if self.table is not None:
            return self.table
        raise SchemaError("instance has neither a network nor a table section")

    def require(self, *sections: str):
        """Raise unless every named section was provided."""
        for name in sections:
            if name == "transport":
                self.transport
                continue
            value = getattr(self, name)
            missing = value is None or (name == "sites" and value == ())
            if missing:
                raise SchemaError(f"{name}: section required by this command")

    def distribution_instance(self, mode=None) -> DistributionInstance:
        mode = mode if mode is not None else self.mode
        if mode is None:
            mode = Potential()
        # pinned margins replace site potentials, so sites are only
        # required (or allowed) in the potential regime
        if isinstance(mode, Potential):
            self.require("transport", "sites")
        else:
            self.require("transport")
        return DistributionInstance(transport=self.transport, mode=mode,
                                    sites=self.sites)

    def market_instance(self, gamma: float | None = None) -> MarketInstance:
        self.require("transport", "market")
        return MarketInstance(
            producers=self.market.producers, consumers=self.market.consumers,
            transport=self.transport,
            gamma=self.market.gamma if gamma is None else gamma,
            b=self.market.b)

    def full_instance(self, gamma: float | None = None,
                      mu: float | None = None) -> FullInstance:
        if mu is None:
            mu = self.mu if self.mu is not None else 1e-2
        return FullInstance(market=self.market_instance(gamma), mu=mu)


def parse_instance(doc, path: str = "instance") -> Instance:
    """Validate a decoded JSON document and assemble domain objects."""
    spec = _obj(doc, path, required=("format", "version"),
                optional=("network", "table", "demands", "sites", "mode",
                          "market", "mu", "gamma_tilde", "dynamics"))
    fmt = _str(spec["format"], f"{path}.format")
    if fmt != FORMAT:
        _fail(f"{path}.format", f"expected {FORMAT!r}, got {fmt!r}")
    version = _int(spec["version"], f"{path}.version")
    if version != VERSION:
        _fail(f"{path}.version", f"unsupported version {version}, expected {VERSION}")
    inst = Instance(path=path)
    if "network" in spec:
        inst.network = _parse_network(spec["network"], f"{path}.network")
    if "table" in spec:
        inst.table = _parse_table(spec["table"], f"{path}.table")
    if "demands" in spec:
        inst.demands = _parse_demands(spec["demands"], f"{path}.demands")
    if "sites" in spec:
        inst.sites = _parse_sites(spec["sites"], f"{path}.sites")
    if "mode" in spec:
        inst.mode = _parse_mode(spec["mode"], f"{path}.mode")
    if "market" in spec:
        inst.market = _parse_market(spec["market"], f"{path}.market")
    if "mu" in spec:
        inst.mu = _num(spec["mu"], f"{path}.mu", positive=True)
    if "gamma_tilde" in spec:
        inst.gamma_tilde = _num(spec["gamma_tilde"], f"{path}.gamma_tilde",
                                positive=True)
    if "dynamics" in spec:
        inst.dynamics = _parse_dynamics(spec["dynamics"], f"{path}.dynamics")
    return inst


def load_instance(path: str) -> Instance:
    """Read, decode, and validate an instance file."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    return parse_instance(doc, path)
