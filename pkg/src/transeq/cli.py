"""Command dispatch: parse an instance file, solve, write a report.

Exit codes: 0 on a converged solve within tolerances, 1 on input
errors (malformed instance, missing sections, bad flags), 2 when the
solver flags non-convergence or a verified solution misses the
tolerances.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import plots
from .assignment import (PathBudgetError, SolveConfig, _logit_response,
                         _path_incidence, beckmann, dual_value,
                         enumerate_simple_paths, lp_limit,
                         reconstruct_path_flows, solve_stochastic,
                         solve_wardrop, wardrop_residual)
from .distribution import (Constrained, Potential, _cost_table,
                           _excess_residual, _pair_costs,
                           assemble_constrained, solve_constrained,
                           solve_potential)
from .dynamics import DynamicsConfig, simulate_corr_logit, simulate_path_logit
from .fullmodel import solve_full
from .instance_io import Instance, SchemaError, load_instance
from .market import walras_residuals, solve_market
from .network import HardCap
from .report import (build_report, load_report, parse_pair_key,
                     parse_path_key, write_report)
from .saddle import order_swap_check

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_FLAGGED = 2

COMMANDS = ("assign", "assign-stochastic", "lp-limit", "distribute",
            "distribute-constrained", "market", "full", "simulate",
            "verify", "swap-check")

# commands whose solvers default to the long mirror-prox schedule
_SOLVER_DEFAULTS = {
    "market": SolveConfig(tol=1e-7, max_iter=100000, step=0.1),
    "full": SolveConfig(tol=1e-7, max_iter=100000, step=0.1),
    "swap-check": SolveConfig(tol=1e-3),
    "verify": SolveConfig(tol=1e-4),
}


@dataclass
class Outcome:
    solution: dict
    residuals: dict
    iterations: int
    converged: bool
    plots: object = None  # callable base -> list of written figure paths
    artifacts: dict = field(default_factory=dict)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transeq",
        description="Transport equilibrium solvers over JSON instance files.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} solver")
        p.add_argument("instance", help="path to a JSON instance file")
        p.add_argument("--tol", type=float, default=None,
                       help="convergence / verification tolerance")
        p.add_argument("--max-iter", type=int, default=None, dest="max_iter")
        p.add_argument("--gamma", type=float, default=None,
                       help="entropy weight override (market, coupling)")
        p.add_argument("--gamma-tilde", type=float, default=None,
                       dest="gamma_tilde",
                       help="path-choice temperature override")
        p.add_argument("--mu", type=float, default=None,
                       help="capacity smoothing / congestion weight override")
        p.add_argument("--step", type=float, default=None,
                       help="engine step size (dynamics step h for simulate)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None,
                       help="report path (stdout when omitted)")
        p.add_argument("--plot", action="store_true",
                       help="also render figures next to the report")
        p.add_argument("--timing", action="store_true",
                       help="record wall time in the report")
        if name == "verify":
            p.add_argument("--solution", required=True,
                           help="report or solution file to re-verify")
    return parser


def _resolve_config(args, inst: Instance) -> SolveConfig:
    base = _SOLVER_DEFAULTS.get(args.command, SolveConfig())
    kw = {}
    if inst.gamma_tilde is not None:
        kw["gamma_tilde"] = inst.gamma_tilde
    if inst.mu is not None:
        kw["mu"] = inst.mu
    if args.command in ("market", "full"):
        if inst.market is not None:
            kw["gamma"] = inst.market.gamma
    elif isinstance(inst.mode, Constrained):
        kw["gamma"] = inst.mode.gamma
    for name in ("tol", "max_iter", "gamma", "gamma_tilde", "mu", "step", "seed"):
        value = getattr(args, name)
        if value is not None:
            kw[name] = value
    return replace(base, **kw)


def _report_config(doc: dict, cfg: SolveConfig) -> SolveConfig:
    """Config the original run used, for bit-faithful recomputation."""
    stored = doc.get("config")
    if not isinstance(stored, dict):
        return cfg
    names = {f for f in SolveConfig.__dataclass_fields__}
    return SolveConfig(**{k: v for k, v in stored.items() if k in names})


# --- command handlers ---

def _cmd_assign(inst: Instance, cfg: SolveConfig, args) -> Outcome:
    inst.require("network", "demands")
    res = solve_wardrop(inst.network, inst.demands, cfg)
    solution = {"flows": res.flows, "times": res.times,
                "beckmann": res.beckmann, "dual_value": res.dual_value}
    residuals = {"gap": res.gap, "wardrop_residual": res.wardrop_residual}

    def render(base):
        return [plots.convergence_figure(res.trace, f"{base}-convergence.png",
                                         title="assignment convergence"),
                plots.flows_figure(inst.network, res.flows, res.times,
                                   f"{base}-flows.png")]

    return Outcome(solution, residuals, res.iterations, res.converged, render)


def _cmd_stochastic(inst: Instance, cfg: SolveConfig, args) -> Outcome:
    inst.require("network", "demands")
    res = solve_stochastic(inst.network, inst.demands, cfg)
    solution = {"path_flows": res.path_flows, "flows": res.flows,
                "objective": res.objective}
    residuals = {"fixed_point": res.residual}
    times = inst.network.costs.tau(res.flows)

    def render(base):
        return [plots.flows_figure(inst.network, res.flows, times,
                                   f"{base}-flows.png")]

    return Outcome(solution, residuals, res.iterations, res.converged, render)


def _lp_feasibility(network, agg: dict, flows: np.ndarray, times: np.ndarray):
    """Conservation, capacity, and dual complementarity residuals."""
    net = np.zeros(network.n_nodes)
    for (o, d), v in agg.items():
        net[network.node_index[o]] += v
        net[network.node_index[d]] -= v
    div = np.zeros(network.n_nodes)
    for k in range(network.n_edges):
        div[network._tails[k]] += flows[k]
        div[network._heads[k]] -= flows[k]
    conservation = float(np.abs(div - net).max(initial=0.0))
    capacity = 0.0
    comp = 0.0
    t0 = network.free_flow_times()
    for k, e in enumerate(network.edges):
        if isinstance(e.cost, HardCap):
            capacity = max(capacity, float(flows[k] - e.cost.cap))
            comp = max(comp, abs(float((times[k] - t0[k]) * (e.cost.cap - flows[k]))))
    return conservation, max(capacity, 0.0), comp


def _cmd_lp_limit(inst: Instance, cfg: SolveConfig, args) -> Outcome:
    inst.require("network", "demands")
    res = lp_limit(inst.network, inst.demands)
    conservation, capacity, comp = _lp_feasibility(
        inst.network, inst.demands.aggregate(), res.flows, res.times)
    solution = {"flows": res.flows, "times": res.times, "objective": res.objective}
    residuals = {"conservation": conservation, "capacity": capacity,
                 "dual_complementarity": comp}
    converged = max(conservation, capacity) <= max(cfg.tol, 1e-8)

    def render(base):
        return [plots.flows_figure(inst.network, res.flows, res.times,
                                   f"{base}-flows.png")]

    return Outcome(solution, residuals, 0, converged, render)


def _cmd_distribute(inst: Instance, cfg: SolveConfig, args) -> Outcome:
    dinst = inst.distribution_instance()
    if not isinstance(dinst.mode, Potential):
        raise SchemaError("mode.kind: distribute needs the potential regime")
    res = solve_potential(dinst, cfg)
    solution = {"d": res.d, "d0": res.d0, "objective": res.objective,
                "dbar_binds": res.dbar_binds}
    residuals = {"first_order": res.residual}

    def render(base):
        return [plots.matrix_figure(res.d, dinst.sources, dinst.sinks,
                                    f"{base}-matrix.png")]

    return Outcome(solution, residuals, res.iterations, res.converged, render)


def _cmd_distribute_constrained(inst: Instance, cfg: SolveConfig, args) -> Outcome:
    if not isinstance(inst.mode, Constrained):
        raise SchemaError("mode.kind: distribute-constrained needs the "
                          "constrained regime")
    mode = replace(inst.mode, gamma=cfg.gamma)
    dinst = inst.distribution_instance(mode=mode)
    res = solve_constrained(dinst, cfg)
    solution = {"d": res.d, "lam_L": res.lam_L, "lam_W": res.lam_W,
                "objective": res.objective}
    residuals = {"margin": res.margin_residual, "gap": res.gap}

    def render(base):
        return [plots.matrix_figure(res.d, dinst.sources, dinst.sinks,
                                    f"{base}-matrix.png")]

    return Outcome(solution, residuals, res.iterations, res.converged, render)


def _market_solution(res) -> dict:
    return {"d": res.d, "L": res.L, "alpha": res.alpha, "W": res.W,
            "beta": res.beta, "y": res.y, "lam_L": res.lam_L,
            "lam_W": res.lam_W}


def _market_plots(minst, res, base) -> list:
    agg = np.zeros((len(minst.origins), len(minst.destinations)))
    for a, i in enumerate(minst.origins):
        for b, j in enumerate(minst.destinations):
            if (i, j) in res.d:
                agg[a, b] = float(np.sum(res.d[(i, j)]))
    labels = [f"{i}:{k}" for i in minst.origins
              for k in range(len(res.lam_L[i]))]
    lam = np.concatenate([np.atleast_1d(res.lam_L[i]) for i in minst.origins])
    return [plots.matrix_figure(agg, minst.origins, minst.destinations,
                                f"{base}-matrix.png", title="shipped mass"),
            plots.bars_figure(labels, lam, f"{base}-prices.png",
                              "origin prices", ylabel="price")]


def _cmd_market(inst: Instance, cfg: SolveConfig, args) -> Outcome:
    minst = inst.market_instance(gamma=cfg.gamma)
    res = solve_market(minst, cfg)
    residuals = {"walras": res.walras.groups, "gap": res.gap}

    def render(base):
        return _market_plots(minst, res, base)

    return Outcome(_market_solution(res), residuals, res.iterations,
                   res.converged, render)


def _cmd_full(inst: Instance, cfg: SolveConfig, args) -> Outcome:
    finst = inst.full_instance(gamma=cfg.gamma, mu=cfg.mu)
    res = solve_full(finst, cfg)
    solution = _market_solution(res)
    solution.update({"t": res.t, "f": res.f, "x": res.x})
    residuals = {"walras": res.walras.groups, "gap": res.gap,
                 "wardrop_residual": res.wardrop_residual,
                 "time_consistency": res.time_consistency}
    net = finst.network
    times = net.costs.tau(res.f)

    def render(base):
        out = _market_plots(finst.market, res, base)
        out.append(plots.flows_figure(net, res.f, times, f"{base}-flows.png"))
        return out

    return Outcome(solution, residuals, res.iterations, res.converged, render)


def _cmd_simulate(inst: Instance, cfg: SolveConfig, args) -> Outcome:
    dyn = dict(inst.dynamics or {})
    game = dyn.pop("game", None)
    if game is None:
        game = "paths" if inst.demands is not None else "correspondence"
    x0 = dyn.pop("x0", None)
    if x0 == "uniform":
        x0 = None
    if args.step is not None:
        dyn["h"] = args.step
    if args.seed is not None:
        dyn["seed"] = args.seed
    if args.gamma_tilde is not None:
        dyn["temperature"] = args.gamma_tilde
    dcfg = DynamicsConfig(**dyn)
    if game == "paths":
        inst.require("network", "demands")
        traj = simulate_path_logit(inst.network, inst.demands, dcfg, x0=x0,
                                   budget=cfg.path_budget)
    else:
        dinst = inst.distribution_instance()
        traj = simulate_corr_logit(dinst, dcfg, x0=x0, solve_cfg=cfg)
    artifacts = {}
    if args.out is not None:
        csv_path = f"{_base(args.out)}.csv"
        traj.write_csv(csv_path)
        artifacts["trajectory_csv"] = csv_path
    final = traj.states[-1]
    solution = {"game": game,
                "dynamics": {"kind": dcfg.kind, "temperature": dcfg.temperature,
                             "h": dcfg.h, "horizon": dcfg.horizon,
                             "seed": dcfg.seed},
                "final_state": dict(zip(traj.labels, final)),
                "mass": float(final.sum()),
                "lyapunov": float(traj.lyapunov[-1])}
    residuals = {"fixed_point": float(traj.distance[-1])}
    converged = residuals["fixed_point"] <= cfg.tol

    def render(base):
        return [plots.trajectory_figure(traj.states, traj.labels,
                                        traj.lyapunov, f"{base}-trajectory.png")]

    return Outcome(solution, residuals, dcfg.horizon, converged, render,
                   artifacts)


def _cmd_swap_check(inst: Instance, cfg: SolveConfig, args) -> Outcome:
    if not isinstance(inst.mode, Constrained):
        raise SchemaError("mode.kind: swap-check needs the constrained regime")
    mode = replace(inst.mode, gamma=cfg.gamma)
    dinst = inst.distribution_instance(mode=mode)
    problem = assemble_constrained(dinst, cfg)
    chk = order_swap_check(problem, cfg)
    diff = abs(chk.minmax - chk.maxmin)
    solution = {"minmax": chk.minmax, "maxmin": chk.maxmin,
                "box_active": chk.box_active}
    residuals = {"order_swap": diff}
    converged = chk.inner_converged and diff <= cfg.tol
    return Outcome(solution, residuals, 0, converged)


# --- verification ---

def _verify_assign(inst: Instance, sol: dict, rcfg: SolveConfig):
    inst.require("network", "demands")
    net = inst.network
    f = np.asarray(sol["flows"], dtype=float)
    t = net.costs.tau(f)
    beck = beckmann(net, f)
    dual = dual_value(net, inst.demands, t)
    x = reconstruct_path_flows(net, inst.demands.aggregate(), f,
                               rcfg.path_budget)
    return {"gap": beck - dual,
            "wardrop_residual": wardrop_residual(net, x, times=t)}


def _parse_path_flows(sol: dict) -> dict:
    return {parse_pair_key(k): {parse_path_key(pk): float(v)
                                for pk, v in flows.items()}
            for k, flows in sol["path_flows"].items()}


def _verify_stochastic(inst: Instance, sol: dict, rcfg: SolveConfig):
    inst.require("network", "demands")
    net = inst.network
    agg = inst.demands.aggregate()
    x = _parse_path_flows(sol)
    f = np.zeros(net.n_edges)
    aligned = {}
    for pair, flows in x.items():
        paths = enumerate_simple_paths(net, pair[0], pair[1], rcfg.path_budget)
        theta = _path_incidence(net, paths)
        vec = np.array([flows.get(p, 0.0) for p in paths])
        aligned[pair] = (vec, theta)
        f += theta.T @ vec
    t = net.costs.tau(f)
    residual = 0.0
    for pair, (vec, theta) in aligned.items():
        G = theta @ t
        resp = _logit_response(G, agg[pair], rcfg.gamma_tilde)
        residual = max(residual, float(np.abs(vec - resp).max(initial=0.0)))
    return {"fixed_point": residual}


def _verify_lp_limit(inst: Instance, sol: dict, rcfg: SolveConfig):
    inst.require("network", "demands")
    flows = np.asarray(sol["flows"], dtype=float)
    times = np.asarray(sol["times"], dtype=float)
    conservation, capacity, comp = _lp_feasibility(
        inst.network, inst.demands.aggregate(), flows, times)
    return {"conservation": conservation, "capacity": capacity,
            "dual_complementarity": comp}


def _verify_distribute(inst: Instance, sol: dict, rcfg: SolveConfig):
    dinst = inst.distribution_instance()
    d = np.atleast_2d(np.asarray(sol["d"], dtype=float))
    d0 = float(sol["d0"])
    T, _ = _cost_table(dinst, d, rcfg)
    G = _pair_costs(dinst, d, T)
    return {"first_order": _excess_residual(G, d, d0)}


def _verify_distribute_constrained(inst: Instance, sol: dict, rcfg: SolveConfig):
    if not isinstance(inst.mode, Constrained):
        raise SchemaError("mode.kind: constrained solution needs the "
                          "constrained regime")
    d = np.atleast_2d(np.asarray(sol["d"], dtype=float))
    mode = inst.mode
    margin = max(float(np.abs(d.sum(axis=1) - mode.L).max(initial=0.0)),
                 float(np.abs(d.sum(axis=0) - mode.W).max(initial=0.0)))
    return {"margin": margin}


def _parse_market_solution(sol: dict):
    d = {parse_pair_key(k): np.asarray(v, dtype=float)
         for k, v in sol["d"].items()}
    L = {k: np.asarray(v, dtype=float) for k, v in sol["L"].items()}
    W = {k: np.asarray(v, dtype=float) for k, v in sol["W"].items()}
    lam_L = {k: np.asarray(v, dtype=float) for k, v in sol["lam_L"].items()}
    lam_W = {k: np.asarray(v, dtype=float) for k, v in sol["lam_W"].items()}
    y = np.asarray(sol["y"], dtype=float)
    return d, L, W, y, lam_L, lam_W


def _verify_market(inst: Instance, sol: dict, rcfg: SolveConfig):
    minst = inst.market_instance()
    d, L, W, y, lam_L, lam_W = _parse_market_solution(sol)
    walras = walras_residuals(minst, d, L, W, y, lam_L, lam_W)
    return {"walras": walras.groups}


def _verify_full(inst: Instance, sol: dict, rcfg: SolveConfig):
    out = _verify_market(inst, sol, rcfg)
    minst = inst.market_instance()
    net = inst.network
    if net is None:
        raise SchemaError("network: section required to verify a full solution")
    t = np.asarray(sol["t"], dtype=float)
    f = np.asarray(sol["f"], dtype=float)
    x = {parse_pair_key(k): {parse_path_key(pk): float(v)
                             for pk, v in flows.items()}
         for k, flows in sol.get("x", {}).items()}
    times = net.costs.tau(f)
    if x:
        out["wardrop_residual"] = wardrop_residual(net, x, times=times)
    tcons = 0.0
    for origin in {p[0] for p in minst.pairs}:
        dist_t, _ = net.shortest_path(t, origin)
        dist_rec, _ = net.shortest_path(times, origin)
        for (o, dd) in minst.pairs:
            if o != origin:
                continue
            j = net.node_index[dd]
            tcons = max(tcons, abs(float(dist_t[j]) - float(dist_rec[j])))
    out["time_consistency"] = tcons
    return out


_VERIFIERS = {
    "assign": _verify_assign,
    "assign-stochastic": _verify_stochastic,
    "lp-limit": _verify_lp_limit,
    "distribute": _verify_distribute,
    "distribute-constrained": _verify_distribute_constrained,
    "market": _verify_market,
    "full": _verify_full,
}


def _flatten_residuals(residuals: dict):
    for value in residuals.values():
        if isinstance(value, dict):
            yield from _flatten_residuals(value)
        elif isinstance(value, (tuple, list)):
            for v in value:
                yield float(v)
        else:
            yield float(value)


def _cmd_verify(inst: Instance, cfg: SolveConfig, args) -> Outcome:
    doc = _load_solution(args.solution)
    command = doc["command"]
    if command not in _VERIFIERS:
        raise SchemaError(f"command: no verifier for {command!r} solutions")
    rcfg = _report_config(doc, cfg)
    residuals = _VERIFIERS[command](inst, doc["solution"], rcfg)
    worst = max(_flatten_residuals(residuals), default=0.0)
    solution = {"verified_command": command, "source": args.solution,
                "max_residual": worst}
    return Outcome(solution, residuals, 0, worst <= cfg.tol)


def _load_solution(path: str) -> dict:
    try:
        return load_report(path)
    except ValueError:
        pass
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    if isinstance(doc, dict) and "flows" in doc:
        # bare assignment solution: just edge flows
        return {"command": "assign", "solution": doc}
    raise SchemaError(f"{path}: not a report or bare flows solution")


_HANDLERS = {
    "assign": _cmd_assign,
    "assign-stochastic": _cmd_stochastic,
    "lp-limit": _cmd_lp_limit,
    "distribute": _cmd_distribute,
    "distribute-constrained": _cmd_distribute_constrained,
    "market": _cmd_market,
    "full": _cmd_full,
    "simulate": _cmd_simulate,
    "verify": _cmd_verify,
    "swap-check": _cmd_swap_check,
}


def _base(out: str) -> str:
    return out[:-5] if out.endswith(".json") else out


def _err(exc) -> None:
    print(f"error: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.plot and args.out is None:
            raise SchemaError("--plot requires --out (figure names derive from it)")
        inst = load_instance(args.instance)
        cfg = _resolve_config(args, inst)
        start = time.perf_counter()
        outcome = _HANDLERS[args.command](inst, cfg, args)
        wall = round(time.perf_counter() - start, 6) if args.timing else None
        artifacts = dict(outcome.artifacts)
        if args.plot and outcome.plots is not None:
            artifacts["plots"] = outcome.plots(_base(args.out))
        report = build_report(args.command, args.instance, cfg,
                              outcome.solution, outcome.residuals,
                              outcome.iterations, outcome.converged,
                              wall_time_s=wall, artifacts=artifacts)
        write_report(report, args.out)
        return EXIT_OK if outcome.converged else EXIT_FLAGGED
    except (SchemaError, PathBudgetError) as exc:
        _err(exc)
        return EXIT_INPUT
    except ValueError as exc:
        _err(exc)
        return EXIT_INPUT
    except RuntimeError as exc:
        _err(exc)
        return EXIT_FLAGGED


if __name__ == "__main__":
    sys.exit(main())
