"""Machine-readable JSON reports shared by every command.

Reports are deterministic: keys are sorted, floats serialize through
repr (exact round trip), and containers are converted in a fixed
order, so rerunning a command on the same inputs yields byte-identical
output.  Wall time is reported only when timing is requested, since a
measured duration would break that guarantee.
"""

from __future__ import annotations

import dataclasses
import json
import sys

import numpy as np

FORMAT = "transeq-report"
VERSION = 1


def pair_key(pair: tuple) -> str:
    return f"{pair[0]}->{pair[1]}"


def parse_pair_key(key: str) -> tuple:
    origin, sep, dest = key.partition("->")
    if not sep or not origin or not dest:
        raise ValueError(f"malformed od key {key!r}")
    return origin, dest


def path_key(path: tuple) -> str:
    return "|".join(str(k) for k in path)


def parse_path_key(key: str) -> tuple:
    return tuple(int(k) for k in key.split("|"))


def _key(k) -> str:
    if isinstance(k, tuple):
        if all(isinstance(v, (int, np.integer)) for v in k):
            return path_key(k)
        return pair_key(k)
    return str(k)


def jsonify(x):
    """Recursively convert arrays, scalars, and tuple keys to JSON types."""
    if isinstance(x, dict):
        return {_key(k): jsonify(v) for k, v in x.items()}
    if isinstance(x, np.ndarray):
        return jsonify(x.tolist())
    if isinstance(x, (list, tuple)):
        return [jsonify(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    return x


def build_report(command: str, instance: str, config, solution: dict,
                 residuals: dict, iterations: int, converged: bool,
                 wall_time_s: float | None = None,
                 artifacts: dict | None = None) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "command": command,
        "instance": instance,
        "config": jsonify(dataclasses.asdict(config)),
        "solution": jsonify(solution),
        "residuals": jsonify(residuals),
        "iterations": int(iterations),
        "converged": bool(converged),
        "wall_time_s": wall_time_s,
        "artifacts": jsonify(artifacts or {}),
    }


def render(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def write_report(report: dict, out: str | None) -> str:
    """Render to the given path, or stdout when out is None."""
    text = render(report)
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def load_report(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "solution" not in doc or "command" not in doc:
        raise ValueError(f"{path}: not a report file (missing command/solution)")
    return doc
