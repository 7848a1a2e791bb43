"""Figure rendering for command reports (opt-in via the CLI).

All figures are written to files through the Agg backend, so the
module works headless.  PNG metadata is stripped to keep reruns
reproducible.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 120


def _save(fig, out: str) -> str:
    fig.savefig(out, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return out


def convergence_figure(series: dict, out: str, title: str = "convergence") -> str:
    """Semilog residual history; series maps label -> list of values.

    An optional "iterations" entry supplies the x axis for all other
    series of matching length.
    """
    xs = series.get("iterations")
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, values in sorted(series.items()):
        if label == "iterations" or len(values) == 0:
            continue
        vals = np.asarray(values, dtype=float)
        x = xs if xs is not None and len(xs) == len(vals) else np.arange(len(vals))
        positive = vals > 0
        if positive.any():
            ax.semilogy(np.asarray(x)[positive], vals[positive], label=label)
        else:
            ax.plot(x, vals, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return _save(fig, out)


def flows_figure(network, flows, times, out: str) -> str:
    """Per-edge flow and travel-time bars, labeled tail->head."""
    flows = np.asarray(flows, dtype=float)
    times = np.asarray(times, dtype=float)
    labels = [f"{e.tail}->{e.head}#{k}" for k, e in enumerate(network.edges)]
    x = np.arange(len(labels))
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(max(6.0, 0.5 * len(labels)), 6.0),
                                   sharex=True)
    ax1.bar(x, flows, color="tab:blue")
    ax1.set_ylabel("flow")
    ax2.bar(x, times, color="tab:orange")
    ax2.set_ylabel("time")
    ax2.set_xticks(x)
    ax2.set_xticklabels(labels, rotation=45, ha="right", fontsize="small")
    ax1.set_title("edge flows and times")
    fig.tight_layout()
    return _save(fig, out)


def matrix_figure(d, row_labels, col_labels, out: str,
                  title: str = "correspondence matrix") -> str:
    """Heatmap of an od matrix with annotated cells."""
    d = np.atleast_2d(np.asarray(d, dtype=float))
    fig, ax = plt.subplots(figsize=(1.2 + 0.8 * d.shape[1], 1.2 + 0.8 * d.shape[0]))
    im = ax.imshow(d, cmap="viridis")
    ax.set_xticks(range(d.shape[1]))
    ax.set_xticklabels(col_labels, fontsize="small")
    ax.set_yticks(range(d.shape[0]))
    ax.set_yticklabels(row_labels, fontsize="small")
    mid = 0.5 * (d.max() + d.min()) if d.size else 0.0
    for i in range(d.shape[0]):
        for j in range(d.shape[1]):
            color = "white" if d[i, j] < mid else "black"
            ax.text(j, i, f"{d[i, j]:.3g}", ha="center", va="center",
                    color=color, fontsize="small")
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, out)


def bars_figure(labels, values, out: str, title: str, ylabel: str = "value") -> str:
    """Labeled bar chart, used for prices and other per-item vectors."""
    values = np.asarray(values, dtype=float)
    x = np.arange(len(values))
    fig, ax = plt.subplots(figsize=(max(5.0, 0.5 * len(values)), 3.5))
    ax.bar(x, values, color="tab:green")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize="small")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, out)


def trajectory_figure(states, labels, lyapunov, out: str) -> str:
    """State coordinates over time with the recorded objective overlaid."""
    states = np.asarray(states, dtype=float)
    steps = np.arange(states.shape[0])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.5, 6.0), sharex=True)
    show = min(states.shape[1], 12)  # readable line count
    for j in range(show):
        ax1.plot(steps, states[:, j], label=labels[j], linewidth=1.0)
    if states.shape[1] > show:
        ax1.set_title(f"state trajectory (first {show} of {states.shape[1]} coordinates)")
    else:
        ax1.set_title("state trajectory")
    ax1.set_ylabel("mass")
    ax1.legend(loc="best", fontsize="x-small", ncol=2)
    ax2.plot(steps, np.asarray(lyapunov, dtype=float), color="tab:red")
    ax2.set_ylabel("objective")
    ax2.set_xlabel("step")
    fig.tight_layout()
    return _save(fig, out)
