"""SVG learning-curve figures.

Rendering goes through matplotlib's Agg canvas with a fixed hash salt and no
date metadata, so identical inputs give byte-identical files.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "dacrl", "svg.fonttype": "none", "figure.dpi": 100}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_curves(curve_rows, path, title="Mean network return per agent"):
    """Mean return per agent with a +/- variance band, one line per agent."""
    rows = list(curve_rows)
    agents = sorted({int(r["agent_id"]) for r in rows})
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for agent in agents:
            sel = [r for r in rows if int(r["agent_id"]) == agent]
            x = np.array([float(r["iteration"]) for r in sel])
            m = np.array([float(r["mean_return"]) for r in sel])
            v = np.array([float(r["var_return"]) for r in sel])
            line, = ax.plot(x, m, label=f"agent {agent}")
            ax.fill_between(x, m - v, m + v, color=line.get_color(), alpha=0.15, linewidth=0)
        ax.set_xlabel("actor iteration")
        ax.set_ylabel("accumulated network reward")
        ax.set_title(title)
        if agents:
            ax.legend(fontsize="small", ncol=2)
        fig.tight_layout()
        _save(fig, path)


def plot_disagreement(traces, path):
    """Per-update disagreement norm of every trial on a log scale."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for n, tr in enumerate(traces):
            d = np.asarray(tr.disagreement, dtype=float)
            if d.size:
                ax.semilogy(np.asarray(tr.iterations), np.maximum(d, 1e-300), label=f"trial {n}")
        ax.set_xlabel("actor iteration")
        ax.set_ylabel("disagreement norm")
        if traces:
            ax.legend(fontsize="small")
        fig.tight_layout()
        _save(fig, path)
