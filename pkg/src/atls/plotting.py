"""Static SVG plots for sweeps and error traces."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_sweep", "plot_traces"]

# fixed salt and no date so identical data gives identical files
matplotlib.rcParams["svg.hashsalt"] = "atls"
_META = {"Date": None, "Creator": "atls"}


def _as_number(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def plot_sweep(summary, path, xlabel="sweep value") -> Path:
    """Median final test error with an IQR band, one line per mode."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    modes = sorted({row[0] for row in summary})
    for mode in modes:
        pts = [row for row in summary if row[0] == mode]
        xs = [_as_number(r[1]) for r in pts]
        if any(x is None for x in xs):
            xs = list(range(len(pts)))
            ax.set_xticks(xs, [str(r[1]) for r in pts])
        med = np.array([r[3] for r in pts])
        q1 = np.array([r[4] for r in pts])
        q3 = np.array([r[5] for r in pts])
        ax.plot(xs, med, marker="o", label=mode)
        ax.fill_between(xs, q1, q3, alpha=0.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("final test error (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def plot_traces(rows, path) -> Path:
    """Mean test error per epoch for every mode found in ``rows``."""
    by_mode: dict = {}
    for r in rows:
        if r["split"] != "test":
            continue
        mode = r["run_id"].split("/")[0]
        by_mode.setdefault(mode, {}).setdefault(r["epoch"], []).append(r["error_percent"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mode in sorted(by_mode):
        epochs = sorted(by_mode[mode])
        ax.plot(epochs, [np.mean(by_mode[mode][e]) for e in epochs], label=mode)
    ax.set_xlabel("epoch")
    ax.set_ylabel("test error (%)")
    if by_mode:
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path
