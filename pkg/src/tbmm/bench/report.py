"""Figures from the aggregate CSVs: mean relative error with a one-standard-deviation band."""

from __future__ import annotations

import csv
import math
import os


def _read(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _series(rows, xkey):
    out = {}
    for row in rows:
        s = out.setdefault(row["solver"], ([], [], []))
        s[0].append(float(row[xkey]))
        s[1].append(float(row["mean_rel_error"]))
        s[2].append(float(row["std_rel_error"]))
    return out


def _panel(ax, series, xlabel, logx):
    for name, (x, m, s) in series.items():
        line, = ax.plot(x, m, label=name)
        lo = [max(a - (b if not math.isnan(b) else 0.0), 1e-16) for a, b in zip(m, s)]
        hi = [a + (b if not math.isnan(b) else 0.0) for a, b in zip(m, s)]
        ax.fill_between(x, lo, hi, color=line.get_color(), alpha=0.2, linewidth=0)
    ax.set_yscale("log")
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("relative error")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)


def plot_experiment(out_dir, name):
    """Render ``{name}_rel_error_iter.png`` and ``{name}_rel_error_time.png``; returns their paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    sources = [("aggregate", "iter", "iteration", False),
               ("time_aggregate", "time_s", "elapsed (s)", True)]
    for suffix, xkey, xlabel, logx in sources:
        src = os.path.join(out_dir, f"{name}_{suffix}.csv")
        if not os.path.exists(src):
            continue
        rows = _read(src)
        if not rows:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        _panel(ax, _series(rows, xkey), xlabel, logx)
        ax.set_title(name)
        fig.tight_layout()
        out = os.path.join(out_dir, f"{name}_rel_error_{'iter' if xkey == 'iter' else 'time'}.png")
        fig.savefig(out, dpi=120, metadata={"Software": None})
        plt.close(fig)
        written.append(out)
    return written
