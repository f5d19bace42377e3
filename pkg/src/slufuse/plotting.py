"""Sweep CSV rendering: an ASCII mean±std table and an F1-vs-mix-fraction figure."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np


def curve_label(row):
    return row["model"] if row["fusion_mode"] == "none" else f"{row['model']}_{row['fusion_mode']}"


def aggregate(rows, metric="macro_f1"):
    """{(engine, curve): {mix_fraction: (mean, std, n)}} over seeds."""
    groups = defaultdict(lambda: defaultdict(list))
    for r in rows:
        groups[(r["engine"], curve_label(r))][r["mix_fraction"]].append(r[metric])
    out = {}
    for key, by_p in groups.items():
        out[key] = {p: (float(np.mean(v)), float(np.std(v)), len(v)) for p, v in sorted(by_p.items())}
    return out


def ascii_table(rows, metric="macro_f1"):
    """Percentages, mean±std over seeds; one line per (engine, curve)."""
    agg = aggregate(rows, metric)
    grid = sorted({p for series in agg.values() for p in series})
    head = ["engine", "model"] + [f"p={p:g}" for p in grid]
    body = []
    for (engine, curve) in sorted(agg):
        series = agg[(engine, curve)]
        cells = [f"{100 * series[p][0]:.2f}±{100 * series[p][1]:.2f}" if p in series else "-" for p in grid]
        body.append([engine, curve] + cells)
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    lines = [f"{metric} (%), mean±std over seeds", fmt(head), fmt(["-" * w for w in widths])]
    lines += [fmt(r) for r in body]
    return "\n".join(lines) + "\n"


def plot_sweep(rows, path, metric="macro_f1"):
    """One panel per engine, one curve per model, x-axis the ASR mix fraction."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    agg = aggregate(rows, metric)
    engines = sorted({e for e, _ in agg})
    curves = sorted({c for _, c in agg})
    fig, axes = plt.subplots(1, len(engines), figsize=(4.2 * len(engines), 3.6), squeeze=False, sharey=True)
    for ax, engine in zip(axes[0], engines):
        for curve in curves:
            series = agg.get((engine, curve))
            if not series:
                continue
            xs = np.array(sorted(series))
            mean = np.array([series[p][0] for p in xs]) * 100
            std = np.array([series[p][1] for p in xs]) * 100
            ax.plot(xs * 100, mean, marker="o", label=curve)
            ax.fill_between(xs * 100, mean - std, mean + std, alpha=0.15)
        ax.set_title(engine)
        ax.set_xlabel("ASR transcripts in test set (%)")
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel(f"{metric.replace('_', '-')} (%)")
    axes[0][-1].legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
