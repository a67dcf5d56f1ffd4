"""Convergence figures written to image files (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _slope_guide(ax, h, e, order, **kw):
    # anchored at the finest level so the guide sits next to the data
    hh = np.array([h[0], h[-1]])
    ax.loglog(hh, e[-1] * (hh / h[-1]) ** order, **kw)


def plot_convergence(report, path: Path, dpi: int = 120) -> Path:
    from .verification import theoretical_orders

    h = np.array([lv.h for lv in report.levels])
    ev = np.array([lv.err_vel for lv in report.levels])
    ep = np.array([lv.err_pre for lv in report.levels])
    ov, op = theoretical_orders(report.law.r, report.k)

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8), constrained_layout=True)
    for ax, e, o, label in ((axes[0], ev, ov, "velocity"), (axes[1], ep, op, "pressure")):
        ax.loglog(h, e, "o-", label=f"{label} error")
        _slope_guide(ax, h, e, o, ls="--", color="gray", label=f"$h^{{{o:.3g}}}$")
        ax.set_xlabel("h")
        ax.set_title(label)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
    fig.suptitle(f"{report.family}, k={report.k}, r={report.law.r:g}")
    path = Path(path)
    # fixed metadata keeps the file reproducible
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)
    return path
