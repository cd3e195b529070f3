"""Figures written next to the CSV outputs (non-interactive Agg backend)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

NORM_LABELS = {"err_H1": r"$|||e_h|||$", "err_uL2": r"$\|e_0\|$", "err_pL2": r"$\|\epsilon_h\|$"}


def plot_convergence(table, path) -> Path:
    """Log-log error curves with a reference slope per norm."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    h = np.array([lv.h for lv in table.levels])
    for key, label in NORM_LABELS.items():
        err = np.array(table.column(key))
        ok = np.isfinite(err) & (err > 0)
        if ok.sum() == 0:
            continue
        (line,) = ax.loglog(h[ok], err[ok], "o-", label=label)
        if ok.sum() >= 2:
            slope = np.polyfit(np.log(h[ok]), np.log(err[ok]), 1)[0]
            order = max(1, round(slope))
            ref = err[ok][0] * (h[ok] / h[ok][0]) ** order
            ax.loglog(h[ok], 0.5 * ref, "--", color=line.get_color(), alpha=0.5, label=f"$O(h^{order})$")
    ax.invert_xaxis()
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.set_title(f"{table.case_id}: k={table.k}, nu={table.nu:g}, {table.algorithm}")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_comparison(rows: Sequence, path) -> Path:
    """Velocity error against force strength, one curve per algorithm."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    for algorithm in dict.fromkeys(r.algorithm for r in rows):
        sub = [r for r in rows if r.algorithm == algorithm]
        lam = [r.lam for r in sub]
        # floor at a tiny positive value so exact zeros still show on a log axis
        err = [max(r.err_H1, 1e-300) if math.isfinite(r.err_H1) else np.nan for r in sub]
        ax.loglog(lam, err, "o-", label=algorithm)
    ax.set_xlabel(r"$\lambda$")
    ax.set_ylabel(r"$|||e_h|||$")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_velocity(ops, u, path, title: str = "") -> Path:
    """Arrows of the element-interior velocity at the centroids, coloured by speed."""
    path = Path(path)
    v0 = u.interior()[:, :, 0]  # constant monomial sits at the centroid
    c = ops.centers
    speed = np.hypot(v0[:, 0], v0[:, 1])
    fig, ax = plt.subplots(figsize=(5, 5))
    mesh = ops.mesh
    ax.triplot(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles, lw=0.2, color="0.8")
    q = ax.quiver(c[:, 0], c[:, 1], v0[:, 0], v0[:, 1], speed, cmap="viridis")
    fig.colorbar(q, ax=ax, shrink=0.8, label="|u_0|")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
