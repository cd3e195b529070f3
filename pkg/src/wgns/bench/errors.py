"""Discrete error norms against exact solutions, and convergence rates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..weakops import (
    ElementOps,
    PressureField,
    WgField,
    interior_l2_norm,
    pressure_l2_norm,
    project_pih,
    project_Qb,
    project_Qh,
    triple_norm,
)
from .cases import BenchmarkCase


EDGE_PROJECTIONS = ("l2", "gauss")


class UnsupportedCaseError(ValueError):
    pass


@dataclass
class ErrorReport:
    h: float
    n_u: int
    n_p: int
    err_H1: float
    err_uL2: float
    err_pL2: float
    rates: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"h": self.h, "n_u": self.n_u, "n_p": self.n_p, "err_H1": self.err_H1,
                "err_uL2": self.err_uL2, "err_pL2": self.err_pL2, **self.rates}


def reference_velocity(ops: ElementOps, u, edge_projection: str = "l2") -> WgField:
    """Q_h u; with ``edge_projection="gauss"`` the edge part interpolates u at the k+1 Gauss points.

    The Gauss variant equals the L2 projection for u in P_{k+1}(e) and differs
    from it by O(h^{2k+2}) otherwise, which changes the constant in the triple
    norm of the error but not its rate.
    """
    if edge_projection not in EDGE_PROJECTIONS:
        raise ValueError(f"edge_projection must be one of {EDGE_PROJECTIONS}")
    q = project_Qh(ops, u)
    if edge_projection == "gauss":
        dm = ops.dofmap
        full = q.full()
        edges = np.arange(ops.mesh.n_edges)
        full[dm.edge_dofs(edges)] = project_Qb(ops, u, edges=edges, degree=2 * ops.k + 1)
        q = WgField.from_full(dm, full)
    return q


def compute_errors(
    ops: ElementOps,
    u_h: WgField,
    p_h: PressureField,
    case: BenchmarkCase,
    h: float | None = None,
    edge_projection: str = "l2",
) -> ErrorReport:
    """Errors of Q_h u - u_h in the triple and interior L2 norms and of pi_h p - p_h in L2.

    Both pressures are shifted to mean zero before comparison.
    """
    if not case.has_exact:
        raise UnsupportedCaseError(f"case {case.id!r} has no exact solution")
    e = reference_velocity(ops, case.u, edge_projection) - u_h
    eps = project_pih(ops, case.p).coeffs - p_h.shifted_mean_zero(ops).coeffs
    dm = ops.dofmap
    return ErrorReport(
        h=ops.mesh.h_max if h is None else float(h),
        n_u=dm.n_u,
        n_p=dm.n_p,
        err_H1=triple_norm(ops, e),
        err_uL2=interior_l2_norm(ops, e),
        err_pL2=pressure_l2_norm(ops, eps),
    )


def observed_rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    """log(e_coarse / e_fine) / log(h_coarse / h_fine); nan when undefined."""
    try:
        return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)
    except (ValueError, ZeroDivisionError):
        return float("nan")


def rates(errors: Sequence[float], hs: Sequence[float]) -> list[float]:
    """Rates between consecutive levels; the first entry is nan."""
    out = [float("nan")]
    for i in range(1, len(errors)):
        out.append(observed_rate(errors[i - 1], errors[i], hs[i - 1], hs[i]))
    return out


def attach_rates(reports: Sequence[ErrorReport | None]) -> None:
    """Fill ``rates`` on consecutive available reports in place."""
    prev = None
    for rep in reports:
        if rep is None:
            prev = None
            continue
        if prev is not None:
            for key in ("err_H1", "err_uL2", "err_pL2"):
                rep.rates["rate_" + key[4:]] = observed_rate(getattr(prev, key), getattr(rep, key), prev.h, rep.h)
        prev = rep


def fit_rate(errors: Sequence[float], hs: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(h)."""
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])
