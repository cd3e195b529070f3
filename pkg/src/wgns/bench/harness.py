"""Convergence studies and algorithm comparisons over benchmark cases."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ..solver import FlowProblem, LinearSolveError, NavierStokesSolver, SolveReport, SolverConfig
from ..system import ALGORITHMS
from .cases import BenchmarkCase, get_case
from .errors import ErrorReport, attach_rates, compute_errors

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "level",
    "h",
    "n_u",
    "n_p",
    "err_H1",
    "rate_H1",
    "err_uL2",
    "rate_uL2",
    "err_pL2",
    "rate_pL2",
    "newton_iters",
    "converged",
)
MISSING = "-"


@dataclass
class LevelResult:
    level: int
    n: int
    h: float
    n_u: int
    n_p: int
    report: SolveReport
    errors: ErrorReport | None = None

    @property
    def converged(self) -> bool:
        return self.report.converged

    def row(self) -> dict:
        row = dict.fromkeys(CSV_COLUMNS, MISSING)
        row.update(level=self.level, h=f"{self.h:.6g}", n_u=self.n_u, n_p=self.n_p)
        row["newton_iters"] = self.report.iterations
        row["converged"] = "yes" if self.converged else "no"
        if self.errors is not None:
            for key in ("H1", "uL2", "pL2"):
                row["err_" + key] = f"{getattr(self.errors, 'err_' + key):.6e}"
                rate = self.errors.rates.get("rate_" + key)
                if rate is not None and math.isfinite(rate):
                    row["rate_" + key] = f"{rate:.4f}"
        return row


@dataclass
class ConvergenceTable:
    case_id: str
    k: int
    nu: float
    algorithm: str
    levels: list[LevelResult] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [lv.row() for lv in self.levels]

    def column(self, name: str) -> list[float]:
        """Error or rate values per level; nan where unavailable."""
        out = []
        for lv in self.levels:
            if lv.errors is None:
                out.append(float("nan"))
            elif name.startswith("rate_"):
                out.append(lv.errors.rates.get(name, float("nan")))
            else:
                out.append(getattr(lv.errors, name))
        return out

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(self.rows())
        return path


def solve_case(
    case: BenchmarkCase,
    k: int,
    n: int | None = None,
    algorithm: str = "robust",
    mesh=None,
    config: SolverConfig | None = None,
):
    """Solve one case on mesh size 1/n (or a given mesh); returns (solver, u_h, p_h, report)."""
    mesh = case.make_mesh(n) if mesh is None else mesh
    config = config or SolverConfig(nu=case.nu, algorithm=algorithm)
    solver = NavierStokesSolver(FlowProblem(mesh, k, case.f, case.g), config)
    u, p, report = solver.solve()
    return solver, u, p, report


def _sizes(case: BenchmarkCase, levels: int | Sequence[int], n0: int | None) -> list[int]:
    if isinstance(levels, int):
        if levels < 2:
            raise ValueError("a convergence study needs at least two levels")
        base = case.default_sizes[0] if n0 is None else int(n0)
        return [base * 2**i for i in range(levels)]
    sizes = [int(n) for n in levels]
    if len(sizes) < 2:
        raise ValueError("a convergence study needs at least two levels")
    return sizes


def run_convergence(
    case: BenchmarkCase | str,
    k: int,
    nu: float | None = None,
    algorithm: str = "robust",
    levels: int | Sequence[int] = 3,
    n0: int | None = None,
    edge_projection: str = "l2",
    solver_options: dict | None = None,
) -> ConvergenceTable:
    """Solve on a sequence of uniformly refined meshes and tabulate errors and rates.

    ``levels`` is either a count (sizes n0 * 2^i) or an explicit list of 1/h values.
    A level whose nonlinear solve does not converge gets no errors; rates are
    only formed between consecutive converged levels.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if isinstance(case, str):
        case = get_case(case, nu=nu)
    nu = case.nu if nu is None else float(nu)
    if abs(nu - case.nu) > 1e-15 * max(1.0, nu):
        raise ValueError(f"case was built for nu={case.nu}, requested nu={nu}")
    if not case.has_exact:
        raise ValueError(f"case {case.id!r} has no exact solution; convergence studies need one")
    table = ConvergenceTable(case.id, k, nu, algorithm)
    options = dict(solver_options or {})
    for level, n in enumerate(_sizes(case, levels, n0), start=1):
        config = SolverConfig(nu=nu, algorithm=algorithm, **options)
        try:
            solver, u, p, report = solve_case(case, k, n, config=config)
        except LinearSolveError as exc:
            logger.warning("level %d (1/h=%d): %s", level, n, exc)
            table.levels.append(LevelResult(level, n, 1.0 / n, 0, 0, SolveReport(message=str(exc))))
            continue
        dm = solver.ops.dofmap
        errors = compute_errors(solver.ops, u, p, case, h=1.0 / n, edge_projection=edge_projection) if report.converged else None
        logger.info("level %d (1/h=%d): %s", level, n, report.message)
        table.levels.append(LevelResult(level, n, 1.0 / n, dm.n_u, dm.n_p, report, errors))
    attach_rates([lv.errors for lv in table.levels])
    return table


@dataclass
class ComparisonRow:
    algorithm: str
    lam: float
    err_H1: float
    err_uL2: float
    err_pL2: float
    newton_iters: int
    converged: bool


def run_robustness(
    lambdas: Iterable[float],
    k: int = 0,
    n: int = 16,
    algorithms: Sequence[str] = ALGORITHMS,
    case_id: str = "irrotational",
    nu: float = 1.0,
    edge_projection: str = "l2",
) -> list[ComparisonRow]:
    """Errors of each algorithm for a family of gradient-force strengths."""
    rows = []
    for algorithm in algorithms:
        for lam in lambdas:
            case = get_case(case_id, lam=float(lam), nu=nu)
            solver, u, p, report = solve_case(case, k, n, algorithm)
            nan = float("nan")
            e = compute_errors(solver.ops, u, p, case, edge_projection=edge_projection) if report.converged else None
            rows.append(
                ComparisonRow(
                    algorithm,
                    float(lam),
                    e.err_H1 if e else nan,
                    e.err_uL2 if e else nan,
                    e.err_pL2 if e else nan,
                    report.iterations,
                    report.converged,
                )
            )
    return rows


def format_comparison(rows: Sequence[ComparisonRow]) -> str:
    lines = [f"{'algorithm':<10} {'lambda':>10} {'err_H1':>12} {'err_uL2':>12} {'err_pL2':>12} {'iters':>6}"]
    for r in rows:
        cells = [f"{v:12.4e}" if math.isfinite(v) else f"{MISSING:>12}" for v in (r.err_H1, r.err_uL2, r.err_pL2)]
        lines.append(f"{r.algorithm:<10} {r.lam:>10.3g} {' '.join(cells)} {r.newton_iters:>6}")
    return "\n".join(lines)


def write_comparison_csv(rows: Sequence[ComparisonRow], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "lambda", "err_H1", "err_uL2", "err_pL2", "newton_iters", "converged"])
        for r in rows:
            errs = [f"{v:.6e}" if math.isfinite(v) else MISSING for v in (r.err_H1, r.err_uL2, r.err_pL2)]
            writer.writerow([r.algorithm, f"{r.lam:g}", *errs, r.newton_iters, "yes" if r.converged else "no"])
    return path
