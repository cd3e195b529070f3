"""Stokes initializer, Newton iteration and the sparse direct solve."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh
from .system import (
    ALGORITHMS,
    ROBUST,
    SaddleSystem,
    assemble_body_force,
    assemble_convection_jacobian,
    assemble_divergence,
    assemble_viscous,
    boundary_values,
    constant_pressure_mode,
)
from .weakops import ElementOps, PressureField, WgField, build_element_ops, mean_row

logger = logging.getLogger(__name__)


class LinearSolveError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    nu: float = 1.0
    algorithm: str = ROBUST
    tol_newton: float = 1e-10
    max_iter: int = 1000
    linear_solver: str = "direct"
    divergence_limit: float = 1e8
    line_search: bool = False
    max_backtracks: int = 20
    roundoff_factor: float = 100.0
    continuation: bool = True
    continuation_start: float = 1.0
    continuation_factor: float = 10.0

    def __post_init__(self):
        if not self.tol_newton > 0:
            raise ValueError("tol_newton must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        if not self.nu > 0:
            raise ValueError("viscosity must be positive")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.linear_solver != "direct":
            raise ValueError("only the direct linear solver is available")
        if not self.continuation_factor > 1:
            raise ValueError("continuation_factor must exceed 1")


@dataclass
class SolveReport:
    iterations: int = 0
    increments: list[float] = field(default_factory=list)
    residual_norm: float = float("nan")
    converged: bool = False
    wall_time: float = 0.0
    message: str = ""


@dataclass
class FlowProblem:
    """Discrete problem data: mesh, degree, body force and Dirichlet data."""

    mesh: Mesh
    k: int
    f: Callable | None = None
    g: Callable | None = None
    data_degree: int | None = None


def _factor(matrix, what: str, n_velocity: int | None):
    try:
        with np.errstate(all="raise"):
            return spla.splu(sp.csc_matrix(matrix))
    except (RuntimeError, FloatingPointError) as exc:
        block = "constraint"
        if n_velocity is not None and n_velocity > 0:
            try:
                spla.splu(sp.csc_matrix(matrix)[:n_velocity, :n_velocity])
            except RuntimeError:
                block = "velocity"
        raise LinearSolveError(f"singular {block} block in {what}: {exc}") from None


def linear_solve(
    matrix, rhs: np.ndarray, n_velocity: int | None = None, pressure_nullspace: np.ndarray | None = None
) -> np.ndarray:
    """Sparse LU solve of a saddle system bordered by one constraint row and column.

    Raises :class:`LinearSolveError` naming the failing block. When
    ``pressure_nullspace`` (the constant-pressure coefficient vector) is given,
    the border is eliminated instead of factorized: the dense constraint row
    triples the LU fill otherwise. With e = (0, z) spanning the kernel of the
    unbordered block K0 and c the border column, the multiplier is
    eT b / eT c; the remaining consistent system is solved with one pressure
    coordinate fixed, and the result is moved along e onto cT x = 0.
    """
    matrix = sp.csc_matrix(matrix)
    rhs = np.asarray(rhs, dtype=float)
    if pressure_nullspace is None:
        x = _factor(matrix, "saddle-point system", n_velocity).solve(rhs)
    else:
        n = matrix.shape[0] - 1
        z = np.asarray(pressure_nullspace, dtype=float)
        e = np.zeros(n)
        e[n - len(z) :] = z
        c = matrix[:n, n].toarray().ravel()
        ec = e @ c
        if abs(ec) < 1e-300:
            raise LinearSolveError("constraint row is orthogonal to the pressure kernel")
        lam = (e @ rhs[:n]) / ec
        b = rhs[:n] - lam * c
        pin = n - len(z) + int(np.flatnonzero(z)[-1])
        keep = np.delete(np.arange(n), pin)
        K0 = matrix[:n, :n]
        lu = _factor(K0[keep][:, keep], "saddle-point system", n_velocity)
        x = np.zeros(n + 1)
        x[keep] = lu.solve(b[keep])
        x[:n] -= (c @ x[:n]) / ec * e
        x[n] = lam
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("non-finite solution of saddle-point system")
    return x


def kkt_residual(system: SaddleSystem, x: np.ndarray) -> float:
    """Relative residual of a solved saddle system."""
    K = system.matrix()
    b = system.rhs()
    return float(np.linalg.norm(K @ x - b) / max(np.linalg.norm(b), np.finfo(float).tiny))


def _split(ops: ElementOps, x: np.ndarray, boundary: np.ndarray):
    dm = ops.dofmap
    u = WgField(dm, x[: dm.n_u].copy(), boundary.copy())
    p = PressureField(dm, x[dm.n_u : dm.n_u + dm.n_p].copy())
    return u, p


def solve_stokes(system: SaddleSystem, ops: ElementOps) -> tuple[WgField, PressureField]:
    """Solve the linear saddle system; returns velocity and mean-zero pressure."""
    x = linear_solve(system.matrix(), system.rhs(), system.n_u, system.pressure_kernel)
    return _split(ops, x, system.boundary)


class NavierStokesSolver:
    """Newton iteration for a(u, v) + c(u, u, v) - b(v, p) = (f, R_T v), b(u, q) = 0.

    The iteration starts from the Stokes solution and solves for increments with
    the full Jacobian a + c(u^n, ., .) + c(., u^n, .); the stopping test is the
    Euclidean norm of the stacked (velocity, pressure) coefficient increment.
    """

    def __init__(self, problem: FlowProblem, config: SolverConfig, ops: ElementOps | None = None):
        self.problem = problem
        self.config = config
        self.ops = ops if ops is not None else build_element_ops(problem.mesh, problem.k, problem.data_degree)
        dm = self.ops.dofmap
        self.A_unit = assemble_viscous(self.ops, 1.0)
        self.A_full = config.nu * self.A_unit
        self.B_full = assemble_divergence(self.ops)
        self.F = assemble_body_force(self.ops, problem.f, config.algorithm)
        self.boundary = boundary_values(self.ops, problem.g)
        self.m = mean_row(self.ops)
        self._mcol = sp.csr_matrix(self.m[:, None])
        self._n_u = dm.n_u
        self.kernel = constant_pressure_mode(dm)

    def stokes_system(self) -> SaddleSystem:
        n_u = self._n_u
        gb = self.boundary
        lift_u = -(self.A_full[:n_u, n_u:] @ gb)
        lift_p = self.B_full[:, n_u:] @ gb
        return SaddleSystem(
            A=self.A_full[:n_u, :n_u],
            B=self.B_full[:, :n_u],
            rhs_u=self.F[:n_u] + lift_u,
            rhs_p=lift_p,
            mean_row=self.m,
            A_fb=self.A_full[:n_u, n_u:],
            B_b=self.B_full[:, n_u:],
            bc_lift=np.concatenate([lift_u, lift_p]),
            boundary=gb,
            pressure_kernel=self.kernel,
        )

    def full_velocity(self, u_free: np.ndarray) -> np.ndarray:
        return np.concatenate([u_free, self.boundary])

    def residual(self, x: np.ndarray, convection=None) -> np.ndarray:
        """Nonlinear residual of the stacked state (u_free, p, multiplier)."""
        n_u, n_p = self._n_u, self.ops.dofmap.n_p
        u = self.full_velocity(x[:n_u])
        p = x[n_u : n_u + n_p]
        lam = x[-1]
        if convection is None:
            convection = assemble_convection_jacobian(self.ops, u, self.config.algorithm)[2]
        r_u = (self.A_full @ u + convection - self.B_full.T @ p - self.F)[:n_u]
        r_p = -(self.B_full @ u) + self.m * lam
        return np.concatenate([r_u, r_p, [self.m @ p]])

    def jacobian(self, x: np.ndarray):
        n_u = self._n_u
        u = self.full_velocity(x[:n_u])
        c1, c2, n = assemble_convection_jacobian(self.ops, u, self.config.algorithm)
        J = (self.A_full + c1 + c2)[:n_u, :n_u]
        B = self.B_full[:, :n_u]
        K = sp.bmat([[J, -B.T, None], [-B, None, self._mcol], [None, self._mcol.T, None]], format="csc")
        return K, n

    def _backtrack(self, x: np.ndarray, delta: np.ndarray, r0: float) -> float:
        """Largest step 2^-j satisfying a sufficient-decrease test on the residual norm."""
        step = 1.0
        for _ in range(self.config.max_backtracks):
            if np.linalg.norm(self.residual(x + step * delta)) <= (1.0 - 1e-4 * step) * r0:
                return step
            step *= 0.5
        return 1.0

    def set_viscosity(self, nu: float) -> None:
        self.A_full = nu * self.A_unit

    def newton(self, x0: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
        """Plain Newton iteration at the current viscosity; Stokes start when ``x0`` is None."""
        cfg = self.config
        report = SolveReport()
        start = time.perf_counter()
        n_u, n_p = self._n_u, self.ops.dofmap.n_p
        if x0 is None:
            stokes = self.stokes_system()
            x = linear_solve(stokes.matrix(), stokes.rhs(), n_u, self.kernel)
        else:
            x = np.array(x0, dtype=float)
        scale = max(np.linalg.norm(self.F[:n_u]) + np.linalg.norm(self.A_full[:n_u, n_u:] @ self.boundary), 1.0)
        for it in range(1, cfg.max_iter + 1):
            K, conv = self.jacobian(x)
            r = self.residual(x, conv)
            delta = linear_solve(K, -r, n_u, self.kernel)
            step = self._backtrack(x, delta, np.linalg.norm(r)) if cfg.line_search else 1.0
            x = x + step * delta
            inc = float(np.linalg.norm(step * delta[: n_u + n_p]))
            report.increments.append(inc)
            report.iterations = it
            logger.debug("newton %d: increment %.3e", it, inc)
            if not np.isfinite(inc) or inc > cfg.divergence_limit:
                report.message = f"diverged at iteration {it} (increment {inc:.3e})"
                break
            if step == 1.0:
                floor = cfg.roundoff_factor * np.finfo(float).eps * float(np.linalg.norm(x[: n_u + n_p]))
                if inc < cfg.tol_newton:
                    report.converged = True
                    report.message = f"converged in {it} iterations"
                    break
                if inc < floor:
                    report.converged = True
                    report.message = f"converged in {it} iterations (increment {inc:.2e} at the roundoff floor)"
                    break
        else:
            report.message = f"no convergence within {cfg.max_iter} iterations"
        r = self.residual(x)
        report.residual_norm = float(np.linalg.norm(r) / scale)
        report.wall_time = time.perf_counter() - start
        return x, report

    def continuation_path(self) -> list[float]:
        cfg = self.config
        path = []
        nu = max(cfg.continuation_start, cfg.nu)
        while nu > cfg.nu * (1 + 1e-12):
            path.append(nu)
            nu /= cfg.continuation_factor
        return path + [cfg.nu]

    def solve(self, x0: np.ndarray | None = None) -> tuple[WgField, PressureField, SolveReport]:
        """Newton from the Stokes solution; on failure, retry by continuation in the viscosity.

        The continuation walks nu down geometrically from ``continuation_start``
        with the body force held fixed, each stage starting from the previous
        converged state. It is skipped when the first attempt converges.
        """
        cfg = self.config
        x, report = self.newton(x0)
        if not report.converged and cfg.continuation and x0 is None and len(self.continuation_path()) > 1:
            logger.info("newton from the Stokes solution failed (%s); trying viscosity continuation", report.message)
            total = report.iterations
            elapsed = report.wall_time
            state = None
            for nu in self.continuation_path():
                self.set_viscosity(nu)
                state, stage = self.newton(state)
                total += stage.iterations
                elapsed += stage.wall_time
                if not stage.converged:
                    stage.message = f"continuation failed at nu={nu:g}: {stage.message}"
                    break
            self.set_viscosity(cfg.nu)
            if stage.converged:
                stage.message = f"converged by viscosity continuation ({total} iterations in total)"
            stage.iterations = total
            stage.wall_time = elapsed
            x, report = state, stage
        u, p = _split(self.ops, x, self.boundary)
        return u, p, report


def solve_navier_stokes(
    config: SolverConfig, problem: FlowProblem, ops: ElementOps | None = None
) -> tuple[WgField, PressureField, SolveReport]:
    return NavierStokesSolver(problem, config, ops).solve()
