import numpy as np
import pytest
import scipy.sparse as sp

from wgns.bench.cases import get_case
from wgns.bench.errors import compute_errors
from wgns.mesh import generate_uniform_square
from wgns.solver import (
    FlowProblem,
    LinearSolveError,
    NavierStokesSolver,
    SolverConfig,
    kkt_residual,
    linear_solve,
    solve_navier_stokes,
    solve_stokes,
)
from wgns.system import assemble_stokes, constant_pressure_mode
from wgns.weakops import build_element_ops, project_pih, project_Qh, triple_norm


@pytest.mark.parametrize(
    "kwargs",
    [
        {"tol_newton": 0.0},
        {"tol_newton": -1e-3},
        {"max_iter": 0},
        {"max_iter": 2.5},
        {"nu": 0.0},
        {"algorithm": "upwind"},
        {"linear_solver": "gmres"},
        {"continuation_factor": 1.0},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_config_defaults():
    cfg = SolverConfig()
    assert (cfg.tol_newton, cfg.max_iter, cfg.linear_solver) == (1e-10, 1000, "direct")


def test_linear_solve_identity():
    b = np.arange(5.0)
    assert np.array_equal(linear_solve(sp.identity(5), b), b)


def test_linear_solve_matches_dense_oracle(rng):
    n = 150
    m = rng.standard_normal((n, n))
    a = m @ m.T + n * np.eye(n)
    b = rng.standard_normal(n)
    x = linear_solve(sp.csc_matrix(a), b)
    assert np.abs(x - np.linalg.solve(a, b)).max() <= 1e-12 * np.abs(x).max()


def test_singular_blocks_are_named():
    velocity_singular = sp.csc_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    # a zero velocity block with an invertible full matrix is fine
    linear_solve(velocity_singular, np.ones(2), n_velocity=1)
    singular = sp.csc_matrix(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]))
    with pytest.raises(LinearSolveError, match="constraint"):
        linear_solve(singular, np.ones(3), n_velocity=2)
    with pytest.raises(LinearSolveError, match="velocity"):
        linear_solve(sp.csc_matrix(np.zeros((3, 3))), np.ones(3), n_velocity=2)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_stokes_kkt_residual(k):
    ops = build_element_ops(generate_uniform_square(2 if k == 0 else 4), k)
    system = assemble_stokes(ops, 1.0, lambda x, y: (np.exp(x) * y, np.sin(x - y)), lambda x, y: (y * (1 - y), 0 * x))
    x = linear_solve(system.matrix(), system.rhs(), system.n_u, system.pressure_kernel)
    assert kkt_residual(system, x) <= 1e-12
    # same solution with the border factorized directly
    direct = linear_solve(system.matrix(), system.rhs(), system.n_u)
    assert np.abs(direct - x).max() <= 1e-10 * np.abs(x).max()


def test_stokes_mean_zero_pressure():
    ops = build_element_ops(generate_uniform_square(6), 1)
    system = assemble_stokes(ops, 1.0, lambda x, y: (x * x, 3 + y))
    u, p = solve_stokes(system, ops)
    values = np.einsum("tqa,ta->tq", ops.form.poly, p.coeffs.reshape(-1, 3))
    assert abs(system.mean_row @ p.coeffs) <= 1e-10 * ops.mesh.area() * np.abs(values).max()


def test_stokes_zero_data():
    ops = build_element_ops(generate_uniform_square(4), 1)
    u, p = solve_stokes(assemble_stokes(ops, 1.0), ops)
    assert not np.any(u.full())
    assert not np.any(p.coeffs)


def test_stokes_reproduces_resolvable_polynomial_solution():
    k = 2
    nu = 0.7
    ops = build_element_ops(generate_uniform_square(4), k)

    def u(x, y):
        return x**2, -2 * x * y

    def p(x, y):
        return x + y**2

    def f(x, y):
        # -nu lap u + grad p
        return -2 * nu + 1 + 0 * x, 2 * y

    u_h, p_h = solve_stokes(assemble_stokes(ops, nu, f, u), ops)
    assert triple_norm(ops, project_Qh(ops, u) - u_h) < 1e-10
    assert np.abs(project_pih(ops, p).coeffs - p_h.coeffs).max() < 1e-10


def test_navier_stokes_zero_data_converges_immediately():
    problem = FlowProblem(generate_uniform_square(4), 1)
    u, p, report = solve_navier_stokes(SolverConfig(nu=0.1), problem)
    assert report.converged
    assert report.iterations <= 2
    assert not np.any(u.full())


@pytest.fixture(scope="module")
def test1_k0():
    case = get_case("test1")
    problem = FlowProblem(case.make_mesh(16), 0, case.f, case.g)
    solver = NavierStokesSolver(problem, SolverConfig(nu=1.0))
    u, p, report = solver.solve()
    return case, solver, u, p, report


def test_test1_k0_error_and_report(test1_k0):
    case, solver, u, p, report = test1_k0
    assert report.converged
    assert len(report.increments) == report.iterations
    assert report.residual_norm <= 1e-9
    e = compute_errors(solver.ops, u, p, case, edge_projection="gauss")
    assert e.err_H1 == pytest.approx(5.73e-2, rel=0.05)


def test_test1_k1_interior_error():
    case = get_case("test1")
    problem = FlowProblem(case.make_mesh(16), 1, case.f, case.g)
    solver = NavierStokesSolver(problem, SolverConfig(nu=1.0))
    u, p, report = solver.solve()
    e = compute_errors(solver.ops, u, p, case)
    assert e.err_uL2 == pytest.approx(1.98e-5, rel=0.05)


def test_newton_tail_decreases(test1_k0):
    inc = test1_k0[4].increments
    assert len(inc) >= 3
    assert inc[-1] < inc[-2] < inc[-3]
    # quadratic tail: inc_{m+1} / inc_m^2 stays moderate until roundoff takes over
    ratios = [b / a**2 for a, b in zip(inc[:-1], inc[1:]) if a < 0.1 and b > 1e-12]
    assert ratios
    assert all(r < 1e3 for r in ratios)


def test_jacobian_matches_finite_differences(test1_k0, rng):
    _, solver, u, p, _ = test1_k0
    x = np.concatenate([u.free, p.coeffs, [0.0]]) + 0.1 * rng.standard_normal(solver.ops.dofmap.n_u + solver.ops.dofmap.n_p + 1)
    K, _ = solver.jacobian(x)
    r0 = solver.residual(x)
    eps = 1e-7
    for _ in range(5):
        d = rng.standard_normal(len(x))
        fd = (solver.residual(x + eps * d) - r0) / eps
        exact = K @ d
        assert np.linalg.norm(fd - exact) <= 1e-6 * np.linalg.norm(exact)


def test_robust_velocity_independent_of_gradient_force():
    velocities = []
    for lam in (10.0, 1e6):
        case = get_case("irrotational", lam=lam)
        problem = FlowProblem(case.make_mesh(8), 0, case.f, case.g)
        u, p, report = solve_navier_stokes(SolverConfig(nu=1.0), problem)
        assert report.converged
        velocities.append(u.full())
    diff = np.linalg.norm(velocities[1] - velocities[0])
    assert diff <= 1e-6 * np.linalg.norm(velocities[0])


def test_non_convergence_is_reported():
    case = get_case("test1", nu=1e-4)
    problem = FlowProblem(case.make_mesh(8), 0, case.f, case.g)
    cfg = SolverConfig(nu=1e-4, algorithm="classical", max_iter=5, continuation=False)
    u, p, report = solve_navier_stokes(cfg, problem)
    assert not report.converged
    assert report.iterations == len(report.increments) <= 5
    assert report.message


def test_divergence_guard():
    case = get_case("irrotational", lam=1e6)
    problem = FlowProblem(case.make_mesh(16), 0, case.f, case.g)
    cfg = SolverConfig(nu=1.0, algorithm="classical", continuation=False)
    _, _, report = solve_navier_stokes(cfg, problem)
    assert not report.converged
    assert "diverged" in report.message
    assert report.increments[-1] > cfg.divergence_limit


def test_continuation_path():
    problem = FlowProblem(generate_uniform_square(2), 0)
    solver = NavierStokesSolver(problem, SolverConfig(nu=1e-4))
    assert solver.continuation_path() == pytest.approx([1.0, 0.1, 0.01, 1e-3, 1e-4])
    solver = NavierStokesSolver(problem, SolverConfig(nu=2.0))
    assert solver.continuation_path() == [2.0]


def test_continuation_recovers_small_viscosity():
    case = get_case("test1", nu=1e-3)
    problem = FlowProblem(case.make_mesh(8), 0, case.f, case.g)
    plain = SolverConfig(nu=1e-3, max_iter=3, continuation=False)
    assert not solve_navier_stokes(plain, problem)[2].converged
    # the continuation stages share the iteration cap, so give each stage room
    solver = NavierStokesSolver(problem, SolverConfig(nu=1e-3, max_iter=40))
    u, p, report = solver.solve()
    assert report.converged
    assert solver.A_full is not None and np.isclose(solver.A_full.max() / solver.A_unit.max(), 1e-3)
    x = np.concatenate([u.free, p.coeffs, [0.0]])
    # the returned state satisfies the equations at the target viscosity
    r = solver.residual(x)
    assert np.linalg.norm(r[: solver.ops.dofmap.n_u]) <= 1e-8 * max(1.0, np.linalg.norm(solver.F))


def test_pressure_kernel_is_constant_mode():
    ops = build_element_ops(generate_uniform_square(3), 2)
    z = constant_pressure_mode(ops.dofmap).reshape(-1, 6)
    assert np.all(z[:, 0] == 1) and not np.any(z[:, 1:])


def test_large_pressure_stops_at_the_roundoff_floor():
    # with p of size 1e6 the absolute tolerance is below what double precision can resolve
    case = get_case("irrotational", lam=1e6)
    problem = FlowProblem(case.make_mesh(8), 0, case.f, case.g)
    u, p, report = solve_navier_stokes(SolverConfig(nu=1.0, continuation=False), problem)
    assert report.converged
    assert "roundoff floor" in report.message
    assert np.abs(p.coeffs).max() > 1e5
