import numpy as np
import pytest

from conftest import perturbed_square
from wgns.mesh import from_triangles, generate_uniform_square
from wgns.weakops import (
    ElementDegeneracyError,
    PressureField,
    build_element_ops,
    interior_l2_norm,
    interpolate_Rh,
    l2_project_rt,
    mean_row,
    project_pih,
    project_Qh,
    triple_norm,
    triple_norm_1,
)

DEGREES = [0, 1, 2]


def rt_values(table, coeffs):
    """Values (nt, nq, 2) of per-element RT coefficient arrays at a quadrature table."""
    return np.einsum("tqid,ti->tqd", table.rt, coeffs)


def poly_values(table, coeffs):
    return np.einsum("tqa,ta->tq", table.poly, coeffs)


def weak_gradient_values(ops, full):
    g = ops.weak_gradient(ops.local(full))
    return np.einsum("tqid,tci->tqcd", ops.form.rt, g)


@pytest.fixture(scope="module", params=DEGREES)
def ops(request):
    return build_element_ops(perturbed_square(4, 0.15, seed=request.param), request.param)


def test_constant_field(ops):
    v = project_Qh(ops, lambda x, y: (np.ones_like(x), 2 * np.ones_like(x))).full()
    loc = ops.local(v)
    # coefficients are compared against the size of the operators producing them
    assert np.abs(ops.weak_gradient(loc)).max() < 1e-13 * np.abs(ops.G).max() * 2
    assert np.abs(ops.weak_divergence(loc)).max() < 1e-13 * np.abs(ops.D).max() * 2
    r = rt_values(ops.form, ops.reconstruct(loc))
    assert np.allclose(r, [1.0, 2.0], atol=1e-12)


def test_weak_gradient_of_linear_field_is_identity(ops):
    v = project_Qh(ops, lambda x, y: (x, y)).full()
    g = weak_gradient_values(ops, v)
    assert np.allclose(g, np.eye(2), atol=1e-11)


def test_weak_divergence_of_linear_fields(ops):
    d = ops.weak_divergence(ops.local(project_Qh(ops, lambda x, y: (x, y)).full()))
    assert np.allclose(poly_values(ops.form, d), 2.0, atol=1e-11)
    d = ops.weak_divergence(ops.local(project_Qh(ops, lambda x, y: (y, x)).full()))
    assert np.abs(d).max() < 1e-11


def test_commutativity_for_quadratic_field():
    ops = build_element_ops(perturbed_square(4, 0.15, seed=7), 1)
    v = project_Qh(ops, lambda x, y: (x**2, x * y)).full()
    g = ops.weak_gradient(ops.local(v))
    rows = [
        lambda p: np.stack([2 * p[..., 0], 0 * p[..., 0]], -1),
        lambda p: np.stack([p[..., 1], p[..., 0]], -1),
    ]
    for c, grad in enumerate(rows):
        oracle = l2_project_rt(ops, grad)
        assert np.abs(g[:, c] - oracle).max() < 1e-11


def test_commutativity_for_smooth_field():
    # a high data-quadrature degree keeps both sides free of integration error
    ops = build_element_ops(perturbed_square(8, 0.1, seed=2), 1, data_degree=14)

    def u(x, y):
        return np.sin(x + 2 * y), np.cos(3 * x - y)

    def grads(p):
        x, y = p[..., 0], p[..., 1]
        return [
            np.stack([np.cos(x + 2 * y), 2 * np.cos(x + 2 * y)], -1),
            np.stack([-3 * np.sin(3 * x - y), np.sin(3 * x - y)], -1),
        ]

    g = weak_gradient_values(ops, project_Qh(ops, u).full())
    for c in range(2):
        oracle = rt_values(ops.form, l2_project_rt(ops, lambda p: grads(p)[c]))
        assert np.abs(g[:, :, c] - oracle).max() < 1e-11


def test_divergence_commutes_for_solenoidal_field(ops):
    fine = build_element_ops(ops.dofmap, data_degree=12)
    d = fine.weak_divergence(fine.local(project_Qh(fine, lambda x, y: (np.sin(y), np.cos(x))).full()))
    assert np.abs(d).max() < 1e-11


def test_reconstruction_preserves_divergence(ops, rng):
    for _ in range(20):
        loc = ops.local(rng.standard_normal(ops.dofmap.n_full))
        div_r = np.einsum("tqi,ti->tq", ops.form.rt_div, ops.reconstruct(loc))
        div_w = poly_values(ops.form, ops.weak_divergence(loc))
        assert np.abs(div_r - div_w).max() <= 1e-12 * np.abs(div_w).max()


@pytest.mark.parametrize("k", DEGREES)
def test_qh_reproduces_polynomials(k):
    ops = build_element_ops(perturbed_square(3, 0.1, seed=k), k)
    coeff = np.random.default_rng(k).standard_normal((2, 6))

    def u(x, y):
        mono = [np.ones_like(x), x, y, x * x, x * y, y * y][: (k + 1) * (k + 2) // 2]
        return tuple(sum(c * m for c, m in zip(coeff[i], mono)) for i in range(2))

    q = project_Qh(ops, u)
    v0 = np.einsum("tqa,tca->tqc", ops.form.poly, q.interior())
    exact = np.stack(u(ops.form.points[..., 0], ops.form.points[..., 1]), -1)
    assert np.abs(v0 - exact).max() < 1e-13 * max(1.0, np.abs(exact).max())
    # a polynomial of degree <= k is also reproduced by R_T
    r = rt_values(ops.form, ops.reconstruct(ops.local(q.full())))
    assert np.abs(r - exact).max() < 1e-12 * max(1.0, np.abs(exact).max())


@pytest.mark.parametrize("k", DEGREES)
def test_rt_of_projection_equals_interpolant(k):
    ops = build_element_ops(perturbed_square(3, 0.1, seed=3 + k), k)

    def u(x, y):
        return (1 + 2 * x - y**k, 3 * x * y**k - 1)

    left = ops.reconstruct(ops.local(project_Qh(ops, u).full()))
    right = interpolate_Rh(ops, u)
    assert np.abs(left - right).max() < 1e-12 * np.abs(right).max()


@pytest.mark.parametrize("k", DEGREES)
def test_interpolant_reproduces_rt_fields(k):
    ops = build_element_ops(perturbed_square(3, 0.1, seed=11), k)
    # a global member of RT_k: P_k part plus x * (homogeneous degree-k polynomial)
    hom = {0: lambda x, y: 0.7 + 0 * x, 1: lambda x, y: 0.4 * x - 1.1 * y, 2: lambda x, y: x * x - 0.5 * x * y + 2 * y * y}[k]

    def u(x, y):
        base = {0: (1.0 + 0 * x, -2.0 + 0 * x), 1: (x - y, 1 + y), 2: (x * y, x * x - y)}[k]
        return base[0] + x * hom(x, y), base[1] + y * hom(x, y)

    coeffs = interpolate_Rh(ops, u)
    values = rt_values(ops.form, coeffs)
    exact = np.stack(u(ops.form.points[..., 0], ops.form.points[..., 1]), -1)
    assert np.abs(values - exact).max() < 1e-12


@pytest.mark.parametrize("k", [0, 1])
def test_interpolant_l4_rate(k):
    errors, hs = [], []
    for n in (4, 8, 16):
        ops = build_element_ops(generate_uniform_square(n), k)
        table = ops.data_table()
        coeffs = interpolate_Rh(ops, lambda x, y: (np.sin(x), np.sin(y)))
        diff = rt_values(table, coeffs) - np.stack([np.sin(table.points[..., 0]), np.sin(table.points[..., 1])], -1)
        errors.append(np.sum(table.weights * np.sum(diff**2, -1) ** 2) ** 0.25)
        hs.append(1.0 / n)
    slope = np.polyfit(np.log(hs), np.log(errors), 1)[0]
    assert slope == pytest.approx(k + 1, abs=0.15)


def test_normal_trace_locality(ops, rng):
    dm = ops.dofmap
    et = ops.edges
    tri, j = 5, 1
    edge = ops.mesh.triangle_edges[tri, j]
    keep = dm.edge_dofs([edge]).ravel()

    def trace(full):
        r = ops.reconstruct(ops.local(full))[tri]
        return np.einsum("qid,i,d->q", et.rt[tri, j], r, et.normals[tri, j])

    base = rng.standard_normal(dm.n_full)
    ref = trace(base)
    for _ in range(10):
        other = rng.standard_normal(dm.n_full)
        other[keep] = base[keep]
        assert np.abs(trace(other) - ref).max() <= 1e-13 * max(1.0, np.abs(base).max() * 10)


def test_reconstruction_deviation_bound_is_mesh_independent(rng):
    worst = []
    for n in (4, 8, 16):
        ops = build_element_ops(generate_uniform_square(n), 1)
        et = ops.edges
        dm = ops.dofmap
        npk, ne = dm.n_poly, dm.n_edge
        ratios = []
        for _ in range(5):
            loc = ops.local(rng.standard_normal(dm.n_full))
            v0 = loc[:, : 2 * npk].reshape(-1, 2, npk)
            r = ops.reconstruct(loc)
            d = rt_values(ops.form, r) - np.einsum("tqa,tca->tqc", ops.form.poly, v0)
            num = np.sqrt(np.einsum("tq,tqc,tqc->t", ops.form.weights, d, d))
            den = 0.0
            for j in range(3):
                vb = loc[:, 2 * npk + 2 * j * ne : 2 * npk + 2 * (j + 1) * ne].reshape(-1, 2, ne)
                jump = np.einsum("tqa,tca->tqc", et.poly[:, j], v0) - np.einsum("tqm,tcm->tqc", et.psi[:, j], vb)
                jn = np.einsum("tqc,tc->tq", jump, et.normals[:, j])
                length = et.weights[:, j].sum(axis=1)
                den = den + np.sqrt(length) * np.sqrt(np.einsum("tq,tq->t", et.weights[:, j], jn**2))
            ratios.append((num / den).max())
        worst.append(max(ratios))
    assert max(worst) / min(worst) < 1.5


def test_norm_equivalence_interval_is_stable(rng):
    lows, highs = [], []
    for n in (2, 4, 8, 16):
        ops = build_element_ops(generate_uniform_square(n), 1)
        ratios = [
            triple_norm(ops, v) / triple_norm_1(ops, v)
            for v in (rng.standard_normal(ops.dofmap.n_full) for _ in range(30))
        ]
        lows.append(min(ratios))
        highs.append(max(ratios))
    assert min(lows) > 0
    assert max(lows) / min(lows) < 2.0
    assert max(highs) / min(highs) < 2.0


def test_triple_norm_vanishes_only_on_constants(ops, rng):
    const = project_Qh(ops, lambda x, y: (3 + 0 * x, -1 + 0 * x))
    assert triple_norm(ops, const) < 1e-12
    assert triple_norm(ops, rng.standard_normal(ops.dofmap.n_full)) > 1e-3


def test_interior_l2_norm_of_constant():
    ops = build_element_ops(generate_uniform_square(4), 1)
    v = project_Qh(ops, lambda x, y: (3 + 0 * x, 4 + 0 * x))
    assert interior_l2_norm(ops, v) == pytest.approx(5.0, rel=1e-13)


@pytest.mark.parametrize("k", DEGREES)
def test_pressure_projection_is_mean_zero(k):
    ops = build_element_ops(perturbed_square(4, 0.1, seed=1), k)
    p = project_pih(ops, lambda x, y: np.exp(x) * np.cos(3 * y) + 5)
    values = poly_values(ops.form, p.coeffs.reshape(-1, ops.dofmap.n_poly))
    assert abs(mean_row(ops) @ p.coeffs) <= 1e-10 * ops.mesh.area() * np.abs(values).max()
    assert p.mean(ops) == 0.0


def test_pressure_field_shift():
    ops = build_element_ops(generate_uniform_square(2), 1)
    p = PressureField(ops.dofmap, np.tile([2.0, 0.0, 0.0], ops.mesh.n_triangles))
    assert p.mean(ops) == pytest.approx(2.0)
    assert np.abs(p.shifted_mean_zero(ops).coeffs).max() < 1e-14


def test_degenerate_element_is_reported():
    mesh = from_triangles([[0, 0], [1, 0], [0.5, 1e-9]], [[0, 1, 2]])
    with pytest.raises(ElementDegeneracyError):
        build_element_ops(mesh, 1)

