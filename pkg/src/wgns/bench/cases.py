"""Manufactured-solution and benchmark cases.

Every case is written for the rotational form

    -nu lap u + (curl u) x u + grad p = f,   div u = 0,

where in 2D (curl u) x u = (-omega u_y, omega u_x) with omega = d_x u_y - d_y u_x.
Exact fields are held as sympy expressions; numpy callables are produced by
``lambdify``. The residual check at construction time evaluates derivatives
numerically with mpmath, so it does not share code with the symbolic
derivation of ``f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import mpmath
import numpy as np
import sympy as sp

from ..mesh import Mesh, generate_lshape, generate_uniform_square

X, Y = sp.symbols("x y", real=True)


class UnknownCaseError(KeyError):
    pass


class CaseConsistencyError(ValueError):
    pass


def rotational_force(u, p, nu):
    """Symbolic f = -nu lap u + (curl u) x u + grad p for sympy expressions."""
    ux, uy = u
    omega = sp.diff(uy, X) - sp.diff(ux, Y)
    lap = [sp.diff(c, X, 2) + sp.diff(c, Y, 2) for c in (ux, uy)]
    fx = -nu * lap[0] - omega * uy + sp.diff(p, X)
    fy = -nu * lap[1] + omega * ux + sp.diff(p, Y)
    return sp.simplify(fx), sp.simplify(fy)


def _np_vector(exprs) -> Callable:
    fx = sp.lambdify((X, Y), exprs[0], "numpy")
    fy = sp.lambdify((X, Y), exprs[1], "numpy")

    def func(x, y):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(fx(x, y), x.shape), np.broadcast_to(fy(x, y), x.shape)

    return func


def _np_scalar(expr) -> Callable:
    f = sp.lambdify((X, Y), expr, "numpy")

    def func(x, y):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(f(x, y), x.shape)

    return func


def pde_residual(u, p, f, nu, points, dps: int = 30) -> np.ndarray:
    """Max-norm of the momentum and continuity residuals at ``points``.

    Derivatives come from mpmath's numerical differentiation at ``dps`` digits.
    """
    mods = ["mpmath"]
    ux = sp.lambdify((X, Y), u[0], mods)
    uy = sp.lambdify((X, Y), u[1], mods)
    pf = sp.lambdify((X, Y), p, mods)
    fx = sp.lambdify((X, Y), f[0], mods)
    fy = sp.lambdify((X, Y), f[1], mods)
    out = []
    with mpmath.workdps(dps):
        for px, py in points:
            a, b = mpmath.mpf(px), mpmath.mpf(py)

            def d(g, i, j):
                return mpmath.diff(g, (a, b), (i, j))

            omega = d(uy, 1, 0) - d(ux, 0, 1)
            rx = -nu * (d(ux, 2, 0) + d(ux, 0, 2)) - omega * uy(a, b) + d(pf, 1, 0) - fx(a, b)
            ry = -nu * (d(uy, 2, 0) + d(uy, 0, 2)) + omega * ux(a, b) + d(pf, 0, 1) - fy(a, b)
            div = d(ux, 1, 0) + d(uy, 0, 1)
            out.append((float(abs(rx)), float(abs(ry)), float(abs(div))))
    return np.array(out)


@dataclass
class BenchmarkCase:
    """A benchmark problem: mesh family, data, and (optionally) exact fields.

    ``make_mesh(n)`` returns the mesh with nominal size h = 1/n. Exact fields
    are numpy callables of (x, y); ``u_expr``/``p_expr`` keep the sympy forms.
    """

    id: str
    make_mesh: Callable[[int], Mesh]
    f: Callable
    g: Callable | None
    nu: float
    u: Callable | None = None
    p: Callable | None = None
    u_expr: tuple | None = None
    p_expr: object = None
    f_expr: tuple | None = None
    params: dict = field(default_factory=dict)
    default_sizes: tuple[int, ...] = (8, 16, 32)
    residual_tol: float = 1e-8
    sample_box: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    inside: Callable[[float, float], bool] | None = None

    @property
    def has_exact(self) -> bool:
        return self.u is not None and self.p is not None

    def sample_points(self, n: int = 20, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        x0, x1, y0, y1 = self.sample_box
        pts = []
        while len(pts) < n:
            x, y = rng.uniform(x0, x1), rng.uniform(y0, y1)
            if self.inside is None or self.inside(x, y):
                pts.append((x, y))
        return np.array(pts)

    def check_residual(self, n: int = 20, seed: int = 0) -> float:
        """Largest pointwise PDE residual; raises if above ``residual_tol``."""
        if not self.has_exact:
            return 0.0
        pts = self.sample_points(n, seed)
        res = pde_residual(self.u_expr, self.p_expr, self.f_expr, self.nu, pts)
        worst = float(res.max())
        scale = 1.0 + float(np.max(np.abs(np.stack(self.f(pts[:, 0], pts[:, 1])))))
        if worst > self.residual_tol * scale:
            raise CaseConsistencyError(f"case {self.id!r}: PDE residual {worst:.3e} exceeds tolerance")
        return worst


def _square(n: int) -> Mesh:
    return generate_uniform_square(n)


def _finish(case_id, u_expr, p_expr, f_expr, nu, mesh, check=True, **kw) -> BenchmarkCase:
    case = BenchmarkCase(
        id=case_id,
        make_mesh=mesh,
        f=_np_vector(f_expr),
        g=_np_vector(u_expr),
        nu=float(nu),
        u=_np_vector(u_expr),
        p=_np_scalar(p_expr),
        u_expr=u_expr,
        p_expr=p_expr,
        f_expr=f_expr,
        **kw,
    )
    if check:
        case.check_residual()
    return case


def smooth_polynomial(nu: float = 1.0, check: bool = True) -> BenchmarkCase:
    """Polynomial stream-function velocity on the unit square with a bilinear pressure."""
    u = (
        10 * X**2 * Y * (X - 1) ** 2 * (2 * Y - 1) * (Y - 1),
        -10 * X * Y**2 * (2 * X - 1) * (X - 1) * (Y - 1) ** 2,
    )
    p = 10 * (2 * X - 1) * (2 * Y - 1)
    f = rotational_force(u, p, sp.Float(nu))
    return _finish("test1", u, p, f, nu, _square, check, default_sizes=(16, 32, 64))


def no_flow(nu: float = 1.0, ra: float = 1000.0, check: bool = True) -> BenchmarkCase:
    """Hydrostatic test: zero velocity balanced by a quadratic pressure."""
    u = (sp.Integer(0), sp.Integer(0))
    p = -sp.Float(ra) / 2 * Y**2 + sp.Float(ra) * Y - sp.Float(ra) / 3
    f = (sp.Integer(0), sp.Float(ra) * (1 - Y))
    return _finish("noflow", u, p, f, nu, _square, check, params={"Ra": ra}, default_sizes=(40,))


def _lshape_mesh(n: int) -> Mesh:
    if n % 2:
        raise ValueError("L-shape meshes need an even 1/h")
    return generate_lshape(level=0, m=n // 2)


def lshape(nu: float = 1.0, check: bool = True) -> BenchmarkCase:
    """Smooth velocity with the corner-singular pressure r^(2/3) sin(2 theta / 3)."""
    u = (sp.sin(sp.pi * X) * sp.sin(sp.pi * Y), sp.cos(sp.pi * X) * sp.cos(sp.pi * Y))
    r = sp.sqrt(X**2 + Y**2)
    theta = sp.atan2(-Y, -X) + sp.pi
    p = r ** sp.Rational(2, 3) * sp.sin(2 * theta / 3)
    f = rotational_force(u, p, sp.Float(nu))
    return _finish(
        "lshape",
        u,
        p,
        f,
        nu,
        _lshape_mesh,
        check,
        default_sizes=(4, 8, 16),
        residual_tol=1e-5,
        sample_box=(-1.0, 1.0, -1.0, 1.0),
        inside=lambda x, y: not (x > 0.05 and y < -0.05) and math.hypot(x, y) > 0.05,
    )


def kovasznay_lambda(nu: float) -> float:
    re = 1.0 / (2.0 * nu)
    return re / 2.0 - math.sqrt(re**2 / 4.0 + 4.0 * math.pi**2)


def _kovasznay_mesh(n: int) -> Mesh:
    return generate_uniform_square(2 * n, origin=(-0.5, 0.0), extent=2.0)


def kovasznay(nu: float = 0.025, check: bool = True) -> BenchmarkCase:
    """Kovasznay-type flow on (-0.5, 1.5) x (0, 2); pressure carries the kinetic-energy term."""
    lam = sp.Float(kovasznay_lambda(nu))
    u = (
        1 - sp.exp(lam * X) * sp.cos(2 * sp.pi * Y),
        lam / (2 * sp.pi) * sp.exp(lam * X) * sp.sin(2 * sp.pi * Y),
    )
    p_conv = -sp.exp(2 * lam * X) / 2
    p = p_conv + (u[0] ** 2 + u[1] ** 2) / 2
    # with Re = 1/(2 nu) the field solves the homogeneous equations at viscosity 2 nu,
    # so at viscosity nu a (solenoidal) body force remains
    f = rotational_force(u, p, sp.Float(nu))
    return _finish(
        "kovasznay",
        u,
        p,
        f,
        nu,
        _kovasznay_mesh,
        check,
        params={"lambda": float(lam), "Re": 1.0 / (2.0 * nu)},
        default_sizes=(8, 16, 32),
        sample_box=(-0.5, 1.5, 0.0, 2.0),
    )


def irrotational(lam: float = 10.0, nu: float = 1.0, check: bool = True) -> BenchmarkCase:
    """Rigid rotation driven by the gradient force (3 lam x^2, 0)."""
    u = (-Y, X)
    lam_s = sp.Float(lam)
    f = (3 * lam_s * X**2, sp.Integer(0))
    # pressure balancing f under the rotational convection term, shifted to mean zero
    p = lam_s * X**3 + X**2 + Y**2 - (lam_s / 4 + sp.Rational(2, 3))
    return _finish("irrotational", u, p, f, nu, _square, check, params={"lambda": lam}, default_sizes=(16, 32))


def lid_cavity(lam: float = 0.0, nu: float = 1.0) -> BenchmarkCase:
    """Driven cavity: unit tangential lid speed on y = 1, force lam grad((x^3 + y^3) / 3)."""
    lam_s = sp.Float(lam)
    f = (lam_s * X**2, lam_s * Y**2)

    def g(x, y):
        x = np.asarray(x, dtype=float)
        top = np.isclose(np.asarray(y, dtype=float), 1.0, rtol=0.0, atol=1e-12)
        return np.where(top, 1.0, 0.0) * np.ones_like(x), np.zeros_like(x)

    return BenchmarkCase(
        id="lidcavity",
        make_mesh=_square,
        f=_np_vector(f),
        g=g,
        nu=float(nu),
        f_expr=f,
        params={"lambda": lam},
        default_sizes=(50,),
    )


_FACTORIES: dict[str, Callable[..., BenchmarkCase]] = {
    "test1": smooth_polynomial,
    "noflow": no_flow,
    "lshape": lshape,
    "kovasznay": kovasznay,
    "irrotational": irrotational,
    "lidcavity": lid_cavity,
}

CASE_IDS = tuple(_FACTORIES)


def get_case(case_id: str, **params) -> BenchmarkCase:
    """Build case ``case_id``; keyword arguments (nu, lam, ra, ...) override defaults."""
    try:
        factory = _FACTORIES[case_id]
    except KeyError:
        raise UnknownCaseError(f"unknown case {case_id!r}; available: {', '.join(CASE_IDS)}") from None
    return factory(**{k: v for k, v in params.items() if v is not None})


def case_registry() -> dict[str, BenchmarkCase]:
    return {cid: get_case(cid) for cid in CASE_IDS}
