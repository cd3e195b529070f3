"""Local polynomial spaces, Raviart-Thomas bases, quadrature and the global DOF map.

All element bases live in physical coordinates as scaled monomials
``((x - x_c)/s_T)^a ((y - y_c)/s_T)^b`` centred at the triangle centroid, with
s_T half the element diameter (see :func:`basis_scale`).
Geometry is passed as ``center`` with shape ``batch + (2,)`` and ``scale`` with
shape ``batch``; points have shape ``batch + (npts, 2)``. Every array-valued
method broadcasts over the leading batch dimensions so a whole mesh can be
processed in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np
from scipy.special import eval_legendre

from .mesh import Mesh

MAX_DEGREE = 2
MAX_QUAD_DEGREE = 20


class UnsupportedDegreeError(ValueError):
    pass


def _check_degree(k: int) -> int:
    if int(k) != k or k < 0 or k > MAX_DEGREE:
        raise UnsupportedDegreeError(f"polynomial degree must be in 0..{MAX_DEGREE}, got {k!r}")
    return int(k)


def dim_pk(k: int) -> int:
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


def dim_rt(k: int) -> int:
    return (k + 1) * (k + 3)


def monomial_exponents(k: int) -> np.ndarray:
    """Exponents (a, b) with a + b <= k, ordered by total degree."""
    return np.array([(d - b, b) for d in range(k + 1) for b in range(d + 1)], dtype=np.int64).reshape(-1, 2)


def _scaled(points, center, scale):
    center = np.asarray(center, dtype=float)
    scale = np.asarray(scale, dtype=float)
    return (np.asarray(points, dtype=float) - center[..., None, :]) / scale[..., None, None]


def _monomials(xi, exps):
    """Values and xi-derivatives of monomials; (..., npts, n) and (..., npts, n, 2)."""
    x = xi[..., 0, None]
    y = xi[..., 1, None]
    a = exps[:, 0]
    b = exps[:, 1]
    vals = x**a * y**b
    dx = np.where(a > 0, a * x ** np.maximum(a - 1, 0) * y**b, 0.0)
    dy = np.where(b > 0, b * x**a * y ** np.maximum(b - 1, 0), 0.0)
    return vals, np.stack([dx, dy], axis=-1)


@dataclass(frozen=True)
class PolyBasisTri:
    """Scaled-monomial basis of P_k on a triangle (or a batch of triangles)."""

    degree: int
    center: np.ndarray
    scale: np.ndarray

    @property
    def exponents(self) -> np.ndarray:
        return monomial_exponents(self.degree)

    @property
    def dim(self) -> int:
        return dim_pk(self.degree)

    def values(self, points) -> np.ndarray:
        return _monomials(_scaled(points, self.center, self.scale), self.exponents)[0]

    def gradients(self, points) -> np.ndarray:
        g = _monomials(_scaled(points, self.center, self.scale), self.exponents)[1]
        return g / np.asarray(self.scale, dtype=float)[..., None, None, None]


@dataclass(frozen=True)
class PolyBasisEdge:
    """Legendre basis of P_k(e) in the arclength parameter t in [0, 1]."""

    degree: int

    @property
    def dim(self) -> int:
        return self.degree + 1

    def values(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.stack([eval_legendre(m, 2.0 * t - 1.0) for m in range(self.dim)], axis=-1)

    def mass_diagonal(self, length) -> np.ndarray:
        """Diagonal of the edge mass matrix, shape ``length.shape + (k+1,)``."""
        length = np.asarray(length, dtype=float)
        return length[..., None] / (2.0 * np.arange(self.dim) + 1.0)


@dataclass(frozen=True)
class RtBasisTri:
    """Basis of RT_k = [P_k]^2 + x P~_k on a triangle (or a batch).

    Ordering: (m_a, 0) for all monomials m_a of degree <= k, then (0, m_a),
    then xi * m_b for the homogeneous monomials of degree exactly k.
    """

    degree: int
    center: np.ndarray
    scale: np.ndarray

    @property
    def dim(self) -> int:
        return dim_rt(self.degree)

    def _parts(self, points):
        k = self.degree
        xi = _scaled(points, self.center, self.scale)
        exps = monomial_exponents(k)
        vals, grads = _monomials(xi, exps)
        top = exps[dim_pk(k - 1) :]
        hvals = vals[..., dim_pk(k - 1) :]
        return xi, exps, vals, grads, top, hvals

    def values(self, points) -> np.ndarray:
        xi, exps, vals, grads, top, hvals = self._parts(points)
        n = vals.shape[-1]
        zeros = np.zeros_like(vals)
        first = np.stack([vals, zeros], axis=-1)
        second = np.stack([zeros, vals], axis=-1)
        third = xi[..., None, :] * hvals[..., None]
        out = np.concatenate([first, second, third], axis=-2)
        assert out.shape[-2] == 2 * n + len(top)
        return out

    def divergence(self, points) -> np.ndarray:
        xi, exps, vals, grads, top, hvals = self._parts(points)
        k = self.degree
        div = np.concatenate([grads[..., 0], grads[..., 1], (k + 2) * hvals], axis=-1)
        return div / np.asarray(self.scale, dtype=float)[..., None, None]


def basis_scale(diameter):
    """Monomial scale s_T = h_T / 2.

    Scaled coordinates then range over about [-2/3, 2/3]; dividing by the full
    diameter instead squeezes them to [-1/3, 1/3] and pushes the P_2 Gram
    condition number past 1e4 on mildly distorted meshes.
    """
    return 0.5 * np.asarray(diameter, dtype=float)


def triangle_geometry(corners) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and basis scale of triangle(s) given corners of shape (..., 3, 2)."""
    corners = np.asarray(corners, dtype=float)
    center = corners.mean(axis=-2)
    lengths = np.linalg.norm(corners[..., [1, 2, 0], :] - corners[..., [2, 0, 1], :], axis=-1)
    return center, basis_scale(lengths.max(axis=-1))


def make_tri_basis(k: int, triangle=None) -> PolyBasisTri:
    """P_k basis; bound to ``triangle`` corners (..., 3, 2) when given, else unscaled at the origin."""
    k = _check_degree(k)
    if triangle is None:
        return PolyBasisTri(k, np.zeros(2), np.ones(()))
    center, scale = triangle_geometry(triangle)
    return PolyBasisTri(k, center, scale)


def make_edge_basis(k: int) -> PolyBasisEdge:
    return PolyBasisEdge(_check_degree(k))


def make_rt_basis(k: int, triangle=None) -> RtBasisTri:
    k = _check_degree(k)
    if triangle is None:
        return RtBasisTri(k, np.zeros(2), np.ones(()))
    center, scale = triangle_geometry(triangle)
    return RtBasisTri(k, center, scale)


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle (0,0), (1,0), (0,1).

    ``points`` are barycentric coordinates (n, 3); weights sum to 1/2.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def map(self, corners) -> tuple[np.ndarray, np.ndarray]:
        """Physical points (..., n, 2) and weights (..., n) for triangle corners (..., 3, 2)."""
        corners = np.asarray(corners, dtype=float)
        pts = np.einsum("qi,...id->...qd", self.points, corners)
        a = corners[..., 1, :] - corners[..., 0, :]
        b = corners[..., 2, :] - corners[..., 0, :]
        jac = np.abs(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
        return pts, jac[..., None] * self.weights


@lru_cache(maxsize=None)
def gauss_jacobi(n: int, alpha: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss rule on [-1, 1] for the weight (1 - t)^alpha.

    Nodes and weights come from the Golub-Welsch eigenproblem solved at 40
    digits and rounded once; scipy's double-precision weights are off by up to
    ~1e-14 relative for n >= 10, which is visible in degree-20 exactness checks.
    """
    a = mpmath.mpf(alpha)
    with mpmath.workdps(40):
        jac = mpmath.zeros(n)
        for i in range(n):
            s = 2 * i + a
            jac[i, i] = -(a * a) / (s * (s + 2)) if s > 0 else -a / (a + 2)
            if i + 1 < n:
                m = i + 1
                s = 2 * m + a
                jac[i, i + 1] = jac[i + 1, i] = mpmath.sqrt(4 * m * m * (m + a) ** 2 / (s**2 * (s + 1) * (s - 1)))
        nodes, vecs = mpmath.eigsy(jac)
        mu0 = mpmath.mpf(2) ** (a + 1) / (a + 1)
        t = np.array([float(nodes[i]) for i in range(n)])
        w = np.array([float(mu0 * vecs[0, i] ** 2) for i in range(n)])
    order = np.argsort(t)
    return t[order], w[order]


@lru_cache(maxsize=None)
def quadrature_for(degree: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi x Gauss-Legendre product rule, exact to at least ``degree``."""
    if int(degree) != degree or degree < 1 or degree > MAX_QUAD_DEGREE:
        raise ValueError(f"quadrature degree must be in 1..{MAX_QUAD_DEGREE}, got {degree!r}")
    n = (int(degree) + 2) // 2
    tj, wj = gauss_jacobi(n, 1)
    tl, wl = gauss_jacobi(n, 0)
    u = 0.5 * (1.0 + tj)
    v = 0.5 * (1.0 + tl)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = uu.ravel()
    y = (vv * (1.0 - uu)).ravel()
    w = np.outer(wj / 4.0, wl / 2.0).ravel()
    points = np.column_stack([1.0 - x - y, x, y])
    return QuadratureRule(points=points, weights=w, degree=2 * n - 1)


@lru_cache(maxsize=None)
def edge_quadrature(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes in [0, 1] and weights summing to 1."""
    n = max(1, (int(degree) + 2) // 2)
    t, w = gauss_jacobi(n, 0)
    return 0.5 * (1.0 + t), 0.5 * w


@dataclass(frozen=True)
class DofMap:
    """Global numbering for V_h x W_h.

    Velocity DOFs use a "full" numbering: element interiors first, then interior
    edges, then boundary edges. The first ``n_u`` indices are the free DOFs of
    V_h^0; the last ``n_b`` carry prescribed boundary data.

    Local velocity ordering on a triangle: interior x-block, interior y-block,
    then for each local edge j its x-block and y-block.
    """

    mesh: Mesh
    k: int
    n_u: int
    n_b: int
    n_p: int
    interior_offsets: np.ndarray
    edge_offsets: np.ndarray
    pressure_offsets: np.ndarray
    cell_dofs: np.ndarray
    cell_pressure_dofs: np.ndarray

    @property
    def n_poly(self) -> int:
        return dim_pk(self.k)

    @property
    def n_edge(self) -> int:
        return self.k + 1

    @property
    def n_full(self) -> int:
        return self.n_u + self.n_b

    @property
    def n_local(self) -> int:
        return 2 * self.n_poly + 6 * self.n_edge

    def component_local_indices(self, c: int) -> np.ndarray:
        """Local indices of the scalar DOFs of velocity component ``c``."""
        npk, ne = self.n_poly, self.n_edge
        idx = [c * npk + np.arange(npk)]
        for j in range(3):
            idx.append(2 * npk + j * 2 * ne + c * ne + np.arange(ne))
        return np.concatenate(idx)

    def edge_dofs(self, edges) -> np.ndarray:
        """(len(edges), 2, k+1) full indices of the edge blocks."""
        edges = np.asarray(edges)
        base = self.edge_offsets[edges]
        return base[:, None, None] + np.arange(2)[:, None] * self.n_edge + np.arange(self.n_edge)


def build_dof_map(mesh: Mesh, k: int) -> DofMap:
    k = _check_degree(k)
    npk = dim_pk(k)
    ne = k + 1
    nt = mesh.n_triangles
    interior_offsets = 2 * npk * np.arange(nt)
    n_int = 2 * npk * nt
    edge_offsets = np.empty(mesh.n_edges, dtype=np.int64)
    inner = mesh.interior_edges
    bnd = mesh.boundary_edges
    edge_offsets[inner] = n_int + 2 * ne * np.arange(len(inner))
    n_u = n_int + 2 * ne * len(inner)
    edge_offsets[bnd] = n_u + 2 * ne * np.arange(len(bnd))
    n_b = 2 * ne * len(bnd)

    blocks = [interior_offsets[:, None] + np.arange(2 * npk)]
    for j in range(3):
        blocks.append(edge_offsets[mesh.triangle_edges[:, j]][:, None] + np.arange(2 * ne))
    cell_dofs = np.concatenate(blocks, axis=1)
    pressure_offsets = npk * np.arange(nt)
    return DofMap(
        mesh=mesh,
        k=k,
        n_u=int(n_u),
        n_b=int(n_b),
        n_p=int(npk * nt),
        interior_offsets=interior_offsets,
        edge_offsets=edge_offsets,
        pressure_offsets=pressure_offsets,
        cell_dofs=cell_dofs,
        cell_pressure_dofs=pressure_offsets[:, None] + np.arange(npk),
    )
