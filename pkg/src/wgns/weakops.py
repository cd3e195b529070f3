"""Element-local weak Galerkin operators.

For each triangle this module builds dense matrices acting on the local WG
velocity vector (interior blocks followed by the three edge blocks, see
:class:`wgns.spaces.DofMap`):

* ``G`` - scalar weak gradient into RT_k, applied to each velocity component,
  so row i of the tensor weak gradient is the weak gradient of component i;
* ``D`` - weak divergence into P_k;
* ``R`` - the divergence-preserving reconstruction into RT_k, fixed by the
  normal moments of v_b on every edge and the [P_{k-1}]^2 moments of v_0.

All element work is batched over the mesh with numpy; no per-element Python
loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .mesh import Mesh
from .spaces import (
    DofMap,
    PolyBasisTri,
    RtBasisTri,
    basis_scale,
    build_dof_map,
    dim_pk,
    edge_quadrature,
    make_edge_basis,
    quadrature_for,
)

VectorFunction = Callable[[np.ndarray, np.ndarray], tuple]
ScalarFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

CONDITION_LIMIT = 1e8


class ElementDegeneracyError(RuntimeError):
    pass


def form_quadrature_degree(k: int) -> int:
    return max(3 * k + 3, 2 * k + 2)


def data_quadrature_degree(k: int) -> int:
    return k + 6


def _solve_batched(lhs: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(lhs)
    if not np.all(np.isfinite(cond)) or cond.max() > CONDITION_LIMIT:
        bad = int(np.argmax(np.where(np.isfinite(cond), cond, np.inf)))
        raise ElementDegeneracyError(f"{what} is ill-conditioned on element {bad} (cond={cond[bad]:.3e})")
    return np.linalg.solve(lhs, rhs)


def _eval_vector(func: VectorFunction, pts: np.ndarray) -> np.ndarray:
    ux, uy = func(pts[..., 0], pts[..., 1])
    shape = pts.shape[:-1]
    return np.stack([np.broadcast_to(np.asarray(ux, float), shape), np.broadcast_to(np.asarray(uy, float), shape)], axis=-1)


def _eval_scalar(func: ScalarFunction, pts: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.asarray(func(pts[..., 0], pts[..., 1]), float), pts.shape[:-1])


@dataclass
class QuadTable:
    """Basis evaluations on one quadrature rule, batched over all triangles."""

    points: np.ndarray  # (nt, nq, 2)
    weights: np.ndarray  # (nt, nq)
    poly: np.ndarray  # (nt, nq, nP)
    poly_grad: np.ndarray  # (nt, nq, nP, 2)
    rt: np.ndarray  # (nt, nq, nRT, 2)
    rt_div: np.ndarray  # (nt, nq, nRT)


@dataclass
class EdgeTable:
    """Values on the three local edges of every triangle."""

    points: np.ndarray  # (nt, 3, nqe, 2)
    weights: np.ndarray  # (nt, 3, nqe), includes edge length
    normals: np.ndarray  # (nt, 3, 2) outward
    psi: np.ndarray  # (nt, 3, nqe, k+1) edge basis in the global parameter
    poly: np.ndarray  # (nt, 3, nqe, nP)
    rt: np.ndarray  # (nt, 3, nqe, nRT, 2)


@dataclass
class ElementOps:
    """Per-mesh table of element operators and quadrature evaluations."""

    dofmap: DofMap
    centers: np.ndarray
    scales: np.ndarray  # monomial scale per element (half the diameter)
    G: np.ndarray  # (nt, nRT, nP + 3(k+1))
    D: np.ndarray  # (nt, nP, nloc)
    R: np.ndarray  # (nt, nRT, nloc)
    mass_p: np.ndarray  # (nt, nP, nP)
    mass_rt: np.ndarray  # (nt, nRT, nRT)
    rt_dof_matrix: np.ndarray  # (nt, nRT, nRT) DOF functionals applied to the RT basis
    form: QuadTable
    edges: EdgeTable
    data_degree: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def mesh(self) -> Mesh:
        return self.dofmap.mesh

    @property
    def k(self) -> int:
        return self.dofmap.k

    @property
    def n_rt(self) -> int:
        return self.G.shape[1]

    @cached_property
    def G_full(self) -> np.ndarray:
        """(nt, 2, nRT, nloc): row c of the tensor weak gradient."""
        dm = self.dofmap
        out = np.zeros((self.mesh.n_triangles, 2, self.n_rt, dm.n_local))
        for c in range(2):
            out[:, c][..., dm.component_local_indices(c)] = self.G
        return out

    @cached_property
    def form_R(self) -> np.ndarray:
        """(nt, nq, 2, nloc): values of R_T v at the form quadrature points."""
        return np.einsum("tqid,til->tqdl", self.form.rt, self.R, optimize=True)

    @cached_property
    def form_V0(self) -> np.ndarray:
        """(nt, nq, 2, nloc): values of v_0 at the form quadrature points."""
        return self._interior_values(self.form)

    @cached_property
    def form_curl(self) -> np.ndarray:
        """(nt, nq, nloc): weak vorticity (grad_w v)_{yx} - (grad_w v)_{xy} at the form points."""
        gx = np.einsum("tqi,til->tql", self.form.rt[..., 0], self.G_full[:, 1], optimize=True)
        gy = np.einsum("tqi,til->tql", self.form.rt[..., 1], self.G_full[:, 0], optimize=True)
        return gx - gy

    def _interior_values(self, table: QuadTable) -> np.ndarray:
        nt, nq, npk = table.poly.shape
        out = np.zeros((nt, nq, 2, self.dofmap.n_local))
        out[:, :, 0, :npk] = table.poly
        out[:, :, 1, npk : 2 * npk] = table.poly
        return out

    def data_table(self, degree: int | None = None) -> QuadTable:
        degree = self.data_degree if degree is None else int(degree)
        key = ("data", degree)
        if key not in self._cache:
            self._cache[key] = _quad_table(self.mesh, self.k, self.centers, self.scales, degree)
        return self._cache[key]

    def data_R(self, degree: int | None = None) -> np.ndarray:
        degree = self.data_degree if degree is None else int(degree)
        key = ("data_R", degree)
        if key not in self._cache:
            t = self.data_table(degree)
            self._cache[key] = np.einsum("tqid,til->tqdl", t.rt, self.R, optimize=True)
        return self._cache[key]

    def data_V0(self, degree: int | None = None) -> np.ndarray:
        return self._interior_values(self.data_table(degree))

    # --- local operator application -------------------------------------------------

    def local(self, full: np.ndarray) -> np.ndarray:
        """Gather a full velocity vector into (nt, nloc) local blocks."""
        return np.asarray(full)[self.dofmap.cell_dofs]

    def weak_gradient(self, local: np.ndarray) -> np.ndarray:
        """(nt, 2, nRT) RT coefficients of each row of the weak gradient."""
        return np.einsum("tcil,tl->tci", self.G_full, local, optimize=True)

    def weak_divergence(self, local: np.ndarray) -> np.ndarray:
        return np.einsum("til,tl->ti", self.D, local)

    def reconstruct(self, local: np.ndarray) -> np.ndarray:
        return np.einsum("til,tl->ti", self.R, local)


def _quad_table(mesh: Mesh, k: int, centers, scales, degree: int) -> QuadTable:
    rule = quadrature_for(degree)
    pts, w = rule.map(mesh.corners)
    pb = PolyBasisTri(k, centers, scales)
    rb = RtBasisTri(k, centers, scales)
    return QuadTable(
        points=pts,
        weights=w,
        poly=pb.values(pts),
        poly_grad=pb.gradients(pts),
        rt=rb.values(pts),
        rt_div=rb.divergence(pts),
    )


def _edge_table(mesh: Mesh, k: int, centers, scales, degree: int) -> EdgeTable:
    corners = mesh.corners
    s, ws = edge_quadrature(degree)
    a = corners[:, [1, 2, 0]]
    b = corners[:, [2, 0, 1]]
    tangent = b - a
    length = np.linalg.norm(tangent, axis=-1)
    normals = np.stack([tangent[..., 1], -tangent[..., 0]], axis=-1) / length[..., None]
    pts = a[:, :, None, :] + s[None, None, :, None] * tangent[:, :, None, :]
    weights = length[..., None] * ws
    signs = mesh.triangle_edge_signs
    t_global = np.where(signs[..., None] > 0, s, 1.0 - s)
    psi = make_edge_basis(k).values(t_global)
    nt = mesh.n_triangles
    flat = pts.reshape(nt, -1, 2)
    pb = PolyBasisTri(k, centers, scales)
    rb = RtBasisTri(k, centers, scales)
    nq = len(s)
    poly = pb.values(flat).reshape(nt, 3, nq, -1)
    rt = rb.values(flat).reshape(nt, 3, nq, -1, 2)
    return EdgeTable(points=pts, weights=weights, normals=normals, psi=psi, poly=poly, rt=rt)


def build_element_ops(mesh_or_dofmap, k: int | None = None, data_degree: int | None = None) -> ElementOps:
    """Assemble the element operator table for a mesh and degree k."""
    if isinstance(mesh_or_dofmap, DofMap):
        dm = mesh_or_dofmap
    else:
        dm = build_dof_map(mesh_or_dofmap, k)
    mesh, k = dm.mesh, dm.k
    npk, ne = dim_pk(k), k + 1
    nt = mesh.n_triangles
    centers = mesh.corners.mean(axis=1)
    scales = basis_scale(mesh.diameters)
    form = _quad_table(mesh, k, centers, scales, form_quadrature_degree(k))
    et = _edge_table(mesh, k, centers, scales, 2 * k + 2)
    w = form.weights
    nrt = form.rt.shape[2]
    nls = npk + 3 * ne
    nloc = dm.n_local

    mass_p = np.einsum("tq,tqa,tqb->tab", w, form.poly, form.poly, optimize=True)
    mass_rt = np.einsum("tq,tqid,tqjd->tij", w, form.rt, form.rt, optimize=True)

    # trace of tau . n on each edge: (nt, 3, nqe, nRT)
    rt_n = np.einsum("tjqid,tjd->tjqi", et.rt, et.normals)

    # scalar weak gradient: (grad_w v, tau) = -(v0, div tau) + <vb, tau.n>
    rhs_g = np.zeros((nt, nrt, nls))
    rhs_g[:, :, :npk] = -np.einsum("tq,tqi,tqa->tia", w, form.rt_div, form.poly, optimize=True)
    for j in range(3):
        rhs_g[:, :, npk + j * ne : npk + (j + 1) * ne] = np.einsum(
            "tq,tqi,tqm->tim", et.weights[:, j], rt_n[:, j], et.psi[:, j], optimize=True
        )
    G = _solve_batched(mass_rt, rhs_g, "RT mass matrix")

    # weak divergence: (div_w v, q) = -(v0, grad q) + <vb . n, q>
    rhs_d = np.zeros((nt, npk, nloc))
    for c in range(2):
        rhs_d[:, :, c * npk : (c + 1) * npk] = -np.einsum(
            "tq,tqi,tqa->tia", w, form.poly_grad[..., c], form.poly, optimize=True
        )
    for j in range(3):
        m = np.einsum("tq,tqi,tqm->tim", et.weights[:, j], et.poly[:, j], et.psi[:, j], optimize=True)
        for c in range(2):
            start = 2 * npk + j * 2 * ne + c * ne
            rhs_d[:, :, start : start + ne] = m * et.normals[:, j, c][:, None, None]
    D = _solve_batched(mass_p, rhs_d, "P_k mass matrix")

    # reconstruction: edge normal moments then interior [P_{k-1}]^2 moments
    nlow = dim_pk(k - 1)
    dof = np.zeros((nt, nrt, nrt))
    rhs_r = np.zeros((nt, nrt, nloc))
    for j in range(3):
        rows = slice(j * ne, (j + 1) * ne)
        dof[:, rows, :] = np.einsum("tq,tqm,tqi->tmi", et.weights[:, j], et.psi[:, j], rt_n[:, j], optimize=True)
        edge_mass = np.einsum("tq,tqm,tqn->tmn", et.weights[:, j], et.psi[:, j], et.psi[:, j], optimize=True)
        for c in range(2):
            start = 2 * npk + j * 2 * ne + c * ne
            rhs_r[:, rows, start : start + ne] = edge_mass * et.normals[:, j, c][:, None, None]
    for c in range(2):
        rows = slice(3 * ne + c * nlow, 3 * ne + (c + 1) * nlow)
        dof[:, rows, :] = np.einsum("tq,tqa,tqi->tai", w, form.poly[..., :nlow], form.rt[..., c], optimize=True)
        rhs_r[:, rows, c * npk : (c + 1) * npk] = mass_p[:, :nlow, :]
    R = _solve_batched(dof, rhs_r, "RT DOF matrix")

    return ElementOps(
        dofmap=dm,
        centers=centers,
        scales=scales,
        G=G,
        D=D,
        R=R,
        mass_p=mass_p,
        mass_rt=mass_rt,
        rt_dof_matrix=dof,
        form=form,
        edges=et,
        data_degree=data_quadrature_degree(k) if data_degree is None else int(data_degree),
    )


# --- fields ----------------------------------------------------------------------------


@dataclass
class WgField:
    """Velocity in V_h: free coefficients plus prescribed boundary-edge coefficients."""

    dofmap: DofMap
    free: np.ndarray
    boundary: np.ndarray

    @classmethod
    def zeros(cls, dofmap: DofMap) -> "WgField":
        return cls(dofmap, np.zeros(dofmap.n_u), np.zeros(dofmap.n_b))

    @classmethod
    def from_full(cls, dofmap: DofMap, full: np.ndarray) -> "WgField":
        full = np.asarray(full, dtype=float)
        return cls(dofmap, full[: dofmap.n_u].copy(), full[dofmap.n_u :].copy())

    def full(self) -> np.ndarray:
        return np.concatenate([self.free, self.boundary])

    def interior(self) -> np.ndarray:
        """(nt, 2, nP) interior coefficients."""
        dm = self.dofmap
        npk = dm.n_poly
        return self.full()[: 2 * npk * dm.mesh.n_triangles].reshape(-1, 2, npk)

    def __sub__(self, other: "WgField") -> "WgField":
        return WgField(self.dofmap, self.free - other.free, self.boundary - other.boundary)


@dataclass
class PressureField:
    """Piecewise P_k pressure, coefficients ordered element by element."""

    dofmap: DofMap
    coeffs: np.ndarray
    _mean: float | None = field(default=None, repr=False)

    def mean(self, ops: ElementOps) -> float:
        if self._mean is None:
            self._mean = float(mean_row(ops) @ self.coeffs / ops.mesh.area())
        return self._mean

    def shifted_mean_zero(self, ops: ElementOps) -> "PressureField":
        npk = self.dofmap.n_poly
        c = self.coeffs.reshape(-1, npk).copy()
        c[:, 0] -= self.mean(ops)  # first scaled monomial is the constant 1
        return PressureField(self.dofmap, c.ravel(), 0.0)


def mean_row(ops: ElementOps) -> np.ndarray:
    """Vector m with m @ p = integral of p over the domain."""
    return np.einsum("tq,tqa->ta", ops.form.weights, ops.form.poly).ravel()


# --- projections ------------------------------------------------------------------------


def project_Q0(ops: ElementOps, u: VectorFunction, degree: int | None = None) -> np.ndarray:
    """(nt, 2, nP) local L2 projection of a vector function onto [P_k]^2."""
    t = ops.data_table(degree)
    vals = _eval_vector(u, t.points)
    mom = np.einsum("tq,tqc,tqa->tac", t.weights, vals, t.poly, optimize=True)
    return np.linalg.solve(ops.mass_p, mom).transpose(0, 2, 1)


def project_Qb(ops: ElementOps, u: VectorFunction, edges=None, degree: int | None = None) -> np.ndarray:
    """(len(edges), 2, k+1) L2 projection of a vector function onto [P_k(e)]^2."""
    mesh = ops.mesh
    edges = np.arange(mesh.n_edges) if edges is None else np.asarray(edges)
    degree = ops.data_degree if degree is None else int(degree)
    s, ws = edge_quadrature(degree)
    v = mesh.vertices[mesh.edges[edges]]
    pts = v[:, 0, None, :] + s[None, :, None] * (v[:, 1] - v[:, 0])[:, None, :]
    length = np.linalg.norm(v[:, 1] - v[:, 0], axis=-1)
    basis = make_edge_basis(ops.k)
    psi = basis.values(s)
    vals = _eval_vector(u, pts)
    mom = np.einsum("q,eqc,qm->ecm", ws, vals, psi) * length[:, None, None]
    return mom / basis.mass_diagonal(length)[:, None, :]


def project_Qh(ops: ElementOps, u: VectorFunction, degree: int | None = None) -> WgField:
    """Q_h u = {Q_0 u, Q_b u} on all elements and edges (boundary included)."""
    dm = ops.dofmap
    full = np.zeros(dm.n_full)
    full[: 2 * dm.n_poly * ops.mesh.n_triangles] = project_Q0(ops, u, degree).ravel()
    full[dm.edge_dofs(np.arange(ops.mesh.n_edges))] = project_Qb(ops, u, degree=degree)
    return WgField.from_full(dm, full)


def project_pih(ops: ElementOps, p: ScalarFunction, mean_zero: bool = True, degree: int | None = None) -> PressureField:
    t = ops.data_table(degree)
    vals = _eval_scalar(p, t.points)
    mom = np.einsum("tq,tq,tqa->ta", t.weights, vals, t.poly)
    coeffs = np.linalg.solve(ops.mass_p, mom[..., None])[..., 0].ravel()
    field_ = PressureField(ops.dofmap, coeffs)
    return field_.shifted_mean_zero(ops) if mean_zero else field_


def interpolate_Rh(ops: ElementOps, u: VectorFunction, degree: int | None = None) -> np.ndarray:
    """(nt, nRT) coefficients of the local Raviart-Thomas interpolant of ``u``."""
    mesh, k = ops.mesh, ops.k
    degree = ops.data_degree if degree is None else int(degree)
    et = _edge_table(mesh, k, ops.centers, ops.scales, degree)
    ne = k + 1
    nlow = dim_pk(k - 1)
    rhs = np.zeros((mesh.n_triangles, ops.n_rt))
    un = np.einsum("tjqd,tjd->tjq", _eval_vector(u, et.points), et.normals)
    for j in range(3):
        rhs[:, j * ne : (j + 1) * ne] = np.einsum("tq,tq,tqm->tm", et.weights[:, j], un[:, j], et.psi[:, j])
    t = ops.data_table(degree)
    vals = _eval_vector(u, t.points)
    for c in range(2):
        rhs[:, 3 * ne + c * nlow : 3 * ne + (c + 1) * nlow] = np.einsum(
            "tq,tq,tqa->ta", t.weights, vals[..., c], t.poly[..., :nlow]
        )
    return np.linalg.solve(ops.rt_dof_matrix, rhs[..., None])[..., 0]


def l2_project_rt(ops: ElementOps, func: Callable, degree: int | None = None) -> np.ndarray:
    """(nt, nRT) L2 projection onto RT_k of a vector function (one RT field per element).

    Computed as a weighted least-squares fit at quadrature points, independent of
    the weak-gradient machinery; used as an oracle for the commuting property.
    """
    t = ops.data_table(degree)
    vals = np.asarray(func(t.points), float)  # (nt, nq, 2)
    sw = np.sqrt(t.weights)
    a = (t.rt * sw[..., None, None]).transpose(0, 1, 3, 2).reshape(len(sw), -1, ops.n_rt)
    b = (vals * sw[..., None]).reshape(len(sw), -1)
    out = np.empty((len(sw), ops.n_rt))
    for i in range(len(sw)):
        out[i] = np.linalg.lstsq(a[i], b[i], rcond=None)[0]
    return out


# --- norms -----------------------------------------------------------------------------


def triple_norm(ops: ElementOps, v: WgField | np.ndarray) -> float:
    """sqrt(sum_T ||grad_w v||_T^2)."""
    full = v.full() if isinstance(v, WgField) else np.asarray(v)
    g = ops.weak_gradient(ops.local(full))
    return float(np.sqrt(max(np.einsum("tci,tij,tcj->", g, ops.mass_rt, g), 0.0)))


def interior_l2_norm(ops: ElementOps, v: WgField | np.ndarray) -> float:
    full = v.full() if isinstance(v, WgField) else np.asarray(v)
    v0 = ops.local(full)[:, : 2 * ops.dofmap.n_poly].reshape(-1, 2, ops.dofmap.n_poly)
    return float(np.sqrt(max(np.einsum("tca,tab,tcb->", v0, ops.mass_p, v0), 0.0)))


def pressure_l2_norm(ops: ElementOps, p: PressureField | np.ndarray) -> float:
    c = p.coeffs if isinstance(p, PressureField) else np.asarray(p)
    c = c.reshape(-1, ops.dofmap.n_poly)
    return float(np.sqrt(max(np.einsum("ta,tab,tb->", c, ops.mass_p, c), 0.0)))


def triple_norm_1(ops: ElementOps, v: WgField | np.ndarray) -> float:
    """sqrt(sum_T ||grad v_0||_T^2 + h_T^{-1} ||v_0 - v_b||_{dT}^2)."""
    full = v.full() if isinstance(v, WgField) else np.asarray(v)
    loc = ops.local(full)
    dm = ops.dofmap
    npk, ne = dm.n_poly, dm.n_edge
    v0 = loc[:, : 2 * npk].reshape(-1, 2, npk)
    grad = np.einsum("tqad,tca->tqcd", ops.form.poly_grad, v0)
    vol = np.einsum("tq,tqcd,tqcd->t", ops.form.weights, grad, grad)
    et = ops.edges
    jump = 0.0
    for j in range(3):
        vb = loc[:, 2 * npk + j * 2 * ne : 2 * npk + (j + 1) * 2 * ne].reshape(-1, 2, ne)
        d = np.einsum("tqa,tca->tqc", et.poly[:, j], v0) - np.einsum("tqm,tcm->tqc", et.psi[:, j], vb)
        jump = jump + np.einsum("tq,tqc,tqc->t", et.weights[:, j], d, d)
    return float(np.sqrt(np.sum(vol + jump / ops.mesh.diameters)))
