"""Global assembly of the WG forms and the saddle-point system.

Matrices are assembled in the full velocity numbering of :class:`DofMap`
(free DOFs first, boundary-edge DOFs last) and then split. Element
contributions are accumulated as coordinate triples in a fixed element order,
so assembled matrices are reproducible bit-for-bit.

Trilinear forms, written with the weak vorticity omega(v) = (grad_w v)_yx - (grad_w v)_xy
and the 2D cross product a x b = a_x b_y - a_y b_x:

* robust:    c(v, w, z)    = (omega(v), R_T w x R_T z)
* classical: c^(w, v, z)   = (omega(w), v_0 x z_0)

Both reduce to the tensor definitions (grad_w v y, z) - (grad_w v z, y).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .weakops import ElementOps, WgField, _eval_vector, mean_row, project_Qb

logger = logging.getLogger(__name__)

ROBUST = "robust"
CLASSICAL = "classical"
ALGORITHMS = (ROBUST, CLASSICAL)


def _check_variant(variant: str) -> str:
    if variant not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {variant!r}; expected one of {ALGORITHMS}")
    return variant


def _scatter_matrix(ops: ElementOps, local: np.ndarray, row_dofs=None, n_rows=None) -> sp.csr_matrix:
    dm = ops.dofmap
    col_dofs = dm.cell_dofs
    row_dofs = col_dofs if row_dofs is None else row_dofs
    n_rows = dm.n_full if n_rows is None else n_rows
    rows = np.broadcast_to(row_dofs[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(col_dofs[:, None, :], local.shape).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n_rows, dm.n_full)).tocsr()


def _scatter_vector(ops: ElementOps, local: np.ndarray) -> np.ndarray:
    out = np.zeros(ops.dofmap.n_full)
    np.add.at(out, ops.dofmap.cell_dofs.ravel(), local.ravel())
    return out


def viscous_local(ops: ElementOps, nu: float) -> np.ndarray:
    g = ops.G_full
    local = np.einsum("tcil,tij,tcjm->tlm", g, ops.mass_rt, g, optimize=True)
    # remove the roundoff asymmetry of the triple product
    return nu * 0.5 * (local + local.transpose(0, 2, 1))


def assemble_viscous(ops: ElementOps, nu: float) -> sp.csr_matrix:
    """Full-numbering matrix of a(v, w) = nu (grad_w v, grad_w w)."""
    return _scatter_matrix(ops, viscous_local(ops, nu))


def assemble_divergence(ops: ElementOps) -> sp.csr_matrix:
    """(n_p, n_full) matrix B with q^T B v = (div_w v, q)."""
    local = np.einsum("tab,tbl->tal", ops.mass_p, ops.D)
    return _scatter_matrix(ops, local, row_dofs=ops.dofmap.cell_pressure_dofs, n_rows=ops.dofmap.n_p)


def _carriers(ops: ElementOps, variant: str) -> np.ndarray:
    """(nt, nq, 2, nloc) map from local DOFs to the advected/tested vector fields."""
    return ops.form_R if _check_variant(variant) == ROBUST else ops.form_V0


def convection_local(ops: ElementOps, state: np.ndarray, variant: str = ROBUST):
    """Local Jacobian blocks of the convective term at ``state`` (full vector).

    Returns (C1, C2, n) where, for test function z (row) and direction d (col),
    C1 realises c(u, d, z), C2 realises c(d, u, z), and n = c(u, u, z).
    For the classical form the roles follow c^(w, v, z) with w the vorticity
    argument: C1 is c^(u, d, z) and C2 is c^(d, u, z).
    """
    carrier = _carriers(ops, variant)
    w = ops.form.weights
    loc = ops.local(state)
    omega = np.einsum("tql,tl->tq", ops.form_curl, loc)
    vel = np.einsum("tqdl,tl->tqd", carrier, loc)
    wo = w * omega
    c1 = np.einsum("tq,tqj,tqi->tij", wo, carrier[:, :, 0], carrier[:, :, 1], optimize=True)
    c1 -= np.einsum("tq,tqj,tqi->tij", wo, carrier[:, :, 1], carrier[:, :, 0], optimize=True)
    # z-side factor of (u x z): u_x z_y - u_y z_x
    cross_u = vel[..., 0, None] * carrier[:, :, 1] - vel[..., 1, None] * carrier[:, :, 0]
    c2 = np.einsum("tq,tqj,tqi->tij", w, ops.form_curl, cross_u, optimize=True)
    n = np.einsum("tq,tqi->ti", wo, cross_u)
    return c1, c2, n


def assemble_convection_jacobian(ops: ElementOps, state, variant: str = ROBUST):
    """Sparse (C1, C2) in full numbering and the convective residual vector."""
    state = state.full() if isinstance(state, WgField) else np.asarray(state)
    c1, c2, n = convection_local(ops, state, variant)
    return _scatter_matrix(ops, c1), _scatter_matrix(ops, c2), _scatter_vector(ops, n)


def apply_convection(ops: ElementOps, state, v_in, variant: str = ROBUST) -> np.ndarray:
    """Vector z -> c(state, v_in, z) (robust) or c^(state, v_in, z) (classical)."""
    state = state.full() if isinstance(state, WgField) else np.asarray(state)
    v_in = v_in.full() if isinstance(v_in, WgField) else np.asarray(v_in)
    carrier = _carriers(ops, variant)
    omega = np.einsum("tql,tl->tq", ops.form_curl, ops.local(state))
    vel = np.einsum("tqdl,tl->tqd", carrier, ops.local(v_in))
    cross = vel[..., 0, None] * carrier[:, :, 1] - vel[..., 1, None] * carrier[:, :, 0]
    return _scatter_vector(ops, np.einsum("tq,tq,tqi->ti", ops.form.weights, omega, cross))


def apply_convection_robust(ops: ElementOps, state, v_in) -> np.ndarray:
    return apply_convection(ops, state, v_in, ROBUST)


def apply_convection_classical(ops: ElementOps, state, v_in) -> np.ndarray:
    return apply_convection(ops, state, v_in, CLASSICAL)


def trilinear(ops: ElementOps, v, w, z, variant: str = ROBUST) -> float:
    """Value of c(v, w, z) (robust) or c^(v, w, z) (classical)."""
    z = z.full() if isinstance(z, WgField) else np.asarray(z)
    return float(apply_convection(ops, v, w, variant) @ z)


def assemble_body_force(ops: ElementOps, f: Callable | None, variant: str = ROBUST, degree: int | None = None) -> np.ndarray:
    """Full-numbering load vector (f, R_T v) (robust) or (f, v_0) (classical)."""
    dm = ops.dofmap
    if f is None:
        return np.zeros(dm.n_full)
    table = ops.data_table(degree)
    carrier = ops.data_R(degree) if _check_variant(variant) == ROBUST else ops.data_V0(degree)
    vals = _eval_vector(f, table.points)
    local = np.einsum("tq,tqd,tqdl->tl", table.weights, vals, carrier, optimize=True)
    return _scatter_vector(ops, local)


def boundary_values(ops: ElementOps, g: Callable | None, degree: int | None = None, check: bool = True) -> np.ndarray:
    """Boundary-edge coefficients Q_b g, ordered as the boundary part of the full vector."""
    dm = ops.dofmap
    mesh = ops.mesh
    out = np.zeros(dm.n_b)
    if g is None:
        return out
    edges = mesh.boundary_edges
    coeffs = project_Qb(ops, g, edges=edges, degree=degree)
    out[dm.edge_dofs(edges) - dm.n_u] = coeffs
    if check:
        flux = boundary_flux(ops, out)
        if abs(flux) > 1e-10:
            logger.warning("boundary data violates compatibility: net outward flux %.3e", flux)
    return out


def boundary_flux(ops: ElementOps, boundary: np.ndarray) -> float:
    """Net outward flux of the discrete boundary data; only the constant Legendre mode contributes."""
    dm = ops.dofmap
    mesh = ops.mesh
    edges = mesh.boundary_edges
    mean = boundary[dm.edge_dofs(edges)[:, :, 0] - dm.n_u]  # (nbe, 2)
    tri = mesh.edge_triangles[edges, 0]
    slot = np.argmax(mesh.triangle_edges[tri] == edges[:, None], axis=1)
    sign = mesh.triangle_edge_signs[tri, slot]
    normal = mesh.edge_normals[edges] * sign[:, None]
    return float(np.sum(mesh.edge_lengths[edges] * np.einsum("ed,ed->e", mean, normal)))


def constant_pressure_mode(dofmap) -> np.ndarray:
    """Coefficients of the constant pressure 1 (the first scaled monomial on every element)."""
    z = np.zeros((dofmap.mesh.n_triangles, dofmap.n_poly))
    z[:, 0] = 1.0
    return z.ravel()


@dataclass
class SaddleSystem:
    """Linear saddle-point system on the free velocity DOFs.

    Block form with a Lagrange multiplier enforcing a mean-zero pressure::

        [ A   -B^T  0 ] [u]   [rhs_u]
        [-B    0    m ] [p] = [rhs_p]
        [ 0    m^T  0 ] [l]   [  0  ]

    ``A_fb`` and ``B_b`` couple the free DOFs to the prescribed boundary-edge
    coefficients ``boundary``; their contribution is held in ``bc_lift`` and is
    already included in the right-hand sides.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    mean_row: np.ndarray
    A_fb: sp.csr_matrix
    B_b: sp.csr_matrix
    bc_lift: np.ndarray
    boundary: np.ndarray
    pressure_kernel: np.ndarray | None = None

    @property
    def n_u(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.B.shape[0]

    def matrix(self) -> sp.csc_matrix:
        m = sp.csr_matrix(self.mean_row[:, None])
        return sp.bmat([[self.A, -self.B.T, None], [-self.B, None, m], [None, m.T, None]], format="csc")

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs_u, self.rhs_p, [0.0]])


def assemble_stokes(
    ops: ElementOps,
    nu: float,
    f: Callable | None = None,
    g: Callable | None = None,
    variant: str = ROBUST,
    A_full: sp.csr_matrix | None = None,
    B_full: sp.csr_matrix | None = None,
) -> SaddleSystem:
    """Saddle system of the Stokes part with Dirichlet data ``g`` eliminated."""
    dm = ops.dofmap
    A_full = assemble_viscous(ops, nu) if A_full is None else A_full
    B_full = assemble_divergence(ops) if B_full is None else B_full
    F = assemble_body_force(ops, f, variant)
    system = SaddleSystem(
        A=A_full[: dm.n_u, : dm.n_u],
        B=B_full[:, : dm.n_u],
        rhs_u=F[: dm.n_u],
        rhs_p=np.zeros(dm.n_p),
        mean_row=mean_row(ops),
        A_fb=A_full[: dm.n_u, dm.n_u :],
        B_b=B_full[:, dm.n_u :],
        bc_lift=np.zeros(dm.n_u + dm.n_p),
        boundary=np.zeros(dm.n_b),
        pressure_kernel=constant_pressure_mode(dm),
    )
    return apply_dirichlet(system, ops, g)


def apply_dirichlet(system: SaddleSystem, ops: ElementOps, g: Callable | None) -> SaddleSystem:
    """Prescribe boundary-edge coefficients Q_b g and move their coupling to the right-hand side."""
    n_u = system.n_u
    gb = boundary_values(ops, g)
    lift = np.concatenate([-(system.A_fb @ gb), system.B_b @ gb])
    return SaddleSystem(
        A=system.A,
        B=system.B,
        rhs_u=system.rhs_u - system.bc_lift[:n_u] + lift[:n_u],
        rhs_p=system.rhs_p - system.bc_lift[n_u:] + lift[n_u:],
        mean_row=system.mean_row,
        A_fb=system.A_fb,
        B_b=system.B_b,
        bc_lift=lift,
        boundary=gb,
        pressure_kernel=system.pressure_kernel,
    )
