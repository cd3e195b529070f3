"""Triangular meshes: topology, structured generators, red refinement and text I/O.

Edges are stored with a fixed global orientation (lower vertex index first).
The global edge normal is the unit tangent rotated by -90 degrees; for a
counter-clockwise triangle the outward normal on a local edge agrees with the
global one exactly when the triangle traverses that edge from its lower to its
higher vertex.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

logger = logging.getLogger(__name__)

MARKER_WALL = 1
MARKER_INFLOW = 2
MARKER_OUTFLOW = 3


class MeshError(ValueError):
    """Raised for invalid mesh input or a malformed mesh file."""


@dataclass(frozen=True)
class Mesh:
    """Immutable triangulation.

    Attributes:
        vertices: (nv, 2) float coordinates.
        triangles: (nt, 3) vertex indices, counter-clockwise.
        edges: (ne, 2) vertex indices, lower index first.
        triangle_edges: (nt, 3) edge index of local edge j (the edge opposite
            local vertex j).
        triangle_edge_signs: (nt, 3) +1 where the triangle's outward normal
            equals the global edge normal, -1 otherwise.
        boundary_edges: sorted edge indices lying on the boundary.
        boundary_markers: integer marker per entry of ``boundary_edges``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    triangle_edges: np.ndarray
    triangle_edge_signs: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray
    edge_triangles: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def is_boundary_edge(self) -> np.ndarray:
        mask = np.zeros(self.n_edges, dtype=bool)
        mask[self.boundary_edges] = True
        return mask

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.is_boundary_edge)

    @property
    def corners(self) -> np.ndarray:
        """(nt, 3, 2) vertex coordinates of every triangle."""
        return self.vertices[self.triangles]

    @property
    def areas(self) -> np.ndarray:
        return 0.5 * _cross2(self.corners)

    @property
    def diameters(self) -> np.ndarray:
        c = self.corners
        lengths = np.linalg.norm(c[:, [1, 2, 0]] - c[:, [2, 0, 1]], axis=-1)
        return lengths.max(axis=1)

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    @property
    def edge_lengths(self) -> np.ndarray:
        v = self.vertices[self.edges]
        return np.linalg.norm(v[:, 1] - v[:, 0], axis=-1)

    @property
    def edge_normals(self) -> np.ndarray:
        """Global unit normals, (ne, 2)."""
        v = self.vertices[self.edges]
        t = v[:, 1] - v[:, 0]
        t /= np.linalg.norm(t, axis=-1, keepdims=True)
        return np.stack([t[:, 1], -t[:, 0]], axis=-1)

    def area(self) -> float:
        return float(self.areas.sum())

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_triangles


def _cross2(c: np.ndarray) -> np.ndarray:
    a = c[..., 1, :] - c[..., 0, :]
    b = c[..., 2, :] - c[..., 0, :]
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def from_triangles(vertices, triangles, boundary_markers: dict | None = None) -> Mesh:
    """Build a mesh from vertex coordinates and CCW triangles.

    ``boundary_markers`` maps sorted vertex pairs ``(a, b)`` to a marker; boundary
    edges not listed get :data:`MARKER_WALL`.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must have shape (nv, 2)")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("triangles must have shape (nt, 3)")
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise MeshError("triangle vertex index out of range")
    areas = 0.5 * _cross2(vertices[triangles])
    if np.any(areas <= 0):
        raise MeshError(f"{int(np.sum(areas <= 0))} triangles with non-positive signed area")

    nt = len(triangles)
    # local edge j is opposite local vertex j, traversed CCW from (j+1) to (j+2)
    tail = triangles[:, [1, 2, 0]]
    head = triangles[:, [2, 0, 1]]
    lo = np.minimum(tail, head).ravel()
    hi = np.maximum(tail, head).ravel()
    pairs = np.stack([lo, hi], axis=1)
    edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(nt, 3)
    if np.any(counts > 2):
        raise MeshError("non-manifold edge shared by more than two triangles")
    signs = np.where(tail < head, 1, -1).astype(np.int8)

    edge_triangles = np.full((len(edges), 2), -1, dtype=np.int64)
    flat_t = np.repeat(np.arange(nt), 3)
    flat_e = inverse.ravel()
    order = np.argsort(flat_e, kind="stable")
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_e[order][1:] != flat_e[order][:-1]
    edge_triangles[flat_e[order][first], 0] = flat_t[order][first]
    edge_triangles[flat_e[order][~first], 1] = flat_t[order][~first]
    # orientation consistency: an interior edge has opposite signs in its two triangles
    interior = counts == 2
    if np.any(interior):
        s = np.zeros((len(edges), 2), dtype=np.int64)
        s_flat = signs.ravel()
        s[flat_e[order][first], 0] = s_flat[order][first]
        s[flat_e[order][~first], 1] = s_flat[order][~first]
        if np.any(s[interior, 0] == s[interior, 1]):
            raise MeshError("inconsistently oriented neighbouring triangles")

    boundary = np.flatnonzero(counts == 1)
    markers = np.full(len(boundary), MARKER_WALL, dtype=np.int64)
    if boundary_markers:
        lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(edges[boundary])}
        for (a, b), m in boundary_markers.items():
            key = (min(a, b), max(a, b))
            if key not in lookup:
                raise MeshError(f"edge {key} is not a boundary edge of the triangulation")
            markers[lookup[key]] = int(m)

    return Mesh(
        vertices=vertices,
        triangles=triangles,
        edges=edges.astype(np.int64),
        triangle_edges=inverse.astype(np.int64),
        triangle_edge_signs=signs,
        boundary_edges=boundary,
        boundary_markers=markers,
        edge_triangles=edge_triangles,
    )


def _grid(nx: int, ny: int, origin, extent) -> tuple[np.ndarray, np.ndarray]:
    x = origin[0] + extent[0] * np.arange(nx + 1) / nx
    y = origin[1] + extent[1] * np.arange(ny + 1) / ny
    xx, yy = np.meshgrid(x, y)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (i + j * (nx + 1)).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    # diagonal from lower-left to upper-right
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return vertices, triangles


def generate_uniform_square(n: int, origin=(0.0, 0.0), extent=1.0) -> Mesh:
    """Uniform n x n grid of squares, each cut by its lower-left/upper-right diagonal.

    ``extent`` is a scalar or a (width, height) pair.
    """
    if int(n) != n or n < 1:
        raise MeshError(f"n must be a positive integer, got {n!r}")
    ext = np.broadcast_to(np.asarray(extent, dtype=float), (2,))
    if np.any(ext <= 0):
        raise MeshError(f"extent must be positive, got {extent!r}")
    vertices, triangles = _grid(int(n), int(n), origin, ext)
    return from_triangles(vertices, triangles)


def generate_lshape(level: int = 0, m: int = 2) -> Mesh:
    """Mesh of (-1,1)^2 minus [0,1]x[-1,0].

    Level 0 splits each of the three unit squares into m x m squares with two
    triangles each; every further level is one red refinement.
    """
    if int(level) != level or level < 0:
        raise MeshError(f"level must be a nonnegative integer, got {level!r}")
    if int(m) != m or m < 1:
        raise MeshError(f"m must be a positive integer, got {m!r}")
    vertices, triangles = _grid(2 * m, 2 * m, (-1.0, -1.0), (2.0, 2.0))
    centroids = vertices[triangles].mean(axis=1)
    keep = ~((centroids[:, 0] > 0) & (centroids[:, 1] < 0))
    triangles = triangles[keep]
    used = np.unique(triangles)
    renumber = np.full(len(vertices), -1, dtype=np.int64)
    renumber[used] = np.arange(len(used))
    mesh = from_triangles(vertices[used], renumber[triangles])
    for _ in range(int(level)):
        mesh = refine_uniform(mesh)
    return mesh


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle is split into four via its edge midpoints."""
    nv = mesh.n_vertices
    mids = mesh.vertices[mesh.edges].mean(axis=1)
    vertices = np.vstack([mesh.vertices, mids])
    t = mesh.triangles
    te = mesh.triangle_edges + nv
    # te[:, j] is the midpoint opposite local vertex j
    m_bc, m_ca, m_ab = te[:, 0], te[:, 1], te[:, 2]
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    children = np.stack(
        [
            np.column_stack([a, m_ab, m_ca]),
            np.column_stack([m_ab, b, m_bc]),
            np.column_stack([m_ca, m_bc, c]),
            np.column_stack([m_ab, m_bc, m_ca]),
        ],
        axis=1,
    ).reshape(-1, 3)
    markers = {}
    for e, marker in zip(mesh.boundary_edges, mesh.boundary_markers):
        if marker == MARKER_WALL:
            continue
        lo, hi = mesh.edges[e]
        mid = nv + e
        markers[(lo, mid)] = marker
        markers[(mid, hi)] = marker
    return from_triangles(vertices, children, markers)


def boundary_edge_pairs(mesh: Mesh) -> Iterable[tuple[int, int, int]]:
    for e, marker in zip(mesh.boundary_edges, mesh.boundary_markers):
        a, b = mesh.edges[e]
        yield int(a), int(b), int(marker)


def write_mesh(mesh: Mesh, stream: TextIO | None = None) -> str:
    """Write the canonical text form; returns the text (and writes it to ``stream``)."""
    out = io.StringIO()
    out.write(f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_edges)}\n")
    for x, y in mesh.vertices:
        out.write(f"{float(x)!r} {float(y)!r}\n")
    for i, j, k in mesh.triangles:
        out.write(f"{i} {j} {k}\n")
    for a, b, marker in boundary_edge_pairs(mesh):
        out.write(f"{a} {b} {marker}\n")
    text = out.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def read_mesh(stream: TextIO | str) -> Mesh:
    """Parse the whitespace-separated mesh format.

    Clockwise triangles are reordered to counter-clockwise with a warning.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = [
        (num, line.split())
        for num, line in enumerate(stream, start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not lines:
        raise MeshError("empty mesh file")

    def ints(num, tokens, count, what):
        if len(tokens) != count:
            raise MeshError(f"line {num}: expected {count} integers for {what}, got {len(tokens)} fields")
        try:
            return [int(t) for t in tokens]
        except ValueError:
            raise MeshError(f"line {num}: non-integer field in {what}") from None

    num, header = lines[0]
    nv, nt, nbe = ints(num, header, 3, "header 'nv nt nbe'")
    if nv < 3 or nt < 1 or nbe < 0:
        raise MeshError(f"line {num}: invalid header counts {nv} {nt} {nbe}")
    if len(lines) != 1 + nv + nt + nbe:
        raise MeshError(f"expected {1 + nv + nt + nbe} data lines, found {len(lines)}")

    vertices = np.empty((nv, 2))
    for i, (num, tok) in enumerate(lines[1 : 1 + nv]):
        if len(tok) != 2:
            raise MeshError(f"line {num}: expected 'x y'")
        try:
            vertices[i] = [float(tok[0]), float(tok[1])]
        except ValueError:
            raise MeshError(f"line {num}: non-numeric vertex coordinate") from None

    triangles = np.empty((nt, 3), dtype=np.int64)
    for i, (num, tok) in enumerate(lines[1 + nv : 1 + nv + nt]):
        tri = ints(num, tok, 3, "triangle 'i j k'")
        if min(tri) < 0 or max(tri) >= nv:
            raise MeshError(f"line {num}: vertex index out of range [0, {nv})")
        area = 0.5 * _cross2(vertices[tri])
        if area == 0 or len(set(tri)) < 3:
            raise MeshError(f"line {num}: degenerate triangle with zero area")
        if area < 0:
            logger.warning("line %d: clockwise triangle reordered to counter-clockwise", num)
            tri = [tri[0], tri[2], tri[1]]
        triangles[i] = tri

    markers = {}
    for num, tok in lines[1 + nv + nt :]:
        a, b, marker = ints(num, tok, 3, "boundary edge 'a b marker'")
        if min(a, b) < 0 or max(a, b) >= nv:
            raise MeshError(f"line {num}: vertex index out of range [0, {nv})")
        markers[(min(a, b), max(a, b)), num] = marker

    try:
        mesh = from_triangles(vertices, triangles)
    except MeshError as exc:
        raise MeshError(f"invalid triangulation: {exc}") from None
    lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(mesh.edges[mesh.boundary_edges])}
    marker_array = mesh.boundary_markers.copy()
    for (key, num), marker in markers.items():
        if key not in lookup:
            raise MeshError(f"line {num}: edge {key} is not a boundary edge of the triangulation")
        marker_array[lookup[key]] = marker
    return Mesh(
        vertices=mesh.vertices,
        triangles=mesh.triangles,
        edges=mesh.edges,
        triangle_edges=mesh.triangle_edges,
        triangle_edge_signs=mesh.triangle_edge_signs,
        boundary_edges=mesh.boundary_edges,
        boundary_markers=marker_array,
        edge_triangles=mesh.edge_triangles,
    )
