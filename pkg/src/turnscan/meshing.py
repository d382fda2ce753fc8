"""Poisson indicator-field meshing on a regular grid.

The oriented cloud's normals are splatted into a vector grid V, the
indicator field chi is recovered from the Poisson equation lap(chi) =
div(V) under zero-Dirichlet boundaries, and the isosurface at the mean
field value over the input points is extracted with marching cubes.

With outward-pointing input normals, chi comes out negative inside the
shape, so "inside" always means "field value below the iso level"; the
same convention holds for signed-distance inputs to marching_cubes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._mc_tables import EDGE_TABLE, TRI_TABLE
from .cloud import KdIndex
from .errors import MissingNormals, ValidationError
from .geometry import Array, PointCloud, TriangleMesh

log = logging.getLogger(__name__)


@dataclass
class ScalarGrid:
    """Regular scalar grid; node (i,j,k) sits at origin + spacing*(i,j,k)."""

    dims: tuple[int, int, int]
    origin: Array
    spacing: float
    values: Array

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.spacing <= 0:
            raise ValidationError("grid spacing must be positive")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.dims:
            raise ValidationError(f"values shape {v.shape} != dims {self.dims}")
        self.values = v


@dataclass
class VectorGrid:
    """Regular grid of 3-vectors with the same geometry as ScalarGrid."""

    dims: tuple[int, int, int]
    origin: Array
    spacing: float
    values: Array

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.spacing <= 0:
            raise ValidationError("grid spacing must be positive")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.dims + (3,):
            raise ValidationError(f"values shape {v.shape} != dims {self.dims} + (3,)")
        self.values = v


class PoissonInfo(NamedTuple):
    converged: bool
    iterations: int
    residual: float


def _normalize_dims(dims) -> tuple[int, int, int]:
    if np.isscalar(dims):
        dims = (dims, dims, dims)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 8 for d in dims):
        raise ValidationError("grid needs at least 8 nodes per axis")
    return dims


def splat_normal_field(pts: PointCloud, dims, margin_mm: float) -> VectorGrid:
    """Distribute each point's normal onto its 8 surrounding grid nodes
    with trilinear weights, normalized by the total point count.

    The grid covers the cloud's bounding box expanded by margin_mm on
    every side, with a single scalar spacing (the largest per-axis
    requirement) and the box centered in the grid.
    """
    if pts.normals is None:
        raise MissingNormals("normal splatting needs oriented normals")
    if len(pts) == 0:
        raise MissingNormals("cannot splat an empty cloud")
    dims = _normalize_dims(dims)
    if margin_mm < 0:
        raise ValidationError("margin must be nonnegative")
    lo = pts.positions.min(axis=0) - margin_mm
    hi = pts.positions.max(axis=0) + margin_mm
    extent = hi - lo
    spacing = float(np.max(extent / (np.array(dims) - 1)))
    if spacing <= 0:
        spacing = 1.0
    center = (lo + hi) / 2
    origin = center - spacing * (np.array(dims) - 1) / 2
    u = (pts.positions - origin) / spacing
    base = np.floor(u).astype(np.int64)
    base = np.clip(base, 0, np.array(dims) - 2)
    frac = u - base
    nx, ny, nz = dims
    flat = np.zeros((nx * ny * nz, 3))
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                w = wx * wy * wz
                idx = ((base[:, 0] + dx) * ny + base[:, 1] + dy) * nz + base[:, 2] + dz
                for c in range(3):
                    flat[:, c] += np.bincount(
                        idx, weights=w * pts.normals[:, c], minlength=len(flat)
                    )
    values = flat.reshape(nx, ny, nz, 3) / len(pts)
    return VectorGrid(dims, origin, spacing, values)


def _divergence(v: VectorGrid) -> Array:
    """Central-difference divergence; zero on the boundary layer."""
    h2 = 2.0 * v.spacing
    f = v.values
    div = np.zeros(v.dims)
    div[1:-1, 1:-1, 1:-1] = (
        (f[2:, 1:-1, 1:-1, 0] - f[:-2, 1:-1, 1:-1, 0])
        + (f[1:-1, 2:, 1:-1, 1] - f[1:-1, :-2, 1:-1, 1])
        + (f[1:-1, 1:-1, 2:, 2] - f[1:-1, 1:-1, :-2, 2])
    ) / h2
    return div


def solve_poisson(
    v: VectorGrid, tol: float, max_iter: int
) -> tuple[ScalarGrid, PoissonInfo]:
    """Solve lap(chi) = div(V) with chi = 0 on the grid boundary.

    Conjugate gradient on the 7-point Laplacian, fixed reduction order,
    run to relative residual <= tol or max_iter (flagged, partial field
    still returned).
    """
    if tol <= 0:
        raise ValidationError("tolerance must be positive")
    if max_iter < 1:
        raise ValidationError("need at least one iteration")
    h2 = v.spacing * v.spacing
    b = -_divergence(v)  # A = -lap is positive definite under Dirichlet

    def apply_a(x: Array) -> Array:
        out = np.zeros_like(x)
        out[1:-1, 1:-1, 1:-1] = (
            6.0 * x[1:-1, 1:-1, 1:-1]
            - x[:-2, 1:-1, 1:-1]
            - x[2:, 1:-1, 1:-1]
            - x[1:-1, :-2, 1:-1]
            - x[1:-1, 2:, 1:-1]
            - x[1:-1, 1:-1, :-2]
            - x[1:-1, 1:-1, 2:]
        ) / h2
        return out

    x = np.zeros(v.dims)
    r = b.copy()
    r[0, :, :] = r[-1, :, :] = 0.0
    r[:, 0, :] = r[:, -1, :] = 0.0
    r[:, :, 0] = r[:, :, -1] = 0.0
    b_norm = float(np.linalg.norm(r))
    if b_norm == 0.0:
        return ScalarGrid(v.dims, v.origin, v.spacing, x), PoissonInfo(True, 0, 0.0)
    p = r.copy()
    rs_old = float(np.dot(r.ravel(), r.ravel()))
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        ap = apply_a(p)
        alpha = rs_old / float(np.dot(p.ravel(), ap.ravel()))
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.dot(r.ravel(), r.ravel()))
        if np.sqrt(rs_new) <= tol * b_norm:
            converged = True
            break
        p = r + (rs_new / rs_old) * p
        rs_old = rs_new
    residual = float(np.sqrt(float(np.dot(r.ravel(), r.ravel())))) / b_norm
    if not converged:
        log.warning(
            "poisson solve stopped at %d iterations, residual %.3g", iterations, residual
        )
    return ScalarGrid(v.dims, v.origin, v.spacing, x), PoissonInfo(
        converged, iterations, residual
    )


# Cube corners in the table convention: z-level-major, circular (x, y).
_CORNERS = (
    (0, 0, 0),
    (1, 0, 0),
    (1, 1, 0),
    (0, 1, 0),
    (0, 0, 1),
    (1, 0, 1),
    (1, 1, 1),
    (0, 1, 1),
)
# Edge -> (base node offset, axis, low corner, high corner); the low/high
# corners are the canonical -/+ ends of the edge along its axis.
_EDGES = (
    ((0, 0, 0), 0, 0, 1),
    ((1, 0, 0), 1, 1, 2),
    ((0, 1, 0), 0, 3, 2),
    ((0, 0, 0), 1, 0, 3),
    ((0, 0, 1), 0, 4, 5),
    ((1, 0, 1), 1, 5, 6),
    ((0, 1, 1), 0, 7, 6),
    ((0, 0, 1), 1, 4, 7),
    ((0, 0, 0), 2, 0, 4),
    ((1, 0, 0), 2, 1, 5),
    ((1, 1, 0), 2, 2, 6),
    ((0, 1, 0), 2, 3, 7),
)


def marching_cubes(grid: ScalarGrid, iso: float) -> TriangleMesh:
    """Standard 256-case isosurface extraction with linear interpolation.

    Vertices on shared cell edges are welded (one vertex per crossing
    edge), so the result is watertight away from the grid boundary.
    Triangles are wound so their normals point toward increasing field
    values ("inside" is below the iso level).
    """
    nx, ny, nz = grid.dims
    values = grid.values
    inside = values < iso
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint16)
    for bit, (dx, dy, dz) in enumerate(_CORNERS):
        case |= (
            inside[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz].astype(
                np.uint16
            )
            << bit
        )
    active = np.argwhere((case > 0) & (case < 255))
    vertex_ids: dict[tuple[int, int, int, int], int] = {}
    vertices: list[Array] = []
    triangles: list[tuple[int, int, int]] = []

    def edge_vertex(ci, cj, ck, edge) -> int:
        (ox, oy, oz), axis, lo_corner, hi_corner = _EDGES[edge]
        key = (ci + ox, cj + oy, ck + oz, axis)
        vid = vertex_ids.get(key)
        if vid is not None:
            return vid
        lc = _CORNERS[lo_corner]
        v_lo = values[ci + lc[0], cj + lc[1], ck + lc[2]]
        hc = _CORNERS[hi_corner]
        v_hi = values[ci + hc[0], cj + hc[1], ck + hc[2]]
        denom = v_hi - v_lo
        t = 0.5 if denom == 0.0 else (iso - v_lo) / denom
        t = min(max(t, 0.0), 1.0)
        node = np.array(key[:3], dtype=np.float64)
        node[axis] += t
        vertices.append(grid.origin + grid.spacing * node)
        vid = len(vertices) - 1
        vertex_ids[key] = vid
        return vid

    for ci, cj, ck in active:
        tri = TRI_TABLE[case[ci, cj, ck]]
        for k in range(0, len(tri), 3):
            a = edge_vertex(ci, cj, ck, tri[k])
            b = edge_vertex(ci, cj, ck, tri[k + 1])
            c = edge_vertex(ci, cj, ck, tri[k + 2])
            if a == b or b == c or a == c:
                continue
            # table order is clockwise seen from outside; flip it
            triangles.append((a, c, b))
    if not vertices:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriangleMesh(np.array(vertices), np.array(triangles, dtype=np.int64))


def sample_trilinear(grid: ScalarGrid, points: Array) -> Array:
    """Trilinearly interpolated field values at world-space points
    (clamped to the grid)."""
    u = (np.asarray(points, dtype=np.float64) - grid.origin) / grid.spacing
    u = np.clip(u, 0.0, np.array(grid.dims, dtype=np.float64) - 1.0)
    base = np.minimum(u.astype(np.int64), np.array(grid.dims) - 2)
    frac = u - base
    out = np.zeros(len(u))
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                out += (
                    wx
                    * wy
                    * wz
                    * grid.values[base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz]
                )
    return out


def largest_component(mesh: TriangleMesh) -> TriangleMesh:
    """Keep the connected component with the most vertices (ties go to
    the component containing the smallest vertex index)."""
    if len(mesh.triangles) == 0:
        return mesh
    n = len(mesh.vertices)
    parent = np.arange(n)

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for a, b, c in mesh.triangles:
        ra, rb, rc = find(a), find(b), find(c)
        lead = min(ra, rb, rc)
        parent[ra] = parent[rb] = parent[rc] = lead
    roots = np.array([find(i) for i in range(n)])
    used = np.zeros(n, dtype=bool)
    used[mesh.triangles.ravel()] = True
    counts = np.bincount(roots[used], minlength=n)
    winner = int(np.argmax(counts))  # argmax takes the smallest index on ties
    keep_vertex = (roots == winner) & used
    remap = -np.ones(n, dtype=np.int64)
    remap[keep_vertex] = np.arange(int(keep_vertex.sum()))
    keep_tri = keep_vertex[mesh.triangles[:, 0]]
    tris = remap[mesh.triangles[keep_tri]]
    colors = None if mesh.vertex_colors is None else mesh.vertex_colors[keep_vertex]
    return TriangleMesh(mesh.vertices[keep_vertex], tris, vertex_colors=colors)


def refine_vertices(
    mesh: TriangleMesh,
    pts: PointCloud,
    k: int = 48,
    max_step_mm: float = 1.0,
    normal_gate: float = 0.7,
) -> TriangleMesh:
    """Pull each mesh vertex onto the local tangent plane of its nearest
    oriented input points.

    Isosurfaces of a smoothed indicator field flare a fraction of a cell
    outward near sharp creases; projecting vertices back onto the measured
    data removes that bias without touching connectivity. Neighbors are
    inverse-distance weighted; those whose normals disagree with the local
    consensus direction by more than the gate (cosine threshold) are
    dropped so creases keep both faces flat. Moves are capped at
    max_step_mm along the consensus normal.
    """
    if pts.normals is None:
        raise MissingNormals("vertex refinement needs oriented normals")
    if len(pts) == 0 or len(mesh.vertices) == 0:
        return mesh
    if k < 1:
        raise ValidationError("k must be >= 1")
    if max_step_mm <= 0:
        raise ValidationError("step cap must be positive")
    if not -1.0 <= normal_gate < 1.0:
        raise ValidationError("normal gate must lie in [-1, 1)")
    dist, idx = KdIndex(pts.positions).query(mesh.vertices, k)
    neighbors = pts.positions[idx]
    normals = pts.normals[idx]
    weights = 1.0 / np.maximum(dist, 1e-9)
    weights /= weights.sum(axis=1, keepdims=True)

    def consensus(w):
        n = (normals * w[:, :, None]).sum(axis=1)
        length = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(length > 1e-12, length, 1.0)

    direction = consensus(weights)
    agree = np.einsum("ijk,ik->ij", normals, direction) > normal_gate
    agree[~agree.any(axis=1)] = True
    weights = weights * agree
    weights /= weights.sum(axis=1, keepdims=True)
    direction = consensus(weights)
    anchor = (neighbors * weights[:, :, None]).sum(axis=1)
    step = np.einsum("ij,ij->i", anchor - mesh.vertices, direction)
    step = np.clip(step, -max_step_mm, max_step_mm)
    moved = mesh.vertices + step[:, None] * direction
    return TriangleMesh(moved, mesh.triangles, vertex_colors=mesh.vertex_colors)


def reconstruct_mesh(
    pts: PointCloud,
    dims,
    tol: float = 1e-6,
    max_iter: int = 2000,
    margin_mm: float | None = None,
) -> TriangleMesh:
    """Oriented points to watertight mesh: splat, solve, extract.

    The iso level is the mean of the solved field sampled at the input
    points; only the largest connected component is returned.
    """
    if pts.normals is None:
        raise MissingNormals("reconstruction needs oriented normals")
    dims = _normalize_dims(dims)
    if margin_mm is None:
        extent = pts.positions.max(axis=0) - pts.positions.min(axis=0)
        margin_mm = 0.10 * float(np.max(extent))
    field = splat_normal_field(pts, dims, margin_mm)
    chi, info = solve_poisson(field, tol, max_iter)
    if not info.converged:
        log.warning("indicator field solve did not reach tolerance %.1e", tol)
    iso = float(np.mean(sample_trilinear(chi, pts.positions)))
    return largest_component(marching_cubes(chi, iso))
