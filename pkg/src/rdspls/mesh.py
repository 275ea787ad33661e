"""Shishkin partitions, tensor triangulations of the unit square and nested
uniform-refinement hierarchies.

Nodes are numbered lexicographically by ``(y, x)``: node ``(i, j)`` with
``x = px[i]``, ``y = py[j]`` has index ``j * (Nx + 1) + i``.  Every cell is
split by its top-left to bottom-right diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp

Geometry = Literal["uniform", "shishkin"]


@dataclass(frozen=True)
class Partition1D:
    """Ordered points ``0 = x_0 < ... < x_N = 1``.

    ``lam`` is the Shishkin transition point, ``None`` for uniform partitions.
    """

    points: np.ndarray
    lam: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("a partition needs at least two points")
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise ValueError("partition must start at 0 and end at 1")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("partition points must be strictly increasing")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n_intervals(self) -> int:
        return self.points.size - 1


def uniform_partition(N: int) -> Partition1D:
    if N < 1:
        raise ValueError(f"N must be positive, got {N}")
    pts = np.arange(N + 1, dtype=float) / N
    return Partition1D(pts)


def shishkin_lambda(N: int, eps: float, c_star: float) -> float:
    """Transition point ``min(1/4, 2 sqrt(eps / c_star) ln N)``."""
    return min(0.25, 2.0 * math.sqrt(eps / c_star) * math.log(N))


def shishkin_partition(N: int, eps: float, c_star: float) -> Partition1D:
    """Piecewise-uniform layer-adapted partition of ``[0, 1]``.

    ``[0, lam]`` and ``[1 - lam, 1]`` get ``N/4`` equal intervals each and
    ``[lam, 1 - lam]`` gets ``N/2``.  ``N`` must be a multiple of 8; ``N = 4``
    (one interval per layer band) is also accepted since it is the coarsest
    level of the reported Shishkin tables.
    """
    if not isinstance(N, (int, np.integer)) or not (N % 8 == 0 or N == 4) or N <= 0:
        raise ValueError(f"Shishkin partitions need N a positive multiple of 8, got {N}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not c_star > 0:
        raise ValueError(f"c_star must be positive, got {c_star}")
    lam = shishkin_lambda(N, eps, c_star)
    q = N // 4
    left = lam * np.arange(q) / q
    middle = lam + (1.0 - 2.0 * lam) * np.arange(2 * q) / (2 * q)
    right = (1.0 - lam) + lam * np.arange(q + 1) / q
    pts = np.concatenate([left, middle, right])
    pts[-1] = 1.0
    return Partition1D(pts, lam=lam)


@dataclass(frozen=True)
class Mesh2D:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray
    n_per_side: int

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def tensor_triangulate(px: Partition1D, py: Partition1D) -> Mesh2D:
    """Tensor-product triangulation, two counter-clockwise triangles per cell."""
    nx, ny = px.n_intervals, py.n_intervals
    X, Y = np.meshgrid(px.points, py.points)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    bl = (j * (nx + 1) + i).ravel()
    br = bl + 1
    tl = bl + nx + 1
    tr = tl + 1
    # cell (i, j) contributes triangles 2c and 2c+1
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([bl, br, tl])
    tris[1::2] = np.column_stack([br, tr, tl])

    x, y = nodes[:, 0], nodes[:, 1]
    boundary = (x == 0.0) | (x == 1.0) | (y == 0.0) | (y == 1.0)
    nodes.flags.writeable = False
    tris.flags.writeable = False
    boundary.flags.writeable = False
    return Mesh2D(nodes, tris, boundary, max(nx, ny))


def _midpoint_refine(part: Partition1D) -> Partition1D:
    p = part.points
    out = np.empty(2 * p.size - 1)
    out[0::2] = p
    out[1::2] = 0.5 * (p[:-1] + p[1:])
    return Partition1D(out)


def prolongation_matrix(nc: int) -> sp.csr_matrix:
    """One-step P1 prolongation from an ``nc x nc`` cell grid to ``2nc x 2nc``.

    Acts on all-node coefficient vectors; the result is purely topological and
    does not depend on node coordinates.
    """
    nf = 2 * nc
    n_c = nc + 1
    n_f = nf + 1
    rows, cols, vals = [], [], []

    def add(fi, fj, ci, cj, w):
        rows.append(fj * n_f + fi)
        cols.append(cj * n_c + ci)
        vals.append(np.full(np.broadcast(fi, ci).shape, w))

    ci, cj = np.meshgrid(np.arange(n_c), np.arange(n_c))
    ci, cj = ci.ravel(), cj.ravel()
    add(2 * ci, 2 * cj, ci, cj, 1.0)

    # horizontal edge midpoints
    hi, hj = np.meshgrid(np.arange(nc), np.arange(n_c))
    hi, hj = hi.ravel(), hj.ravel()
    add(2 * hi + 1, 2 * hj, hi, hj, 0.5)
    add(2 * hi + 1, 2 * hj, hi + 1, hj, 0.5)

    # vertical edge midpoints
    vi, vj = np.meshgrid(np.arange(n_c), np.arange(nc))
    vi, vj = vi.ravel(), vj.ravel()
    add(2 * vi, 2 * vj + 1, vi, vj, 0.5)
    add(2 * vi, 2 * vj + 1, vi, vj + 1, 0.5)

    # diagonal midpoints: the diagonal joins (i, j+1) and (i+1, j)
    di, dj = np.meshgrid(np.arange(nc), np.arange(nc))
    di, dj = di.ravel(), dj.ravel()
    add(2 * di + 1, 2 * dj + 1, di, dj + 1, 0.5)
    add(2 * di + 1, 2 * dj + 1, di + 1, dj, 0.5)

    E = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_f * n_f, n_c * n_c),
    )
    return E.tocsr()


def _partitions(mesh: Mesh2D) -> tuple[Partition1D, Partition1D]:
    n = mesh.n_per_side + 1
    if mesh.n_nodes != n * n:
        raise ValueError("mesh is not a square tensor triangulation")
    xs = mesh.nodes[:n, 0]
    ys = mesh.nodes[::n, 1]
    return Partition1D(xs.copy()), Partition1D(ys.copy())


def refine_uniform(mesh: Mesh2D) -> tuple[Mesh2D, sp.csr_matrix]:
    """Split every triangle into four through its edge midpoints.

    Returns the refined mesh and the prolongation ``E`` (fine x coarse, all
    nodes) whose columns are the coarse hat functions in the fine basis.
    """
    px, py = _partitions(mesh)
    fine = tensor_triangulate(_midpoint_refine(px), _midpoint_refine(py))
    return fine, prolongation_matrix(mesh.n_per_side)


@dataclass(frozen=True)
class MeshHierarchy:
    """Nested levels ``0..J`` with ``N_k = 2**(k+1)`` cells per side.

    ``prolongations[k]`` is the all-node ``E_k`` (``n_J x n_k``) and
    ``steps[k]`` the one-level map from level ``k`` to ``k + 1``.
    """

    levels: list[Mesh2D]
    prolongations: list[sp.csr_matrix]
    steps: list[sp.csr_matrix]
    geometry: Geometry
    eps: float | None = None
    c_star: float | None = None
    lam: float | None = field(default=None)

    @property
    def J(self) -> int:
        return len(self.levels) - 1

    @property
    def finest(self) -> Mesh2D:
        return self.levels[-1]

    def h(self) -> np.ndarray:
        """Topological mesh sizes ``h_k = 2**-(k+1)``."""
        return 0.5 ** (np.arange(self.J + 1) + 1.0)


def level_to_n(level: int) -> int:
    return 2 ** (level + 1)


def build_hierarchy(
    J: int,
    geometry: Geometry = "uniform",
    eps: float | None = None,
    c_star: float | None = None,
) -> MeshHierarchy:
    """Levels ``0..J`` of nested tensor meshes.

    For ``"shishkin"`` the finest level is the Shishkin mesh with
    ``N_J = 2**(J+1)``; coarser levels are the uniform ``N_k`` grids pushed
    through the single piecewise-linear bijection that carries the uniform
    ``N_J`` grid onto the finest Shishkin partition.  Transfer operators are
    the uniform ones in both cases.
    """
    if J < 0:
        raise ValueError(f"J must be non-negative, got {J}")
    NJ = level_to_n(J)
    lam = None
    if geometry == "uniform":
        def points(N):
            return uniform_partition(N)
    elif geometry == "shishkin":
        if J < 1:
            raise ValueError("Shishkin hierarchies need J >= 1 (N_J >= 4)")
        if eps is None or c_star is None:
            raise ValueError("Shishkin hierarchies need eps and c_star")
        fine = shishkin_partition(NJ, eps, c_star)
        lam = fine.lam
        uniform_fine = uniform_partition(NJ).points

        def points(N):
            pts = np.interp(uniform_partition(N).points, uniform_fine, fine.points)
            return Partition1D(pts)
    else:
        raise ValueError(f"unknown geometry {geometry!r}")

    levels = []
    for k in range(J + 1):
        p = points(level_to_n(k))
        levels.append(tensor_triangulate(p, p))

    steps = [prolongation_matrix(level_to_n(k)) for k in range(J)]
    prolongations = [None] * (J + 1)
    prolongations[J] = sp.identity(levels[J].n_nodes, format="csr")
    for k in range(J - 1, -1, -1):
        prolongations[k] = (prolongations[k + 1] @ steps[k]).tocsr()
    return MeshHierarchy(levels, prolongations, steps, geometry, eps, c_star, lam)


def write_mesh(mesh: Mesh2D, path: str | Path) -> None:
    """Plain-text dump: ``x y boundary_flag`` per node, then ``i j k`` per triangle."""
    with open(path, "w") as fh:
        for (x, y), b in zip(mesh.nodes, mesh.boundary_mask):
            fh.write(f"{x:.17g} {y:.17g} {int(b)}\n")
        for t in mesh.triangles:
            fh.write(f"{t[0]} {t[1]} {t[2]}\n")
