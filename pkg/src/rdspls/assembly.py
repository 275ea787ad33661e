"""P1 finite-element assembly on triangulations of the unit square."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh2D

Coefficient = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Dunavant's 12-point symmetric rule, exact for total degree 6.
# Rows are barycentric coordinates; weights sum to one.
_A = (0.501426509658179, 0.249286745170910)
_B = (0.873821971016996, 0.063089014491502)
_C = (0.053145049844817, 0.310352451033784, 0.636502499121399)
_WA, _WB, _WC = 0.116786275726379, 0.050844906370207, 0.082851075618374


def _dunavant6():
    pts, wts = [], []
    a, b = _A
    pts += [(a, b, b), (b, a, b), (b, b, a)]
    wts += [_WA] * 3
    a, b = _B
    pts += [(a, b, b), (b, a, b), (b, b, a)]
    wts += [_WB] * 3
    a, b, c = _C
    pts += [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
    wts += [_WC] * 6
    wts = np.array(wts)
    return np.array(pts), wts / wts.sum()


QUAD_BARY, QUAD_WEIGHTS = _dunavant6()


def subdivided_rule(levels: int) -> tuple[np.ndarray, np.ndarray]:
    """The degree-6 rule applied on ``4**levels`` congruent sub-triangles.

    Used as a refinement oracle for layer-dominated integrands.
    """
    verts = [np.eye(3)]
    for _ in range(levels):
        new = []
        for v in verts:
            m01, m12, m02 = (v[0] + v[1]) / 2, (v[1] + v[2]) / 2, (v[0] + v[2]) / 2
            new += [
                np.array([v[0], m01, m02]),
                np.array([m01, v[1], m12]),
                np.array([m02, m12, v[2]]),
                np.array([m01, m12, m02]),
            ]
        verts = new
    bary = np.concatenate([QUAD_BARY @ v for v in verts])
    wts = np.tile(QUAD_WEIGHTS, len(verts)) / len(verts)
    return bary, wts


@dataclass(frozen=True)
class ElementGeometry:
    """Per-triangle areas and constant barycentric gradients (``m x 3 x 2``)."""

    area: np.ndarray
    grads: np.ndarray

    @classmethod
    def of(cls, mesh: Mesh2D) -> "ElementGeometry":
        p = mesh.nodes[mesh.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        bad = np.flatnonzero(~(np.abs(det) > 0))
        if bad.size:
            raise ValueError(f"degenerate triangle {bad[0]} (zero area)")
        # gradient of barycentric lambda_k is the rotated opposite edge / det
        g = np.empty((p.shape[0], 3, 2))
        for k in range(3):
            a, b = p[:, (k + 1) % 3], p[:, (k + 2) % 3]
            g[:, k, 0] = (a[:, 1] - b[:, 1]) / det
            g[:, k, 1] = (b[:, 0] - a[:, 0]) / det
        return cls(0.5 * np.abs(det), g)


def quadrature_points(mesh: Mesh2D, bary: np.ndarray = QUAD_BARY) -> tuple[np.ndarray, np.ndarray]:
    """Physical quadrature coordinates, each of shape ``(m, nq)``."""
    p = mesh.nodes[mesh.triangles]
    xy = np.einsum("qk,mkd->mqd", bary, p)
    return xy[..., 0], xy[..., 1]


@dataclass(frozen=True)
class FemSpace:
    """P1 space on ``mesh`` restricted to ``dofs`` (node indices).

    ``FemSpace.interior`` is the test space vanishing on the boundary,
    ``FemSpace.full`` has no boundary restriction.
    """

    mesh: Mesh2D
    dofs: np.ndarray

    @classmethod
    def interior(cls, mesh: Mesh2D) -> "FemSpace":
        return cls(mesh, mesh.interior)

    @classmethod
    def full(cls, mesh: Mesh2D) -> "FemSpace":
        return cls(mesh, np.arange(mesh.n_nodes))

    @property
    def n(self) -> int:
        return self.dofs.size

    def extend(self, v: np.ndarray) -> np.ndarray:
        """Zero-extend dof coefficients to all mesh nodes."""
        out = np.zeros(self.mesh.n_nodes)
        out[self.dofs] = v
        return out


@dataclass(frozen=True)
class ProblemCoefficients:
    eps: float
    c: Coefficient
    c_min: float
    c_max: float
    c_star: float

    def __post_init__(self):
        if not self.c_star > 0:
            raise ValueError("c_star must be positive")
        if not self.c_min <= self.c_star <= self.c_max:
            raise ValueError("c_star must lie in [c_min, c_max]")


def _scatter(mesh: Mesh2D, elem: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((elem.ravel(), (rows, cols)), shape=(n, n))


def _restrict(K: sp.spmatrix, rows: FemSpace, cols: FemSpace | None = None) -> sp.csr_matrix:
    cols = rows if cols is None else cols
    return K.tocsr()[rows.dofs][:, cols.dofs].tocsr()


def assemble_stiffness(space: FemSpace, geom: ElementGeometry | None = None) -> sp.csr_matrix:
    geom = ElementGeometry.of(space.mesh) if geom is None else geom
    elem = geom.area[:, None, None] * np.einsum("mad,mbd->mab", geom.grads, geom.grads)
    return _restrict(_scatter(space.mesh, elem), space)


def _evaluate(c: Coefficient | float | None, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if c is None:
        return np.ones_like(x)
    if callable(c):
        return np.broadcast_to(np.asarray(c(x, y), dtype=float), x.shape)
    return np.full_like(x, float(c))


def assemble_weighted_mass(
    space: FemSpace,
    c: Coefficient | float | None = None,
    geom: ElementGeometry | None = None,
    rule: tuple[np.ndarray, np.ndarray] = (QUAD_BARY, QUAD_WEIGHTS),
) -> sp.csr_matrix:
    """Entries ``(c phi_i, phi_j)``; ``c=None`` gives the plain mass matrix."""
    bary, wts = rule
    geom = ElementGeometry.of(space.mesh) if geom is None else geom
    x, y = quadrature_points(space.mesh, bary)
    cw = _evaluate(c, x, y) * wts[None, :]
    elem = geom.area[:, None, None] * np.einsum("mq,qa,qb->mab", cw, bary, bary)
    return _restrict(_scatter(space.mesh, elem), space)


def assemble_mass(space: FemSpace, geom: ElementGeometry | None = None) -> sp.csr_matrix:
    return assemble_weighted_mass(space, None, geom)


def assemble_lumped_diag(space: FemSpace, geom: ElementGeometry | None = None) -> np.ndarray:
    """Diagonal ``D_ii = (1, phi_i)``, returned as a vector."""
    geom = ElementGeometry.of(space.mesh) if geom is None else geom
    d = np.bincount(
        space.mesh.triangles.ravel(),
        weights=np.repeat(geom.area / 3.0, 3),
        minlength=space.mesh.n_nodes,
    )
    return d[space.dofs]


def assemble_load(
    space: FemSpace,
    f: Coefficient,
    geom: ElementGeometry | None = None,
    rule: tuple[np.ndarray, np.ndarray] = (QUAD_BARY, QUAD_WEIGHTS),
) -> np.ndarray:
    """Entries ``(f, phi_i)``."""
    bary, wts = rule
    geom = ElementGeometry.of(space.mesh) if geom is None else geom
    x, y = quadrature_points(space.mesh, bary)
    fv = _evaluate(f, x, y)
    bad = ~np.isfinite(fv)
    if bad.any():
        m, q = np.argwhere(bad)[0]
        raise ValueError(f"non-finite load value at ({x[m, q]!r}, {y[m, q]!r}) in triangle {m}")
    elem = geom.area[:, None] * ((fv * wts[None, :]) @ bary)
    b = np.bincount(space.mesh.triangles.ravel(), weights=elem.ravel(), minlength=space.mesh.n_nodes)
    return b[space.dofs]


def assemble_gradient_mass(
    test: FemSpace, trial: FemSpace, geom: ElementGeometry | None = None
) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Pair ``(Gx, Gy)`` with ``Gx[i, j] = (d phi_i / dx, phi_j)``.

    Rows run over ``test`` dofs, columns over ``trial`` dofs.
    """
    geom = ElementGeometry.of(test.mesh) if geom is None else geom
    out = []
    for d in range(2):
        elem = (geom.area / 3.0)[:, None, None] * np.repeat(geom.grads[:, :, d, None], 3, axis=2)
        out.append(_restrict(_scatter(test.mesh, elem), test, trial))
    return out[0], out[1]


def optimal_norm_operator(eps: float, A: sp.spmatrix, C: sp.spmatrix) -> sp.csr_matrix:
    """Matrix of ``a_opt(u, v) = eps (grad u, grad v) + (c u, v)``."""
    return (eps * A + C).tocsr()


def write_matrix(K: sp.spmatrix, path) -> None:
    """Coordinate text dump ``row col value``."""
    coo = K.tocoo()
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
