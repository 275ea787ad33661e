"""Manufactured boundary-layer problem, error norms and convergence orders.

The exact solution is

    u = X(x) L(y) + X(y) L(x),   X(t) = t (1 - t),
    L(t) = (1 - exp(-t/s)) (1 - exp((t - 1)/s)),   s = sqrt(eps),

with ``c = 2 (1 + x^2 + y^2)``.  Since ``-eps L'' = exp(-t/s) + exp((t-1)/s)``
and ``X'' = -2``, the forcing is

    f = 2 eps (L(x) + L(y)) + X(x) (e^{-y/s} + e^{(y-1)/s})
        + X(y) (e^{-x/s} + e^{(x-1)/s}) + c u.

All exponents are non-positive, so nothing overflows as ``eps -> 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .assembly import ElementGeometry, QUAD_BARY, QUAD_WEIGHTS, quadrature_points
from .mesh import Mesh2D

C_MIN, C_MAX = 2.0, 6.0


def reaction_coefficient(x, y):
    return 2.0 * (1.0 + x * x + y * y)


def _layer(t, s):
    """Return ``L(t)``, ``L'(t)`` and ``e^{-t/s} + e^{(t-1)/s}``."""
    a = np.exp(-t / s)
    b = np.exp((t - 1.0) / s)
    L = (1.0 - a) * (1.0 - b)
    dL = (a * (1.0 - b) - b * (1.0 - a)) / s
    return L, dL, a + b


def evaluate_exact(x, y, eps: float):
    """Return ``(u, du/dx, du/dy, f)`` at the given points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = math.sqrt(eps)
    Lx, dLx, Sx = _layer(x, s)
    Ly, dLy, Sy = _layer(y, s)
    Xx, Xy = x * (1.0 - x), y * (1.0 - y)
    u = Xx * Ly + Xy * Lx
    ux = (1.0 - 2.0 * x) * Ly + Xy * dLx
    uy = Xx * dLy + (1.0 - 2.0 * y) * Lx
    f = 2.0 * eps * (Lx + Ly) + Xx * Sy + Xy * Sx + reaction_coefficient(x, y) * u
    return u, ux, uy, f


@dataclass(frozen=True)
class ManufacturedProblem:
    eps: float

    c_min = C_MIN
    c_max = C_MAX

    def c(self, x, y):
        return reaction_coefficient(x, y)

    def exact(self, x, y):
        """``(u, du/dx, du/dy)`` at the given points."""
        return evaluate_exact(x, y, self.eps)[:3]

    def u(self, x, y):
        return evaluate_exact(x, y, self.eps)[0]

    def grad_u(self, x, y):
        _, ux, uy, _ = evaluate_exact(x, y, self.eps)
        return ux, uy

    def f(self, x, y):
        return evaluate_exact(x, y, self.eps)[3]


@dataclass(frozen=True)
class ErrorMetrics:
    q_norm_error: float
    balanced_error: float
    order: float | None = None


def _error_integrals(problem, mesh: Mesh2D, scalar, grad_at, rule=None):
    """Quadrature of ``c e^2``, ``e^2`` and ``|grad u - g|^2`` over the mesh.

    ``problem`` supplies ``eps``, ``c(x, y)`` and ``exact(x, y) -> (u, ux, uy)``;
    ``scalar`` holds all-node coefficients of ``u_h`` and ``grad_at`` returns
    the approximate gradient components at the quadrature points.
    """
    bary, wts = (QUAD_BARY, QUAD_WEIGHTS) if rule is None else rule
    geom = ElementGeometry.of(mesh)
    x, y = quadrature_points(mesh, bary)
    u, ux, uy = problem.exact(x, y)
    e = u - scalar[mesh.triangles] @ bary.T
    gx, gy = grad_at(bary, geom)
    gx, gy = ux - gx, uy - gy
    w = geom.area[:, None] * wts[None, :]
    c = problem.c(x, y)
    return (
        float(np.sum(w * c * e * e)),
        float(np.sum(w * e * e)),
        float(np.sum(w * (gx * gx + gy * gy))),
    )


def _nodal_gradient(mesh, grad_x, grad_y):
    t = mesh.triangles
    return lambda bary, geom: (grad_x[t] @ bary.T, grad_y[t] @ bary.T)


def _elementwise_gradient(mesh, scalar):
    def at(bary, geom):
        g = np.einsum("mk,mkd->md", scalar[mesh.triangles], geom.grads)
        shape = (g.shape[0], bary.shape[0])
        return np.broadcast_to(g[:, :1], shape), np.broadcast_to(g[:, 1:], shape)

    return at


def q_norm_error(problem, mesh: Mesh2D, p_h, rule=None) -> float:
    """``||(u, eps grad u) - p_h||_Q`` for a flux pair ``p_h``.

    The vector block of ``p_h`` stores coefficients of the recovered gradient
    (the flux divided by eps), so the ``eps^{-1}`` weight reduces to a factor
    ``eps`` on the squared gradient error.
    """
    grad = _nodal_gradient(mesh, p_h.vec_x, p_h.vec_y)
    ce2, _, g2 = _error_integrals(problem, mesh, p_h.scalar, grad, rule)
    return math.sqrt(ce2 + problem.eps * g2)


def balanced_error(problem, mesh: Mesh2D, u_h, grad_x, grad_y, rule=None) -> float:
    """``(||u - u_h||^2 + eps^{1/2} ||grad u - g_h||^2)^{1/2}``."""
    _, e2, g2 = _error_integrals(problem, mesh, u_h, _nodal_gradient(mesh, grad_x, grad_y), rule)
    return math.sqrt(e2 + math.sqrt(problem.eps) * g2)


def p1_errors(problem, mesh: Mesh2D, u_h, rule=None) -> ErrorMetrics:
    """Both error norms for a plain P1 function, using its elementwise gradient."""
    ce2, e2, g2 = _error_integrals(problem, mesh, u_h, _elementwise_gradient(mesh, u_h), rule)
    return ErrorMetrics(math.sqrt(ce2 + problem.eps * g2), math.sqrt(e2 + math.sqrt(problem.eps) * g2))


MeshFamily = Literal["uniform", "shishkin"]


def convergence_order(
    errors: Sequence[float],
    mesh_family: MeshFamily = "uniform",
    levels: Sequence[int] | None = None,
) -> list[float]:
    """Orders between consecutive errors (one fewer entry than ``errors``).

    Uniform meshes use ``log2(e_{k-1}/e_k)``.  Shishkin meshes measure the
    rate in the variable ``N^{-1} ln N`` with ``N_k = 2**(level + 1)``;
    ``levels`` defaults to ``1, 2, ...``.
    """
    e = np.asarray(errors, dtype=float)
    if e.size < 2:
        raise ValueError("need at least two errors")
    if np.any(~(e > 0)):
        raise ValueError("errors must be positive")
    ratio = np.log(e[:-1] / e[1:])
    if mesh_family == "uniform":
        return list(ratio / math.log(2.0))
    if mesh_family != "shishkin":
        raise ValueError(f"unknown mesh family {mesh_family!r}")
    lv = np.arange(1, e.size + 1) if levels is None else np.asarray(levels)
    N = 2.0 ** (lv + 1)
    scale = np.log(N) / N
    return list(ratio / np.log(scale[:-1] / scale[1:]))
