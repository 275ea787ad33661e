"""Saddle-point least-squares discretization with the optimal test norm.

Test space ``V_h``: P1 functions vanishing on the boundary.  Host trial space
``M_h x eps M_h``: unrestricted P1 scalars times P1 vector fields.  A flux
pair ``(q, **q**)`` is stored as the scalar coefficients ``s`` and vector
coefficients ``a = (a_x, a_y)`` with ``**q** = eps * sum_i a_i Phi_i``, so the
vector block is directly the recovered gradient and every ``eps`` factor is
carried by hand.  In these coordinates

    b(v, (s, a))        = v^T C_Va s + eps v^T (Gx a_x + Gy a_y)
    ((s, a), (t, b))_Q  = s^T C t + eps (a_x^T M b_x + a_y^T M b_y)

and ``B v = (v, eps grad v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp

from .assembly import (
    Coefficient,
    ElementGeometry,
    FemSpace,
    QUAD_BARY,
    QUAD_WEIGHTS,
    assemble_gradient_mass,
    assemble_load,
    assemble_lumped_diag,
    assemble_mass,
    assemble_stiffness,
    assemble_weighted_mass,
    optimal_norm_operator,
    quadrature_points,
)
from .mesh import Mesh2D
from .multilevel import ConvergenceError, SolveReport, _Cholesky
from .problems import reaction_coefficient

TrialKind = Literal["orth", "lump", "conforming"]

BREAKDOWN = 1e-30


@dataclass
class FluxPair:
    """Scalar block and the two vector-component blocks, each on all nodes.

    Also used for dual data: then ``scalar`` holds ``(q, phi_j)_c`` and the
    vector blocks hold ``(g, Phi_j)`` for the field ``**q** = eps g``.
    """

    scalar: np.ndarray
    vec_x: np.ndarray
    vec_y: np.ndarray

    def stack(self) -> np.ndarray:
        return np.concatenate([self.scalar, self.vec_x, self.vec_y])

    @classmethod
    def unstack(cls, z: np.ndarray) -> "FluxPair":
        n = z.size // 3
        return cls(z[:n].copy(), z[n : 2 * n].copy(), z[2 * n :].copy())

    @classmethod
    def zeros(cls, n: int) -> "FluxPair":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))

    def __add__(self, other: "FluxPair") -> "FluxPair":
        return FluxPair(self.scalar + other.scalar, self.vec_x + other.vec_x, self.vec_y + other.vec_y)

    def __rmul__(self, k: float) -> "FluxPair":
        return FluxPair(k * self.scalar, k * self.vec_x, k * self.vec_y)


class SPLSDiscretization:
    """All matrices of the SPLS system on one mesh.

    Shapes: ``n_v`` interior (test) dofs, ``n`` nodes (trial blocks).
    """

    def __init__(
        self,
        mesh: Mesh2D,
        eps: float,
        c: Coefficient = reaction_coefficient,
        f: Coefficient | None = None,
    ):
        self.mesh = mesh
        self.eps = float(eps)
        self.c = c
        self.V = FemSpace.interior(mesh)
        self.full = FemSpace.full(mesh)
        geom = ElementGeometry.of(mesh)
        self.geom = geom
        C = assemble_weighted_mass(self.full, c, geom)
        self.C = C
        self.C_aV = C[:, self.V.dofs].tocsr()
        self.C_Va = self.C_aV.T.tocsr()
        self.C_VV = C[self.V.dofs][:, self.V.dofs].tocsr()
        self.M = assemble_mass(self.full, geom)
        self.d = assemble_lumped_diag(self.full, geom)
        self.A = assemble_stiffness(self.V, geom)
        self.Gx, self.Gy = assemble_gradient_mass(self.V, self.full, geom)
        self.A_opt = optimal_norm_operator(self.eps, self.A, self.C_VV)
        self.F = assemble_load(self.V, f, geom) if f is not None else None
        self._C_solve: _Cholesky | None = None
        self._M_solve: _Cholesky | None = None
        self._A_solve: _Cholesky | None = None

    @property
    def n(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_v(self) -> int:
        return self.V.n

    def C_solve(self, b):
        if self._C_solve is None:
            self._C_solve = _Cholesky(self.C)
        return self._C_solve(b)

    def M_solve(self, b):
        if self._M_solve is None:
            self._M_solve = _Cholesky(self.M)
        return self._M_solve(b)

    def A_opt_solve(self, b):
        if self._A_solve is None:
            self._A_solve = _Cholesky(self.A_opt)
        return self._A_solve(b)

    # forms -----------------------------------------------------------------

    def apply_B(self, v: np.ndarray) -> FluxPair:
        """Dual data of ``B v = (v, eps grad v)`` against the trial basis."""
        return FluxPair(self.C_aV @ v, self.Gx.T @ v, self.Gy.T @ v)

    def b_form(self, v: np.ndarray, p: FluxPair) -> float:
        return float(v @ (self.C_Va @ p.scalar) + self.eps * (v @ (self.Gx @ p.vec_x + self.Gy @ p.vec_y)))

    def b_star(self, p: FluxPair) -> np.ndarray:
        """Dual vector of ``v -> b(v, p)`` on the test dofs."""
        return self.C_Va @ p.scalar + self.eps * (self.Gx @ p.vec_x + self.Gy @ p.vec_y)

    def q_inner(self, p: FluxPair, q: FluxPair) -> float:
        return float(
            p.scalar @ (self.C @ q.scalar)
            + self.eps * (p.vec_x @ (self.M @ q.vec_x) + p.vec_y @ (self.M @ q.vec_y))
        )

    def lump_inner(self, p: FluxPair, q: FluxPair) -> float:
        return float(
            p.scalar @ (self.C @ q.scalar)
            + self.eps * (p.vec_x @ (self.d * q.vec_x) + p.vec_y @ (self.d * q.vec_y))
        )

    def opt_norm_sq(self, v: np.ndarray) -> float:
        return float(v @ (self.A_opt @ v))

    def opt_norm_sq_elementwise(self, v: np.ndarray) -> float:
        """``||c^{1/2} v||^2 + ||eps^{1/2} grad v||^2`` by per-triangle quadrature."""
        vall = self.V.extend(v)
        t = self.mesh.triangles
        x, y = quadrature_points(self.mesh, QUAD_BARY)
        vq = vall[t] @ QUAD_BARY.T
        grad = np.einsum("mk,mkd->md", vall[t], self.geom.grads)
        cq = np.broadcast_to(self.c(x, y), x.shape)
        mass = np.sum(self.geom.area * np.sum(QUAD_WEIGHTS * cq * vq * vq, axis=1))
        stiff = np.sum(self.geom.area * np.sum(grad * grad, axis=1))
        return float(mass + self.eps * stiff)

    def project_orth(self, dual: FluxPair) -> FluxPair:
        """Orthogonal projection onto ``M_h x eps M_h`` in the Q-inner product."""
        return FluxPair(self.C_solve(dual.scalar), self.M_solve(dual.vec_x), self.M_solve(dual.vec_y))

    def project_lump(self, dual: FluxPair) -> FluxPair:
        """c-orthogonal projection on the scalar block, lumped one on the vectors."""
        return FluxPair(self.C_solve(dual.scalar), dual.vec_x / self.d, dual.vec_y / self.d)


# trial spaces ------------------------------------------------------------------


class ProjectedTrial:
    """``R_h B V_h`` for the orthogonal or the lumped representation.

    Elements are stacked ``FluxPair`` vectors.  ``inner`` is the trial
    inner product ``(.,.)_h`` used by the Uzawa iterations; ``q_norm`` is the
    true Q-norm used for stopping.
    """

    def __init__(self, disc: SPLSDiscretization, kind: Literal["orth", "lump"]):
        if kind not in ("orth", "lump"):
            raise ValueError(f"unknown projected trial {kind!r}")
        self.disc = disc
        self.kind = kind
        n = disc.n
        self._sl = (slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n))
        if kind == "orth":
            self._gram_vec = disc.M
            self._vec_solve = disc.M_solve
        else:
            self._gram_vec = sp.diags(disc.d)
            self._vec_solve = lambda b: b / disc.d

    def B_h(self, v: np.ndarray) -> np.ndarray:
        """``R_h B v``.  ``v`` already lies in ``M_h``, so the scalar block is
        its zero extension (the c-projection fixes it)."""
        d = self.disc
        return np.concatenate([d.V.extend(v), self._vec_solve(d.Gx.T @ v), self._vec_solve(d.Gy.T @ v)])

    def B_star(self, z: np.ndarray) -> np.ndarray:
        d = self.disc
        s, ax, ay = (z[i] for i in self._sl)
        return d.C_Va @ s + d.eps * (d.Gx @ ax + d.Gy @ ay)

    def inner(self, z: np.ndarray, w: np.ndarray) -> float:
        d = self.disc
        s, ax, ay = (z[i] for i in self._sl)
        t, bx, by = (w[i] for i in self._sl)
        G = self._gram_vec
        return float(s @ (d.C @ t) + d.eps * (ax @ (G @ bx) + ay @ (G @ by)))

    def q_norm(self, z: np.ndarray) -> float:
        d = self.disc
        s, ax, ay = (z[i] for i in self._sl)
        val = s @ (d.C @ s) + d.eps * (ax @ (d.M @ ax) + ay @ (d.M @ ay))
        return math.sqrt(max(float(val), 0.0))

    def zeros(self) -> np.ndarray:
        return np.zeros(3 * self.disc.n)

    def to_fluxpair(self, z: np.ndarray) -> FluxPair:
        return FluxPair.unstack(z)


class ConformingTrial:
    """The conforming space ``B V_h``; an element ``B u`` is stored as ``u``.

    Here ``B_h`` is the identity and both inner products are ``a_opt``.
    """

    kind = "conforming"

    def __init__(self, disc: SPLSDiscretization):
        self.disc = disc

    def B_h(self, v):
        return np.array(v, dtype=float)

    def B_star(self, u):
        return self.disc.A_opt @ u

    def inner(self, u, w):
        return float(u @ (self.disc.A_opt @ w))

    def q_norm(self, u):
        return math.sqrt(max(self.inner(u, u), 0.0))

    def zeros(self):
        return np.zeros(self.disc.n_v)

    def to_fluxpair(self, u):
        raise TypeError("conforming trial elements have discontinuous fluxes; use the scalar coefficients")


def make_trial(disc: SPLSDiscretization, kind: TrialKind):
    if kind == "conforming":
        return ConformingTrial(disc)
    return ProjectedTrial(disc, kind)


@dataclass
class UzawaState:
    """Snapshot handed to the iteration callback after each step."""

    iter: int
    p: np.ndarray
    w: np.ndarray
    q: np.ndarray
    d: np.ndarray
    alpha: float
    beta: float


def _trial_and_rhs(disc, trial, rhs):
    T = make_trial(disc, trial) if isinstance(trial, str) else trial
    F = disc.F if rhs is None else rhs
    if F is None:
        raise ValueError("no right-hand side: pass rhs or build the discretization with f")
    return T, np.asarray(F, dtype=float)


def ucg_solve(
    disc: SPLSDiscretization,
    trial: TrialKind = "orth",
    tol: float = 1e-8,
    maxiter: int = 10000,
    rhs: np.ndarray | None = None,
    callback: Callable[[UzawaState], None] | None = None,
):
    """Uzawa conjugate gradients with exact inversion of ``a_opt``.

    Returns ``(p, report, trial_space)`` where ``p`` is in the trial
    space's coordinates (see ``trial_space.to_fluxpair``).
    """
    T, F = _trial_and_rhs(disc, trial, rhs)
    p = T.zeros()
    w = disc.A_opt_solve(F - T.B_star(p))
    q = T.B_h(w)
    return _uzawa_loop(T, lambda g: disc.A_opt_solve(g), p, w, q, tol, maxiter, callback, "UCG")


def upcg_solve(
    disc: SPLSDiscretization,
    trial: TrialKind = "orth",
    P: Callable[[np.ndarray], np.ndarray] | None = None,
    tol: float = 1e-8,
    maxiter: int = 10000,
    rhs: np.ndarray | None = None,
    callback: Callable[[UzawaState], None] | None = None,
):
    """Uzawa preconditioned CG: the ``a_opt`` solves are replaced by ``P``."""
    if P is None:
        raise ValueError("upcg_solve needs a preconditioner")
    T, F = _trial_and_rhs(disc, trial, rhs)
    p = T.zeros()
    u = P(F - T.B_star(p))
    q = T.B_h(u)
    return _uzawa_loop(T, P, p, u, q, tol, maxiter, callback, "UPCG")


def _uzawa_loop(T, solve, p, w, q, tol, maxiter, callback, name):
    report = SolveReport()
    d = q.copy()
    qq = T.inner(q, q)
    report.residuals.append(T.q_norm(q))
    j = 0
    while not report.residuals[-1] <= tol:
        if not math.isfinite(report.residuals[-1]):
            raise ConvergenceError(f"{name} produced a non-finite residual", report)
        if j >= maxiter:
            raise ConvergenceError(f"{name} did not converge in {maxiter} iterations", report)
        h = -solve(T.B_star(d))
        bhq = float(h @ T.B_star(q))
        # relative guard: b(h, q) scales like (q, q)_h, which is ~1e-30
        # legitimately once ||q|| reaches 1e-15
        if not math.isfinite(bhq) or abs(bhq) < BREAKDOWN * qq:
            raise ConvergenceError(f"{name} breakdown: b(h_j, q_j) = {bhq:.3e}", report)
        alpha = -qq / bhq
        p = p + alpha * d
        w = w + alpha * h
        q = T.B_h(w)
        qq_new = T.inner(q, q)
        beta = qq_new / qq
        d = q + beta * d
        qq = qq_new
        j += 1
        report.iterations = j
        report.alphas.append(alpha)
        report.betas.append(beta)
        report.residuals.append(T.q_norm(q))
        if callback is not None:
            callback(UzawaState(j, p, w, q, d, alpha, beta))
    report.converged = True
    return p, report, T


def direct_solve(disc: SPLSDiscretization, trial: Literal["orth", "lump"] = "orth", rhs=None) -> FluxPair:
    """Solve ``b(v, R_h B u_h) = F(v)`` through the symmetric block system

        [ C_VV      eps Gx    eps Gy ] [u  ]   [F]
        [ Gx^T     -G_vec     0      ] [a_x] = [0]
        [ Gy^T      0        -G_vec  ] [a_y]   [0]

    with ``G_vec`` the mass (orth) or lumped (lump) matrix.  Independent of
    the Uzawa iterations; used as their oracle.
    """
    import scipy.sparse.linalg as sla

    F = disc.F if rhs is None else rhs
    G = disc.M if trial == "orth" else sp.diags(disc.d)
    e = disc.eps
    K = sp.bmat(
        [
            [disc.C_VV, e * disc.Gx, e * disc.Gy],
            [disc.Gx.T, -G, None],
            [disc.Gy.T, None, -G],
        ],
        format="csc",
    )
    sol = sla.spsolve(K, np.concatenate([F, np.zeros(2 * disc.n)]))
    nv = disc.n_v
    return FluxPair(disc.V.extend(sol[:nv]), sol[nv : nv + disc.n], sol[nv + disc.n :])
