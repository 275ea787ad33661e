"""Multilevel preconditioners for ``eps A_h + C_h`` and a standard PCG.

Every preconditioner consumes dual vectors ``((f, phi_i))_i`` on the finest
interior dofs and returns coefficient vectors.  The BPV-type operators are

    P f = gamma_J M_J^{-1} f + sum_{j<J} (gamma_j - gamma_{j+1}) E_j X_j^{-1} E_j^T f

with ``X_j = M_j`` (BPV) or ``X_j = D_j`` (simplified, sBVP); the ``"diag"``
sBVP variant also replaces ``M_J`` by ``D_J`` in the finest term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .assembly import (
    Coefficient,
    ElementGeometry,
    FemSpace,
    assemble_load,
    assemble_lumped_diag,
    assemble_mass,
    assemble_stiffness,
    assemble_weighted_mass,
)
from .mesh import MeshHierarchy
from .problems import reaction_coefficient

PrecondKind = Literal["bvp", "sbvp", "sbvp-diag", "mg-gs", "exact", "none"]


class ConvergenceError(RuntimeError):
    """Raised when an iteration fails; ``report`` holds the partial history."""

    def __init__(self, message: str, report: "SolveReport"):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    iterations: int = 0
    residuals: list[float] = field(default_factory=list)
    converged: bool = False
    q_norm_error: float | None = None
    balanced_error: float | None = None
    order: float | None = None
    # CG step lengths and ratios, kept for Lanczos estimates
    alphas: list[float] = field(default_factory=list, repr=False)
    betas: list[float] = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class GammaSchedule:
    gammas: np.ndarray
    eps: float
    c_star: float
    h: np.ndarray

    @property
    def differences(self) -> np.ndarray:
        """``gamma_j - gamma_{j+1}`` for ``j < J`` without cancellation.

        Uses ``gamma_j - gamma_{j+1} = eps (h_{j+1}^-2 - h_j^-2) gamma_j gamma_{j+1}``.
        """
        g, h = self.gammas, self.h
        return self.eps * (h[1:] ** -2 - h[:-1] ** -2) * g[:-1] * g[1:]


def gamma_schedule(eps: float, c_star: float, h: Sequence[float]) -> GammaSchedule:
    """``gamma_j = (eps / h_j^2 + c_star)^{-1}`` for decreasing ``h``."""
    h = np.asarray(h, dtype=float)
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if not c_star > 0:
        raise ValueError("c_star must be positive")
    if np.any(h <= 0) or np.any(np.diff(h) >= 0):
        raise ValueError("mesh sizes must be positive and strictly decreasing")
    g = 1.0 / (eps / h**2 + c_star)
    assert np.all(np.diff(g) <= 0) and g[-1] > 0, "gamma schedule must be non-increasing"
    return GammaSchedule(g, float(eps), float(c_star), h)


class _Cholesky:
    """Sparse direct solve for an SPD matrix (SuperLU, symmetric mode)."""

    def __init__(self, K: sp.spmatrix):
        K = sp.csc_matrix(K)
        if K.shape[0] == 0:
            self._lu = None
        else:
            try:
                self._lu = sla.splu(K, permc_spec="MMD_AT_PLUS_A", options=dict(SymmetricMode=True))
            except RuntimeError as exc:
                raise np.linalg.LinAlgError(f"singular matrix: {exc}") from exc

    def __call__(self, b: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return np.zeros_like(b)
        return self._lu.solve(b)


class MultilevelContext:
    """Per-level interior-dof data ``D_k``, ``M_k``, ``E_k`` and the gamma schedule.

    ``D_k`` and ``M_k`` are assembled on each level's own mesh; ``E_k`` are
    the (topological) prolongations restricted to interior nodes.

    ``weight`` selects the inner product behind the projections: ``"l2"``
    gives the plain mass matrix and ``D_ii = (1, phi_i)``; ``"reaction"``
    uses ``(c u, v)``, so ``M_k`` becomes the reaction matrix ``C_k`` and
    ``D_ii = (c, phi_i)``.  With a variable ``c`` the latter makes the
    finest term exact in the reaction-dominated limit.
    """

    def __init__(
        self,
        hierarchy: MeshHierarchy,
        eps: float,
        c_star: float,
        c: Coefficient = reaction_coefficient,
        weight: Literal["l2", "reaction"] = "l2",
    ):
        if weight not in ("l2", "reaction"):
            raise ValueError(f"unknown weight {weight!r}")
        self.hierarchy = hierarchy
        self.c = c
        self.weight = weight
        self.eps = float(eps)
        self.c_star = float(c_star)
        self.spaces = [FemSpace.interior(m) for m in hierarchy.levels]
        self.geoms = [ElementGeometry.of(m) for m in hierarchy.levels]
        if weight == "l2":
            self.D = [assemble_lumped_diag(V, g) for V, g in zip(self.spaces, self.geoms)]
            self.M = [assemble_mass(V, g) for V, g in zip(self.spaces, self.geoms)]
        else:
            self.D = [assemble_load(V, c, g) for V, g in zip(self.spaces, self.geoms)]
            self.M = [assemble_weighted_mass(V, c, g) for V, g in zip(self.spaces, self.geoms)]
        fine = self.spaces[-1].dofs
        self.E = [
            hierarchy.prolongations[k][fine][:, V.dofs].tocsr()
            for k, V in enumerate(self.spaces)
        ]
        self.steps = [
            S[self.spaces[k + 1].dofs][:, self.spaces[k].dofs].tocsr()
            for k, S in enumerate(hierarchy.steps)
        ]
        self.schedule = gamma_schedule(self.eps, self.c_star, hierarchy.h())
        self._mass_solvers: dict[int, _Cholesky] = {}

    @property
    def J(self) -> int:
        return self.hierarchy.J

    @property
    def n(self) -> int:
        return self.spaces[-1].n

    def mass_solve(self, k: int, b: np.ndarray) -> np.ndarray:
        if k not in self._mass_solvers:
            self._mass_solvers[k] = _Cholesky(self.M[k])
        return self._mass_solvers[k](b)

    def level_operator(self, k: int) -> sp.csr_matrix:
        """``eps A_k + C_k`` on the interior dofs of level ``k``."""
        V, g = self.spaces[k], self.geoms[k]
        return (self.eps * assemble_stiffness(V, g) + assemble_weighted_mass(V, self.c, g)).tocsr()


def _check(ctx: MultilevelContext, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (ctx.n,):
        raise ValueError(f"expected a dual vector of length {ctx.n}, got shape {f.shape}")
    return f


def apply_bvp(ctx: MultilevelContext, f: np.ndarray) -> np.ndarray:
    f = _check(ctx, f)
    J = ctx.J
    out = ctx.schedule.gammas[J] * ctx.mass_solve(J, f)
    for j, dg in enumerate(ctx.schedule.differences):
        if dg != 0.0:
            out += dg * (ctx.E[j] @ ctx.mass_solve(j, ctx.E[j].T @ f))
    return out


def apply_sbvp(
    ctx: MultilevelContext, f: np.ndarray, variant: Literal["mass", "diag"] = "mass"
) -> np.ndarray:
    """Simplified BPV.  ``variant="mass"`` keeps ``M_J^{-1}`` on the finest
    level (the lower-iteration form); ``"diag"`` uses ``D_J^{-1}`` everywhere.
    """
    f = _check(ctx, f)
    J = ctx.J
    if variant == "mass":
        out = ctx.schedule.gammas[J] * ctx.mass_solve(J, f)
    elif variant == "diag":
        out = ctx.schedule.gammas[J] * (f / ctx.D[J])
    else:
        raise ValueError(f"unknown sBVP variant {variant!r}")
    for j, dg in enumerate(ctx.schedule.differences):
        if dg != 0.0:
            out += dg * (ctx.E[j] @ ((ctx.E[j].T @ f) / ctx.D[j]))
    return out


class MultigridGS:
    """Symmetric V(1,1) cycle with forward/backward Gauss-Seidel smoothing.

    ``ops[k]`` is the level-``k`` operator, ``steps[k]`` the prolongation from
    level ``k`` to ``k + 1``.  Level 0 is solved exactly.
    """

    def __init__(self, ops: Sequence[sp.spmatrix], steps: Sequence[sp.spmatrix]):
        if len(steps) != len(ops) - 1:
            raise ValueError("need one prolongation per pair of consecutive levels")
        self.ops = [sp.csr_matrix(A) for A in ops]
        self.steps = [sp.csr_matrix(P) for P in steps]
        self._lower, self._upper = [], []
        for A in self.ops:
            self._lower.append(self._triangular(sp.tril(A)))
            self._upper.append(self._triangular(sp.triu(A)))
        self._coarse = la.cho_factor(self.ops[0].toarray()) if self.ops[0].shape[0] else None

    @staticmethod
    def _triangular(T):
        T = sp.csc_matrix(T)
        if T.shape[0] == 0:
            return None
        return sla.splu(T, permc_spec="NATURAL", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))

    def cycle(self, k: int, b: np.ndarray) -> np.ndarray:
        if k == 0:
            return la.cho_solve(self._coarse, b) if self._coarse is not None else np.zeros_like(b)
        A, P = self.ops[k], self.steps[k - 1]
        x = self._lower[k].solve(b)
        x += P @ self.cycle(k - 1, P.T @ (b - A @ x))
        x += self._upper[k].solve(b - A @ x)
        return x

    def __call__(self, f: np.ndarray) -> np.ndarray:
        return self.cycle(len(self.ops) - 1, np.asarray(f, dtype=float))


def apply_mg_gs(ops: Sequence[sp.spmatrix], steps: Sequence[sp.spmatrix], f: np.ndarray) -> np.ndarray:
    return MultigridGS(ops, steps)(f)


@dataclass
class Preconditioner:
    kind: str
    apply: Callable[[np.ndarray], np.ndarray]
    n: int

    def __call__(self, f: np.ndarray) -> np.ndarray:
        return self.apply(f)

    def as_linear_operator(self) -> sla.LinearOperator:
        return sla.LinearOperator((self.n, self.n), matvec=self.apply, dtype=float)

    def matrix(self) -> np.ndarray:
        """Dense matrix of the operator (small problems only)."""
        return np.column_stack([self.apply(e) for e in np.eye(self.n)])


def make_preconditioner(
    kind: PrecondKind,
    ctx: MultilevelContext | None = None,
    op: sp.spmatrix | None = None,
) -> Preconditioner:
    """Build a preconditioner of the given kind.

    ``ctx`` is required for the multilevel kinds, ``op`` (the matrix of
    ``eps A + C`` on the finest interior dofs) for ``"exact"``.
    """
    if kind in ("bvp", "sbvp", "sbvp-diag", "mg-gs") and ctx is None:
        raise ValueError(f"{kind} needs a multilevel context")
    if kind == "bvp":
        return Preconditioner(kind, lambda f: apply_bvp(ctx, f), ctx.n)
    if kind == "sbvp":
        return Preconditioner(kind, lambda f: apply_sbvp(ctx, f, "mass"), ctx.n)
    if kind == "sbvp-diag":
        return Preconditioner(kind, lambda f: apply_sbvp(ctx, f, "diag"), ctx.n)
    if kind == "mg-gs":
        mg = MultigridGS([ctx.level_operator(k) for k in range(ctx.J + 1)], ctx.steps)
        return Preconditioner(kind, mg, ctx.n)
    if kind == "exact":
        if op is None:
            raise ValueError("exact preconditioner needs the operator")
        solve = _Cholesky(op)
        return Preconditioner(kind, solve, op.shape[0])
    if kind == "none":
        n = ctx.n if ctx is not None else op.shape[0]
        return Preconditioner(kind, lambda f: np.array(f, dtype=float), n)
    raise ValueError(f"unknown preconditioner {kind!r}")


def pcg_standard(
    op: sp.spmatrix,
    P: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    tol: float = 1e-10,
    maxiter: int = 10000,
    x0: np.ndarray | None = None,
    raise_on_failure: bool = True,
) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned CG stopped on the ``P``-weighted residual ``(r, P r)^{1/2}``."""
    report = SolveReport()
    x = np.zeros_like(rhs, dtype=float) if x0 is None else np.array(x0, dtype=float)
    r = rhs - op @ x
    z = P(r)
    rz = float(r @ z)
    report.residuals.append(math.sqrt(max(rz, 0.0)))
    d = z.copy()
    while report.residuals[-1] > tol:
        if report.iterations >= maxiter:
            if raise_on_failure:
                raise ConvergenceError(f"PCG did not converge in {maxiter} iterations", report)
            return x, report
        Ad = op @ d
        dAd = float(d @ Ad)
        if not dAd > 0:
            raise ConvergenceError("PCG breakdown: operator not positive on search direction", report)
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        z = P(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        report.alphas.append(alpha)
        report.betas.append(beta)
        rz = rz_new
        d = z + beta * d
        report.iterations += 1
        report.residuals.append(math.sqrt(max(rz, 0.0)))
    report.converged = True
    return x, report


def lanczos_extremes(alphas: Sequence[float], betas: Sequence[float]) -> tuple[float, float]:
    """Extreme Ritz values of ``P A`` from CG coefficients."""
    a, b = np.asarray(alphas), np.asarray(betas)
    k = a.size
    diag = 1.0 / a
    diag[1:] += b[: k - 1] / a[: k - 1]
    off = np.sqrt(b[: k - 1]) / a[: k - 1]
    ev = la.eigvalsh_tridiagonal(diag, off)
    return float(ev[0]), float(ev[-1])


def estimate_condition(
    op: sp.spmatrix,
    P: Callable[[np.ndarray], np.ndarray],
    steps: int = 80,
    seed: int = 0,
) -> float:
    """Lanczos estimate of ``kappa(P op)`` from ``steps`` CG iterations."""
    rhs = np.random.default_rng(seed).standard_normal(op.shape[0])
    steps = min(steps, op.shape[0])
    _, rep = pcg_standard(op, P, rhs, tol=0.0, maxiter=steps, raise_on_failure=False)
    lo, hi = lanczos_extremes(rep.alphas, rep.betas)
    return hi / lo
