"""Dense numerical kernels behind the estimation pipeline.

Three small solvers, sized for the problems this package generates
(a handful of variables, LMI blocks no larger than 7x7):

* :func:`solve_lp` -- dense two-phase simplex with Bland's anti-cycling rule,
  used by the cutting-plane loop and the convex-hull membership check.
* :func:`solve_maxdet` -- log-barrier Newton method for max-log-det problems
  with LMI blocks, linear equalities and inequalities.  Equalities are
  eliminated by a null-space parameterization before the barrier loop.
* :func:`sym_eig` / :func:`svd3` -- symmetric eigen and 3x3 singular value
  factorizations (LAPACK via NumPy, wrapped behind the package contracts).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import available_backends

DEFAULT_LP_TOL = 1e-9
DEFAULT_SDP_GAP = 1e-7

_SYM_TOL = 1e-12


class SolverError(Exception):
    """Raised on malformed solver inputs."""


@dataclass(frozen=True)
class SolveStatus:
    """Outcome of a solver call.

    kind is one of ``optimal``, ``infeasible``, ``unbounded``,
    ``iteration_limit``.  The residuals are primal feasibility
    (constraint violation) and a dual measure (reduced-cost slack for the
    LP, barrier gap estimate for the SDP; Farkas certificate residuals on
    infeasible LPs).
    """

    kind: str
    objective: float
    primal_residual: float
    dual_residual: float

    @property
    def optimal(self) -> bool:
        return self.kind == "optimal"


_KIND = {0: "optimal", 1: "infeasible", 2: "unbounded", 3: "iteration_limit"}


class LinearProgram:
    """maximize objective @ x  subject to  a @ x <= b per constraint row."""

    def __init__(self, objective, constraints=()):
        self.objective = np.asarray(objective, dtype=float).ravel()
        self.nvars = self.objective.size
        self._rows: list[np.ndarray] = []
        self._bounds: list[float] = []
        for a, b in constraints:
            self.add_constraint(a, b)

    def add_constraint(self, a, b):
        a = np.asarray(a, dtype=float).ravel()
        if a.size != self.nvars:
            raise SolverError(
                f"constraint row has {a.size} coefficients, expected {self.nvars}")
        self._rows.append(a)
        self._bounds.append(float(b))

    @property
    def nconstraints(self) -> int:
        return len(self._rows)

    def arrays(self):
        if not self._rows:
            raise SolverError("linear program has no constraints")
        return np.array(self._rows), np.array(self._bounds)


def solve_lp(lp: LinearProgram, tol: float = DEFAULT_LP_TOL,
             max_iter: int = 20000, backend=None):
    """Solve a :class:`LinearProgram`; returns ``(SolveStatus, x)``."""
    A, b = lp.arrays()
    impl = available_backends()[backend] if backend else _kernels
    code, x, obj, _, fp, fd = impl.simplex_solve(lp.objective, A, b,
                                                 max_iter=max_iter, tol=tol)
    kind = _KIND[code]
    if kind == "optimal" and fp > 10 * tol:
        kind = "iteration_limit"
    return SolveStatus(kind, obj, fp, fd), x


@dataclass(frozen=True)
class AffineMatrixMap:
    """Affine map x -> const + sum_i x_i coeff[i] into symmetric matrices.

    Inputs are symmetrized on construction; an asymmetry residual above
    1e-12 (relative to the entry scale) is rejected.
    """

    const: np.ndarray
    coeff: np.ndarray

    def __init__(self, const, coeff):
        const = np.asarray(const, dtype=float)
        coeff = np.asarray(coeff, dtype=float)
        n = const.shape[0]
        if const.shape != (n, n) or coeff.ndim != 3 or coeff.shape[1:] != (n, n):
            raise SolverError("affine map must consist of square matrices")
        for M in (const, *coeff):
            scale = max(1.0, np.abs(M).max())
            if np.abs(M - M.T).max() > _SYM_TOL * scale:
                raise SolverError("affine map matrix is not symmetric")
        object.__setattr__(self, "const", 0.5 * (const + const.T))
        object.__setattr__(self, "coeff", 0.5 * (coeff + coeff.transpose(0, 2, 1)))

    @property
    def size(self) -> int:
        return self.const.shape[0]

    @property
    def nvars(self) -> int:
        return self.coeff.shape[0]

    def __call__(self, x) -> np.ndarray:
        return self.const + np.tensordot(np.asarray(x, float), self.coeff, axes=1)


@dataclass
class MaxDetProblem:
    """maximize  linear_objective @ x + log det det_block(x)

    subject to every ``lmi_blocks`` map being PSD, ``A_eq x = b_eq`` and
    ``C_ineq x <= d_ineq``.  ``det_block`` may be None (pure linear
    objective, as in the calibration fit) and the objective vector may be
    omitted (pure max-volume problems).
    """

    nvars: int
    det_block: AffineMatrixMap | None = None
    lmi_blocks: list = field(default_factory=list)
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    C_ineq: np.ndarray | None = None
    d_ineq: np.ndarray | None = None
    linear_objective: np.ndarray | None = None

    def __post_init__(self):
        for blk in self.lmi_blocks:
            if blk.nvars != self.nvars:
                raise SolverError("LMI block variable count mismatch")
        if self.det_block is not None and self.det_block.nvars != self.nvars:
            raise SolverError("det block variable count mismatch")
        if self.A_eq is not None:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, float))
            self.b_eq = np.asarray(self.b_eq, float).ravel()
            if self.A_eq.shape != (self.b_eq.size, self.nvars):
                raise SolverError("equality system shape mismatch")
        if self.C_ineq is not None:
            self.C_ineq = np.atleast_2d(np.asarray(self.C_ineq, float))
            self.d_ineq = np.asarray(self.d_ineq, float).ravel()
            if self.C_ineq.shape != (self.d_ineq.size, self.nvars):
                raise SolverError("inequality system shape mismatch")
        if self.linear_objective is not None:
            self.linear_objective = np.asarray(self.linear_objective, float).ravel()
            if self.linear_objective.size != self.nvars:
                raise SolverError("objective length mismatch")

    def objective_value(self, x) -> float:
        val = 0.0
        if self.linear_objective is not None:
            val += float(self.linear_objective @ x)
        if self.det_block is not None:
            sign, logdet = np.linalg.slogdet(self.det_block(x))
            val += logdet if sign > 0 else -np.inf
        return val


def _null_space_parameterization(A, b):
    """x = x_p + N z with A x_p = b and A N = 0, N orthonormal columns."""
    U, s, Vt = np.linalg.svd(A)
    rank = int(np.sum(s > max(A.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)))
    x_p, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.linalg.norm(A @ x_p - b) > 1e-9 * max(1.0, np.linalg.norm(b)):
        return None, None
    N = Vt[rank:].T
    return x_p, N


def _pack(problem: MaxDetProblem, x_p, N):
    """Reduce to the kernel's packed z-space representation."""
    m = N.shape[1]
    sizes = []
    f0_parts = []
    fc_parts = []
    for blk in problem.lmi_blocks:
        n = blk.size
        sizes.append(n)
        f0_parts.append((blk.const + np.tensordot(x_p, blk.coeff, axes=1)).ravel())
        zc = np.tensordot(N.T, blk.coeff, axes=1)      # (m, n, n)
        fc_parts.append(zc.reshape(m, n * n))
    bsizes = np.array(sizes, dtype=np.int32)
    F0 = np.concatenate(f0_parts) if f0_parts else np.zeros(0)
    Fc = np.hstack(fc_parts) if fc_parts else np.zeros((m, 0))
    if problem.det_block is not None:
        blk = problem.det_block
        dn = blk.size
        D0 = (blk.const + np.tensordot(x_p, blk.coeff, axes=1)).ravel()
        Dc = np.tensordot(N.T, blk.coeff, axes=1).reshape(m, dn * dn)
    else:
        dn, D0, Dc = 0, np.zeros(0), np.zeros((m, 0))
    if problem.C_ineq is not None:
        C = problem.C_ineq @ N
        d = problem.d_ineq - problem.C_ineq @ x_p
    else:
        C, d = np.zeros((0, m)), np.zeros(0)
    if problem.linear_objective is not None:
        clin = N.T @ problem.linear_objective
    else:
        clin = np.zeros(m)
    return bsizes, F0, Fc, dn, D0, Dc, C, d, clin


def _strictly_feasible(packed, z, margin=0.0):
    bsizes, F0, Fc, dn, D0, Dc, C, d, _ = packed
    off = 0
    for n in bsizes:
        n = int(n)
        M = (F0[off:off + n * n] + z @ Fc[:, off:off + n * n]).reshape(n, n)
        if np.linalg.eigvalsh(M).min() <= margin:
            return False
        off += n * n
    if dn:
        M = (D0 + z @ Dc).reshape(dn, dn)
        if np.linalg.eigvalsh(M).min() <= margin:
            return False
    if d.size and np.any(d - C @ z <= margin):
        return False
    return True


def _phase1(packed, m, impl, hint=None):
    """Find a strictly feasible z for the packed problem, or None.

    Solves  max -s  s.t.  G_k(z) + s I >= 0,  C z - s <= d,  s <= shift+1
    starting from a trivially feasible (z0, large s).
    """
    bsizes, F0, Fc, dn, D0, Dc, C, d, _ = packed
    sizes = list(bsizes) + ([dn] if dn else [])
    F0a = np.concatenate([F0, D0]) if dn else F0
    Fca = np.hstack([Fc, Dc]) if dn else Fc
    aug_sizes = np.array(sizes, dtype=np.int32)
    # append the slack variable s with identity coefficient on every block
    s_col = np.concatenate([np.eye(int(n)).ravel() for n in sizes]) if sizes else np.zeros(0)
    Fca = np.vstack([Fca, s_col[None, :]]) if s_col.size else np.zeros((m + 1, 0))
    Caug = np.hstack([C, -np.ones((C.shape[0], 1))]) if C.shape[0] else np.zeros((0, m + 1))
    z0 = np.zeros(m) if hint is None else np.asarray(hint, float)
    shift = 1.0
    off = 0
    for n in bsizes:
        n = int(n)
        M = (F0[off:off + n * n] + z0 @ Fc[:, off:off + n * n]).reshape(n, n)
        shift = max(shift, -np.linalg.eigvalsh(M).min() + 1.0)
        off += n * n
    if dn:
        M = (D0 + z0 @ Dc).reshape(dn, dn)
        shift = max(shift, -np.linalg.eigvalsh(M).min() + 1.0)
    if d.size:
        shift = max(shift, float((C @ z0 - d).max()) + 1.0)
    # keep the objective bounded: s >= -1
    srow = np.zeros(m + 1)
    srow[m] = -1.0
    Caug = np.vstack([Caug, srow[None, :]])
    daug = np.concatenate([d, [1.0]])
    clin = np.zeros(m + 1)
    clin[m] = -1.0
    x0 = np.concatenate([z0, [shift]])
    code, zs, _, _ = impl.maxdet_solve(aug_sizes, F0a, Fca, 0, np.zeros(0),
                                       np.zeros((m + 1, 0)), Caug, daug, clin,
                                       x0, 1e-3, max_newton=1200)
    if code not in (0, 3):
        return None
    z, s = zs[:m], zs[m]
    if s < -1e-6 and _strictly_feasible(packed, z):
        return z
    return None


def solve_maxdet(problem: MaxDetProblem, tol: float = DEFAULT_SDP_GAP,
                 x0=None, max_newton: int = 2000, backend=None):
    """Solve a :class:`MaxDetProblem`; returns ``(SolveStatus, x)``.

    ``x0``, when given, must satisfy the equalities and be strictly feasible
    for the cone constraints; otherwise a phase-I problem is solved first.
    The optimality certificate is the barrier gap estimate nu/t <= tol.
    """
    impl = available_backends()[backend] if backend else _kernels
    n = problem.nvars
    if problem.A_eq is not None and problem.A_eq.size:
        x_p, N = _null_space_parameterization(problem.A_eq, problem.b_eq)
        if x_p is None:
            return SolveStatus("infeasible", np.nan, np.inf, np.inf), np.zeros(n)
    else:
        x_p, N = np.zeros(n), np.eye(n)
    packed = _pack(problem, x_p, N)
    m = N.shape[1]

    z0 = None
    if x0 is not None:
        cand = N.T @ (np.asarray(x0, float) - x_p)
        if _strictly_feasible(packed, cand):
            z0 = cand
    if z0 is None:
        z0 = _phase1(packed, m, impl, hint=None if x0 is None else N.T @ (np.asarray(x0, float) - x_p))
        if z0 is None:
            return SolveStatus("infeasible", np.nan, np.inf, np.inf), np.zeros(n)

    bsizes, F0, Fc, dn, D0, Dc, C, d, clin = packed
    code, z, iters, t_final = impl.maxdet_solve(
        bsizes, F0, Fc, dn, D0, Dc, C, d, clin, z0, tol, max_newton=max_newton)
    x = x_p + N @ z
    nu = int(np.sum(bsizes)) + d.size
    gap = nu / t_final if t_final > 0 else np.inf

    primal = 0.0
    for blk in problem.lmi_blocks:
        primal = max(primal, -float(np.linalg.eigvalsh(blk(x)).min()))
    if problem.A_eq is not None and problem.A_eq.size:
        primal = max(primal, float(np.abs(problem.A_eq @ x - problem.b_eq).max()))
    if problem.C_ineq is not None:
        primal = max(primal, float(max(0.0, (problem.C_ineq @ x - problem.d_ineq).max())))
    kind = _KIND[code]
    if kind == "optimal" and primal > 1e-8:
        kind = "iteration_limit"
    return SolveStatus(kind, problem.objective_value(x), max(primal, 0.0), gap), x


def sym_eig(M):
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues ascending, orthonormal eigenvectors as columns).
    Rejects input whose asymmetry exceeds 1e-12 relative to its scale.
    """
    M = np.asarray(M, dtype=float)
    scale = max(1.0, np.abs(M).max())
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SolverError("sym_eig expects a square matrix")
    if np.abs(M - M.T).max() > _SYM_TOL * scale:
        raise SolverError("sym_eig expects a symmetric matrix")
    w, V = np.linalg.eigh(M)
    return w, V


def svd3(M):
    """SVD of a 3x3 matrix: M = U @ diag(s) @ V.T with s descending >= 0."""
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3):
        raise SolverError("svd3 expects a 3x3 matrix")
    U, s, Vt = np.linalg.svd(M)
    return U, s, Vt.T
