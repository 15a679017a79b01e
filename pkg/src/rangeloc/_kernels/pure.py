"""NumPy implementations of the two dense solver kernels.

This module is both the reference implementation and the fallback used when
the compiled extension (``rangeloc._kernels._core``) is unavailable.  The two
entry points, :func:`simplex_solve` and :func:`maxdet_solve`, have identical
signatures and semantics in both backends.
"""

import numpy as np

OPTIMAL = 0
INFEASIBLE = 1
UNBOUNDED = 2
ITERATION_LIMIT = 3

_RATIO_TIE = 1e-12


def _pivot(T, basis, row, col):
    piv = T[row, col]
    T[row] /= piv
    column = T[:, col].copy()
    column[row] = 0.0
    T -= np.outer(column, T[row])
    # kill roundoff in the pivot column so Bland's rule sees exact zeros
    T[:, col] = 0.0
    T[row, col] = 1.0
    basis[row] = col


def _pivot_loop(T, basis, ncols, tol, max_iter):
    """Bland-rule pivoting on a minimization tableau. Returns (status, iters)."""
    m = basis.size
    iters = 0
    while True:
        z = T[m, :ncols]
        entering = np.flatnonzero(z < -tol)
        if entering.size == 0:
            return OPTIMAL, iters
        if iters >= max_iter:
            return ITERATION_LIMIT, iters
        col = int(entering[0])
        coeff = T[:m, col]
        pos = coeff > tol
        if not pos.any():
            return UNBOUNDED, iters
        rows = np.flatnonzero(pos)
        ratios = T[rows, -1] / coeff[rows]
        best = ratios.min()
        ties = rows[ratios <= best + _RATIO_TIE]
        leave = int(ties[np.argmin(basis[ties])])
        _pivot(T, basis, leave, col)
        iters += 1


def simplex_solve(c, A, b, max_iter=20000, tol=1e-9):
    """Maximize ``c @ x`` subject to ``A @ x <= b`` with x free.

    Dense two-phase tableau simplex with Bland's anti-cycling rule.  Free
    variables are split as x = u - w with u, w >= 0.

    Returns ``(status, x, objective, iters, farkas_primal, farkas_dual)``.
    On INFEASIBLE the farkas values are ``(max|lam @ A|, lam @ b)`` for the
    phase-I dual certificate lam >= 0; otherwise they are residuals of the
    returned solution (primal feasibility, dual reduced-cost slack).
    """
    c = np.ascontiguousarray(c, dtype=float)
    A = np.ascontiguousarray(A, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    m, n = A.shape
    nbase = 2 * n + m

    flip = b < 0
    sgn = np.where(flip, -1.0, 1.0)
    art_rows = np.flatnonzero(flip)
    na = art_rows.size
    ncols = nbase + na

    T = np.zeros((m + 1, ncols + 1))
    T[:m, :n] = A * sgn[:, None]
    T[:m, n:2 * n] = -T[:m, :n]
    T[:m, 2 * n:nbase] = np.diag(sgn)
    T[:m, -1] = b * sgn
    basis = 2 * n + np.arange(m)
    for k, r in enumerate(art_rows):
        T[r, nbase + k] = 1.0
        basis[r] = nbase + k

    iters = 0
    if na:
        T[m] = 0.0
        T[m, nbase:ncols] = 1.0
        for r in art_rows:
            T[m] -= T[r]
        status, it1 = _pivot_loop(T, basis, ncols, tol, max_iter)
        iters += it1
        if status == ITERATION_LIMIT:
            return ITERATION_LIMIT, np.zeros(n), np.nan, iters, np.nan, np.nan
        phase1 = -T[m, -1]
        if phase1 > max(1e-7, 10 * tol):
            lam = np.maximum(T[m, 2 * n:nbase], 0.0)
            fp = float(np.abs(lam @ A).max()) if m else 0.0
            fd = float(lam @ b)
            return INFEASIBLE, np.zeros(n), np.nan, iters, fp, fd
        # drive remaining artificials out of the basis (degenerate rows)
        drop = []
        for i in range(m):
            if basis[i] >= nbase:
                nz = np.flatnonzero(np.abs(T[i, :nbase]) > tol)
                if nz.size:
                    _pivot(T, basis, i, int(nz[0]))
                else:
                    drop.append(i)
        if drop:
            keep = [i for i in range(m) if i not in drop]
            T = np.vstack([T[keep], T[m:m + 1]])
            basis = basis[keep]
            m = basis.size
        T = np.delete(T, np.s_[nbase:ncols], axis=1)

    c2 = np.concatenate([-c, c, np.zeros(m)])
    T[m, :nbase] = c2
    T[m, -1] = 0.0
    for i in range(m):
        cb = c2[basis[i]]
        if cb != 0.0:
            T[m] -= cb * T[i]

    status, it2 = _pivot_loop(T, basis, nbase, tol, max_iter - iters)
    iters += it2

    xstd = np.zeros(nbase)
    xstd[basis] = T[:m, -1]
    x = xstd[:n] - xstd[n:2 * n]
    if status == UNBOUNDED:
        return UNBOUNDED, x, np.inf, iters, np.nan, np.nan
    obj = float(c @ x)
    primal = float(max(0.0, (A @ x - b).max())) if A.size else 0.0
    dual = float(max(0.0, -T[m, :nbase].min()))
    return status, x, obj, iters, primal, dual


class _Group:
    """LMI blocks of one common size, stacked for batched linear algebra."""

    def __init__(self, size, consts, coeffs):
        self.n = size
        self.F0 = np.stack(consts)                    # (B, n, n)
        self.Fc = np.stack(coeffs, axis=1)            # (m, B, n, n)
        mdim = self.Fc.shape[0]
        self.flat = np.ascontiguousarray(self.Fc.reshape(mdim, -1))

    def eval(self, x):
        B, n = self.F0.shape[0], self.n
        return self.F0 + (x @ self.flat).reshape(B, n, n)


def _build_groups(bsizes, F0, Fc):
    groups = {}
    off = 0
    for n in bsizes:
        n = int(n)
        c0 = F0[off:off + n * n].reshape(n, n)
        cc = Fc[:, off:off + n * n].reshape(-1, n, n)
        groups.setdefault(n, ([], []))
        groups[n][0].append(c0)
        groups[n][1].append(cc)
        off += n * n
    return [_Group(n, c0s, ccs) for n, (c0s, ccs) in sorted(groups.items())]


def _chol_logdet(mats):
    """Batched Cholesky log-determinant; returns None when not PD."""
    try:
        L = np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        return None
    diag = np.diagonal(L, axis1=-2, axis2=-1)
    if not np.all(diag > 0.0):
        return None
    return 2.0 * float(np.log(diag).sum())


def maxdet_solve(bsizes, F0, Fc, det_n, D0, Dc, C, d, clin, x0,
                 tol, t0=1.0, mu=10.0, newton_tol=1e-9, max_newton=800):
    """Log-barrier method for  max  clin @ x + log det P(x)

    subject to G_k(x) >= 0 (PSD) for each LMI block and C x <= d, where
    G_k(x) = F0_k + sum_i x_i Fc_k[i] (packed flat, row-major, block sizes in
    ``bsizes``) and P(x) = D0 + sum_i x_i Dc[i] when ``det_n > 0``.

    ``x0`` must be strictly feasible.  Barrier parameter grows by ``mu`` per
    stage until the gap estimate nu/t falls below ``tol``.

    Returns ``(status, x, newton_iters, t_final)``.
    """
    x = np.array(x0, dtype=float, copy=True)
    mdim = x.size
    groups = _build_groups(bsizes, F0, Fc)
    det = _Group(det_n, [D0.reshape(det_n, det_n)],
                 [Dc.reshape(mdim, det_n, det_n)]) if det_n else None
    C = np.asarray(C, dtype=float).reshape(-1, mdim)
    d = np.asarray(d, dtype=float).reshape(-1)
    clin = np.asarray(clin, dtype=float)
    nu = int(sum(int(s) for s in bsizes)) + d.size

    def value(xv, t):
        val = -t * float(clin @ xv)
        for g in groups:
            ld = _chol_logdet(g.eval(xv))
            if ld is None:
                return None
            val -= ld
        if det is not None:
            ld = _chol_logdet(det.eval(xv))
            if ld is None:
                return None
            val -= t * ld
        if d.size:
            s = d - C @ xv
            if np.any(s <= 0.0):
                return None
            val -= float(np.log(s).sum())
        return val

    def derivs(xv, t):
        g = -t * clin.copy()
        H = np.zeros((mdim, mdim))
        for grp, weight in [(gr, 1.0) for gr in groups] + ([(det, t)] if det is not None else []):
            M = grp.eval(xv)
            Minv = np.linalg.inv(M)
            g -= weight * np.einsum('bpq,ibqp->i', Minv, grp.Fc)
            Y = np.einsum('bpq,ibqr->ibpr', Minv, grp.Fc)
            H += weight * np.einsum('ibpr,jbrp->ij', Y, Y)
        if d.size:
            s = d - C @ xv
            g += C.T @ (1.0 / s)
            H += (C / (s * s)[:, None]).T @ C
        return g, H

    def newton_direction(grad, H):
        # Jacobi scaling keeps the Cholesky viable at the extreme
        # conditioning the barrier reaches near convergence.
        dscale = np.sqrt(np.maximum(np.diag(H), 1e-300))
        Hs = H / dscale[:, None] / dscale[None, :]
        gs = grad / dscale
        jitter = 0.0
        for _ in range(6):
            try:
                L = np.linalg.cholesky(Hs + jitter * np.eye(mdim))
                break
            except np.linalg.LinAlgError:
                jitter = max(1e-14, 10.0 * jitter, 1e-12)
        else:
            return None
        y = np.linalg.solve(L.T, np.linalg.solve(L, -gs))
        return y / dscale

    if value(x, t0) is None:
        raise ValueError("maxdet_solve: starting point is not strictly feasible")

    t = t0
    total = 0
    scale = max(1.0, abs(float(clin @ x)))
    while True:
        converged = False
        for _ in range(100):
            if total >= max_newton:
                return ITERATION_LIMIT, x, total, t
            grad, H = derivs(x, t)
            delta = newton_direction(grad, H)
            if delta is None:
                return ITERATION_LIMIT, x, total, t
            lam2 = float(-grad @ delta)
            f0 = value(x, t)
            # decrements below the float64 resolution of f cannot be verified
            tol_eff = max(newton_tol, 1e-13 * (1.0 + abs(f0)))
            if lam2 / 2.0 <= tol_eff:
                converged = True
                break
            alpha = 1.0
            accepted = False
            while alpha >= 1e-14:
                fn = value(x + alpha * delta, t)
                if fn is not None and fn <= f0 - 0.25 * alpha * lam2:
                    accepted = True
                    break
                alpha *= 0.5
            total += 1
            if not accepted:
                if lam2 / 2.0 <= 1e-6 * max(1.0, scale):
                    converged = True
                    break
                return ITERATION_LIMIT, x, total, t
            xn = x + alpha * delta
            if np.array_equal(xn, x):
                # step below float64 resolution: numerically centered
                converged = True
                break
            x = xn
        if not converged:
            return ITERATION_LIMIT, x, total, t
        if nu == 0 or nu / t <= tol:
            return OPTIMAL, x, total, t
        t *= mu
