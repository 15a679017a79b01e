# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the dense solver kernels.

Mirrors ``rangeloc._kernels.pure`` (same entry points, same control flow,
same tolerances); the NumPy module is the reference for semantics.
"""

import numpy as np

from libc.math cimport fabs, log, sqrt

OPTIMAL = 0
INFEASIBLE = 1
UNBOUNDED = 2
ITERATION_LIMIT = 3

cdef double RATIO_TIE = 1e-12


cdef void _pivot(double[:, ::1] T, long[::1] basis, Py_ssize_t row, Py_ssize_t col) noexcept nogil:
    cdef Py_ssize_t nrows = T.shape[0]
    cdef Py_ssize_t ncols = T.shape[1]
    cdef Py_ssize_t r, j
    cdef double piv = T[row, col]
    cdef double factor
    for j in range(ncols):
        T[row, j] /= piv
    for r in range(nrows):
        if r == row:
            continue
        factor = T[r, col]
        if factor != 0.0:
            for j in range(ncols):
                T[r, j] -= factor * T[row, j]
    for r in range(nrows):
        T[r, col] = 0.0
    T[row, col] = 1.0
    basis[row] = col


cdef int _pivot_loop(double[:, ::1] T, long[::1] basis, Py_ssize_t ncols,
                     double tol, long max_iter, long* iters) noexcept nogil:
    """Bland-rule pivoting; returns 0 optimal, 2 unbounded, 3 iteration limit."""
    cdef Py_ssize_t m = basis.shape[0]
    cdef Py_ssize_t rhs = T.shape[1] - 1
    cdef Py_ssize_t col, i, leave
    cdef double best, ratio
    cdef bint found
    while True:
        col = -1
        for i in range(ncols):
            if T[m, i] < -tol:
                col = i
                break
        if col < 0:
            return 0
        if iters[0] >= max_iter:
            return 3
        found = False
        best = 0.0
        leave = -1
        for i in range(m):
            if T[i, col] > tol:
                ratio = T[i, rhs] / T[i, col]
                if not found or ratio < best - RATIO_TIE:
                    found = True
                    best = ratio
                    leave = i
                elif ratio <= best + RATIO_TIE and basis[i] < basis[leave]:
                    leave = i
        if not found:
            return 2
        _pivot(T, basis, leave, col)
        iters[0] += 1


def simplex_solve(c, A, b, max_iter=20000, tol=1e-9):
    """Maximize ``c @ x`` s.t. ``A @ x <= b``, x free. See pure.simplex_solve."""
    c = np.ascontiguousarray(c, dtype=np.float64)
    A = np.ascontiguousarray(A, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t m = A.shape[0]
    cdef Py_ssize_t n = A.shape[1]
    cdef Py_ssize_t nbase = 2 * n + m

    flip = b < 0
    sgn = np.where(flip, -1.0, 1.0)
    art_rows = np.flatnonzero(flip)
    cdef Py_ssize_t na = art_rows.size
    cdef Py_ssize_t ncols = nbase + na

    Tarr = np.zeros((m + 1, ncols + 1))
    Tarr[:m, :n] = A * sgn[:, None]
    Tarr[:m, n:2 * n] = -Tarr[:m, :n]
    Tarr[:m, 2 * n:nbase] = np.diag(sgn)
    Tarr[:m, -1] = b * sgn
    basis_arr = 2 * n + np.arange(m, dtype=np.int64)
    cdef Py_ssize_t k
    for k in range(na):
        Tarr[art_rows[k], nbase + k] = 1.0
        basis_arr[art_rows[k]] = nbase + k

    cdef double[:, ::1] T = Tarr
    cdef long[::1] basis = basis_arr
    cdef long iters = 0
    cdef int status
    cdef double tolc = tol
    cdef long maxit = max_iter

    if na:
        Tarr[m] = 0.0
        Tarr[m, nbase:ncols] = 1.0
        for r in art_rows:
            Tarr[m] -= Tarr[r]
        status = _pivot_loop(T, basis, ncols, tolc, maxit, &iters)
        if status == 3:
            return ITERATION_LIMIT, np.zeros(n), np.nan, int(iters), np.nan, np.nan
        phase1 = -Tarr[m, -1]
        if phase1 > max(1e-7, 10 * tol):
            lam = np.maximum(Tarr[m, 2 * n:nbase], 0.0)
            fp = float(np.abs(lam @ A).max()) if m else 0.0
            fd = float(lam @ b)
            return INFEASIBLE, np.zeros(n), np.nan, int(iters), fp, fd
        drop = []
        for i in range(m):
            if basis_arr[i] >= nbase:
                nz = np.flatnonzero(np.abs(Tarr[i, :nbase]) > tol)
                if nz.size:
                    _pivot(T, basis, i, <Py_ssize_t> nz[0])
                else:
                    drop.append(i)
        if drop:
            keep = [i for i in range(m) if i not in drop]
            Tarr = np.ascontiguousarray(np.vstack([Tarr[keep], Tarr[m:m + 1]]))
            basis_arr = np.ascontiguousarray(basis_arr[keep])
            m = basis_arr.size
        Tarr = np.ascontiguousarray(np.delete(Tarr, np.s_[nbase:ncols], axis=1))
        T = Tarr
        basis = basis_arr

    c2 = np.concatenate([-c, c, np.zeros(m)])
    Tarr[m, :nbase] = c2
    Tarr[m, -1] = 0.0
    for i in range(m):
        cb = c2[basis_arr[i]]
        if cb != 0.0:
            Tarr[m] -= cb * Tarr[i]

    status = _pivot_loop(T, basis, nbase, tolc, maxit, &iters)

    xstd = np.zeros(nbase)
    xstd[basis_arr] = Tarr[:m, -1]
    x = xstd[:n] - xstd[n:2 * n]
    if status == 2:
        return UNBOUNDED, x, np.inf, int(iters), np.nan, np.nan
    obj = float(c @ x)
    primal = float(max(0.0, (A @ x - b).max())) if A.size else 0.0
    dual = float(max(0.0, -Tarr[m, :nbase].min()))
    return int(status), x, obj, int(iters), primal, dual


cdef int _chol(double* a, Py_ssize_t n) noexcept nogil:
    """In-place lower Cholesky; returns 1 when the matrix is not PD."""
    cdef Py_ssize_t i, j, p
    cdef double s
    for j in range(n):
        s = a[j * n + j]
        for p in range(j):
            s -= a[j * n + p] * a[j * n + p]
        if s <= 0.0:
            return 1
        a[j * n + j] = sqrt(s)
        for i in range(j + 1, n):
            s = a[i * n + j]
            for p in range(j):
                s -= a[i * n + p] * a[j * n + p]
            a[i * n + j] = s / a[j * n + j]
    return 0


cdef double _chol_logdet(double* L, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    cdef double s = 0.0
    for j in range(n):
        s += log(L[j * n + j])
    return 2.0 * s


cdef void _chol_inverse(double* L, double* out, double* work, Py_ssize_t n) noexcept nogil:
    """Dense inverse from a lower Cholesky factor: out = (L L^T)^{-1}."""
    cdef Py_ssize_t col, i, p
    cdef double s
    for col in range(n):
        for i in range(n):
            s = 1.0 if i == col else 0.0
            for p in range(i):
                s -= L[i * n + p] * work[p]
            work[i] = s / L[i * n + i]
        for i in range(n - 1, -1, -1):
            s = work[i]
            for p in range(i + 1, n):
                s -= L[p * n + i] * out[p * n + col]
            out[i * n + col] = s / L[i * n + i]


cdef void _eval_block(double* dst, const double* F0, const double* Fc, const double* x,
                      Py_ssize_t m, Py_ssize_t stride, Py_ssize_t nn) noexcept nogil:
    """dst = F0 + sum_i x[i] * Fc[i*stride : i*stride+nn]."""
    cdef Py_ssize_t i, j
    cdef double xi
    for j in range(nn):
        dst[j] = F0[j]
    for i in range(m):
        xi = x[i]
        if xi != 0.0:
            for j in range(nn):
                dst[j] += xi * Fc[i * stride + j]


cdef void _chol_solve_vec(const double* L, const double* rhs, double* out, Py_ssize_t n) noexcept nogil:
    """Solve (L L^T) out = rhs given the lower Cholesky factor L."""
    cdef Py_ssize_t i, p
    cdef double s
    for i in range(n):
        s = rhs[i]
        for p in range(i):
            s -= L[i * n + p] * out[p]
        out[i] = s / L[i * n + i]
    for i in range(n - 1, -1, -1):
        s = out[i]
        for p in range(i + 1, n):
            s -= L[p * n + i] * out[p]
        out[i] = s / L[i * n + i]


cdef void _matmul(const double* a, const double* b, double* out, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j, p
    cdef double s
    for i in range(n):
        for j in range(n):
            s = 0.0
            for p in range(n):
                s += a[i * n + p] * b[p * n + j]
            out[i * n + j] = s


cdef int _barrier_value(int K, const int* bs, const long* offs,
                        const double* F0, const double* Fc, Py_ssize_t S,
                        Py_ssize_t det_nn, const double* D0, const double* Dc, Py_ssize_t dS,
                        Py_ssize_t q, const double* C, const double* dvec,
                        const double* clin, const double* xv, Py_ssize_t m,
                        double t, double* chb, double* val_out) noexcept nogil:
    """Barrier value at xv; returns 1 when xv is not strictly feasible."""
    cdef double val = 0.0
    cdef Py_ssize_t bi, ii, jj, nn
    cdef double sl
    for ii in range(m):
        val -= t * clin[ii] * xv[ii]
    for bi in range(K):
        nn = bs[bi]
        _eval_block(chb, F0 + offs[bi], Fc + offs[bi], xv, m, S, nn * nn)
        if _chol(chb, nn):
            return 1
        val -= _chol_logdet(chb, nn)
    if det_nn:
        _eval_block(chb, D0, Dc, xv, m, dS, det_nn * det_nn)
        if _chol(chb, det_nn):
            return 1
        val -= t * _chol_logdet(chb, det_nn)
    for ii in range(q):
        sl = dvec[ii]
        for jj in range(m):
            sl -= C[ii * m + jj] * xv[jj]
        if sl <= 0.0:
            return 1
        val -= log(sl)
    val_out[0] = val
    return 0


cdef int _barrier_derivs(int K, const int* bs, const long* offs,
                         const double* F0, const double* Fc, Py_ssize_t S,
                         Py_ssize_t det_nn, const double* D0, const double* Dc, Py_ssize_t dS,
                         Py_ssize_t q, const double* C, const double* dvec,
                         const double* clin, const double* xv, Py_ssize_t m,
                         double t, double* chb, double* gin, double* colw,
                         double* Y, double* grad, double* H) noexcept nogil:
    """Gradient and Hessian of the barrier at a strictly feasible xv."""
    cdef Py_ssize_t bi, ii, jj, aa, bb, nn
    cdef double weight, tr, sl
    cdef const double* coef
    cdef Py_ssize_t stride, base
    for ii in range(m):
        grad[ii] = -t * clin[ii]
        for jj in range(m):
            H[ii * m + jj] = 0.0
    for bi in range(K + (1 if det_nn else 0)):
        if bi < K:
            nn = bs[bi]
            weight = 1.0
            coef = Fc
            stride = S
            base = offs[bi]
            _eval_block(chb, F0 + base, Fc + base, xv, m, S, nn * nn)
        else:
            nn = det_nn
            weight = t
            coef = Dc
            stride = dS
            base = 0
            _eval_block(chb, D0, Dc, xv, m, dS, nn * nn)
        if _chol(chb, nn):
            return 1
        _chol_inverse(chb, gin, colw, nn)
        for ii in range(m):
            _matmul(gin, coef + ii * stride + base, Y + ii * nn * nn, nn)
            tr = 0.0
            for aa in range(nn):
                tr += Y[ii * nn * nn + aa * nn + aa]
            grad[ii] -= weight * tr
        for ii in range(m):
            for jj in range(ii + 1):
                tr = 0.0
                for aa in range(nn):
                    for bb in range(nn):
                        tr += Y[ii * nn * nn + aa * nn + bb] * Y[jj * nn * nn + bb * nn + aa]
                H[ii * m + jj] += weight * tr
                if ii != jj:
                    H[jj * m + ii] += weight * tr
    for ii in range(q):
        sl = dvec[ii]
        for jj in range(m):
            sl -= C[ii * m + jj] * xv[jj]
        for jj in range(m):
            grad[jj] += C[ii * m + jj] / sl
        for jj in range(m):
            for aa in range(m):
                H[jj * m + aa] += C[ii * m + jj] * C[ii * m + aa] / (sl * sl)
    return 0


def maxdet_solve(bsizes, F0, Fc, det_n, D0, Dc, C, d, clin, x0,
                 tol, t0=1.0, mu=10.0, newton_tol=1e-9, max_newton=800):
    """Log-barrier max-det solve; see pure.maxdet_solve for the contract."""
    bsizes = np.ascontiguousarray(bsizes, dtype=np.int32)
    cdef int K = bsizes.shape[0]
    cdef Py_ssize_t det_nn = int(det_n)
    F0 = np.ascontiguousarray(F0, dtype=np.float64).ravel()
    x_arr = np.array(x0, dtype=np.float64, copy=True).ravel()
    cdef Py_ssize_t m = x_arr.size
    Fc = np.ascontiguousarray(Fc, dtype=np.float64).reshape(m, -1)
    D0 = np.ascontiguousarray(D0, dtype=np.float64).ravel()
    Dc = np.ascontiguousarray(Dc, dtype=np.float64).reshape(m, -1)
    C = np.ascontiguousarray(C, dtype=np.float64).reshape(-1, m)
    d = np.ascontiguousarray(d, dtype=np.float64).ravel()
    clin = np.ascontiguousarray(clin, dtype=np.float64).ravel()
    cdef Py_ssize_t q = d.size

    cdef int[::1] bs = bsizes
    offs_arr = np.zeros(K + 1, dtype=np.int64)
    cdef Py_ssize_t kk
    cdef Py_ssize_t nmax = det_nn
    for kk in range(K):
        offs_arr[kk + 1] = offs_arr[kk] + bs[kk] * bs[kk]
        if bs[kk] > nmax:
            nmax = bs[kk]
    cdef long[::1] offs = offs_arr
    cdef Py_ssize_t S = offs_arr[K]
    nu_py = int(np.sum(bsizes)) + q
    cdef double nu = nu_py

    if Fc.shape[1] == 0:
        Fc = np.zeros((m, 1))
    if Dc.shape[1] == 0:
        Dc = np.zeros((m, 1))
    if C.shape[0] == 0:
        C = np.zeros((1, m))
    if d.size == 0:
        d = np.zeros(1)
    if F0.size == 0:
        F0 = np.zeros(1)
    if D0.size == 0:
        D0 = np.zeros(1)

    cdef double[::1] F0v = F0
    cdef double[:, ::1] Fcv = Fc
    cdef double[::1] D0v = D0
    cdef double[:, ::1] Dcv = Dc
    cdef double[:, ::1] Cv = C
    cdef double[::1] dv = d
    cdef double[::1] cl = clin
    cdef double[::1] x = x_arr
    cdef Py_ssize_t dS = Dcv.shape[1]
    cdef Py_ssize_t Sstride = Fcv.shape[1]

    if nmax == 0:
        nmax = 1
    chb_arr = np.zeros(nmax * nmax)
    gin_arr = np.zeros(nmax * nmax)
    colw_arr = np.zeros(nmax)
    Y_arr = np.zeros(m * nmax * nmax)
    grad_arr = np.zeros(m)
    H_arr = np.zeros(m * m)
    Hs_arr = np.zeros(m * m)
    Hc_arr = np.zeros(m * m)
    delta_arr = np.zeros(m)
    xt_arr = np.zeros(m)
    dscale_arr = np.zeros(m)
    gs_arr = np.zeros(m)
    yw_arr = np.zeros(m)
    rw_arr = np.zeros(m)
    cdef double[::1] chb = chb_arr
    cdef double[::1] gin = gin_arr
    cdef double[::1] colw = colw_arr
    cdef double[::1] Yv = Y_arr
    cdef double[::1] grad = grad_arr
    cdef double[::1] Hv = H_arr
    cdef double[::1] Hsv = Hs_arr
    cdef double[::1] Hcv = Hc_arr
    cdef double[::1] delta = delta_arr
    cdef double[::1] xt = xt_arr
    cdef double[::1] dsc = dscale_arr
    cdef double[::1] gsv = gs_arr
    cdef double[::1] yw = yw_arr
    cdef double[::1] rw = rw_arr

    cdef double fval = 0.0
    if _barrier_value(K, &bs[0] if K else NULL, &offs[0], &F0v[0], &Fcv[0, 0], Sstride,
                      det_nn, &D0v[0], &Dcv[0, 0], dS, q, &Cv[0, 0], &dv[0],
                      &cl[0], &x[0], m, t0, &chb[0], &fval):
        raise ValueError("maxdet_solve: starting point is not strictly feasible")

    cdef double t = t0
    cdef long total = 0
    cdef long max_newton_c = max_newton
    cdef double newton_tol_c = newton_tol
    cdef double tol_c = tol
    cdef double mu_c = mu
    cdef double scale = max(1.0, abs(float(clin @ x_arr)))
    cdef double lam2, f0, fn_, alpha, jitter, s, acc
    cdef bint converged, accepted, solved, feas, moved
    cdef Py_ssize_t attempt, i, j, p

    while True:
        converged = False
        for _ in range(100):
            if total >= max_newton_c:
                return ITERATION_LIMIT, x_arr, int(total), t
            if _barrier_derivs(K, &bs[0] if K else NULL, &offs[0], &F0v[0], &Fcv[0, 0], Sstride,
                               det_nn, &D0v[0], &Dcv[0, 0], dS, q, &Cv[0, 0], &dv[0],
                               &cl[0], &x[0], m, t, &chb[0], &gin[0], &colw[0],
                               &Yv[0], &grad[0], &Hv[0]):
                return ITERATION_LIMIT, x_arr, int(total), t
            # Jacobi-scaled Newton system with one refinement pass; the
            # scaling keeps the Cholesky viable at extreme conditioning.
            for i in range(m):
                acc = Hv[i * m + i]
                dsc[i] = sqrt(acc) if acc > 1e-300 else 1e-150
            for i in range(m):
                for j in range(m):
                    Hsv[i * m + j] = Hv[i * m + j] / (dsc[i] * dsc[j])
                gsv[i] = grad[i] / dsc[i]
            solved = False
            jitter = 0.0
            for attempt in range(6):
                for i in range(m):
                    for j in range(m):
                        Hcv[i * m + j] = Hsv[i * m + j]
                    Hcv[i * m + i] += jitter
                if _chol(&Hcv[0], m) == 0:
                    solved = True
                    break
                jitter = max(1e-14, 10.0 * jitter, 1e-12)
            if not solved:
                return ITERATION_LIMIT, x_arr, int(total), t
            for i in range(m):
                rw[i] = -gsv[i]
            _chol_solve_vec(&Hcv[0], &rw[0], &yw[0], m)
            for i in range(m):
                delta[i] = yw[i] / dsc[i]
            lam2 = 0.0
            for i in range(m):
                lam2 -= grad[i] * delta[i]
            _barrier_value(K, &bs[0] if K else NULL, &offs[0], &F0v[0], &Fcv[0, 0], Sstride,
                           det_nn, &D0v[0], &Dcv[0, 0], dS, q, &Cv[0, 0], &dv[0],
                           &cl[0], &x[0], m, t, &chb[0], &f0)
            # decrements below the float64 resolution of f cannot be verified
            if lam2 / 2.0 <= max(newton_tol_c, 1e-13 * (1.0 + fabs(f0))):
                converged = True
                break
            alpha = 1.0
            accepted = False
            while alpha >= 1e-14:
                for i in range(m):
                    xt[i] = x[i] + alpha * delta[i]
                feas = _barrier_value(K, &bs[0] if K else NULL, &offs[0], &F0v[0], &Fcv[0, 0], Sstride,
                                      det_nn, &D0v[0], &Dcv[0, 0], dS, q, &Cv[0, 0], &dv[0],
                                      &cl[0], &xt[0], m, t, &chb[0], &fn_) == 0
                if feas and fn_ <= f0 - 0.25 * alpha * lam2:
                    accepted = True
                    break
                alpha *= 0.5
            total += 1
            if not accepted:
                if lam2 / 2.0 <= 1e-6 * scale:
                    converged = True
                    break
                return ITERATION_LIMIT, x_arr, int(total), t
            moved = False
            for i in range(m):
                if xt[i] != x[i]:
                    moved = True
                x[i] = xt[i]
            if not moved:
                # step below float64 resolution: numerically centered
                converged = True
                break
        if not converged:
            return ITERATION_LIMIT, x_arr, int(total), t
        if nu == 0.0 or nu / t <= tol_c:
            return OPTIMAL, x_arr, int(total), t
        t *= mu_c
