# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled EM step for the off-grid sparse Bayesian iteration.

One call performs a full iteration: manifold refresh, M x M reduced
posterior (diagonal plus the support columns only, never the full N x N
covariance), hyperparameter updates, and the box-constrained offset
solve. Semantics match ogdoa._kernel_py; equivalence is covered by
tests/test_backend.py.
"""

import numpy as np

from libc.math cimport M_PI, fabs, log, sqrt

# Shared with the pure-python kernel; keep in sync with ogdoa.inference.
DEF PIVOT_RATIO = 1e-10
DEF CD_TOL = 1e-12
DEF CD_MAX_SWEEPS = 1000
DEF ALPHA0_DEN_FLOOR = 1e-300


cdef int _chol_c(double complex[:, ::1] a, Py_ssize_t m) noexcept nogil:
    """In-place lower Cholesky of a Hermitian matrix (lower triangle read)."""
    cdef Py_ssize_t i, j, k
    cdef double complex s
    cdef double diag
    for j in range(m):
        s = a[j, j]
        for k in range(j):
            s = s - a[j, k] * a[j, k].conjugate()
        diag = s.real
        if diag <= 0.0:
            return 1
        diag = sqrt(diag)
        a[j, j] = diag
        for i in range(j + 1, m):
            s = a[i, j]
            for k in range(j):
                s = s - a[i, k] * a[j, k].conjugate()
            a[i, j] = s / diag
    return 0


cdef void _chol_solve_c(double complex[:, ::1] l, double complex[::1] b, Py_ssize_t m) noexcept nogil:
    """Solve L L^H x = b in place given the lower factor."""
    cdef Py_ssize_t i, k
    cdef double complex s
    for i in range(m):
        s = b[i]
        for k in range(i):
            s = s - l[i, k] * b[k]
        b[i] = s / l[i, i]
    for i in range(m - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, m):
            s = s - l[k, i].conjugate() * b[k]
        b[i] = s / l[i, i]


cdef int _chol_r(double[:, ::1] a, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(m):
        s = a[j, j]
        for k in range(j):
            s -= a[j, k] * a[j, k]
        if s <= 0.0:
            return 1
        a[j, j] = sqrt(s)
        for i in range(j + 1, m):
            s = a[i, j]
            for k in range(j):
                s -= a[i, k] * a[j, k]
            a[i, j] = s / a[j, j]
    return 0


cdef void _chol_solve_r(double[:, ::1] l, double[::1] b, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(m):
        s = b[i]
        for k in range(i):
            s -= l[i, k] * b[k]
        b[i] = s / l[i, i]
    for i in range(m - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, m):
            s -= l[k, i] * b[k]
        b[i] = s / l[i, i]


cdef void _coordinate_descent(double[:, ::1] p, double[::1] v, double[::1] b,
                              Py_ssize_t k, double half) noexcept nogil:
    cdef Py_ssize_t sweep, i, j
    cdef double pii, coupled, candidate, move, biggest
    for sweep in range(CD_MAX_SWEEPS):
        biggest = 0.0
        for i in range(k):
            pii = p[i, i]
            if pii <= 0.0:
                continue
            coupled = 0.0
            for j in range(k):
                if j != i:
                    coupled += p[i, j] * b[j]
            candidate = (v[i] - coupled) / pii
            if candidate < -half:
                candidate = -half
            elif candidate > half:
                candidate = half
            move = fabs(candidate - b[i])
            if move > biggest:
                biggest = move
            b[i] = candidate
        if biggest <= CD_TOL * half:
            break


cdef void _offset_solve(double[:, ::1] pun, double[::1] vun, Py_ssize_t[::1] pos,
                        Py_ssize_t count, double[::1] beta, Py_ssize_t[::1] uni,
                        double[:, ::1] psub, double[:, ::1] pchol,
                        double[::1] vsub, double[::1] bsol, double half) noexcept nogil:
    """Box-constrained solve of the union quadratic restricted to `pos`.

    Joint solve when P is safely positive definite and the solution stays
    inside the box, else clamped coordinate descent warm-started from the
    previous offsets. Result in bsol[:count].
    """
    cdef Py_ssize_t i, j
    cdef double bn, minp, maxp, piv
    cdef bint use_joint
    for i in range(count):
        vsub[i] = vun[pos[i]]
        for j in range(count):
            psub[i, j] = pun[pos[i], pos[j]]
        bn = beta[uni[pos[i]]]
        if bn < -half:
            bn = -half
        elif bn > half:
            bn = half
        bsol[i] = bn
    for i in range(count):
        for j in range(count):
            pchol[i, j] = psub[i, j]
    use_joint = False
    if _chol_r(pchol, count) == 0:
        minp = pchol[0, 0] * pchol[0, 0]
        maxp = minp
        for i in range(1, count):
            piv = pchol[i, i] * pchol[i, i]
            if piv < minp:
                minp = piv
            if piv > maxp:
                maxp = piv
        if minp > PIVOT_RATIO * maxp:
            for i in range(count):
                vsub[i] = vun[pos[i]]
            _chol_solve_r(pchol, vsub, count)
            use_joint = True
            for i in range(count):
                if fabs(vsub[i]) > half:
                    use_joint = False
                    break
            if use_joint:
                for i in range(count):
                    bsol[i] = vsub[i]
    if not use_joint:
        for i in range(count):
            vsub[i] = vun[pos[i]]
        _coordinate_descent(psub, vsub, bsol, count, half)


cdef int _em_core(double complex[:, ::1] a_mat, double complex[:, ::1] b_mat,
                  double complex[:, ::1] y,
                  double[::1] alpha, double alpha0, double[::1] beta,
                  Py_ssize_t k_src, double rho, double c, double d, double half,
                  double complex[:, ::1] phi, double complex[:, ::1] cmat,
                  double complex[:, ::1] csave, double complex[:, ::1] w,
                  double complex[:, ::1] zt, double complex[:, ::1] ut,
                  double complex[:, ::1] rat, double complex[:, ::1] sigcols,
                  double complex[:, ::1] bs, double complex[::1] colbuf,
                  double[:, ::1] pun, double[:, ::1] psub, double[:, ::1] pchol,
                  double[::1] sdiag, double[::1] rowsq, double[::1] vvec,
                  double[::1] vsub, double[::1] bsol,
                  double[::1] alpha_new, double[::1] beta_new,
                  double[::1] scal_out, Py_ssize_t[::1] support,
                  Py_ssize_t[::1] uni, Py_ssize_t[::1] spos,
                  unsigned char[::1] peak) noexcept nogil:
    cdef Py_ssize_t m_dim = a_mat.shape[0], n_dim = a_mat.shape[1], t_dim = y.shape[1]
    cdef Py_ssize_t m, n, t, i, j, kk, best, tmp, count, phase
    cdef double complex s, ci, acc, val
    cdef double al, trace, jitter, logdet, quad, e2, rho_t, gsum, g, resid
    cdef double eterm, den, bestv, re, im, v1, bn
    cdef bint taken

    # Perturbed manifold at the entering offsets.
    for m in range(m_dim):
        for n in range(n_dim):
            phi[m, n] = a_mat[m, n] + beta[n] * b_mat[m, n]

    # Reduced covariance C = I/alpha0 + Phi diag(alpha) Phi^H, lower triangle.
    for i in range(m_dim):
        for j in range(i + 1):
            cmat[i, j] = 0.0
    for n in range(n_dim):
        al = alpha[n]
        if al == 0.0:
            continue
        for m in range(m_dim):
            colbuf[m] = phi[m, n]
        for i in range(m_dim):
            ci = al * colbuf[i]
            for j in range(i + 1):
                cmat[i, j] = cmat[i, j] + ci * colbuf[j].conjugate()
    for i in range(m_dim):
        cmat[i, i] = cmat[i, i] + 1.0 / alpha0
    trace = 0.0
    for i in range(m_dim):
        trace += cmat[i, i].real
        for j in range(i + 1):
            csave[i, j] = cmat[i, j]
    if _chol_c(cmat, m_dim):
        jitter = 1e-12 * trace / m_dim
        for i in range(m_dim):
            for j in range(i + 1):
                cmat[i, j] = csave[i, j]
            cmat[i, i] = cmat[i, i] + jitter
        if _chol_c(cmat, m_dim):
            return 1
    logdet = 0.0
    for i in range(m_dim):
        logdet += log(cmat[i, i].real)
    logdet *= 2.0

    # W = C^{-1} Phi and the posterior variance diagonal.
    for n in range(n_dim):
        for m in range(m_dim):
            colbuf[m] = phi[m, n]
        _chol_solve_c(cmat, colbuf, m_dim)
        e2 = 0.0
        for m in range(m_dim):
            w[m, n] = colbuf[m]
            e2 += (phi[m, n].conjugate() * colbuf[m]).real
        al = alpha[n]
        sdiag[n] = al - al * al * e2

    # Z = C^{-1} Y (stored transposed) and the data quadratic term.
    quad = 0.0
    for t in range(t_dim):
        for m in range(m_dim):
            colbuf[m] = y[m, t]
        _chol_solve_c(cmat, colbuf, m_dim)
        for m in range(m_dim):
            zt[t, m] = colbuf[m]
            quad += (y[m, t].conjugate() * colbuf[m]).real

    # Posterior mean U = diag(alpha) Phi^H Z (stored transposed) and row powers.
    for n in range(n_dim):
        al = alpha[n]
        for m in range(m_dim):
            colbuf[m] = phi[m, n].conjugate()
        e2 = 0.0
        for t in range(t_dim):
            s = 0.0
            for m in range(m_dim):
                s = s + colbuf[m] * zt[t, m]
            val = al * s
            ut[t, n] = val
            re = val.real
            im = val.imag
            e2 += re * re + im * im
        rowsq[n] = e2

    # Signal-variance update, cancellation-free form.
    rho_t = rho / t_dim
    for n in range(n_dim):
        e2 = rowsq[n] / t_dim + sdiag[n]
        if e2 < 0.0:
            e2 = 0.0
        alpha_new[n] = 2.0 * e2 / (1.0 + sqrt(1.0 + 4.0 * rho_t * e2))

    # Data-fit fractions from the entering state.
    gsum = 0.0
    for n in range(n_dim):
        al = alpha[n]
        if al > 0.0:
            g = 1.0 - sdiag[n] / al
            if g < 0.0:
                g = 0.0
            elif g > 1.0:
                g = 1.0
            gsum += g

    # Residual against the perturbed manifold, then corrected to the plain
    # manifold (Y - A U) for the offset linear term.
    resid = 0.0
    for t in range(t_dim):
        for m in range(m_dim):
            s = y[m, t]
            for n in range(n_dim):
                s = s - phi[m, n] * ut[t, n]
            rat[t, m] = s
            re = s.real
            im = s.imag
            resid += re * re + im * im
    for n in range(n_dim):
        bn = beta[n]
        if bn == 0.0:
            continue
        for t in range(t_dim):
            val = bn * ut[t, n]
            for m in range(m_dim):
                rat[t, m] = rat[t, m] + b_mat[m, n] * val

    eterm = resid / t_dim + gsum / alpha0
    den = eterm + d / t_dim
    if den < ALPHA0_DEN_FLOOR:
        den = ALPHA0_DEN_FLOOR
    scal_out[0] = (m_dim + (c - 1.0) / t_dim) / den

    scal_out[1] = -t_dim * m_dim * log(M_PI) - t_dim * logdet - quad

    # Support: the K largest local maxima of the updated variances (ties to
    # lower index), filled from the largest remaining entries if needed.
    for n in range(n_dim):
        peak[n] = 1
    for n in range(1, n_dim):
        if alpha_new[n] < alpha_new[n - 1]:
            peak[n] = 0
    for n in range(n_dim - 1):
        if alpha_new[n] < alpha_new[n + 1]:
            peak[n] = 0
    count = 0
    for phase in range(2):
        while count < k_src:
            best = -1
            bestv = -1.0
            for n in range(n_dim):
                if peak[n] == phase:  # phase 0 scans peaks (flag 1) first
                    continue
                taken = False
                for j in range(count):
                    if support[j] == n:
                        taken = True
                        break
                if taken:
                    continue
                if alpha_new[n] > bestv:
                    bestv = alpha_new[n]
                    best = n
            if best < 0:
                break
            support[count] = best
            count += 1
        if count == k_src:
            break
    for i in range(1, k_src):
        tmp = support[i]
        j = i - 1
        while j >= 0 and support[j] > tmp:
            support[j + 1] = support[j]
            j -= 1
        support[j + 1] = tmp

    # Posterior covariance columns on the support.
    for kk in range(k_src):
        n = support[kk]
        al = alpha[n]
        for m in range(m_dim):
            colbuf[m] = w[m, n]
        for j in range(n_dim):
            s = 0.0
            for m in range(m_dim):
                s = s + phi[m, j].conjugate() * colbuf[m]
            sigcols[j, kk] = -alpha[j] * s * al
        sigcols[n, kk] = sigcols[n, kk] + al

    for kk in range(k_src):
        for m in range(m_dim):
            bs[m, kk] = b_mat[m, support[kk]]

    # Quadratic form of the expected residual in the supported offsets.
    for i in range(k_src):
        for j in range(k_src):
            s = 0.0
            for m in range(m_dim):
                s = s + bs[m, i].conjugate() * bs[m, j]
            acc = 0.0
            for t in range(t_dim):
                acc = acc + ut[t, support[i]] * ut[t, support[j]].conjugate()
            acc = acc / <double> t_dim + sigcols[support[i], j]
            pun[i, j] = (s.conjugate() * acc).real
    for i in range(k_src):
        for j in range(i):
            bestv = 0.5 * (pun[i, j] + pun[j, i])
            pun[i, j] = bestv
            pun[j, i] = bestv

    for i in range(k_src):
        acc = 0.0
        for t in range(t_dim):
            s = 0.0
            for m in range(m_dim):
                s = s + bs[m, i].conjugate() * rat[t, m]
            acc = acc + ut[t, support[i]].conjugate() * s
        v1 = acc.real / t_dim
        ci = 0.0
        for m in range(m_dim):
            s = 0.0
            for n in range(n_dim):
                s = s + a_mat[m, n] * sigcols[n, i]
            ci = ci + bs[m, i].conjugate() * s
        vvec[i] = v1 - ci.real

    # Offset update on the support; spos is the identity here.
    for i in range(k_src):
        spos[i] = i
        uni[i] = support[i]
    _offset_solve(pun, vvec, spos, k_src, beta, uni, psub, pchol, vsub, bsol, half)

    for n in range(n_dim):
        beta_new[n] = 0.0
    for kk in range(k_src):
        beta_new[support[kk]] = bsol[kk]
    return 0


def em_step(a_mat, b_mat, y, alpha, double alpha0, beta,
            Py_ssize_t k_sources, double rho, double c, double d, double half_width):
    """One EM iteration.

    Returns ``(alpha_new, alpha0_new, beta_new, gauss_loglik)`` where the
    last value is the Gaussian part of the log evidence of the entering
    state (hyperprior terms are added by the caller).
    """
    cdef double complex[:, ::1] a_v = a_mat
    cdef double complex[:, ::1] b_v = b_mat
    cdef double complex[:, ::1] y_v = y
    cdef double[::1] alpha_v = alpha
    cdef double[::1] beta_v = beta
    cdef Py_ssize_t m_dim = a_v.shape[0], n_dim = a_v.shape[1], t_dim = y_v.shape[1]
    if b_v.shape[0] != m_dim or b_v.shape[1] != n_dim or y_v.shape[0] != m_dim:
        raise ValueError("inconsistent matrix shapes")
    if alpha_v.shape[0] != n_dim or beta_v.shape[0] != n_dim:
        raise ValueError("state vectors must match the grid size")
    if k_sources < 1 or k_sources > n_dim:
        raise ValueError("source count out of range")
    if alpha0 <= 0.0:
        raise ValueError("noise precision must be positive")

    alpha_new = np.empty(n_dim)
    beta_new = np.empty(n_dim)
    scal = np.empty(2)
    phi = np.empty((m_dim, n_dim), dtype=complex)
    cmat = np.empty((m_dim, m_dim), dtype=complex)
    csave = np.empty((m_dim, m_dim), dtype=complex)
    w = np.empty((m_dim, n_dim), dtype=complex)
    zt = np.empty((t_dim, m_dim), dtype=complex)
    ut = np.empty((t_dim, n_dim), dtype=complex)
    rat = np.empty((t_dim, m_dim), dtype=complex)
    sigcols = np.empty((n_dim, k_sources), dtype=complex)
    bs = np.empty((m_dim, k_sources), dtype=complex)
    colbuf = np.empty(m_dim, dtype=complex)
    pun = np.empty((k_sources, k_sources))
    psub = np.empty((k_sources, k_sources))
    pchol = np.empty((k_sources, k_sources))
    sdiag = np.empty(n_dim)
    rowsq = np.empty(n_dim)
    vvec = np.empty(k_sources)
    vsub = np.empty(k_sources)
    bsol = np.empty(k_sources)
    support = np.empty(k_sources, dtype=np.intp)
    uni = np.empty(k_sources, dtype=np.intp)
    spos = np.empty(k_sources, dtype=np.intp)
    peak = np.empty(n_dim, dtype=np.uint8)

    cdef double complex[:, ::1] phi_v = phi, cmat_v = cmat, csave_v = csave
    cdef double complex[:, ::1] w_v = w, zt_v = zt, ut_v = ut, rat_v = rat
    cdef double complex[:, ::1] sig_v = sigcols, bs_v = bs
    cdef double complex[::1] colbuf_v = colbuf
    cdef double[:, ::1] pun_v = pun, psub_v = psub, pchol_v = pchol
    cdef double[::1] sdiag_v = sdiag, rowsq_v = rowsq, vvec_v = vvec
    cdef double[::1] vsub_v = vsub, bsol_v = bsol
    cdef double[::1] an_v = alpha_new, bn_v = beta_new, scal_v = scal
    cdef Py_ssize_t[::1] sup_v = support, uni_v = uni, spos_v = spos
    cdef unsigned char[::1] peak_v = peak
    cdef int status

    with nogil:
        status = _em_core(a_v, b_v, y_v, alpha_v, alpha0, beta_v,
                          k_sources, rho, c, d, half_width,
                          phi_v, cmat_v, csave_v, w_v, zt_v, ut_v, rat_v,
                          sig_v, bs_v, colbuf_v, pun_v, psub_v, pchol_v,
                          sdiag_v, rowsq_v, vvec_v, vsub_v, bsol_v,
                          an_v, bn_v, scal_v, sup_v, uni_v, spos_v, peak_v)
    if status:
        raise RuntimeError("reduced posterior covariance is numerically singular")
    return alpha_new, float(scal[0]), beta_new, float(scal[1])
