# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled epoch loop: forward, backward, smoothness penalty and Adam.

Same arithmetic as the numpy backend. Each mini-batch runs in three phases
without the GIL: per-sample shift, fold and basis coordinates; the shared
classifier as BLAS products over the batch; per-sample backpropagation into
the channel layer. Small Hermitian systems are solved by Cholesky instead of
LU, so results agree with the fallback to rounding, not bit for bit.
"""

import numpy as np

from libc.math cimport exp, floor, log1p, sqrt
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_blas cimport dgemm

from .model import DEGENERATE_NORM, DegenerateWeightsError

NAME = "cython"

cdef double DEGENERATE_NORM_C = DEGENERATE_NORM


cdef extern from "complex.h" nogil:
    double creal(double complex)
    double cimag(double complex)
    double complex conj(double complex)


cdef inline double _cmod(double u, double p) noexcept nogil:
    return u - p * floor(u / p + 0.5)


cdef inline double _abs2(double complex z) noexcept nogil:
    return creal(z) * creal(z) + cimag(z) * cimag(z)


cdef int _cholesky(const double complex* G, double complex* C, int n) noexcept nogil:
    """Lower factor ``C`` of Hermitian ``G`` (row-major). Returns 0 if not positive definite."""
    cdef int i, j, q
    cdef double complex s
    cdef double d
    for i in range(n):
        for j in range(i + 1):
            s = G[i * n + j]
            for q in range(j):
                s = s - C[i * n + q] * conj(C[j * n + q])
            if i == j:
                d = creal(s)
                if not (d > 0):
                    return 0
                C[i * n + i] = sqrt(d)
            else:
                C[i * n + j] = s / creal(C[j * n + j])
        for j in range(i + 1, n):
            C[i * n + j] = 0
    return 1


cdef void _chol_solve(const double complex* C, const double complex* b, double complex* x, int n) noexcept nogil:
    cdef int i, q
    cdef double complex s
    for i in range(n):
        s = b[i]
        for q in range(i):
            s = s - C[i * n + q] * x[q]
        x[i] = s / creal(C[i * n + i])
    for i in range(n - 1, -1, -1):
        s = x[i]
        for q in range(i + 1, n):
            s = s - conj(C[q * n + i]) * x[q]
        x[i] = s / creal(C[i * n + i])


cdef struct Batch:
    # per-sample channel-side state, strides nr / nt / nt*nt
    double complex* z
    double complex* L
    double complex* c
    double complex* C
    double complex* rs      # rot * s_i
    int* stream
    # classifier activations, row-major (B, width)
    double* f
    double* a1
    double* a2
    double* logit
    double* dl
    double* d2
    double* d1
    double* df


cdef int _channel_forward(const double complex* Wk, const double complex* y, const double complex* x,
                          int i, int d, double b, double a, int nr, int nt, Batch* s, Py_ssize_t q,
                          double complex* G, double complex* rhs) noexcept nogil:
    """Shift, fold and basis coordinates of sample ``q``; writes features. Returns a status code."""
    cdef int r, j, o
    cdef double complex rot, ed, s_i, u, acc
    cdef double nrm
    cdef double complex* z = s.z + q * nr
    cdef double complex* L = s.L + q * nt
    cdef double complex* c = s.c + q * nt
    cdef double* f = s.f + q * 2 * nt

    if d == 0:
        rot = 1.0
        ed = 1.0
    else:
        rot = -1j
        ed = 1j
    s_i = x[i] - b * a * ed
    for r in range(nr):
        z[r] = rot * (y[r] - Wk[r * nt + i] * s_i)
    s.rs[q] = rot * s_i
    s.stream[q] = i

    for j in range(nt):
        L[j] = 0
        if j == i:
            continue
        nrm = 0
        acc = 0
        for r in range(nr):
            nrm += _abs2(Wk[r * nt + j])
            acc = acc + conj(Wk[r * nt + j]) * z[r]
        if sqrt(nrm) <= DEGENERATE_NORM_C:
            return 1
        u = acc / nrm
        L[j] = u - (_cmod(creal(u), 2 * a) + 1j * _cmod(cimag(u), 2 * a))
        for r in range(nr):
            z[r] = z[r] - Wk[r * nt + j] * L[j]

    for j in range(nt):
        for o in range(nt):
            acc = 0
            for r in range(nr):
                acc = acc + conj(Wk[r * nt + j]) * Wk[r * nt + o]
            G[j * nt + o] = acc
        acc = 0
        for r in range(nr):
            acc = acc + conj(Wk[r * nt + j]) * z[r]
        rhs[j] = acc
    if not _cholesky(G, s.C + q * nt * nt, nt):
        return 2
    _chol_solve(s.C + q * nt * nt, rhs, c, nt)

    f[0] = creal(c[i]) / a
    f[1] = cimag(c[i]) / a
    o = 2
    for j in range(nt):
        if j != i:
            f[o] = creal(c[j]) / a
            f[o + 1] = cimag(c[j]) / a
            o += 2
    return 0


cdef void _channel_backward(const double complex* Wk, double complex* gWk, double a, int nr, int nt,
                            Batch* s, Py_ssize_t q, double complex* gc, double complex* p) noexcept nogil:
    cdef int r, j, o
    cdef int i = s.stream[q]
    cdef double complex wp, g, e
    cdef const double complex* z = s.z + q * nr
    cdef const double complex* L = s.L + q * nt
    cdef const double complex* c = s.c + q * nt
    cdef const double* df = s.df + q * 2 * nt

    gc[i] = (df[0] + 1j * df[1]) / a
    o = 2
    for j in range(nt):
        if j != i:
            gc[j] = (df[o] + 1j * df[o + 1]) / a
            o += 2
    _chol_solve(s.C + q * nt * nt, gc, p, nt)
    for r in range(nr):
        wp = 0
        g = 0
        for j in range(nt):
            wp = wp + Wk[r * nt + j] * p[j]
            g = g + Wk[r * nt + j] * c[j]
        e = z[r] - g
        for j in range(nt):
            gWk[r * nt + j] = gWk[r * nt + j] + e * conj(p[j]) - wp * conj(c[j]) - wp * conj(L[j])
        gWk[r * nt + i] = gWk[r * nt + i] - conj(s.rs[q]) * wp


cdef void _gemm(char* ta, char* tb, int m, int n, int k, double* A, int lda, double* B, int ldb,
                double* C, int ldc) noexcept nogil:
    """``C = op(A) op(B)`` in column-major terms."""
    cdef double one = 1.0, zero = 0.0
    dgemm(ta, tb, &m, &n, &k, &one, A, &lda, B, &ldb, &zero, C, &ldc)


cdef double _classifier(double* theta, double* gth, int nin, int nh1, int nh2, const double* label,
                        int B, Batch* s, bint need_df) noexcept nogil:
    """Batched MLP forward and backward.

    Returns the summed BCE, overwrites ``gth`` and (if ``need_df``) ``s.df``.
    Row-major ``(B, w)`` arrays are column-major ``(w, B)`` to BLAS.
    """
    cdef double* W1 = theta
    cdef double* b1 = W1 + nh1 * nin
    cdef double* W2 = b1 + nh1
    cdef double* b2 = W2 + nh2 * nh1
    cdef double* w3 = b2 + nh2
    cdef double* b3 = w3 + nh2
    cdef double* gW1 = gth
    cdef double* gb1 = gW1 + nh1 * nin
    cdef double* gW2 = gb1 + nh1
    cdef double* gb2 = gW2 + nh2 * nh1
    cdef double* gw3 = gb2 + nh2
    cdef double* gb3 = gw3 + nh2
    cdef int q, j
    cdef double m, e, t, loss = 0, inv_b = 1.0 / B
    # activations reuse the gradient buffers until those are needed
    cdef double* h1 = s.d1
    cdef double* h2 = s.d2

    _gemm(b"T", b"N", nh1, B, nin, W1, nin, s.f, nin, s.a1, nh1)
    for q in range(B):
        for j in range(nh1):
            t = s.a1[q * nh1 + j] + b1[j]
            s.a1[q * nh1 + j] = t
            h1[q * nh1 + j] = t if t > 0 else 0.0
    _gemm(b"T", b"N", nh2, B, nh1, W2, nh1, h1, nh1, s.a2, nh2)
    for q in range(B):
        m = b3[0]
        for j in range(nh2):
            t = s.a2[q * nh2 + j] + b2[j]
            s.a2[q * nh2 + j] = t
            t = t if t > 0 else 0.0
            h2[q * nh2 + j] = t
            m += w3[j] * t
        s.logit[q] = m

    gb3[0] = 0
    for q in range(B):
        m = -label[q] * s.logit[q]
        e = exp(-m if m > 0 else m)
        loss += (m if m > 0 else 0.0) + log1p(e)
        t = 1.0 / (1.0 + e) if m >= 0 else e / (1.0 + e)
        s.dl[q] = -label[q] * t * inv_b
        gb3[0] += s.dl[q]

    for j in range(nh2):
        gw3[j] = 0
        gb2[j] = 0
    for q in range(B):
        for j in range(nh2):
            gw3[j] += s.dl[q] * h2[q * nh2 + j]
            t = s.dl[q] * w3[j] if s.a2[q * nh2 + j] > 0 else 0.0
            s.d2[q * nh2 + j] = t
            gb2[j] += t
    _gemm(b"N", b"T", nh1, nh2, B, h1, nh1, s.d2, nh2, gW2, nh1)
    _gemm(b"N", b"N", nh1, B, nh2, W2, nh1, s.d2, nh2, s.d1, nh1)
    for j in range(nh1):
        gb1[j] = 0
    for q in range(B):
        for j in range(nh1):
            if s.a1[q * nh1 + j] <= 0:
                s.d1[q * nh1 + j] = 0
            gb1[j] += s.d1[q * nh1 + j]
    _gemm(b"N", b"T", nin, nh1, B, s.f, nin, s.d1, nh1, gW1, nin)
    if need_df:
        _gemm(b"N", b"N", nin, B, nh1, W1, nin, s.d1, nh1, s.df, nin)
    return loss


cdef void _adam(double* param, const double* grad, double* m, double* v, Py_ssize_t n, long step,
                double lr, double b1, double b2, double eps) noexcept nogil:
    cdef Py_ssize_t q
    cdef double c1 = 1.0 - b1 ** step
    cdef double c2 = 1.0 - b2 ** step
    for q in range(n):
        m[q] = b1 * m[q] + (1 - b1) * grad[q]
        v[q] = b2 * v[q] + (1 - b2) * grad[q] * grad[q]
        param[q] -= lr * (m[q] / c1) / (sqrt(v[q] / c2) + eps)


cdef double _penalty(const double* W, Py_ssize_t Kp, Py_ssize_t stride, double lam) noexcept nogil:
    cdef Py_ssize_t k, q
    cdef double d, pen = 0
    for k in range(Kp - 1):
        for q in range(stride):
            d = W[(k + 1) * stride + q] - W[k * stride + q]
            pen += d * d
    return lam * pen


cdef double _penalty_adam(double* W, double* g, double* m, double* v, double* prev, Py_ssize_t Kp,
                          Py_ssize_t stride, double lam, long step, double lr, double b1, double b2,
                          double eps) noexcept nogil:
    """Add the smoothness gradient, take an Adam step on ``W`` and clear ``g``.

    One sweep over subcarriers; ``prev`` holds the pre-update difference to
    the previous subcarrier. Returns the penalty at the pre-update ``W``.
    """
    cdef Py_ssize_t k, q, o
    cdef double c1 = 1.0 - b1 ** step
    cdef double c2 = 1.0 - b2 ** step
    cdef double d, gq, pen = 0
    for q in range(stride):
        prev[q] = 0
    for k in range(Kp):
        for q in range(stride):
            o = k * stride + q
            d = W[o + stride] - W[o] if k < Kp - 1 else 0.0
            pen += d * d
            gq = g[o] + 2 * lam * (prev[q] - d)
            prev[q] = d
            g[o] = 0
            m[o] = b1 * m[o] + (1 - b1) * gq
            v[o] = b2 * v[o] + (1 - b2) * gq * gq
            W[o] -= lr * (m[o] / c1) / (sqrt(v[o] / c2) + eps)
    return lam * pen


def run_epoch(state, data, perm, opts):
    """One pass over ``perm`` in mini-batches; updates ``state`` in place.

    Returns the sample-weighted means of the batch losses and of their
    cross-entropy terms.
    """
    cdef double complex[:, :, ::1] W = state.W
    cdef double[::1] theta = state.theta
    cdef double[::1] m_w = state.m_w
    cdef double[::1] v_w = state.v_w
    cdef double[::1] m_th = state.m_theta
    cdef double[::1] v_th = state.v_theta
    cdef const long long[::1] tt = np.asarray(data["t"], dtype=np.int64)
    cdef const long long[::1] kk = np.asarray(data["k"], dtype=np.int64)
    cdef const long long[::1] ss = np.asarray(data["stream"], dtype=np.int64)
    cdef const long long[::1] dd = np.asarray(data["dim"], dtype=np.int64)
    cdef const double[::1] lab = data["label"]
    cdef const double complex[:, :, ::1] Yp = data["Yp"]
    cdef const double complex[:, :, ::1] Xp = data["Xp"]
    cdef const long long[::1] pm = np.asarray(perm, dtype=np.int64)

    cdef int Kp = W.shape[0], nr = W.shape[1], nt = W.shape[2]
    cdef int nin = state.shape.n_in, nh1 = state.shape.h1, nh2 = state.shape.h2
    cdef Py_ssize_t nth = theta.shape[0], nw = Kp * nr * nt
    cdef Py_ssize_t n = pm.shape[0], bs = opts.batch_size, start, stop, q, idx, kq
    cdef int B
    cdef double a = opts.a, lam = opts.smoothness
    cdef double lr_th = opts.lr_classifier, lr_w = opts.lr_channel
    cdef double b1 = opts.beta1, b2 = opts.beta2, eps = opts.adam_eps, eps_w = opts.adam_eps_channel
    cdef bint update_w = opts.update_w
    cdef long step_w = state.step_w, step_th = state.step_theta
    cdef double total = 0, total_bce = 0, bl, pen = 0
    cdef int status = 0

    if nin != 2 * nt:
        raise ValueError("classifier input width must be 2 * nt")
    if n == 0:
        return 0.0, 0.0
    if bs > n:
        bs = n

    gW_arr = np.zeros((Kp, nr, nt), dtype=np.complex128)
    gth_arr = np.zeros(nth)
    lab_arr = np.zeros(bs)
    cdef double complex[:, :, ::1] gW = gW_arr
    cdef double[::1] gth = gth_arr
    cdef double[::1] lb = lab_arr
    cdef double* Wr = <double*> &W[0, 0, 0]
    cdef double* gWr = <double*> &gW[0, 0, 0]

    cdef Py_ssize_t ncx = bs * (nr + 2 * nt + nt * nt + 1) + nt * nt + 3 * nt
    cdef Py_ssize_t ndb = bs * (2 * nin + 2 * nh1 + 2 * nh2 + 2) + 2 * nr * nt
    cdef double complex* cbuf = <double complex*> malloc(sizeof(double complex) * ncx)
    cdef double* dbuf = <double*> malloc(sizeof(double) * ndb)
    cdef int* ibuf = <int*> malloc(sizeof(int) * bs)
    if cbuf == NULL or dbuf == NULL or ibuf == NULL:
        free(cbuf)
        free(dbuf)
        free(ibuf)
        raise MemoryError()
    cdef Batch s
    s.z = cbuf
    s.L = s.z + bs * nr
    s.c = s.L + bs * nt
    s.C = s.c + bs * nt
    s.rs = s.C + bs * nt * nt
    cdef double complex* G = s.rs + bs
    cdef double complex* rhs = G + nt * nt
    cdef double complex* gc = rhs + nt
    cdef double complex* p = gc + nt
    s.stream = ibuf
    s.f = dbuf
    s.df = s.f + bs * nin
    s.a1 = s.df + bs * nin
    s.d1 = s.a1 + bs * nh1
    s.a2 = s.d1 + bs * nh1
    s.d2 = s.a2 + bs * nh2
    s.logit = s.d2 + bs * nh2
    s.dl = s.logit + bs
    cdef double* prev = s.dl + bs

    try:
        with nogil:
            if not update_w:
                pen = _penalty(Wr, Kp, 2 * nr * nt, lam)
            start = 0
            while start < n:
                stop = start + bs
                if stop > n:
                    stop = n
                B = <int> (stop - start)
                for q in range(B):
                    idx = pm[start + q]
                    kq = kk[idx]
                    lb[q] = lab[idx]
                    status = _channel_forward(&W[kq, 0, 0], &Yp[tt[idx], kq, 0], &Xp[tt[idx], kq, 0],
                                              <int> ss[idx], <int> dd[idx], lb[q], a, nr, nt, &s, q, G, rhs)
                    if status:
                        break
                if status:
                    break
                bl = _classifier(&theta[0], &gth[0], nin, nh1, nh2, &lb[0], B, &s, update_w) / B
                if update_w:
                    for q in range(B):
                        kq = kk[pm[start + q]]
                        _channel_backward(&W[kq, 0, 0], &gW[kq, 0, 0], a, nr, nt, &s, q, gc, p)
                step_th += 1
                _adam(&theta[0], &gth[0], &m_th[0], &v_th[0], nth, step_th, lr_th, b1, b2, eps)
                if update_w:
                    step_w += 1
                    pen = _penalty_adam(Wr, gWr, &m_w[0], &v_w[0], prev, Kp, 2 * nr * nt, lam, step_w,
                                        lr_w, b1, b2, eps_w)
                total += (bl + pen) * B
                total_bce += bl * B
                start = stop
    finally:
        free(cbuf)
        free(dbuf)
        free(ibuf)
        state.step_w = step_w
        state.step_theta = step_th
    if status == 1:
        raise DegenerateWeightsError("interferer column has vanished")
    if status == 2:
        raise DegenerateWeightsError("channel-layer columns are linearly dependent")
    return total / n, total_bce / n
