# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Fused training kernels (compiled core).

Besides the elementwise/optimizer kernels, this module carries the fused
dense-block forward and backward passes: one C call per pass drives the
whole layer loop through BLAS directly, which removes the interpreter
dispatch cost that dominates deep networks trained with small row batches.
"""

cimport cython
from libc.math cimport exp, log, log1p, sqrt, fabs
from scipy.linalg.cython_blas cimport sgemm, dgemm

ctypedef fused real:
    float
    double


cdef inline void _gemm(char ta, char tb, int m, int n, int k, real alpha,
                       real* a, int lda, real* b, int ldb, real beta,
                       real* c, int ldc) nogil:
    if real is float:
        sgemm(&ta, &tb, &m, &n, &k, <float*> &alpha, <float*> a, &lda,
              <float*> b, &ldb, <float*> &beta, <float*> c, &ldc)
    else:
        dgemm(&ta, &tb, &m, &n, &k, <double*> &alpha, <double*> a, &lda,
              <double*> b, &ldb, <double*> &beta, <double*> c, &ldc)


cdef inline void _bias_relu_dropout(real* z, real* b, real* u, int width,
                                    int n, bint dropout, real keep) nogil:
    # z is (width, n) C-order; bias per row, then relu (and inverted dropout)
    cdef Py_ssize_t i, j
    cdef real bi
    for i in range(width):
        bi = b[i]
        for j in range(n):
            z[i * n + j] = z[i * n + j] + bi
        if dropout:
            for j in range(n):
                if z[i * n + j] > 0 and u[i * n + j] < keep:
                    z[i * n + j] = z[i * n + j] / keep
                else:
                    z[i * n + j] = 0
        else:
            for j in range(n):
                if z[i * n + j] < 0:
                    z[i * n + j] = 0


def dense_forward(real[::1] params, long[::1] w_off, long[::1] b_off,
                  long[::1] fan_in, long[::1] fan_out,
                  real[:, ::1] xT, real[:, ::1] acts, real[:, ::1] head,
                  real[::1] var, u, bint dropout, double keep, double floor):
    """Full forward pass.

    ``xT`` is (input_dim, n); ``acts`` the (final_width, n) activation
    buffer; ``head`` a (2, n) buffer receiving mean/raw rows; ``u`` the
    (final_width, n) uniform draws (or None outside dropout).  Layer i reads
    ``acts[:fan_in[i]]`` (the stem reads xT) and writes ``fan_out[i]`` rows
    at its running offset; the last entry describes the head.
    """
    cdef int n = <int> xT.shape[1]
    cdef int n_layers = <int> w_off.shape[0]
    cdef int i, k, width, cur = 0
    cdef real* p = &params[0]
    cdef real* a = &acts[0, 0]
    cdef real* x = &xT[0, 0]
    cdef real* h = &head[0, 0]
    cdef real* uptr = NULL
    cdef real[:, ::1] u_mv
    if dropout:
        u_mv = u
        uptr = &u_mv[0, 0]
    cdef real rkeep = <real> keep
    cdef real rfloor = <real> floor
    cdef real* src
    cdef Py_ssize_t j
    cdef real r
    with nogil:
        for i in range(n_layers - 1):
            k = <int> fan_in[i]
            width = <int> fan_out[i]
            src = x if i == 0 else a
            # F-view trick: C-order (r, c) buffers are Fortran (c, r)
            # transposes, so Z^T = A^T . W computes z = W^T . a
            _gemm(c'N', c'T', n, width, k, <real> 1, src, n,
                  p + w_off[i], width, <real> 0, a + cur * n, n)
            _bias_relu_dropout(a + cur * n, p + b_off[i],
                               uptr + cur * n if dropout else NULL,
                               width, n, dropout, rkeep)
            cur += width
        i = n_layers - 1
        k = <int> fan_in[i]
        _gemm(c'N', c'T', n, 2, k, <real> 1, a, n, p + w_off[i], 2,
              <real> 0, h, n)
        for j in range(n):
            h[j] = h[j] + p[b_off[i]]
            r = h[n + j] + p[b_off[i] + 1]
            h[n + j] = r
            var[j] = <real> log1p(exp(-fabs(r))) + (r if r > 0 else 0) + rfloor


def dense_backward(real[::1] params, real[::1] grads, long[::1] w_off,
                   long[::1] b_off, long[::1] fan_in, long[::1] fan_out,
                   real[:, ::1] xT, real[:, ::1] acts, real[:, ::1] dacts,
                   real[:, ::1] dhead, bint dropout, double keep,
                   bint accumulate):
    """Full backward pass; ``dhead`` holds (dmean, draw) rows on entry.

    Writes (or accumulates into) ``grads``, which shares the layout of
    ``params``.
    """
    cdef int n = <int> xT.shape[1]
    cdef int n_layers = <int> w_off.shape[0]
    cdef int i, k, width
    cdef int cur = <int> acts.shape[0]
    cdef real* p = &params[0]
    cdef real* g = &grads[0]
    cdef real* a = &acts[0, 0]
    cdef real* da = &dacts[0, 0]
    cdef real* x = &xT[0, 0]
    cdef real* dh = &dhead[0, 0]
    cdef real beta0 = <real> 1 if accumulate else <real> 0
    cdef real rkeep = <real> (keep if dropout else 1.0)
    cdef Py_ssize_t j, row
    cdef real acc
    cdef real* src
    with nogil:
        # head: dW (final,2) and bias sums, then seed dacts
        i = n_layers - 1
        k = <int> fan_in[i]
        _gemm(c'T', c'N', 2, k, n, <real> 1, dh, n, a, n, beta0,
              g + w_off[i], 2)
        for row in range(2):
            acc = 0
            for j in range(n):
                acc = acc + dh[row * n + j]
            if accumulate:
                g[b_off[i] + row] = g[b_off[i] + row] + acc
            else:
                g[b_off[i] + row] = acc
        _gemm(c'N', c'N', n, k, 2, <real> 1, dh, n, p + w_off[i], 2,
              <real> 0, da, n)

        for i in range(n_layers - 2, -1, -1):
            k = <int> fan_in[i]
            width = <int> fan_out[i]
            cur -= width
            # relu/dropout mask from the stored (post-dropout) activations
            for j in range(<Py_ssize_t> cur * n, (<Py_ssize_t> cur + width) * n):
                if a[j] > 0:
                    da[j] = da[j] / rkeep
                else:
                    da[j] = 0
            src = x if i == 0 else a
            _gemm(c'T', c'N', width, k, n, <real> 1, da + cur * n, n, src, n,
                  beta0, g + w_off[i], width)
            for row in range(width):
                acc = 0
                for j in range(n):
                    acc = acc + da[(cur + row) * n + j]
                if accumulate:
                    g[b_off[i] + row] = g[b_off[i] + row] + acc
                else:
                    g[b_off[i] + row] = acc
            if i > 0:
                _gemm(c'N', c'N', n, k, width, <real> 1, da + cur * n, n,
                      p + w_off[i], width, <real> 1, da, n)


def relu_(real[::1] x):
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            if x[i] < 0:
                x[i] = 0


def relu_dropout_(real[::1] x, real[::1] u, double keep):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef real k = <real> keep
    with nogil:
        for i in range(n):
            if x[i] > 0 and u[i] < k:
                x[i] = x[i] / k
            else:
                x[i] = 0


def backprop_mask_(real[::1] g, real[::1] act, double keep):
    cdef Py_ssize_t i, n = g.shape[0]
    cdef real k = <real> keep
    with nogil:
        for i in range(n):
            if act[i] > 0:
                g[i] = g[i] / k
            else:
                g[i] = 0


def softplus_floor(real[::1] raw, real[::1] out, double floor):
    cdef Py_ssize_t i, n = raw.shape[0]
    cdef real f = <real> floor
    cdef real r
    with nogil:
        for i in range(n):
            r = raw[i]
            out[i] = <real> log1p(exp(-fabs(r))) + (r if r > 0 else 0) + f


def sigmoid_scale_(real[::1] dvar, real[::1] raw):
    cdef Py_ssize_t i, n = dvar.shape[0]
    with nogil:
        for i in range(n):
            dvar[i] = dvar[i] / (1 + <real> exp(-raw[i]))


def gaussian_nll(real[::1] mu, real[::1] var, real[::1] y,
                 real[::1] dmu, real[::1] dvar, double scale):
    cdef Py_ssize_t i, n = mu.shape[0]
    cdef double loss = 0.0
    cdef real r, inv_v
    cdef real s = <real> scale
    with nogil:
        for i in range(n):
            r = mu[i] - y[i]
            inv_v = 1 / var[i]
            dmu[i] = r * inv_v
            loss += 0.5 * (r * dmu[i] + log(var[i]))
            dvar[i] = 0.5 * (inv_v - dmu[i] * dmu[i])
            if s != 1:
                dmu[i] = dmu[i] * s
                dvar[i] = dvar[i] * s
    return loss


def adamw_(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
           double lr, double beta1, double beta2, double eps,
           double weight_decay, double bc1, double bc2):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef real b1 = <real> beta1, b2 = <real> beta2
    cdef real one = 1
    cdef real rlr = <real> lr, reps = <real> eps, rwd = <real> weight_decay
    cdef real rbc1 = <real> bc1, rbc2 = <real> bc2
    cdef real mhat, vhat, update
    with nogil:
        for i in range(n):
            m[i] = b1 * m[i] + (one - b1) * g[i]
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i]
            mhat = m[i] / rbc1
            vhat = v[i] / rbc2
            update = mhat / (<real> sqrt(vhat) + reps)
            if rwd != 0:
                update = update + rwd * p[i]
            p[i] = p[i] - rlr * update
