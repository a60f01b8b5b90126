# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled training kernels: fused forward/backward pass and AdamW update.

Matrix products go through BLAS (scipy's exported dgemm) and the tanh of the
GELU goes through numpy's vectorized loop; the remaining elementwise work
(bias add, GELU polynomial, residual, backward gating, embedding scatter) runs
in unit-stride C loops. The math matches ditscale.netcore.backends; the two
backends agree to floating-point roundoff.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

# tanh-form GELU constants (sqrt(2/pi) and the cubic coefficient)
cdef double C1 = 0.7978845608028654
cdef double C2 = 0.044715


cdef void _rm_gemm(bint ta, bint tb, int m, int n, int k, double alpha,
                   double* a, int a_cols, double* b, int b_cols,
                   double beta, double* c) noexcept nogil:
    """C(m,n) = alpha * op(A) @ op(B) + beta * C with row-major storage.

    a_cols / b_cols are the storage column counts (row-major leading strides).
    Row-major arrays are handed to column-major BLAS as their transposes, so
    the call computes C^T = op(B)^T op(A)^T with swapped operand order.
    """
    cdef char t1 = b'T' if tb else b'N'
    cdef char t2 = b'T' if ta else b'N'
    dgemm(&t1, &t2, &n, &m, &k, &alpha, b, &b_cols, a, &a_cols, &beta, c, &n)


cdef void _colsum(double* src, double* dst, int n, int width) noexcept nogil:
    """dst[j] = sum_i src[i * width + j] (dst must be zeroed)."""
    cdef int i, j
    cdef double* row = src
    for i in range(n):
        for j in range(width):
            dst[j] += row[j]
        row += width


def fused_loss_grads(double[::1] flat, double[:, ::1] feats,
                     double[:, ::1] target, long[::1] cond,
                     double[::1] grad,
                     int depth, int width, int in_dim, int data_dim,
                     int num_classes, int ced):
    """Batch loss ||out - target||^2 / n and exact gradients into `grad`.

    `grad` must be zero-initialized with the same layout as `flat`.
    """
    cdef int n = feats.shape[0]
    cdef int l, i, j, row
    cdef Py_ssize_t plane = <Py_ssize_t> n * width
    cdef double loss = 0.0, r, scale, z, t, x2

    # offsets into the flat layout
    cdef int w_in_off = 0
    cdef int b_in_off = in_dim * width
    cdef int hidden_block = width * width + width
    cdef int w_out_off = b_in_off + width + (depth - 1) * hidden_block
    cdef int b_out_off = w_out_off + width * data_dim
    cdef int emb_off = b_out_off + data_dim
    cdef int emb_start = in_dim - ced

    # per-layer buffers: pre-activations, tanh values, activations
    z_buf = np.empty((depth, n, width), dtype=np.float64)
    t_buf = np.empty((depth, n, width), dtype=np.float64)
    a_buf = np.empty((depth, n, width), dtype=np.float64)
    out = np.empty((n, data_dim), dtype=np.float64)
    dout = np.empty((n, data_dim), dtype=np.float64)
    dh = np.empty((n, width), dtype=np.float64)
    dz = np.empty((n, width), dtype=np.float64)
    demb = np.empty((n, ced), dtype=np.float64)
    cdef double[:, :, ::1] zv = z_buf
    cdef double[:, :, ::1] tv = t_buf
    cdef double[:, :, ::1] av = a_buf
    cdef double[:, ::1] outv = out
    cdef double[:, ::1] doutv = dout
    cdef double[:, ::1] dhv = dh
    cdef double[:, ::1] dzv = dz
    cdef double[:, ::1] dembv = demb

    cdef double* pflat = &flat[0]
    cdef double* pgrad = &grad[0]
    cdef double* pz
    cdef double* pt
    cdef double* pa
    cdef double* pd
    cdef double* pbias
    cdef int off, bias_off

    # ---- forward ----
    for l in range(depth):
        if l == 0:
            with nogil:
                _rm_gemm(0, 0, n, width, in_dim, 1.0, &feats[0, 0], in_dim,
                         pflat + w_in_off, width, 0.0, &zv[0, 0, 0])
            bias_off = b_in_off
        else:
            off = b_in_off + width + (l - 1) * hidden_block
            with nogil:
                _rm_gemm(0, 0, n, width, width, 1.0, &av[l - 1, 0, 0], width,
                         pflat + off, width, 0.0, &zv[l, 0, 0])
            bias_off = off + width * width
        with nogil:
            pz = &zv[l, 0, 0]
            pt = &tv[l, 0, 0]
            pbias = pflat + bias_off
            for i in range(n):
                for j in range(width):
                    z = pz[j] + pbias[j]
                    pz[j] = z
                    pt[j] = C1 * z * (1.0 + C2 * z * z)
                pz += width
                pt += width
        np.tanh(t_buf[l], out=t_buf[l])
        with nogil:
            pz = &zv[l, 0, 0]
            pt = &tv[l, 0, 0]
            pa = &av[l, 0, 0]
            for i in range(plane):
                pa[i] = 0.5 * pz[i] * (1.0 + pt[i])

    with nogil:
        _rm_gemm(0, 0, n, data_dim, width, 1.0, &av[depth - 1, 0, 0], width,
                 pflat + w_out_off, data_dim, 0.0, &outv[0, 0])
        scale = 2.0 / n
        for i in range(n):
            for j in range(data_dim):
                r = outv[i, j] + pflat[b_out_off + j] - target[i, j]
                loss += r * r
                doutv[i, j] = scale * r
        loss /= n

        # ---- backward ----
        # output layer
        _rm_gemm(1, 0, width, data_dim, n, 1.0, &av[depth - 1, 0, 0], width,
                 &doutv[0, 0], data_dim, 0.0, pgrad + w_out_off)
        _colsum(&doutv[0, 0], pgrad + b_out_off, n, data_dim)
        _rm_gemm(0, 1, n, width, data_dim, 1.0, &doutv[0, 0], data_dim,
                 pflat + w_out_off, data_dim, 0.0, &dhv[0, 0])
        # hidden layers down to the input layer; dz = dh * gelu'(z)
        for l in range(depth - 1, -1, -1):
            pz = &zv[l, 0, 0]
            pt = &tv[l, 0, 0]
            pd = &dzv[0, 0]
            pa = &dhv[0, 0]
            for i in range(plane):
                z = pz[i]
                t = pt[i]
                x2 = z * z
                pd[i] = pa[i] * (0.5 * (1.0 + t)
                                 + 0.5 * z * (1.0 - t * t) * C1 * (1.0 + 3.0 * C2 * x2))
            if l > 0:
                off = b_in_off + width + (l - 1) * hidden_block
                _rm_gemm(1, 0, width, width, n, 1.0, &av[l - 1, 0, 0], width,
                         &dzv[0, 0], width, 0.0, pgrad + off)
                _colsum(&dzv[0, 0], pgrad + off + width * width, n, width)
                _rm_gemm(0, 1, n, width, width, 1.0, &dzv[0, 0], width,
                         pflat + off, width, 0.0, &dhv[0, 0])
            else:
                _rm_gemm(1, 0, in_dim, width, n, 1.0, &feats[0, 0], in_dim,
                         &dzv[0, 0], width, 0.0, pgrad + w_in_off)
                _colsum(&dzv[0, 0], pgrad + b_in_off, n, width)
                # embedding rows: d(input slice) scattered by condition index
                _rm_gemm(0, 1, n, ced, width, 1.0, &dzv[0, 0], width,
                         pflat + w_in_off + emb_start * width, width,
                         0.0, &dembv[0, 0])
                for i in range(n):
                    row = <int> cond[i]
                    off = emb_off + row * ced
                    for j in range(ced):
                        pgrad[off + j] += dembv[i, j]

    return loss


def assemble_rf(double[::1] flat, double[:, ::1] x0, double[:, ::1] eps,
                double[::1] t, long[::1] cond, double[::1] freqs,
                double[:, ::1] feats, double[:, ::1] target,
                int depth, int width, int in_dim, int data_dim, int ced):
    """Straight-line-interpolation training features and velocity target.

    Fills feats = [x_t | sin block | cos block | class embedding] and
    target = eps - x0 in one pass; the embedding rows are read from the tail
    of the flat parameter vector.
    """
    cdef int n = x0.shape[0]
    cdef int half = freqs.shape[0]
    cdef int emb_off = (in_dim * width + width
                        + (depth - 1) * (width * width + width)
                        + width * data_dim + data_dim)
    cdef int i, j, k, off
    cdef double ti, ph
    with nogil:
        for i in range(n):
            ti = t[i]
            for j in range(data_dim):
                feats[i, j] = (1.0 - ti) * x0[i, j] + ti * eps[i, j]
                target[i, j] = eps[i, j] - x0[i, j]
            for k in range(half):
                ph = ti * freqs[k]
                feats[i, data_dim + k] = sin(ph)
                feats[i, data_dim + half + k] = cos(ph)
            off = emb_off + (<int> cond[i]) * ced
            for j in range(ced):
                feats[i, data_dim + 2 * half + j] = flat[off + j]


def adamw(double[::1] flat, double[::1] grad, double[::1] m, double[::1] v,
          long step, double lr, double beta1, double beta2,
          double eps, double weight_decay):
    """Decoupled-weight-decay Adam update, in place. step is 1-based."""
    cdef Py_ssize_t i, size = flat.shape[0]
    cdef double bc1 = 1.0 - beta1 ** step
    cdef double bc2 = 1.0 - beta2 ** step
    cdef double decay = 1.0 - lr * weight_decay
    cdef double g, mh, vh
    with nogil:
        for i in range(size):
            g = grad[i]
            flat[i] *= decay
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            mh = m[i] / bc1
            vh = v[i] / bc2
            flat[i] -= lr * mh / (sqrt(vh) + eps)
