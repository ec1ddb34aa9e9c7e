# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MLP training kernels.

Same contract as ``fairfed._kernels_py``: row-major float64 buffers, flat
parameter layout (W1, b1, W2, b2).  Matrix products go through the BLAS
that scipy ships; everything else is a plain loop.  The whole minibatch
loop of an epoch runs without the GIL.
"""
from libc.math cimport exp, log
from libc.stdint cimport int64_t
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_blas cimport dgemm


cdef inline void _mm(const double* A, const double* B, double* C,
                     int m, int k, int n) noexcept nogil:
    # C[m,n] = A[m,k] @ B[k,n]
    cdef char tn = b'N'
    cdef double one = 1.0, zero = 0.0
    dgemm(&tn, &tn, &n, &m, &k, &one, <double*>B, &n, <double*>A, &k,
          &zero, C, &n)


cdef inline void _mtm(const double* A, const double* B, double* C,
                      int m, int k, int n) noexcept nogil:
    # C[m,n] = A[k,m].T @ B[k,n]
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0, zero = 0.0
    dgemm(&tn, &tt, &n, &m, &k, &one, <double*>B, &n, <double*>A, &m,
          &zero, C, &n)


cdef inline void _mmt(const double* A, const double* B, double* C,
                      int m, int k, int n) noexcept nogil:
    # C[m,n] = A[m,k] @ B[n,k].T
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0, zero = 0.0
    dgemm(&tt, &tn, &n, &m, &k, &one, <double*>B, &k, <double*>A, &k,
          &zero, C, &n)


cdef double _loss_grad(const double* P, const double* X, const int64_t* y,
                       int n, int d, int h, int c, double* G,
                       double* z1, double* a, double* lg) noexcept nogil:
    cdef const double* W1 = P
    cdef const double* b1 = P + d * h
    cdef const double* W2 = b1 + h
    cdef const double* b2 = W2 + h * c
    cdef double* gW1 = G
    cdef double* gb1 = G + d * h
    cdef double* gW2 = gb1 + h
    cdef double* gb2 = gW2 + h * c
    cdef int i, j
    cdef double mx, s, lse, v, loss = 0.0
    cdef double inv_n = 1.0 / n
    cdef double* row

    _mm(X, W1, z1, n, d, h)
    for i in range(n):
        for j in range(h):
            v = z1[i * h + j] + b1[j]
            z1[i * h + j] = v
            a[i * h + j] = v if v > 0.0 else 0.0

    _mm(a, W2, lg, n, h, c)
    for i in range(n):
        row = lg + i * c
        mx = row[0] + b2[0]
        for j in range(c):
            row[j] += b2[j]
            if row[j] > mx:
                mx = row[j]
        s = 0.0
        for j in range(c):
            row[j] -= mx
            s += exp(row[j])
        lse = log(s)
        loss += lse - row[y[i]]
        for j in range(c):
            row[j] = exp(row[j] - lse) * inv_n
        row[y[i]] -= inv_n

    _mtm(a, lg, gW2, h, n, c)
    for j in range(c):
        gb2[j] = 0.0
    for i in range(n):
        for j in range(c):
            gb2[j] += lg[i * c + j]

    # z1 is dead after the ReLU; reuse it for the hidden-layer gradient
    _mmt(lg, W2, z1, n, c, h)
    for j in range(h):
        gb1[j] = 0.0
    for i in range(n):
        for j in range(h):
            if a[i * h + j] <= 0.0:
                z1[i * h + j] = 0.0
            gb1[j] += z1[i * h + j]
    _mtm(X, z1, gW1, d, n, h)
    return loss * inv_n


def mlp_loss_grad(double[::1] values, const double[:, ::1] X,
                  const int64_t[::1] y, int in_dim, int hidden, int classes,
                  double[::1] grad):
    cdef int n = X.shape[0]
    cdef double loss
    cdef double* z1 = <double*>malloc(n * hidden * sizeof(double))
    cdef double* a = <double*>malloc(n * hidden * sizeof(double))
    cdef double* lg = <double*>malloc(n * classes * sizeof(double))
    if z1 == NULL or a == NULL or lg == NULL:
        free(z1); free(a); free(lg)
        raise MemoryError()
    with nogil:
        loss = _loss_grad(&values[0], &X[0, 0], &y[0], n, in_dim, hidden,
                          classes, &grad[0], z1, a, lg)
    free(z1); free(a); free(lg)
    return loss


def sgd_epoch(double[::1] values, const double[:, ::1] X, const int64_t[::1] y,
              const int64_t[::1] order, int in_dim, int hidden, int classes,
              double lr, int batch_size):
    cdef int n = order.shape[0]
    cdef int p = values.shape[0]
    cdef int b = batch_size if batch_size < n else n
    cdef int start, stop, nb, i, j, k
    cdef int64_t src
    cdef double* xb = <double*>malloc(b * in_dim * sizeof(double))
    cdef int64_t* yb = <int64_t*>malloc(b * sizeof(int64_t))
    cdef double* g = <double*>malloc(p * sizeof(double))
    cdef double* z1 = <double*>malloc(b * hidden * sizeof(double))
    cdef double* a = <double*>malloc(b * hidden * sizeof(double))
    cdef double* lg = <double*>malloc(b * classes * sizeof(double))
    if (xb == NULL or yb == NULL or g == NULL or z1 == NULL or a == NULL
            or lg == NULL):
        free(xb); free(yb); free(g); free(z1); free(a); free(lg)
        raise MemoryError()
    with nogil:
        start = 0
        while start < n:
            stop = start + b
            if stop > n:
                stop = n
            nb = stop - start
            for i in range(nb):
                src = order[start + i]
                yb[i] = y[src]
                for j in range(in_dim):
                    xb[i * in_dim + j] = X[src, j]
            _loss_grad(&values[0], xb, yb, nb, in_dim, hidden, classes, g,
                       z1, a, lg)
            for k in range(p):
                values[k] -= lr * g[k]
            start = stop
    free(xb); free(yb); free(g); free(z1); free(a); free(lg)
