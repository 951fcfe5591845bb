# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Koopman Gram assembly for an RBF base kernel.

Walks the upper block triangle one trajectory row at a time. For row ``a`` it
evaluates the base kernel against trajectories ``a..N-1``, contracts with the
pullback weights of every eigenvalue (one dgemm), accumulates the rank-one time
blocks (one zgemm) and scatters the Hermitian pair of blocks into the Gram.
The (N, N, P, P) base tensor is never stored.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm, zgemm

cnp.import_array()

DEF DIRECT_DIM = 16


cdef inline void _rowmajor_dgemm(int M, int N, int K, double *A, double *B, double *C) noexcept nogil:
    # C (M, N) = A (M, K) @ B (K, N), all C-contiguous.
    cdef char tr = b'N'
    cdef double one = 1.0, zero = 0.0
    dgemm(&tr, &tr, &N, &M, &K, &one, B, &N, A, &K, &zero, C, &N)


cdef inline void _rowmajor_zgemm(int M, int N, int K, double complex *A,
                                 double complex *B, double complex *C) noexcept nogil:
    cdef char tr = b'N'
    cdef double complex one = 1.0, zero = 0.0
    zgemm(&tr, &tr, &N, &M, &K, &one, B, &N, A, &K, &zero, C, &N)


cdef inline void _rowmajor_dgemm_bt(int M, int N, int K, double *A, double *B, double *C) noexcept nogil:
    # C (M, N) = A (M, K) @ B (N, K).T
    cdef char tn = b'N', tt = b'T'
    cdef double one = 1.0, zero = 0.0
    dgemm(&tt, &tn, &N, &M, &K, &one, B, &K, A, &K, &zero, C, &N)


def koopman_gram(states, double ell, W, powers):
    """Return ``(G, kmu)``; same contract as ``kkr._kernels_py.koopman_gram``."""
    cdef const double[:, :, ::1] X = np.ascontiguousarray(states, dtype=np.float64)
    cdef Py_ssize_t N = X.shape[0], P = X.shape[1], d = X.shape[2]
    W = np.ascontiguousarray(W, dtype=np.complex128)
    powers = np.ascontiguousarray(powers, dtype=np.complex128)
    cdef Py_ssize_t D = W.shape[0]
    if W.shape[1] != P or powers.shape[0] != D or powers.shape[1] != P:
        raise ValueError("weight shapes do not match the trajectory stack")

    # Contraction matrix (P*P, 2D): real and imaginary parts of W_j (x) conj(W_j).
    wout = (W[:, :, None] * np.conj(W)[:, None, :]).reshape(D, P * P)
    cdef double[:, ::1] wt = np.ascontiguousarray(np.concatenate([wout.real, wout.imag]).T)
    cdef double complex[:, ::1] pout = np.ascontiguousarray(
        (powers[:, :, None] * np.conj(powers)[:, None, :]).reshape(D, P * P))

    G_arr = np.empty((N * P, N * P), dtype=np.complex128)
    kmu_arr = np.empty((D, N, N), dtype=np.complex128)
    cdef double complex[:, ::1] G = G_arr
    cdef double complex[:, :, ::1] kmu = kmu_arr

    cdef double[:, ::1] kb = np.empty((N, P * P))
    cdef double[:, ::1] cmat = np.empty((N, 2 * D))
    cdef double complex[:, ::1] krow = np.empty((N, D), dtype=np.complex128)
    cdef double complex[:, ::1] blk = np.empty((N, P * P), dtype=np.complex128)
    cdef double[::1] norms = np.empty(N * P)
    cdef double[::1] inner = np.empty(P * N * P if d > DIRECT_DIM else 1)
    cdef const double[:, ::1] Xflat = np.asarray(X).reshape(N * P, d)

    cdef double scale = -0.5 / (ell * ell)
    cdef Py_ssize_t a, b, nb, m, n, k, j, r, c
    cdef double s, diff
    cdef double complex v

    with nogil:
        if d > DIRECT_DIM:
            for r in range(N * P):
                s = 0.0
                for k in range(d):
                    s = s + Xflat[r, k] * Xflat[r, k]
                norms[r] = s

        for a in range(N):
            nb = N - a
            # base kernel of trajectory a against trajectories a..N-1
            if d > DIRECT_DIM:
                _rowmajor_dgemm_bt(<int>P, <int>(nb * P), <int>d,
                                   <double *>&Xflat[a * P, 0], <double *>&Xflat[a * P, 0], &inner[0])
                for b in range(nb):
                    for m in range(P):
                        for n in range(P):
                            s = norms[a * P + m] + norms[(a + b) * P + n] - 2.0 * inner[m * nb * P + b * P + n]
                            if s < 0.0:
                                s = 0.0
                            kb[b, m * P + n] = exp(scale * s)
            else:
                for b in range(nb):
                    for m in range(P):
                        for n in range(P):
                            s = 0.0
                            for k in range(d):
                                diff = X[a, m, k] - X[a + b, n, k]
                                s = s + diff * diff
                            kb[b, m * P + n] = exp(scale * s)

            # per-eigenvalue scalar kernels: (nb, P*P) @ (P*P, 2D)
            _rowmajor_dgemm(<int>nb, <int>(2 * D), <int>(P * P), &kb[0, 0], &wt[0, 0], &cmat[0, 0])
            for b in range(nb):
                for j in range(D):
                    v = cmat[b, j] + 1j * cmat[b, D + j]
                    krow[b, j] = v
                    kmu[j, a, a + b] = v
                    kmu[j, a + b, a] = v.conjugate()

            # rank-one time blocks: (nb, D) @ (D, P*P)
            _rowmajor_zgemm(<int>nb, <int>(P * P), <int>D, &krow[0, 0], &pout[0, 0], &blk[0, 0])
            for b in range(nb):
                r = a * P
                c = (a + b) * P
                for m in range(P):
                    for n in range(P):
                        v = blk[b, m * P + n]
                        G[r + m, c + n] = v
                        G[c + n, r + m] = v.conjugate()

    return G_arr, kmu_arr

