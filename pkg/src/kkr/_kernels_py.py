"""Pure numpy implementation of the Gram-assembly kernels.

Always importable; ``kkr._backend`` uses it when the compiled core is missing
or when ``KKR_BACKEND=python`` is set.
"""

from __future__ import annotations

import numpy as np

# Below this state dimension squared distances are formed from explicit
# differences (exact zero on the diagonal); above it via inner products.
DIRECT_DIM = 16


def sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared distances between rows of (n, d) and (m, d) arrays."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[1] <= DIRECT_DIM:
        diff = A[:, None, :] - B[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    out = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    return np.maximum(out, 0.0)


def rbf_tensor(A: np.ndarray, B: np.ndarray, ell: float) -> np.ndarray:
    """Base kernel between all samples of two trajectory stacks.

    ``A`` is (Na, P, d), ``B`` is (Nb, Q, d); returns (Na, Nb, P, Q) with entry
    ``k(A[a, m], B[b, n])``.
    """
    Na, P, d = A.shape
    Nb, Q, _ = B.shape
    sq = sqdist(A.reshape(Na * P, d), B.reshape(Nb * Q, d))
    K = np.exp(sq * (-0.5 / (ell * ell)))
    return K.reshape(Na, P, Nb, Q).transpose(0, 2, 1, 3)


def contract_pullback(Kb: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``kmu[j, a, b] = sum_{m,n} W[j, m] Kb[a, b, m, n] conj(W[j, n])``.

    Returns a (D, Na, Nb) complex array.
    """
    Na, Nb, P, Q = Kb.shape
    D = W.shape[0]
    outer = (W[:, :, None] * np.conj(W)[:, None, :]).reshape(D, P * Q)
    flat = Kb.reshape(Na * Nb, P * Q)
    out = flat @ outer.real.T + 1j * (flat @ outer.imag.T)
    return np.ascontiguousarray(out.T).reshape(D, Na, Nb)


def accumulate_blocks(kmu: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """Sum of rank-one time blocks ``kmu[j, a, b] * p_j p_j^H``.

    Returns the (Na*P, Nb*P) trajectory-major block matrix.
    """
    D, Na, Nb = kmu.shape
    P = powers.shape[1]
    outer = (powers[:, :, None] * np.conj(powers)[:, None, :]).reshape(D, P * P)
    blocks = kmu.reshape(D, Na * Nb).T @ outer
    return blocks.reshape(Na, Nb, P, P).transpose(0, 2, 1, 3).reshape(Na * P, Nb * P)


def koopman_gram(states: np.ndarray, ell: float, W: np.ndarray, powers: np.ndarray):
    """Training Gram for an RBF base kernel.

    Returns ``(G, kmu)`` with ``G`` the (N*P, N*P) Koopman Gram and ``kmu`` the
    (D, N, N) per-eigenvalue scalar kernel matrices.
    """
    Kb = rbf_tensor(states, states, ell)
    kmu = contract_pullback(Kb, W)
    del Kb
    return accumulate_blocks(kmu, powers), kmu
