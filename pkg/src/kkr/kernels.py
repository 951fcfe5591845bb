"""Base, eigenfunction and Koopman kernels over trajectories.

Eigenvalue ``mu`` turns a base kernel ``k`` on states into a scalar kernel on
trajectories,

    k_mu(x, x') = sum_{m,n} w_m k(x_m, x'_n) conj(w_n),

with pullback weights ``w_h`` proportional to ``mu^{-h}``, and into the
matrix-valued kernel ``k_mu(x, x') p p^H`` with ``p_h = mu^h``. The Koopman
kernel sums these over the spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend
from .dynamics import Dataset, Trajectory
from .errors import DimensionMismatch, KernelOverflow
from .spectra import MuPowers, Spectrum, power_matrix, pullback_matrix

__all__ = [
    "BaseKernel",
    "rbf",
    "scalar_eigen_kernel",
    "matrix_eigen_kernel",
    "koopman_kernel",
    "KoopmanGram",
    "assemble_gram",
    "base_gram_tensor",
]


def rbf(x, y, length_scale: float) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise DimensionMismatch("state dimensions differ")
    return float(np.exp(-np.sum((x - y) ** 2) / (2.0 * length_scale**2)))


@dataclass(frozen=True)
class BaseKernel:
    """Scalar kernel on states: ``"rbf"`` (default) or ``"linear"``.

    The linear kernel ``<x, x'>`` exists for exact EDMD checks; Koopman
    kernels are meant to use the RBF.
    """

    length_scale: float = 1.0
    kind: str = "rbf"

    def __post_init__(self):
        if self.kind not in ("rbf", "linear"):
            raise ValueError(f"unknown base kernel {self.kind!r}")
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")

    def __call__(self, x, y) -> float:
        if self.kind == "rbf":
            return rbf(x, y, self.length_scale)
        return float(np.dot(np.atleast_1d(x), np.atleast_1d(y)))

    def matrix(self, A, B) -> np.ndarray:
        """Kernel matrix between rows of (n, d) and (m, d) arrays."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if A.shape[1] != B.shape[1]:
            raise DimensionMismatch("state dimensions differ")
        if self.kind == "linear":
            return A @ B.T
        return np.exp(_backend.sqdist(A, B) * (-0.5 / self.length_scale**2))

    def tensor(self, A, B) -> np.ndarray:
        """(Na, Nb, P, Q) kernel between trajectory stacks (Na, P, d), (Nb, Q, d)."""
        if self.kind == "rbf":
            return _backend.rbf_tensor(A, B, self.length_scale)
        Na, P, _ = A.shape
        Nb, Q, _ = B.shape
        K = self.matrix(A.reshape(Na * P, -1), B.reshape(Nb * Q, -1))
        return K.reshape(Na, P, Nb, Q).transpose(0, 2, 1, 3)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "length_scale": self.length_scale}


def base_gram_tensor(dataset: Dataset, base: BaseKernel) -> np.ndarray:
    """Cached ``k(x_i(t_m), x_i'(t_n))`` as an (N, N, H+1, H+1) array."""
    return base.tensor(dataset.states, dataset.states)


def _states(traj) -> np.ndarray:
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    return states[:, None] if states.ndim == 1 else states


def scalar_eigen_kernel(k_block, w: MuPowers, w2: MuPowers | None = None, normalized: bool = True):
    """Contract an (H+1, H+1) base-kernel block with pullback weights.

    ``normalized=False`` uses the raw weights ``mu^{-h} / (H+1)`` and raises
    ``KernelOverflow`` when they do not fit in double precision.
    """
    w2 = w if w2 is None else w2
    k_block = np.asarray(k_block, dtype=float)
    P = k_block.shape[0]
    if k_block.shape != (P, w2.powers.size) or w.powers.size != P:
        raise DimensionMismatch("block and weight shapes differ")
    if normalized:
        a, b = w.pullback_weights, w2.pullback_weights
    else:
        a = pullback_matrix([w.mu], P - 1, normalized=False)[0]
        b = pullback_matrix([w2.mu], P - 1, normalized=False)[0]
    with np.errstate(over="ignore", invalid="ignore"):
        val = a @ k_block @ np.conj(b)
    if not np.isfinite(val):
        raise KernelOverflow("eigenfunction kernel overflowed")
    return complex(val)


def matrix_eigen_kernel(traj, traj2, mu: MuPowers, base: BaseKernel, normalized: bool = True):
    """(H+1, H+1) rank-one block ``k_mu(x, x') p p^H``."""
    A, B = _states(traj), _states(traj2)
    if A.shape[0] != B.shape[0]:
        raise DimensionMismatch("trajectories differ in horizon")
    s = scalar_eigen_kernel(base.matrix(A, B), mu, mu, normalized)
    return s * np.outer(mu.powers, np.conj(mu.powers))


def koopman_kernel(traj, traj2, spectrum: Spectrum, base: BaseKernel, normalized: bool = True):
    """Matrix Koopman kernel between two trajectories, summed over the spectrum."""
    A, B = _states(traj), _states(traj2)
    if A.shape[0] != B.shape[0]:
        raise DimensionMismatch("trajectories differ in horizon")
    H = A.shape[0] - 1
    kb = base.tensor(A[None], B[None])
    W = pullback_matrix(spectrum.mus, H, normalized)
    kmu = _backend.contract_pullback(kb, W)
    return _backend.accumulate_blocks(kmu, power_matrix(spectrum.mus, H))


@dataclass(frozen=True, eq=False)
class KoopmanGram:
    """Block Gram of the Koopman kernel on a training set.

    ``matrix`` is (N(H+1), N(H+1)) with row index ``i*(H+1) + h``; ``kmu`` holds
    the (D, N, N) scalar eigenfunction kernels it was accumulated from.
    """

    matrix: np.ndarray
    kmu: np.ndarray
    spectrum: Spectrum
    normalized: bool
    N: int
    H: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def max_imag(self) -> float:
        return float(np.max(np.abs(self.matrix.imag)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def is_psd(self) -> bool:
        tr = float(np.trace(self.matrix).real)
        return self.min_eigenvalue() >= -1e-8 * tr / self.dim

    def to_csv(self, path) -> None:
        """Debug dump: one row per matrix entry, ``row,col,re,im``."""
        r, c = np.indices(self.matrix.shape)
        rows = np.column_stack([r.ravel(), c.ravel(), self.matrix.real.ravel(), self.matrix.imag.ravel()])
        np.savetxt(path, rows, delimiter=",", header="row,col,re,im", comments="",
                   fmt=["%d", "%d", "%.17g", "%.17g"])


def _kernel_groups(base, D):
    if isinstance(base, BaseKernel):
        return [(base, np.arange(D))]
    base = list(base)
    if len(base) != D:
        raise DimensionMismatch(f"{len(base)} base kernels for {D} eigenvalues")
    groups: dict[BaseKernel, list[int]] = {}
    for j, k in enumerate(base):
        groups.setdefault(k, []).append(j)
    return [(k, np.array(idx)) for k, idx in groups.items()]


def assemble_gram(
    data: Dataset | Sequence[Trajectory],
    spectrum: Spectrum,
    base: BaseKernel | Sequence[BaseKernel],
    normalized: bool = True,
) -> KoopmanGram:
    """Koopman Gram of a training set.

    ``base`` may be one kernel shared by all eigenvalues or a sequence with
    one kernel per eigenvalue.
    """
    if not isinstance(data, Dataset):
        if len({_states(t).shape[0] for t in data}) > 1:
            raise DimensionMismatch("trajectories differ in horizon")
        data = Dataset.from_trajectories(list(data))
    N, H = data.N, data.H
    W = pullback_matrix(spectrum.mus, H, normalized)
    Pw = power_matrix(spectrum.mus, H)
    groups = _kernel_groups(base, spectrum.D)
    if len(groups) == 1 and groups[0][0].kind == "rbf":
        G, kmu = _backend.koopman_gram(data.states, groups[0][0].length_scale, W, Pw)
    else:
        kmu = np.empty((spectrum.D, N, N), dtype=complex)
        for kern, idx in groups:
            kmu[idx] = _backend.contract_pullback(base_gram_tensor(data, kern), W[idx])
        G = _backend.accumulate_blocks(kmu, Pw)
        G = 0.5 * (G + G.conj().T)
    return KoopmanGram(G, kmu, spectrum, normalized, N, H)
