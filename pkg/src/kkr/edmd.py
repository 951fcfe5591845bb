"""Kernel EDMD baseline via principal component regression on one-step pairs."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import Dataset
from .errors import DimensionMismatch, RankDeficient
from .kernels import BaseKernel

__all__ = ["SnapshotPairs", "EDMDModel", "make_pairs", "fit_pcr", "forecast_edmd"]

RANK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SnapshotPairs:
    X: np.ndarray  # (M, d)
    X_next: np.ndarray  # (M, d)
    Y: np.ndarray  # (M,) outputs at X
    N: int
    H: int

    @property
    def M(self) -> int:
        return self.X.shape[0]

    def to_states(self) -> np.ndarray:
        """Rebuild the (N, H+1, d) trajectory stack the pairs were cut from."""
        d = self.X.shape[1]
        X = self.X.reshape(self.N, self.H, d)
        last = self.X_next.reshape(self.N, self.H, d)[:, -1:]
        return np.concatenate([X, last], axis=1)


def make_pairs(data: Dataset) -> SnapshotPairs:
    if data.H < 1:
        raise ValueError("one-step pairs need H >= 1")
    d = data.state_dim
    X = data.states[:, :-1].reshape(-1, d)
    Xn = data.states[:, 1:].reshape(-1, d)
    Y = data.outputs[:, :-1].reshape(-1)
    return SnapshotPairs(X, Xn, Y, data.N, data.H)


@dataclass(frozen=True, eq=False)
class EDMDModel:
    """Finite-rank Koopman estimate with eigenpairs and output modes.

    Eigenfunction j at x is ``k(x, X_train) @ coef[:, j]``.
    """

    eigenvalues: np.ndarray  # (D,)
    coef: np.ndarray  # (M, D)
    modes: np.ndarray  # (D,)
    base: BaseKernel
    X_train: np.ndarray
    ridge: float = 1e-8

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    def eigenfunctions(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.X_train.shape[1]:
            raise DimensionMismatch(f"expected states of dimension {self.X_train.shape[1]}")
        return self.base.matrix(X, self.X_train) @ self.coef

    def forecast_batch(self, X0, horizon: int) -> np.ndarray:
        if horizon < 0:
            raise ValueError("horizon must be non-negative")
        phi = self.eigenfunctions(X0) * self.modes  # (B, D)
        steps = np.empty((self.rank, horizon + 1), dtype=complex)
        steps[:, 0] = 1.0
        steps[:, 1:] = self.eigenvalues[:, None]
        return (phi @ np.cumprod(steps, axis=1)).real

    def __call__(self, X0, horizon: int) -> np.ndarray:
        return self.forecast_batch(X0, horizon)

    def to_dict(self) -> dict:
        return {
            "kind": "edmd",
            "base": self.base.to_dict(),
            "ridge": self.ridge,
            "eigenvalues": {"re": self.eigenvalues.real.tolist(), "im": self.eigenvalues.imag.tolist()},
            "coef": {"re": self.coef.real.tolist(), "im": self.coef.imag.tolist()},
            "modes": {"re": self.modes.real.tolist(), "im": self.modes.imag.tolist()},
            "X_train": self.X_train.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> EDMDModel:
        if doc.get("kind") != "edmd":
            raise ValueError("not an EDMD model document")

        def cplx(key):
            return np.array(doc[key]["re"]) + 1j * np.array(doc[key]["im"])

        X = np.array(doc["X_train"], dtype=float)
        return cls(cplx("eigenvalues"), cplx("coef").reshape(X.shape[0], -1), cplx("modes"),
                   BaseKernel(**doc["base"]), X, doc["ridge"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> EDMDModel:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_pcr(pairs: SnapshotPairs, rank: int, base: BaseKernel, ridge: float = 1e-8) -> EDMDModel:
    """Reduced-rank kernel EDMD on the top principal directions of the input Gram."""
    M = pairs.M
    if not 1 <= rank <= M:
        raise ValueError(f"rank must lie in [1, {M}]")
    G = base.matrix(pairs.X, pairs.X)
    A = base.matrix(pairs.X_next, pairs.X)  # A[i, j] = k(x+_i, x_j)
    sig, U = np.linalg.eigh(G)
    sig, U = sig[::-1][:rank], U[:, ::-1][:, :rank]
    keep = sig > RANK_TOL * sig[0]
    if not np.all(keep):
        r = int(np.count_nonzero(keep))
        warnings.warn(f"input Gram has numerical rank {r} < requested {rank}; truncating",
                      RankDeficient, stacklevel=2)
        sig, U = sig[:r], U[:, :r]
    scaled = U / np.sqrt(sig)  # U Sigma^{-1/2}
    T = scaled.T @ A @ scaled
    mu, Wv = np.linalg.eig(T)
    coef = scaled @ Wv
    Phi = G @ coef  # eigenfunctions at the training inputs
    lhs = Phi.conj().T @ Phi + ridge * np.eye(mu.size)
    modes = np.linalg.solve(lhs, Phi.conj().T @ pairs.Y)
    return EDMDModel(mu, coef, modes, base, pairs.X.copy(), ridge)


def forecast_edmd(model: EDMDModel, x0, horizon: int) -> np.ndarray:
    return model.forecast_batch(x0, horizon)[0]
