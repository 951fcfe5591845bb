"""Koopman kernel regression: fitting, eigenfunction pullback and LTI rollout."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .dynamics import Dataset
from .errors import ConfigError, DimensionMismatch, HorizonWarning, SingularGram
from .kernels import BaseKernel, KoopmanGram, _kernel_groups, assemble_gram
from .spectra import Spectrum, power_matrix

__all__ = [
    "KKRConfig",
    "KKRModel",
    "LTIPredictor",
    "LinearityReport",
    "fit",
    "eigenfunctions_at",
    "forecast",
    "linearity_check",
]

REALIFY = ("real_part", "require_conjugate_closed")


@dataclass(frozen=True)
class KKRConfig:
    """Estimator settings.

    ``jitter=None`` means ``1e-10 * N`` on the initial-condition Gram.
    """

    gamma: float = 1e-6
    jitter: float | None = None
    realify: str = "real_part"
    normalized: bool = True

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ConfigError("gamma must be non-negative")
        if self.jitter is not None and not self.jitter >= 0:
            raise ConfigError("jitter must be non-negative")
        if self.realify not in REALIFY:
            raise ConfigError(f"realify must be one of {REALIFY}")


@dataclass(frozen=True, eq=False)
class LTIPredictor:
    """Diagonal LTI system ``z+ = Lambda z``, ``y = 1^T z`` from one initial state."""

    mus: np.ndarray  # diagonal of Lambda
    phi0: np.ndarray
    Gamma: np.ndarray  # (H'+1, D), Gamma[h, j] = mu_j ** h

    @property
    def Lambda(self) -> np.ndarray:
        return np.diag(self.mus)

    def rollout(self) -> np.ndarray:
        """States ``z_h`` for h = 0..H', shape (H'+1, D)."""
        z = np.empty_like(self.Gamma)
        z[0] = self.phi0
        for h in range(1, z.shape[0]):
            z[h] = self.mus * z[h - 1]
        return z

    def outputs(self) -> np.ndarray:
        """Complex forecast ``Gamma @ phi0``."""
        return self.Gamma @ self.phi0


@dataclass(frozen=True, eq=False)
class KKRModel:
    beta: np.ndarray  # (N*(H+1),)
    alphas: np.ndarray  # (D, N)
    spectrum: Spectrum
    base: BaseKernel | tuple[BaseKernel, ...]
    X0: np.ndarray  # (N, d)
    dt: float
    H: int
    config: KKRConfig = field(default_factory=KKRConfig)
    diagnostics: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.X0.shape[0]

    @property
    def D(self) -> int:
        return self.spectrum.D

    def eigenfunctions(self, X) -> np.ndarray:
        """``phi_j(x) = sum_i k_j(x, X0[i]) alpha_j[i]`` for each row of X: (M, D)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.X0.shape[1]:
            raise DimensionMismatch(f"expected states of dimension {self.X0.shape[1]}")
        out = np.empty((X.shape[0], self.D), dtype=complex)
        for kern, idx in _kernel_groups(self.base, self.D):
            out[:, idx] = kern.matrix(X, self.X0) @ self.alphas[idx].T
        return out

    def predictor(self, x0, horizon: int | None = None) -> LTIPredictor:
        horizon = self.H if horizon is None else horizon
        phi0 = self.eigenfunctions(x0)[0]
        Gamma = power_matrix(self.spectrum.mus, horizon).T
        return LTIPredictor(self.spectrum.mus.copy(), phi0, Gamma)

    def forecast_complex(self, X0, horizon: int | None = None) -> np.ndarray:
        """Complex forecasts (M, H'+1) for a batch of initial conditions."""
        horizon = self.H if horizon is None else horizon
        if horizon < 0:
            raise ValueError("horizon must be non-negative")
        if horizon > self.H:
            warnings.warn(
                f"forecast horizon {horizon} exceeds training horizon {self.H}; "
                "non-recurrence is only guaranteed on the training window",
                HorizonWarning,
                stacklevel=3,
            )
        Gamma = power_matrix(self.spectrum.mus, horizon).T
        return self.eigenfunctions(X0) @ Gamma.T

    def forecast_batch(self, X0, horizon: int | None = None) -> np.ndarray:
        """Real forecasts (M, H'+1); the imaginary part is dropped."""
        return self.forecast_complex(X0, horizon).real

    def __call__(self, X0, horizon: int | None = None) -> np.ndarray:
        return self.forecast_batch(X0, horizon)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        bases = self.base if isinstance(self.base, tuple) else None
        return {
            "kind": "kkr",
            "config": asdict(self.config),
            "dt": self.dt,
            "H": self.H,
            "base": [b.to_dict() for b in bases] if bases else self.base.to_dict(),
            "spectrum": {
                "re": self.spectrum.mus.real.tolist(),
                "im": self.spectrum.mus.imag.tolist(),
                "dt": self.spectrum.dt,
                "conjugate_closed": self.spectrum.conjugate_closed,
            },
            "X0": self.X0.tolist(),
            "beta": {"re": self.beta.real.tolist(), "im": self.beta.imag.tolist()},
            "alphas": {"re": self.alphas.real.tolist(), "im": self.alphas.imag.tolist()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> KKRModel:
        if doc.get("kind") != "kkr":
            raise ValueError("not a KKR model document")
        sp = doc["spectrum"]
        base = doc["base"]
        base = tuple(BaseKernel(**b) for b in base) if isinstance(base, list) else BaseKernel(**base)
        return cls(
            beta=np.array(doc["beta"]["re"]) + 1j * np.array(doc["beta"]["im"]),
            alphas=np.array(doc["alphas"]["re"]) + 1j * np.array(doc["alphas"]["im"]),
            spectrum=Spectrum(np.array(sp["re"]) + 1j * np.array(sp["im"]), sp["dt"], sp["conjugate_closed"]),
            base=base,
            X0=np.array(doc["X0"], dtype=float),
            dt=doc["dt"],
            H=doc["H"],
            config=KKRConfig(**doc["config"]),
        )

    def save(self, path) -> None:
        # json writes floats with repr(), the shortest string that round-trips exactly
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> KKRModel:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _solve_gram(G: np.ndarray, gamma: float, y: np.ndarray) -> tuple[np.ndarray, dict]:
    """Solve ``(G + gamma I) beta = y`` for Hermitian PSD ``G``."""
    A = G + gamma * np.eye(G.shape[0])
    diag = {"solver": "cholesky"}
    try:
        factor = sla.cho_factor(A, lower=True, check_finite=False)
        beta = sla.cho_solve(factor, y, check_finite=False)
    except np.linalg.LinAlgError:
        evals, V = np.linalg.eigh(A)
        top = evals[-1]
        diag.update(solver="eigh", min_eig=float(evals[0]), max_eig=float(top))
        if not evals[0] > 1e-14 * abs(top):
            raise SingularGram(
                f"regularized Gram is singular (eigenvalues {evals[0]:.3e} .. {top:.3e}); increase gamma"
            ) from None
        diag["condition"] = float(top / evals[0])
        beta = V @ ((V.conj().T @ y) / evals)
    if not np.all(np.isfinite(beta)):
        raise SingularGram("non-finite solution of the regularized Gram system")
    res = np.linalg.norm(A @ beta - y)
    diag["relative_residual"] = float(res / max(np.linalg.norm(y), np.finfo(float).tiny))
    return beta, diag


def _ic_solve(K0: np.ndarray, jitter: float, R: np.ndarray) -> np.ndarray:
    A = K0 + jitter * np.eye(K0.shape[0])
    try:
        return sla.cho_solve(sla.cho_factor(A, lower=True, check_finite=False), R, check_finite=False)
    except np.linalg.LinAlgError:
        return sla.lstsq(A, R, check_finite=False)[0]


def fit(
    data: Dataset,
    spectrum: Spectrum,
    base: BaseKernel | Sequence[BaseKernel],
    config: KKRConfig | None = None,
    gram: KoopmanGram | None = None,
) -> KKRModel:
    """Fit the estimator to a training set.

    ``base`` is one kernel shared across eigenvalues or one kernel per
    eigenvalue. A precomputed ``gram`` for the same data and spectrum may be
    passed to skip assembly.
    """
    config = config or KKRConfig()
    if config.realify == "require_conjugate_closed" and not spectrum.conjugate_closed:
        raise ConfigError("realify=require_conjugate_closed needs a conjugate-closed spectrum")
    if not isinstance(base, BaseKernel):
        base = tuple(base)
    if gram is None:
        gram = assemble_gram(data, spectrum, base, config.normalized)
    elif gram.N != data.N or gram.H != data.H or gram.spectrum is not spectrum:
        raise DimensionMismatch("precomputed Gram does not match data and spectrum")
    N, P = data.N, data.H + 1
    y = data.outputs.reshape(-1)

    G = gram.matrix
    real = spectrum.conjugate_closed and gram.max_imag() <= 1e-10 * max(1.0, np.abs(G).max())
    beta, diag = _solve_gram(G.real if real else G, config.gamma, y)
    beta = beta.astype(complex)
    diag["real_solve"] = bool(real)

    # s_j[i] = sum_h conj(mu_j^h) beta[i, h]; rhs_j = kmu_j s_j
    powers = power_matrix(spectrum.mus, data.H)
    S = np.conj(powers) @ beta.reshape(N, P).T  # (D, N)
    rhs = np.einsum("jab,jb->ja", gram.kmu, S)
    jitter = 1e-10 * N if config.jitter is None else config.jitter
    X0 = data.initial_conditions.copy()
    alphas = np.empty((spectrum.D, N), dtype=complex)
    for kern, idx in _kernel_groups(base, spectrum.D):
        K0 = kern.matrix(X0, X0)
        alphas[idx] = _ic_solve(K0, jitter, rhs[idx].T).T
    if not np.all(np.isfinite(alphas)):
        raise SingularGram("non-finite eigenfunction coefficients")
    diag["jitter"] = jitter
    return KKRModel(beta, alphas, spectrum, base, X0, data.dt, data.H, config, diag)


def eigenfunctions_at(model: KKRModel, x0) -> np.ndarray:
    return model.eigenfunctions(x0)[0]


def forecast(model: KKRModel, x0, horizon: int | None = None) -> tuple[np.ndarray, float]:
    """Real forecast for one initial condition and the largest dropped imaginary part."""
    yc = model.forecast_complex(x0, horizon)[0]
    return yc.real, float(np.max(np.abs(yc.imag)))


@dataclass(frozen=True, eq=False)
class LinearityReport:
    residuals: np.ndarray  # (N, H+1) |y - Gamma phi(x0)|
    feature_defect: np.ndarray  # (N, D) max_h |z_{h+1} - mu z_h|

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max())

    @property
    def max_feature_defect(self) -> float:
        return float(self.feature_defect.max())


def linearity_check(model: KKRModel, data: Dataset) -> LinearityReport:
    """Output-reconstruction residual and feature-propagation defect per trajectory."""
    if data.H != model.H or data.dt != model.dt:
        raise DimensionMismatch("dataset horizon or dt differs from the model's")
    resid = np.empty((data.N, data.H + 1))
    defect = np.empty((data.N, model.D))
    for i in range(data.N):
        pred = model.predictor(data.initial_conditions[i], data.H)
        z = pred.rollout()
        resid[i] = np.abs(data.outputs[i] - (z.sum(axis=1)).real)
        if data.H > 0:
            defect[i] = np.max(np.abs(z[1:] - pred.mus * z[:-1]), axis=0)
        else:
            defect[i] = 0.0
    return LinearityReport(resid, defect)
