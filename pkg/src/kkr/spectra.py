"""Discrete-time eigenvalue samplers and per-eigenvalue time weights."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import KernelOverflow, ParseError, SchemaError

__all__ = [
    "Spectrum",
    "MuPowers",
    "sample_uniform_disk",
    "sample_conjugate_pairs",
    "sample_structured",
    "sample",
    "mu_powers",
    "power_matrix",
    "pullback_matrix",
]


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Multiset of discrete-time eigenvalues ``mu = exp(lambda * dt)``."""

    mus: np.ndarray
    dt: float = 1.0
    conjugate_closed: bool = False

    def __post_init__(self):
        mus = np.array(self.mus, dtype=complex).reshape(-1)
        if mus.size < 1:
            raise ValueError("a Spectrum needs at least one eigenvalue")
        if not np.all(np.isfinite(mus)):
            raise ValueError("eigenvalues must be finite")
        mus.flags.writeable = False
        object.__setattr__(self, "mus", mus)

    @property
    def D(self) -> int:
        return self.mus.size

    def __len__(self):
        return self.D

    def __getitem__(self, idx) -> Spectrum:
        """Sub-spectrum; conjugate closure is not assumed to survive slicing."""
        sub = self.mus[idx]
        return Spectrum(np.atleast_1d(sub), self.dt, self.conjugate_closed and _is_closed(sub))

    @property
    def lambdas(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.mus) / self.dt

    def is_conjugate_closed(self, tol: float = 1e-12) -> bool:
        return _is_closed(self.mus, tol)

    def __eq__(self, other):
        if not isinstance(other, Spectrum):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.conjugate_closed == other.conjugate_closed
            and np.array_equal(self.mus, other.mus)
        )

    def to_csv(self, path) -> None:
        lines = ["re,im"] + [f"{m.real:.17g},{m.imag:.17g}" for m in self.mus]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path, dt: float = 1.0) -> Spectrum:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0].strip() != "re,im":
            raise SchemaError("spectrum file must start with header 're,im'")
        vals = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                re_, im_ = (float(v) for v in line.split(","))
            except ValueError:
                raise ParseError(f"expected 're,im' pair, got {line!r}", lineno) from None
            vals.append(complex(re_, im_))
        if not vals:
            raise SchemaError("spectrum file holds no eigenvalues")
        mus = np.array(vals)
        return cls(mus, dt, _is_closed(mus))


def _is_closed(mus: np.ndarray, tol: float = 1e-12) -> bool:
    a = np.sort_complex(np.asarray(mus, dtype=complex))
    b = np.sort_complex(np.conj(a))
    return a.shape == b.shape and bool(np.all(np.abs(a - b) <= tol))


def _disk(rng: np.random.Generator, n: int, radius: float, half: bool = False) -> np.ndarray:
    u, v = rng.random(n), rng.random(n)
    theta = (np.pi if half else 2.0 * np.pi) * v
    return radius * np.sqrt(u) * np.exp(1j * theta)


def sample_uniform_disk(D: int, seed: int, dt: float = 1.0, radius: float = 1.0) -> Spectrum:
    """Area-uniform draws from the closed disk of the given radius."""
    if D < 1:
        raise ValueError("D must be at least 1")
    rng = np.random.default_rng(seed)
    return Spectrum(_disk(rng, D, radius), dt, False)


def sample_conjugate_pairs(D: int, seed: int, dt: float = 1.0, radius: float = 1.0) -> Spectrum:
    """``D // 2`` pairs from the upper half-disk plus their conjugates.

    For odd ``D`` one extra real eigenvalue, uniform on [-radius, radius].
    """
    if D < 1:
        raise ValueError("D must be at least 1")
    rng = np.random.default_rng(seed)
    upper = _disk(rng, D // 2, radius, half=True)
    mus = np.empty(D, dtype=complex)
    mus[0 : 2 * (D // 2) : 2] = upper
    mus[1 : 2 * (D // 2) : 2] = np.conj(upper)
    if D % 2:
        mus[-1] = radius * (2.0 * rng.random() - 1.0)
    return Spectrum(mus, dt, True)


def sample_structured(D: int, seed: int, dt: float) -> Spectrum:
    """Oscillatory and decaying eigenvalues for periodic-attractor data.

    ``lambda`` is drawn with equal probability from the branches ``+ia``,
    ``-ia`` and ``-a`` with ``a ~ U[0, 1]``. An imaginary draw emits the
    conjugate pair jointly; if only one slot is left it falls back to the
    decaying branch so that exactly ``D`` eigenvalues come out.
    """
    if D < 1:
        raise ValueError("D must be at least 1")
    rng = np.random.default_rng(seed)
    mus: list[complex] = []
    while len(mus) < D:
        branch = rng.integers(3)
        a = rng.random()
        if branch < 2 and len(mus) <= D - 2:
            mu = np.exp(1j * a * dt)
            mus.extend([mu, np.conj(mu)])
        else:
            mus.append(complex(np.exp(-a * dt)))
    return Spectrum(np.array(mus), dt, True)


SAMPLERS = {
    "uniform_disk": sample_uniform_disk,
    "conjugate_pairs": sample_conjugate_pairs,
    "structured": sample_structured,
}


def sample(sampler: str, D: int, seed: int, dt: float = 1.0) -> Spectrum:
    try:
        fn = SAMPLERS[sampler]
    except KeyError:
        raise ValueError(f"unknown spectrum sampler {sampler!r}") from None
    return fn(D, seed, dt=dt)


@dataclass(frozen=True, eq=False)
class MuPowers:
    mu: complex
    powers: np.ndarray
    pullback_weights: np.ndarray


def _pullback(mus: np.ndarray, H: int) -> np.ndarray:
    # v_h = mu^{-h} normalized; computed as mu^{H-h} / ||mu^{H-k}||, same direction,
    # no overflow for small |mu|. 0**0 == 1 gives the indicator e_H at mu = 0.
    rev = np.power(mus[:, None], np.arange(H, -1, -1)[None, :])
    scale = np.max(np.abs(rev), axis=1, keepdims=True)
    rev = rev / scale
    return rev / np.linalg.norm(rev, axis=1, keepdims=True)


def power_matrix(mus, H: int) -> np.ndarray:
    """(D, H+1) array with entry ``mu_j ** h``."""
    # Repeated multiplication, so that row h+1 is exactly mu * row h.
    mus = np.asarray(mus, dtype=complex).reshape(-1)
    steps = np.empty((mus.size, H + 1), dtype=complex)
    steps[:, 0] = 1.0
    steps[:, 1:] = mus[:, None]
    return np.cumprod(steps, axis=1)


def pullback_matrix(mus, H: int, normalized: bool = True) -> np.ndarray:
    """(D, H+1) weights contracted against the base kernel block.

    ``normalized=True`` gives unit-norm rows proportional to ``mu^{-h}``;
    otherwise rows are ``mu^{-h} / (H+1)``, which overflows for tiny ``|mu|``
    and raises ``KernelOverflow`` in that case.
    """
    mus = np.asarray(mus, dtype=complex).reshape(-1)
    if normalized:
        return _pullback(mus, H)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        W = np.power(mus[:, None], -np.arange(H + 1)[None, :]) / (H + 1)
    if not np.all(np.isfinite(W)):
        raise KernelOverflow("unnormalized pullback weights overflow; use normalized=True")
    return W


def mu_powers(mu: complex, H: int) -> MuPowers:
    if H < 0:
        raise ValueError("H must be non-negative")
    mu = complex(mu)
    powers = power_matrix([mu], H)[0]
    weights = _pullback(np.array([mu]), H)[0]
    return MuPowers(mu, powers, weights)
