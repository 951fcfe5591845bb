"""Benchmark systems, RK4 trajectory generation and the Dataset CSV format."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFinite, ParseError, SchemaError

__all__ = [
    "SystemSpec",
    "ObservableSpec",
    "Trajectory",
    "Dataset",
    "bistable",
    "vanderpol",
    "bistable_rhs",
    "vanderpol_rhs",
    "integrate",
    "integrate_batch",
    "sample_dataset",
    "check_nonrecurrence",
    "save_csv",
    "load_csv",
    "dumps_csv",
    "loads_csv",
]

SUBSTEPS = 10


def bistable_rhs(x, a, b):
    return a * x + b * x**3


def vanderpol_rhs(state):
    x, v = state[..., 0], state[..., 1]
    return np.stack([v, 2.0 * v * (1.0 - 5.0 * x**2) - 0.8 * x], axis=-1)


@dataclass(frozen=True)
class SystemSpec:
    """An autonomous ODE ``dx/dt = f(x)`` on R^d.

    ``kind`` is one of ``"bistable"``, ``"vanderpol"`` or ``"custom"``; custom
    systems pass a vectorized ``rhs`` mapping an (B, d) array to (B, d).
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    state_dim: int = 1
    rhs: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("bistable", "vanderpol", "custom"):
            raise ValueError(f"unknown system kind {self.kind!r}")
        if self.kind == "bistable" and self.state_dim != 1:
            raise ValueError("bistable system has state_dim 1")
        if self.kind == "vanderpol" and self.state_dim != 2:
            raise ValueError("Van der Pol system has state_dim 2")
        if self.kind == "custom" and self.rhs is None:
            raise ValueError("custom system needs an rhs callable")
        if self.state_dim < 1:
            raise ValueError("state_dim must be positive")
        for name, value in self.params.items():
            if not math.isfinite(value):
                raise ValueError(f"parameter {name} is not finite")

    def f(self, X: np.ndarray) -> np.ndarray:
        if self.kind == "bistable":
            return bistable_rhs(X, self.params.get("a", 4.0), self.params.get("b", -16.0))
        if self.kind == "vanderpol":
            return vanderpol_rhs(X)
        return np.asarray(self.rhs(X), dtype=float)


def bistable(a: float = 4.0, b: float = -16.0) -> SystemSpec:
    # Fixed points sit at +-sqrt(-a/b) = +-1/2 for the default coefficients.
    return SystemSpec("bistable", {"a": a, "b": b}, 1)


def vanderpol() -> SystemSpec:
    return SystemSpec("vanderpol", {}, 2)


@dataclass(frozen=True)
class ObservableSpec:
    """Scalar quantity of interest ``y = q(x)``."""

    kind: str = "coordinate"
    index: int = 0
    description: str = ""
    func: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("coordinate", "norm", "custom"):
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom observable needs a func callable")
        if self.index < 0:
            raise ValueError("coordinate index must be non-negative")

    def validate(self, state_dim: int) -> None:
        if self.kind == "coordinate" and self.index >= state_dim:
            raise DimensionMismatch(
                f"coordinate index {self.index} out of range for state_dim {state_dim}"
            )

    def __call__(self, states: np.ndarray) -> np.ndarray:
        """Evaluate on an (..., d) array of states."""
        if self.kind == "coordinate":
            return states[..., self.index]
        if self.kind == "norm":
            return np.linalg.norm(states, axis=-1)
        return np.asarray(self.func(states), dtype=float)


@dataclass(frozen=True, eq=False)
class Trajectory:
    dt: float
    states: np.ndarray  # (H+1, d)
    outputs: np.ndarray  # (H+1,)
    id: int = 0

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        outputs = np.array(self.outputs, dtype=float).reshape(-1)
        if states.shape[0] != outputs.shape[0]:
            raise DimensionMismatch("states and outputs differ in length")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(outputs))):
            raise NonFinite(f"trajectory {self.id} contains non-finite values")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        states.flags.writeable = False
        outputs.flags.writeable = False
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "outputs", outputs)

    @property
    def H(self) -> int:
        return self.states.shape[0] - 1

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.id == other.id
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.outputs, other.outputs)
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """N trajectories sharing a sampling period ``dt`` and horizon ``H``.

    Stored as stacked arrays: ``states`` is (N, H+1, d), ``outputs`` (N, H+1).
    """

    states: np.ndarray
    outputs: np.ndarray
    dt: float
    ids: np.ndarray | None = None

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        outputs = np.array(self.outputs, dtype=float)
        if states.ndim == 2:
            states = states[:, :, None]
        if states.ndim != 3 or outputs.ndim != 2:
            raise DimensionMismatch("expected states (N, H+1, d) and outputs (N, H+1)")
        if states.shape[:2] != outputs.shape:
            raise DimensionMismatch(
                f"states {states.shape} and outputs {outputs.shape} disagree"
            )
        if states.shape[0] < 1:
            raise ValueError("a Dataset needs at least one trajectory")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(outputs))):
            raise NonFinite("dataset contains non-finite values")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        ids = np.arange(states.shape[0]) if self.ids is None else np.asarray(self.ids, dtype=int)
        if ids.shape != (states.shape[0],):
            raise DimensionMismatch("one id per trajectory required")
        for arr in (states, outputs, ids):
            arr.flags.writeable = False
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "outputs", outputs)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory]) -> Dataset:
        if not trajectories:
            raise ValueError("a Dataset needs at least one trajectory")
        dt, H = trajectories[0].dt, trajectories[0].H
        for tr in trajectories:
            if tr.dt != dt or tr.H != H:
                raise DimensionMismatch("trajectories must share dt and H")
        return cls(
            np.stack([tr.states for tr in trajectories]),
            np.stack([tr.outputs for tr in trajectories]),
            dt,
            np.array([tr.id for tr in trajectories]),
        )

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def H(self) -> int:
        return self.states.shape[1] - 1

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    @property
    def initial_conditions(self) -> np.ndarray:
        return self.states[:, 0, :]

    @property
    def trajectories(self) -> list[Trajectory]:
        return [
            Trajectory(self.dt, self.states[i], self.outputs[i], int(self.ids[i]))
            for i in range(self.N)
        ]

    def __len__(self):
        return self.N

    def __getitem__(self, idx) -> Dataset:
        """Subset by index array, slice or boolean mask; always returns a Dataset."""
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return Dataset(self.states[idx], self.outputs[idx], self.dt, self.ids[idx])

    def truncate(self, H: int) -> Dataset:
        if not 0 <= H <= self.H:
            raise ValueError(f"cannot truncate horizon {self.H} to {H}")
        return Dataset(self.states[:, : H + 1], self.outputs[:, : H + 1], self.dt, self.ids)

    def split(self, n_train: int, seed: int) -> tuple[Dataset, Dataset]:
        """Random train/test split with ``n_train`` training trajectories."""
        if not 0 < n_train < self.N:
            raise ValueError(f"n_train must lie in (0, {self.N})")
        perm = np.random.default_rng(seed).permutation(self.N)
        return self[np.sort(perm[:n_train])], self[np.sort(perm[n_train:])]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.dt == other.dt
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.outputs, other.outputs)
        )


def integrate_batch(
    system: SystemSpec, X0: np.ndarray, dt: float, H: int, substeps: int = SUBSTEPS
) -> np.ndarray:
    """Classical RK4 on a batch of initial conditions.

    Returns an array of shape (B, H+1, d); ``substeps`` RK4 steps are taken
    between consecutive output samples.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if H < 1:
        raise ValueError("H must be at least 1")
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    X = np.array(X0, dtype=float).reshape(-1, system.state_dim)
    out = np.empty((X.shape[0], H + 1, system.state_dim))
    out[:, 0] = X
    h = dt / substeps
    f = system.f
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, H + 1):
            for _ in range(substeps):
                k1 = f(X)
                k2 = f(X + 0.5 * h * k1)
                k3 = f(X + 0.5 * h * k2)
                k4 = f(X + h * k3)
                X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if not np.all(np.isfinite(X)):
                    raise NonFinite(f"state left the finite range during output step {step}")
            out[:, step] = X
    return out


def integrate(
    system: SystemSpec,
    x0,
    dt: float,
    H: int,
    substeps: int = SUBSTEPS,
    observable: ObservableSpec | None = None,
    id: int = 0,
) -> Trajectory:
    observable = observable or ObservableSpec()
    states = integrate_batch(system, np.atleast_1d(x0), dt, H, substeps)[0]
    return Trajectory(dt, states, observable(states), id)


def sample_dataset(
    system: SystemSpec,
    observable: ObservableSpec,
    init_box: Sequence[Sequence[float]],
    N: int,
    dt: float,
    H: int,
    seed: int,
    substeps: int = SUBSTEPS,
) -> Dataset:
    """Draw ``N`` initial conditions uniformly from ``init_box`` and integrate.

    ``init_box`` holds one ``(low, high)`` pair per state dimension. The same
    seed always gives the same dataset bit for bit.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    box = np.asarray(init_box, dtype=float).reshape(-1, 2)
    if box.shape[0] != system.state_dim:
        raise DimensionMismatch("init_box needs one (low, high) pair per state dimension")
    if np.any(box[:, 1] < box[:, 0]):
        raise ValueError("init_box bounds must satisfy low <= high")
    observable.validate(system.state_dim)
    rng = np.random.default_rng(seed)
    u = rng.random((N, system.state_dim))
    X0 = box[:, 0] + u * (box[:, 1] - box[:, 0])
    states = integrate_batch(system, X0, dt, H, substeps)
    return Dataset(states, observable(states), dt)


def check_nonrecurrence(traj: Trajectory, tol: float) -> bool:
    """True when no two samples of the trajectory come closer than ``tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    X = traj.states
    sq = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(sq, np.inf)
    return bool(np.min(sq) >= tol * tol) if len(X) > 1 else True


# -- CSV ---------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(v, ".17g")


def dumps_csv(data: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = data.state_dim
    w.writerow(["traj_id", "t"] + [f"x{k}" for k in range(d)] + ["y"])
    for i in range(data.N):
        tid = int(data.ids[i])
        for h in range(data.H + 1):
            row = [str(tid), _fmt(h * data.dt)]
            row += [_fmt(v) for v in data.states[i, h]]
            row.append(_fmt(data.outputs[i, h]))
            w.writerow(row)
    return buf.getvalue()


def save_csv(data: Dataset, path) -> None:
    Path(path).write_text(dumps_csv(data), encoding="utf-8")


def loads_csv(text: str, dt: float | None = None) -> Dataset:
    """Parse the Dataset CSV format.

    ``dt`` is inferred from the first trajectory's time column unless given
    explicitly (needed for H = 0 files).
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise SchemaError("empty file: missing header")
    header = [c.strip() for c in rows[0]]
    if len(header) < 4 or header[:2] != ["traj_id", "t"] or header[-1] != "y":
        raise SchemaError(f"bad header {header!r}; expected traj_id,t,x0,...,y")
    d = len(header) - 3
    if header[2:-1] != [f"x{k}" for k in range(d)]:
        raise SchemaError(f"state columns must be x0..x{d - 1}")

    groups: dict[int, list[list[float]]] = {}
    order: list[int] = []
    last_id = None
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
        try:
            tid = int(row[0])
            vals = [float(c) for c in row[1:]]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", lineno)
        if tid != last_id:
            if tid in groups:
                raise ParseError(f"rows of trajectory {tid} are not contiguous", lineno)
            groups[tid] = []
            order.append(tid)
            last_id = tid
        prev = groups[tid]
        if prev and vals[0] <= prev[-1][0]:
            raise ParseError("time column not strictly increasing", lineno)
        prev.append(vals)
    if not groups:
        raise SchemaError("file holds a header but no data rows")

    lengths = {len(g) for g in groups.values()}
    if len(lengths) != 1:
        raise SchemaError(f"trajectories differ in length: {sorted(lengths)}")
    arr = np.array([groups[t] for t in order])  # (N, H+1, 1+d+1)
    times = arr[:, :, 0]
    if dt is None:
        if times.shape[1] < 2:
            raise SchemaError("cannot infer dt from single-sample trajectories")
        dt = float(times[0, 1] - times[0, 0])
    H = times.shape[1] - 1
    expected = times[:, :1] + dt * np.arange(H + 1)
    if not np.allclose(times, expected, rtol=1e-9, atol=1e-12 * max(1.0, H * dt)):
        raise SchemaError("time columns are not uniformly sampled with a shared dt")
    return Dataset(arr[:, :, 1:-1], arr[:, :, -1], dt, np.array(order))


def load_csv(path, dt: float | None = None) -> Dataset:
    return loads_csv(Path(path).read_text(encoding="utf-8"), dt)
