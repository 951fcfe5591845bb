"""Risk estimation, benchmark sweeps, rate fits and the kernel-convergence study.

Seed scheme
-----------
Every random quantity in a sweep is drawn from a seed derived from the master
seed by ``derive_seed(master, cell, rep, role)``, which feeds the key
``(cell, rep, role)`` to ``numpy.random.SeedSequence(master, spawn_key=...)``
and returns its first 63-bit word. Roles are ``DATA`` (training set),
``SPECTRUM`` (eigenvalues) and ``TEST`` (test set). Test seeds use cell 0 for
every cell, so all cells of one repetition are scored on the same test
initial conditions. Results are keyed by (cell, rep) and sorted before they
are written, so serial and threaded runs produce identical files.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import spectra
from .dynamics import Dataset, ObservableSpec, SystemSpec, sample_dataset
from .edmd import fit_pcr, make_pairs
from .errors import KKRError
from .kernels import BaseKernel
from .model import KKRConfig, fit
from .spectra import power_matrix, pullback_matrix

log = logging.getLogger(__name__)

__all__ = [
    "DATA",
    "SPECTRUM",
    "TEST",
    "derive_seed",
    "risk",
    "excess_risk",
    "RiskReport",
    "SweepSpec",
    "SweepResult",
    "sweep",
    "run_sweep",
    "aggregate",
    "partial_kernel_differences",
    "write_convergence_csv",
    "loglog_slope",
    "KernelConvergenceResult",
    "kernel_convergence",
    "write_results_csv",
    "write_aggregate_csv",
    "write_slopes_csv",
]

DATA, SPECTRUM, TEST = 0, 1, 2

Forecaster = Callable[[np.ndarray, int], np.ndarray]


def derive_seed(master: int, cell: int, rep: int, role: int) -> int:
    ss = np.random.SeedSequence(master, spawn_key=(cell, rep, role))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def risk(forecaster: Forecaster, data: Dataset) -> float:
    """Mean over trajectories of the squared norm of the forecast error vector."""
    pred = np.asarray(forecaster(data.initial_conditions, data.H))
    return float(np.mean(np.sum((pred - data.outputs) ** 2, axis=1)))


@dataclass(frozen=True)
class RiskReport:
    empirical_risk: float
    test_risk: float
    method: str = ""
    N: int = 0
    D: int = 0
    H: int = 0
    seed: int = 0

    @property
    def excess_risk(self) -> float:
        return abs(self.test_risk - self.empirical_risk)


def excess_risk(forecaster: Forecaster, train: Dataset, test: Dataset, **meta) -> RiskReport:
    return RiskReport(risk(forecaster, train), risk(forecaster, test), **meta)


def loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares slope of log(y) against log(x) and the RMS fit residual.

    Non-finite or non-positive points are dropped; fewer than two remaining
    points give ``(nan, nan)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > 0)
    if np.count_nonzero(ok) < 2:
        return math.nan, math.nan
    lx, ly = np.log(x[ok]), np.log(y[ok])
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    return float(slope), float(np.sqrt(np.mean(resid**2)))


@dataclass(frozen=True)
class SweepSpec:
    """Fixed parameters of a sweep; the swept axis overrides one of N, D, H."""

    system: SystemSpec
    observable: ObservableSpec = field(default_factory=ObservableSpec)
    init_box: tuple = ((-1.0, 1.0),)
    dt: float = 1 / 14
    H: int = 14
    N: int = 50
    D: int = 100
    length_scale: float = 0.05
    gamma: float = 1e-6
    jitter: float | None = None
    normalized: bool = True
    sampler: str = "uniform_disk"
    edmd_rank: int = 10
    edmd_ridge: float = 1e-8
    n_test: int = 200
    repetitions: int = 16
    master_seed: int = 0
    methods: tuple = ("kkr", "edmd")


AXES = ("N", "D", "H")
METRIC_FOR_AXIS = {"N": "excess_risk", "H": "excess_risk", "D": "test_risk"}


@dataclass(frozen=True)
class SweepResult:
    method: str
    axis: str
    grid: tuple
    metric: str
    mean: np.ndarray
    std: np.ndarray
    count: np.ndarray
    loglog_slope: float
    slope_residual: float

    @property
    def slope_defined(self) -> bool:
        return math.isfinite(self.loglog_slope)


@dataclass(frozen=True)
class _Row:
    method: str
    axis: str
    axis_value: int
    cell: int
    rep: int
    seed: int
    train_risk: float
    test_risk: float

    @property
    def excess_risk(self) -> float:
        return abs(self.test_risk - self.train_risk)


def _cell_params(spec: SweepSpec, axis: str, value: int) -> SweepSpec:
    if axis == "N":
        return replace(spec, N=int(value))
    if axis == "H":
        return replace(spec, H=int(value))
    return replace(spec, D=int(value), edmd_rank=int(value))


def _run_cell(spec: SweepSpec, axis: str, cell: int, value: int, rep: int) -> list[_Row]:
    p = _cell_params(spec, axis, value)
    data_seed = derive_seed(spec.master_seed, cell, rep, DATA)
    spec_seed = derive_seed(spec.master_seed, cell, rep, SPECTRUM)
    test_seed = derive_seed(spec.master_seed, 0, rep, TEST)
    rows = []
    try:
        train = sample_dataset(p.system, p.observable, p.init_box, p.N, p.dt, p.H, data_seed)
        test = sample_dataset(p.system, p.observable, p.init_box, p.n_test, p.dt, p.H, test_seed)
    except KKRError as exc:
        log.warning("cell %s=%s rep %d: data generation failed: %s", axis, value, rep, exc)
        return [_Row(m, axis, value, cell, rep, data_seed, math.nan, math.nan) for m in p.methods]
    base = BaseKernel(p.length_scale)
    for method in p.methods:
        try:
            if method == "kkr":
                sp = spectra.sample(p.sampler, p.D, spec_seed, p.dt)
                model = fit(train, sp, base, KKRConfig(p.gamma, p.jitter, normalized=p.normalized))
            elif method == "edmd":
                pairs = make_pairs(train)
                model = fit_pcr(pairs, min(p.edmd_rank, pairs.M), base, p.edmd_ridge)
            else:
                raise ValueError(f"unknown method {method!r}")
            rep_ = excess_risk(model, train, test)
            rows.append(_Row(method, axis, value, cell, rep, data_seed, rep_.empirical_risk, rep_.test_risk))
        except (KKRError, np.linalg.LinAlgError) as exc:
            log.warning("cell %s=%s rep %d method %s failed: %s", axis, value, rep, method, exc)
            rows.append(_Row(method, axis, value, cell, rep, data_seed, math.nan, math.nan))
    return rows


def run_sweep(
    axis: str, grid: Sequence[int], spec: SweepSpec, threads: int = 1
) -> tuple[list[_Row], dict[str, SweepResult]]:
    """Run every (cell, repetition) and aggregate per method.

    Returns the raw rows (sorted by method, cell, rep) and one SweepResult
    per method.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    grid = tuple(int(g) for g in grid)
    if not grid:
        raise ValueError("grid must be nonempty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    if spec.repetitions < 2:
        raise ValueError("at least two repetitions are needed for a spread estimate")
    tasks = [(c, v, r) for c, v in enumerate(grid) for r in range(spec.repetitions)]

    def work(task):
        c, v, r = task
        return _run_cell(spec, axis, c, v, r)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(work, tasks))
    else:
        chunks = [work(t) for t in tasks]
    order = {m: i for i, m in enumerate(spec.methods)}
    rows = sorted((row for ch in chunks for row in ch), key=lambda r: (order[r.method], r.cell, r.rep))
    return rows, aggregate(rows, axis, grid, spec.methods)


def aggregate(rows, axis, grid, methods, metric: str | None = None) -> dict[str, SweepResult]:
    metric = metric or METRIC_FOR_AXIS[axis]
    out = {}
    for method in methods:
        mean, std, count = [], [], []
        for c in range(len(grid)):
            vals = np.array([getattr(r, metric) for r in rows if r.method == method and r.cell == c])
            vals = vals[np.isfinite(vals)]
            count.append(vals.size)
            mean.append(vals.mean() if vals.size else math.nan)
            std.append(vals.std(ddof=1) if vals.size > 1 else math.nan)
        mean = np.array(mean)
        slope, resid = loglog_slope(grid, mean)
        out[method] = SweepResult(method, axis, grid, metric, mean, np.array(std),
                                  np.array(count), slope, resid)
    return out


def sweep(axis: str, grid: Sequence[int], spec: SweepSpec, threads: int = 1) -> dict[str, SweepResult]:
    return run_sweep(axis, grid, spec, threads)[1]


def _fmt(v) -> str:
    return format(v, ".17g") if isinstance(v, float) else str(v)


def write_results_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "axis", "axis_value", "rep", "seed", "train_risk", "test_risk", "excess_risk"])
        for r in rows:
            w.writerow([r.method, r.axis, r.axis_value, r.rep, r.seed,
                        _fmt(r.train_risk), _fmt(r.test_risk), _fmt(r.excess_risk)])


def write_aggregate_csv(results: dict[str, SweepResult], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "axis", "axis_value", "mean", "std", "count"])
        for res in results.values():
            for v, m, s, n in zip(res.grid, res.mean, res.std, res.count):
                w.writerow([res.method, res.axis, v, _fmt(float(m)), _fmt(float(s)), int(n)])


def write_slopes_csv(results: dict[str, SweepResult], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "axis", "metric", "slope", "residual", "defined"])
        for res in results.values():
            w.writerow([res.method, res.axis, res.metric, _fmt(res.loglog_slope),
                        _fmt(res.slope_residual), int(res.slope_defined)])


# -- kernel convergence -------------------------------------------------------

@dataclass(frozen=True)
class KernelConvergenceResult:
    D_grid: tuple
    D_base: int
    mean: np.ndarray  # over runs and point pairs
    std: np.ndarray  # across runs of the pair-averaged difference
    per_run: np.ndarray  # (runs, len(D_grid)), averaged over pairs
    loglog_slope: float
    slope_residual: float


def _term_blocks(kb: np.ndarray, mus: np.ndarray, H: int, normalized: bool) -> np.ndarray:
    """Per-eigenvalue (H+1, H+1) kernel blocks for one trajectory pair: (D, P, P)."""
    W = pullback_matrix(mus, H, normalized)
    Pw = power_matrix(mus, H)
    kmu = np.einsum("jm,mn,jn->j", W, kb, np.conj(W))
    return kmu[:, None, None] * Pw[:, :, None] * np.conj(Pw)[:, None, :]


def _summed_kernel(kb, mus, H, normalized, chunk=4096) -> np.ndarray:
    P = H + 1
    total = np.zeros((P, P), dtype=complex)
    for s in range(0, mus.size, chunk):
        total += _term_blocks(kb, mus[s : s + chunk], H, normalized).sum(axis=0)
    return total


def partial_kernel_differences(kb, K_base, D_base, mus, D_grid, H, normalized=True) -> np.ndarray:
    """``||K_base - (D_base / D) * sum_{j<D} K^{mu_j}||_F`` for each D in the grid."""
    terms = _term_blocks(kb, mus[: max(D_grid)], H, normalized)
    cum = np.cumsum(terms, axis=0)
    return np.array([np.linalg.norm(K_base - (D_base / D) * cum[D - 1]) for D in D_grid])


def kernel_convergence(
    D_grid: Sequence[int],
    D_base: int,
    points: int,
    runs: int,
    dt: float,
    H: int,
    base: BaseKernel,
    seed: int,
    system: SystemSpec | None = None,
    observable: ObservableSpec | None = None,
    init_box=((-1.0, 1.0), (-1.0, 1.0)),
    normalized: bool = True,
    reuse_baseline: bool = False,
) -> KernelConvergenceResult:
    """Monte-Carlo convergence of the sampled Koopman kernel to a large-D baseline.

    Each partial sum over the first D eigenvalues of a run's spectrum is
    rescaled by ``D_base / D`` so that both sides estimate the same
    disk-averaged kernel. ``reuse_baseline=True`` takes the partial sums from
    the baseline spectrum itself (every run then gives the same numbers).
    """
    from .dynamics import vanderpol

    D_grid = tuple(int(D) for D in D_grid)
    if max(D_grid) > D_base:
        raise ValueError("grid exceeds the baseline size")
    if not reuse_baseline and D_base < 10 * max(D_grid):
        log.warning("D_base=%d is below ten times the largest grid value %d; "
                    "baseline Monte-Carlo error may flatten the tail", D_base, max(D_grid))
    system = system or vanderpol()
    observable = observable or ObservableSpec()
    box = init_box[: system.state_dim]
    data = sample_dataset(system, observable, box, 2 * points, dt, H, derive_seed(seed, 0, 0, DATA))
    baseline = spectra.sample_uniform_disk(D_base, derive_seed(seed, 0, 0, SPECTRUM), dt)

    kbs, K_bases = [], []
    for p in range(points):
        kb = base.matrix(data.states[2 * p], data.states[2 * p + 1])
        kbs.append(kb)
        K_bases.append(_summed_kernel(kb, baseline.mus, H, normalized))

    per_run = np.empty((runs, len(D_grid)))
    for r in range(runs):
        if reuse_baseline:
            mus = baseline.mus
        else:
            mus = spectra.sample_uniform_disk(max(D_grid), derive_seed(seed, 1, r, SPECTRUM), dt).mus
        diffs = [partial_kernel_differences(kb, Kb, D_base, mus, D_grid, H, normalized)
                 for kb, Kb in zip(kbs, K_bases)]
        per_run[r] = np.mean(diffs, axis=0)
    mean = per_run.mean(axis=0)
    std = per_run.std(axis=0, ddof=1) if runs > 1 else np.zeros(len(D_grid))
    slope, resid = loglog_slope(D_grid, mean)
    return KernelConvergenceResult(D_grid, D_base, mean, std, per_run, slope, resid)


def write_convergence_csv(res: KernelConvergenceResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["D", "D_base", "mean", "std"])
        for D, m, s in zip(res.D_grid, res.mean, res.std):
            w.writerow([D, res.D_base, _fmt(float(m)), _fmt(float(s))])
