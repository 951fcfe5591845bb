"""Command-line entry point: ``kkr {simulate,fit,forecast,sweep,kernel-convergence}``.

Every subcommand reads a JSON run configuration and writes its results into
an output directory. Exit codes: 0 success, 2 configuration error, 3 numeric
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, _backend, spectra
from .dynamics import ObservableSpec, SystemSpec, load_csv, sample_dataset, save_csv
from .edmd import EDMDModel, fit_pcr, make_pairs
from .errors import ConfigError, DimensionMismatch, KKRError, ParseError, SchemaError
from .experiments import (
    AXES,
    SweepSpec,
    kernel_convergence,
    run_sweep,
    write_aggregate_csv,
    write_convergence_csv,
    write_results_csv,
    write_slopes_csv,
)
from .kernels import BaseKernel
from .model import REALIFY, KKRConfig, KKRModel, fit

log = logging.getLogger("kkr")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4

# section -> key -> default; None marks "no default" where a value is optional
DEFAULTS: dict[str, dict] = {
    "system": {"kind": "bistable", "params": {}, "init_box": None, "observable": {"kind": "coordinate", "index": 0}},
    "data": {"N": 50, "dt": 1 / 14, "H": 14, "seed": 0},
    "kernel": {"kind": "rbf", "length_scale": 0.05, "normalized": True},
    "spectrum": {"sampler": "uniform_disk", "D": 100, "seed": 1, "conjugate_closed": False},
    "kkr": {"gamma": 1e-6, "jitter": None, "realify": "real_part"},
    "edmd": {"rank": 10, "ridge": 1e-8},
    "experiment": {
        "axis": "N",
        "grid": [8, 13, 20, 32, 50, 80, 126, 200],
        "repetitions": 16,
        "n_test": 200,
        "master_seed": 0,
        "methods": ["kkr", "edmd"],
        "D_grid": [4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096],
        "D_base": 20000,
        "points": 5,
        "runs": 20,
    },
    "io": {"out_dir": "."},
}

_STATE_DIM = {"bistable": 1, "vanderpol": 2}


class RunConfig:
    """Validated run configuration with every default filled in."""

    def __init__(self, doc: dict):
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
        self.doc = copy.deepcopy(DEFAULTS)
        for name, section in doc.items():
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            bad = set(section) - set(DEFAULTS[name])
            if bad:
                raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(sorted(bad))}")
            self.doc[name].update(section)
        self._validate()

    def __getitem__(self, section: str) -> dict:
        return self.doc[section]

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            return cls(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc

    def _validate(self) -> None:
        s, d, k = self["system"], self["data"], self["kernel"]
        if s["kind"] not in _STATE_DIM:
            raise ConfigError(f"system.kind must be one of {sorted(_STATE_DIM)}")
        dim = _STATE_DIM[s["kind"]]
        if s["init_box"] is None:
            s["init_box"] = [[-1.0, 1.0]] * dim
        box = s["init_box"]
        if len(box) != dim or any(len(b) != 2 or not b[0] <= b[1] for b in box):
            raise ConfigError(f"system.init_box needs {dim} [lo, hi] pairs with lo <= hi")
        obs = s["observable"]
        if not isinstance(obs, dict) or set(obs) - {"kind", "index"}:
            raise ConfigError("system.observable takes only kind and index")
        for key in ("N", "H", "seed"):
            _int(d, key, "data", minimum=0 if key == "seed" else 1 if key == "N" else 0)
        _pos(d, "dt", "data")
        if k["kind"] not in ("rbf", "linear"):
            raise ConfigError("kernel.kind must be rbf or linear")
        _pos(k, "length_scale", "kernel")
        sp = self["spectrum"]
        if sp["sampler"] not in spectra.SAMPLERS:
            raise ConfigError(f"spectrum.sampler must be one of {sorted(spectra.SAMPLERS)}")
        _int(sp, "D", "spectrum", minimum=1)
        _int(sp, "seed", "spectrum", minimum=0)
        kk = self["kkr"]
        if not _num(kk["gamma"]) or kk["gamma"] < 0:
            raise ConfigError("kkr.gamma must be a non-negative number")
        if kk["jitter"] is not None and (not _num(kk["jitter"]) or kk["jitter"] < 0):
            raise ConfigError("kkr.jitter must be null or a non-negative number")
        if kk["realify"] not in REALIFY:
            raise ConfigError(f"kkr.realify must be one of {REALIFY}")
        _int(self["edmd"], "rank", "edmd", minimum=1)
        if not _num(self["edmd"]["ridge"]) or self["edmd"]["ridge"] < 0:
            raise ConfigError("edmd.ridge must be a non-negative number")
        e = self["experiment"]
        if e["axis"] not in AXES:
            raise ConfigError(f"experiment.axis must be one of {AXES}")
        for key in ("grid", "D_grid"):
            g = e[key]
            if not g or not all(isinstance(v, int) and v > 0 for v in g) or any(b <= a for a, b in zip(g, g[1:])):
                raise ConfigError(f"experiment.{key} must be a nonempty increasing list of positive integers")
        _int(e, "repetitions", "experiment", minimum=2)
        for key in ("n_test", "points", "runs", "D_base"):
            _int(e, key, "experiment", minimum=1)
        _int(e, "master_seed", "experiment", minimum=0)
        if not e["methods"] or set(e["methods"]) - {"kkr", "edmd"}:
            raise ConfigError("experiment.methods must be a nonempty subset of [kkr, edmd]")

    # -- builders ------------------------------------------------------------

    def system(self) -> SystemSpec:
        s = self["system"]
        try:
            return SystemSpec(s["kind"], dict(s["params"]), _STATE_DIM[s["kind"]])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"system: {exc}") from exc

    def observable(self) -> ObservableSpec:
        try:
            obs = ObservableSpec(**self["system"]["observable"])
            obs.validate(_STATE_DIM[self["system"]["kind"]])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"system.observable: {exc}") from exc
        return obs

    def base(self) -> BaseKernel:
        k = self["kernel"]
        return BaseKernel(float(k["length_scale"]), k["kind"])

    def kkr_config(self) -> KKRConfig:
        kk = self["kkr"]
        return KKRConfig(float(kk["gamma"]), kk["jitter"], kk["realify"], bool(self["kernel"]["normalized"]))

    def spectrum(self, dt: float) -> spectra.Spectrum:
        sp = self["spectrum"]
        out = spectra.sample(sp["sampler"], sp["D"], sp["seed"], dt)
        if sp["conjugate_closed"] and not out.is_conjugate_closed():
            raise ConfigError(f"sampler {sp['sampler']!r} does not give a conjugate-closed spectrum")
        return out

    def sweep_spec(self) -> SweepSpec:
        d, e = self["data"], self["experiment"]
        return SweepSpec(
            system=self.system(),
            observable=self.observable(),
            init_box=tuple(tuple(float(v) for v in b) for b in self["system"]["init_box"]),
            dt=float(d["dt"]),
            H=d["H"],
            N=d["N"],
            D=self["spectrum"]["D"],
            length_scale=float(self["kernel"]["length_scale"]),
            gamma=float(self["kkr"]["gamma"]),
            jitter=self["kkr"]["jitter"],
            normalized=bool(self["kernel"]["normalized"]),
            sampler=self["spectrum"]["sampler"],
            edmd_rank=self["edmd"]["rank"],
            edmd_ridge=float(self["edmd"]["ridge"]),
            n_test=e["n_test"],
            repetitions=e["repetitions"],
            master_seed=e["master_seed"],
            methods=tuple(e["methods"]),
        )


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _int(section, key, name, minimum):
    v = section[key]
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ConfigError(f"{name}.{key} must be an integer >= {minimum}")


def _pos(section, key, name):
    if not _num(section[key]) or section[key] <= 0:
        raise ConfigError(f"{name}.{key} must be a positive number")


# -- subcommands --------------------------------------------------------------

def _out_dir(args, cfg: RunConfig | None) -> Path:
    out = Path(args.out) if args.out else Path(cfg["io"]["out_dir"] if cfg else ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _training_data(cfg: RunConfig, path):
    if path:
        return load_csv(path)
    d, s = cfg["data"], cfg["system"]
    return sample_dataset(cfg.system(), cfg.observable(), s["init_box"], d["N"], d["dt"], d["H"], d["seed"])


def _manifest(out: Path, command: str, cfg: RunConfig, outputs: list[str]) -> None:
    doc = {
        "tool": "kkr",
        "version": __version__,
        "command": command,
        "backend": _backend.NAME,
        "config": cfg.doc,
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_simulate(args) -> int:
    cfg = RunConfig.load(args.config)
    data = _training_data(cfg, None)
    out = _out_dir(args, cfg)
    save_csv(data, out / "data.csv")
    log.info("wrote %d trajectories to %s", data.N, out / "data.csv")
    return 0


def cmd_fit(args) -> int:
    cfg = RunConfig.load(args.config)
    data = _training_data(cfg, args.data)
    if args.method == "kkr":
        model = fit(data, cfg.spectrum(data.dt), cfg.base(), cfg.kkr_config())
        log.info("relative Gram residual %.3e", model.diagnostics["relative_residual"])
    else:
        pairs = make_pairs(data)
        model = fit_pcr(pairs, min(cfg["edmd"]["rank"], pairs.M), cfg.base(), float(cfg["edmd"]["ridge"]))
    out = _out_dir(args, cfg)
    model.save(out / "model.json")
    return 0


def _load_model(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"model file is not valid JSON: {exc}") from exc
    kind = doc.get("kind") if isinstance(doc, dict) else None
    if kind == "kkr":
        return KKRModel.from_dict(doc)
    if kind == "edmd":
        return EDMDModel.from_dict(doc)
    raise SchemaError(f"unknown model kind {kind!r}")


def cmd_forecast(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else None
    model = _load_model(args.model)
    try:
        x0 = np.array([float(v) for v in args.x0.split(",")])
    except ValueError as exc:
        raise ConfigError(f"--x0 must be comma-separated numbers: {exc}") from exc
    if args.horizon is not None and args.horizon < 0:
        raise ConfigError("--horizon must be non-negative")
    if isinstance(model, KKRModel):
        horizon = model.H if args.horizon is None else args.horizon
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            yc = model.forecast_complex(x0[None, :], horizon)[0]
        for w in caught:
            log.warning("%s", w.message)
        y, imag = yc.real, np.abs(yc.imag)
    else:
        if args.horizon is None:
            raise ConfigError("EDMD forecasts need --horizon")
        horizon = args.horizon
        y, imag = model(x0[None, :], horizon)[0], np.zeros(horizon + 1)
    out = _out_dir(args, cfg)
    with open(out / "forecast.csv", "w", encoding="utf-8") as fh:
        fh.write("h,y,imag\n")
        for h, (a, b) in enumerate(zip(y, imag)):
            fh.write(f"{h},{format(float(a), '.17g')},{format(float(b), '.17g')}\n")
    log.info("max dropped imaginary part %.3e", float(imag.max()))
    return 0


def cmd_sweep(args) -> int:
    cfg = RunConfig.load(args.config)
    e = cfg["experiment"]
    spec = cfg.sweep_spec()
    rows, results = run_sweep(e["axis"], e["grid"], spec, threads=args.threads)
    out = _out_dir(args, cfg)
    write_results_csv(rows, out / "results.csv")
    write_aggregate_csv(results, out / "aggregate.csv")
    write_slopes_csv(results, out / "slopes.csv")
    _manifest(out, "sweep", cfg, ["results.csv", "aggregate.csv", "slopes.csv"])
    for res in results.values():
        log.info("%s %s-sweep slope %.3f", res.method, res.axis, res.loglog_slope)
    return 0


def cmd_kernel_convergence(args) -> int:
    cfg = RunConfig.load(args.config)
    e, d, s = cfg["experiment"], cfg["data"], cfg["system"]
    try:
        res = kernel_convergence(
            e["D_grid"], e["D_base"], e["points"], e["runs"], float(d["dt"]), d["H"], cfg.base(),
            e["master_seed"], system=cfg.system(), observable=cfg.observable(),
            init_box=tuple(tuple(b) for b in s["init_box"]), normalized=bool(cfg["kernel"]["normalized"]),
        )
    except ValueError as exc:
        if isinstance(exc, KKRError):
            raise
        raise ConfigError(str(exc)) from exc
    out = _out_dir(args, cfg)
    write_convergence_csv(res, out / "convergence.csv")
    _manifest(out, "kernel-convergence", cfg, ["convergence.csv"])
    log.info("kernel convergence slope %.3f", res.loglog_slope)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kkr", description="Koopman kernel regression runs")
    p.add_argument("--version", action="version", version=f"kkr {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_, config_required=True):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=config_required, help="JSON run configuration")
        sp.add_argument("--out", help="output directory (default: io.out_dir)")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
        sp.set_defaults(func=func)
        return sp

    add("simulate", cmd_simulate, "simulate a trajectory dataset")
    f = add("fit", cmd_fit, "fit a model")
    f.add_argument("--data", help="training CSV (default: simulate from the config)")
    f.add_argument("--method", choices=("kkr", "edmd"), default="kkr")
    fc = add("forecast", cmd_forecast, "forecast from a saved model", config_required=False)
    fc.add_argument("--model", required=True, help="model JSON")
    fc.add_argument("--x0", required=True, help="initial condition, comma-separated")
    fc.add_argument("--horizon", type=int, help="forecast steps (default: training H)")
    add("sweep", cmd_sweep, "run a risk sweep over N, D or H")
    add("kernel-convergence", cmd_kernel_convergence, "Monte-Carlo kernel convergence study")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    if args.threads < 1:
        log.error("--threads must be positive")
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, DimensionMismatch) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (ParseError, SchemaError, OSError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (KKRError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
