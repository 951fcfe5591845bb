import csv
import json

import numpy as np
import pytest

from kkr.cli import RunConfig, main
from kkr.dynamics import load_csv
from kkr.errors import ConfigError


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def _bistable_cfg(**sections):
    doc = {"system": {"kind": "bistable"}, "data": {"N": 50, "dt": 1 / 14, "H": 14, "seed": 0}}
    doc.update(sections)
    return doc


def test_simulate_rows_and_determinism(tmp_path):
    cfg = _write(tmp_path, _bistable_cfg())
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "data.csv").read_bytes()
    assert a == (tmp_path / "b" / "data.csv").read_bytes()
    assert len(a.decode().splitlines()) == 1 + 50 * 15


@pytest.mark.parametrize(
    "doc",
    [
        {"data": {"N": 0}},
        {"data": {"N": 5, "bogus": 1}},
        {"nonsense": {}},
        {"kkr": {"gamma": -1}},
        {"system": {"kind": "lorenz"}},
        {"experiment": {"grid": [5, 3]}},
        {"system": {"kind": "vanderpol", "init_box": [[-1, 1]]}},
        {"spectrum": {"sampler": "uniform_disk", "conjugate_closed": True}},
    ],
)
def test_config_errors_exit_2(tmp_path, doc):
    cfg = _write(tmp_path, doc)
    assert main(["fit", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_bad_json_exit_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["simulate", "--config", str(p)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2


def test_runconfig_defaults():
    cfg = RunConfig({"system": {"kind": "vanderpol"}})
    assert cfg["system"]["init_box"] == [[-1.0, 1.0], [-1.0, 1.0]]
    assert cfg["spectrum"]["D"] == 100
    with pytest.raises(ConfigError):
        RunConfig({"io": {"out_dir": ".", "extra": 1}})


def test_fit_forecast_interpolation(tmp_path):
    doc = _bistable_cfg(data={"N": 10, "dt": 1 / 14, "H": 14, "seed": 0}, kkr={"gamma": 1e-8})
    cfg = _write(tmp_path, doc)
    out = tmp_path / "run"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    assert main(["fit", "--config", cfg, "--data", str(out / "data.csv"), "--out", str(out)]) == 0
    data = load_csv(out / "data.csv")
    x0 = data.initial_conditions[3]
    assert main(["forecast", "--model", str(out / "model.json"), "--x0", ",".join(repr(float(v)) for v in x0),
                 "--out", str(out)]) == 0
    with open(out / "forecast.csv") as fh:
        y = np.array([float(r["y"]) for r in csv.DictReader(fh)])
    assert np.max(np.abs(y - data.outputs[3])) <= 1e-4


def test_forecast_beyond_horizon_warns(tmp_path, caplog):
    cfg = _write(tmp_path, _bistable_cfg(data={"N": 5, "dt": 1 / 14, "H": 4, "seed": 0}, spectrum={"D": 6}))
    assert main(["fit", "--config", cfg, "--out", str(tmp_path)]) == 0
    with caplog.at_level("WARNING"):
        rc = main(["forecast", "--model", str(tmp_path / "model.json"), "--x0", "0.2", "--horizon", "9",
                   "--out", str(tmp_path)])
    assert rc == 0
    assert "exceeds training horizon" in caplog.text
    assert len((tmp_path / "forecast.csv").read_text().splitlines()) == 11


def test_edmd_fit_and_forecast(tmp_path):
    cfg = _write(tmp_path, _bistable_cfg(data={"N": 5, "dt": 1 / 14, "H": 4, "seed": 0}, edmd={"rank": 4}))
    assert main(["fit", "--config", cfg, "--method", "edmd", "--out", str(tmp_path)]) == 0
    assert main(["forecast", "--model", str(tmp_path / "model.json"), "--x0", "0.2", "--horizon", "3",
                 "--out", str(tmp_path)]) == 0


def test_io_errors_exit_4(tmp_path):
    cfg = _write(tmp_path, _bistable_cfg())
    assert main(["fit", "--config", cfg, "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 4
    bad = tmp_path / "bad.csv"
    bad.write_text("traj_id,t,x0,y\n0,0,abc,1\n")
    assert main(["fit", "--config", cfg, "--data", str(bad), "--out", str(tmp_path)]) == 4
    assert main(["forecast", "--model", str(tmp_path / "missing.json"), "--x0", "0"]) == 4


def test_numeric_failure_exit_3(tmp_path):
    doc = _bistable_cfg(system={"kind": "bistable", "init_box": [[0.3, 0.3]]},
                        data={"N": 3, "dt": 1 / 14, "H": 2, "seed": 0}, kkr={"gamma": 0.0}, spectrum={"D": 2})
    assert main(["fit", "--config", _write(tmp_path, doc), "--out", str(tmp_path)]) == 3


def _vdp_sweep_doc():
    return {
        "system": {"kind": "vanderpol"},
        "data": {"N": 8, "dt": 1 / 14, "H": 4, "seed": 0},
        "kernel": {"length_scale": 0.1},
        "spectrum": {"D": 6},
        "edmd": {"rank": 3},
        "experiment": {"axis": "D", "grid": [2, 4], "repetitions": 2, "n_test": 10, "master_seed": 3},
    }


def test_sweep_outputs_and_thread_invariance(tmp_path):
    cfg = _write(tmp_path, _vdp_sweep_doc())
    files = ("results.csv", "aggregate.csv", "slopes.csv", "manifest.json")
    outs = []
    for threads in ("1", "2"):
        d = tmp_path / f"t{threads}"
        assert main(["sweep", "--config", cfg, "--threads", threads, "--out", str(d)]) == 0
        outs.append([(d / f).read_bytes() for f in files])
    assert outs[0] == outs[1]
    agg = outs[0][1].decode().splitlines()
    assert len(agg) == 1 + 2 * 2
    manifest = json.loads(outs[0][3])
    assert manifest["config"]["experiment"]["grid"] == [2, 4]
    assert RunConfig(manifest["config"]).doc == manifest["config"]


def test_kernel_convergence_command(tmp_path):
    doc = {"system": {"kind": "vanderpol"}, "data": {"H": 3}, "kernel": {"length_scale": 0.1},
           "experiment": {"D_grid": [4, 16], "D_base": 200, "points": 2, "runs": 3}}
    cfg = _write(tmp_path, doc)
    assert main(["kernel-convergence", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "convergence.csv").read_text().splitlines()) == 3
    doc["experiment"]["D_base"] = 10
    assert main(["kernel-convergence", "--config", _write(tmp_path, doc), "--out", str(tmp_path)]) == 2
