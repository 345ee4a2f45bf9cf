import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from rsjd.cli_runner import (EXIT_CONFIG, EXIT_FAIL, EXIT_OK, EXIT_RUNTIME, ExperimentConfig, build_model, fmt,
                             generator_eval, list_presets, main)
from rsjd.errors import ConfigError


def write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def base_doc(out, **sim):
    return {
        "model": {"preset": "pure_switching", "params": {}},
        "simulation": {"dt": 0.01, "path_count": 10, "master_seed": 1, **sim},
        "output": {"directory": str(out), "paths_csv": True, "report_format": "both"},
    }


def test_schema_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"model": {"preset": "pure_switching"}, "simulation": {"dt": 0.1, "path_count": 1},
                                    "extra": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"model": {"preset": "pure_switching"},
                                    "simulation": {"dt": 0.1, "path_count": 1, "seed": 3}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"model": {"preset": "nope"}, "simulation": {"dt": 0.1, "path_count": 1}})


def test_bad_configs_exit_2(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert main(["simulate", str(p)]) == EXIT_CONFIG
    assert main(["simulate", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    doc = base_doc(tmp_path / "o", dt=5.0)
    assert main(["simulate", str(write_config(tmp_path, doc))]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG


def test_empty_verify_writes_paths_and_exits_0(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, base_doc(out))
    assert main(["run", str(cfg)]) == EXIT_OK
    rows = list(csv.reader((out / "paths.csv").open(newline="")))
    assert rows[0] == ["path_id", "t", "y_1", "c", "r_residence", "log_weight"]
    assert len(rows) == 1 + 10 * 2
    rep = json.loads((out / "report.json").read_text())
    assert rep["reports"] == [] and rep["all_passed"] and rep["master_seed"] == 1


def test_one_path_two_grid_points(tmp_path):
    out = tmp_path / "one"
    doc = base_doc(out, path_count=1)
    assert main(["simulate", str(write_config(tmp_path, doc))]) == EXIT_OK
    text = (out / "paths.csv").read_bytes()
    assert text.count(b"\n") == 3 and b"\r" not in text


def test_inline_model_and_summary(tmp_path):
    out = tmp_path / "inline"
    doc = {
        "model": {"inline": {
            "K": 2, "d": 1, "drift": {"kind": "constant", "values": [[0.1], [-0.1]]},
            "diffusion": {"kind": "constant", "values": [[[0.5]], [[0.3]]]},
            "jump": {"kind": "additive", "scales": 1.0},
            "levy": {"kind": "compound_poisson", "atoms": [[0.5], [-1.5]], "masses": [1.0, 0.5]},
            "switching": [{"from": 1, "to": 2, "rate": {"kind": "sinusoidal", "base": 1.0, "amplitude": 0.5},
                           "bound": 2.0, "shift": 0.3},
                          {"from": 2, "to": 1, "rate": {"kind": "constant", "value": 1.0}, "bound": 1.0}]}},
        "simulation": {"dt": 0.01, "path_count": 500, "record_every": 0.25, "T": 1.0},
        "output": {"directory": str(out)},
    }
    assert main(["simulate", str(write_config(tmp_path, doc))]) == EXIT_OK
    assert not (out / "paths.csv").exists()
    rows = list(csv.DictReader((out / "summary.csv").open(newline="")))
    assert [float(r["t"]) for r in rows] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert all(float(r["freq_c_1"]) + float(r["freq_c_2"]) == pytest.approx(1.0) for r in rows)


def test_streaming_mode_has_no_paths_csv(tmp_path):
    out = tmp_path / "big"
    doc = base_doc(out, path_count=100_000, dt=0.05)
    doc["output"]["paths_csv"] = False
    assert main(["simulate", str(write_config(tmp_path, doc))]) == EXIT_OK
    assert not (out / "paths.csv").exists() and (out / "summary.csv").exists()


def verify_doc(out, negative=False):
    return {
        "model": {"preset": "pure_switching", "params": {}},
        "simulation": {"dt": 0.01, "path_count": 3000, "master_seed": 4, "block_size": 500},
        "verify": {"tests": [
            {"kind": "dynkin", "negative_control": negative, "bias_allowance": 0.0},
            {"kind": "regime_marginal", "times": [0.5, 1.0]},
            {"kind": "invariants"},
        ]},
        "output": {"directory": str(out), "paths_csv": True, "report_format": "both"},
    }


def test_verify_passes_and_negative_control_fails(tmp_path):
    good = write_config(tmp_path, verify_doc(tmp_path / "good"), "good.json")
    bad = write_config(tmp_path, verify_doc(tmp_path / "bad", negative=True), "bad.json")
    assert main(["run", str(good)]) == EXIT_OK
    assert main(["verify", str(bad)]) == EXIT_FAIL
    rows = list(csv.DictReader((tmp_path / "bad" / "report.csv").open(newline="")))
    assert any(r["test"].startswith("dynkin_negative_control") and r["pass"] == "false" for r in rows)


def test_byte_identical_across_threads_and_reruns(tmp_path):
    doc = verify_doc(tmp_path / "x")
    cfg = write_config(tmp_path, doc)
    outs = []
    for k, threads in enumerate((1, 4, 1)):
        d = tmp_path / f"run{k}"
        assert main(["run", str(cfg), "--threads", str(threads), "--out", str(d)]) == EXIT_OK
        outs.append(d)
    for name in ("paths.csv", "summary.csv", "report.json", "report.csv"):
        ref = (outs[0] / name).read_bytes()
        assert all((d / name).read_bytes() == ref for d in outs[1:]), name
    info = json.loads((outs[1] / "run_info.json").read_text())
    assert info["threads"] == 4


def test_seed_override_changes_output(tmp_path):
    cfg = write_config(tmp_path, base_doc(tmp_path / "unused"))
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "a"), "--seed", "11"]) == EXIT_OK
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "b"), "--seed", "12"]) == EXIT_OK
    assert (tmp_path / "a" / "paths.csv").read_bytes() != (tmp_path / "b" / "paths.csv").read_bytes()
    assert json.loads((tmp_path / "a" / "report.json").read_text())["master_seed"] == 11


def test_unwritable_output_exits_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_config(tmp_path, base_doc(blocker / "sub"))
    assert main(["simulate", str(cfg)]) == EXIT_RUNTIME


def test_threads_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("RSJD_THREADS", "3")
    out = tmp_path / "env"
    assert main(["simulate", str(write_config(tmp_path, base_doc(out)))]) == EXIT_OK
    assert json.loads((out / "run_info.json").read_text())["threads"] == 3
    monkeypatch.setenv("RSJD_THREADS", "many")
    assert main(["simulate", str(write_config(tmp_path, base_doc(out)))]) == EXIT_CONFIG


def test_generator_eval_output(tmp_path):
    doc = {"model": {"preset": "brownian_switching", "params": {}}, "simulation": {"dt": 0.01, "path_count": 1}}
    cfg = write_config(tmp_path, doc)
    buf = io.StringIO()
    assert generator_eval(cfg, "0.0,0.2,1", buf) == EXIT_OK
    rows = json.loads(buf.getvalue())
    assert len(rows) == 5
    for r in rows:
        assert r["total"] == pytest.approx(r["drift"] + r["diffusion"] + r["levy"] + r["switch"])
    assert generator_eval(cfg, "0.0,0.2", io.StringIO()) == EXIT_CONFIG
    assert generator_eval(cfg, "0.0,0.2,7", io.StringIO()) == EXIT_CONFIG


def test_presets_list():
    buf = io.StringIO()
    assert list_presets(buf) == EXIT_OK
    names = [line.split("\t")[0] for line in buf.getvalue().splitlines()]
    assert names == sorted(names) and "exp_levy" in names and "semi_markov" in names


def test_overrides_applied_to_model():
    cfg = ExperimentConfig.from_dict({"model": {"preset": "pure_switching"},
                                      "simulation": {"dt": 0.1, "path_count": 1, "T": 2.0, "y0": 0.5, "c0": 2}})
    spec = build_model(cfg)
    assert spec.horizon == 2.0 and spec.y0.tolist() == [0.5] and spec.c0 == 2


def test_fmt_round_trips():
    for x in (0.1, 1 / 3, 1e-300, -2.5e17, np.float64(np.pi)):
        assert float(fmt(x)) == float(x)
    assert fmt(True) == "true" and fmt(np.int64(3)) == "3"


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "rsjd", "presets", "list"], capture_output=True, text=True)
    assert res.returncode == 0 and "pure_switching" in res.stdout


def test_shipped_configs_validate():
    from pathlib import Path
    paths = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.json"))
    assert paths
    for p in paths:
        build_model(ExperimentConfig.from_dict(json.loads(p.read_text())))
