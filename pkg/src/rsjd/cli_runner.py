"""Command-line experiment runner: JSON config in, CSV and report files out.

Exit codes: 0 all requested checks passed, 1 some check failed, 2 bad
configuration, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .errors import ConfigError, RSJDError
from .model_core import (CoefficientSet, LevySpec, ModelSpec, RegimeSet, additive_jump, constant_diffusion,
                         constant_drift, constant_rate, constant_shift, evaluate_generator, linear_drift,
                         proportional_diffusion, sinusoidal_rate, standard_suite)
from .path_simulator import SimulationConfig, run_blocks, simulate_ensemble
from .presets import PRESETS, build_preset
from . import verifier

log = logging.getLogger("rsjd")

THREADS_ENV = "RSJD_THREADS"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

_num = {"type": "number"}
_num_list = {"type": "array", "items": _num}
_nested = {"type": "array"}

_rate_schema = {
    "type": "object",
    "oneOf": [
        {"properties": {"kind": {"const": "constant"}, "value": _num}, "required": ["kind", "value"],
         "additionalProperties": False},
        {"properties": {"kind": {"const": "sinusoidal"}, "base": _num, "amplitude": _num, "freq": _num,
                        "coord": {"type": "integer", "minimum": 0}, "phase": _num},
         "required": ["kind", "base", "amplitude"], "additionalProperties": False},
    ],
}

_inline_schema = {
    "type": "object",
    "additionalProperties": False,
    "required": ["K", "d", "drift", "diffusion"],
    "properties": {
        "name": {"type": "string"},
        "K": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 1},
        "p": {"type": "integer", "minimum": 1},
        "drift": {"type": "object", "additionalProperties": False, "required": ["kind"], "properties": {
            "kind": {"enum": ["constant", "linear"]}, "values": _nested, "A": _nested, "b": _nested}},
        "diffusion": {"type": "object", "additionalProperties": False, "required": ["kind", "values"],
                      "properties": {"kind": {"enum": ["constant", "proportional"]}, "values": _nested}},
        "jump": {"type": "object", "additionalProperties": False, "required": ["kind", "scales"],
                 "properties": {"kind": {"const": "additive"}, "scales": {"type": ["number", "array"]}}},
        "levy": {"type": "object", "additionalProperties": False, "properties": {
            "kind": {"enum": ["none", "compound_poisson"]}, "atoms": _nested, "masses": _num_list,
            "truncation": {"type": "number", "exclusiveMinimum": 0}}},
        "switching": {"type": "array", "items": {
            "type": "object", "additionalProperties": False, "required": ["from", "to", "rate", "bound"],
            "properties": {"from": {"type": "integer", "minimum": 1}, "to": {"type": "integer", "minimum": 1},
                           "rate": _rate_schema, "bound": {"type": "number", "minimum": 0},
                           "shift": {"type": ["number", "array"]}}}},
    },
}

_test_schema = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["dynkin", "residual", "uniqueness", "moment", "markov", "regime_marginal",
                          "invariants"]},
        "label": {"type": "string"},
        "negative_control": {"type": "boolean"},
        "path_count": {"type": "integer", "minimum": 1},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "construction": {"enum": ["thinning", "dominating"]},
        "record_grid": _num_list,
        # dynkin
        "spread": {"type": "number", "exclusiveMinimum": 0},
        "center": _num_list,
        "times": _num_list,
        "bias_allowance": {"type": ["string", "number"]},
        # uniqueness
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "n_boot": {"type": "integer", "minimum": 10},
        "coord": {"type": "integer", "minimum": 0},
        # moment
        "m": {"type": "integer", "minimum": 1},
        "path_counts": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "one_sided": {"type": "boolean"},
        "reference": _num,
        "extremes": {"enum": ["grid", "steps", "bridge"]},
        # markov
        "t_mid": _num, "lag": _num, "ahead": _num,
        "residence_bins": _num_list, "y_bins": _num_list,
        "min_count": {"type": "integer", "minimum": 1},
        # regime marginal
        "regime": {"type": "integer", "minimum": 1},
        "oracle": {"oneOf": [{"const": "chain"}, _num_list]},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "simulation"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "oneOf": [{"required": ["preset"]}, {"required": ["inline"]}],
            "properties": {"preset": {"enum": sorted(PRESETS)}, "params": {"type": "object"},
                           "inline": _inline_schema},
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dt", "path_count"],
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "T": _num, "r": _num,
                "y0": {"type": ["number", "array"]},
                "c0": {"type": "integer", "minimum": 1},
                "path_count": {"type": "integer", "minimum": 1},
                "master_seed": {"type": "integer", "minimum": 0},
                "construction": {"enum": ["thinning", "dominating"]},
                "record_grid": _num_list,
                "record_every": {"type": "number", "exclusiveMinimum": 0},
                "block_size": {"type": "integer", "minimum": 1},
                "extremes": {"enum": ["grid", "steps", "bridge"]},
            },
        },
        "verify": {"type": "object", "additionalProperties": False,
                   "properties": {"tests": {"type": "array", "items": _test_schema}}},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"directory": {"type": "string"}, "paths_csv": {"type": "boolean"},
                           "summary_csv": {"type": "boolean"},
                           "report_format": {"enum": ["json", "csv", "both"]}},
        },
    },
}


@dataclass
class ExperimentConfig:
    model: dict
    simulation: dict
    verify: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {where}: {exc.message}") from None
        return cls(doc["model"], doc["simulation"], doc.get("verify", {}), doc.get("output", {}))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc)


# ---------------------------------------------------------------------------
# Model and simulation construction


def _inline_model(m: dict) -> ModelSpec:
    K, d = m["K"], m["d"]
    p = m.get("p", d)
    dr = m["drift"]
    if dr["kind"] == "constant":
        mu = constant_drift(dr.get("values", 0.0), K, d)
    else:
        mu = linear_drift(dr["A"], dr.get("b", 0.0), K, d)
    df = m["diffusion"]
    sig = (constant_diffusion if df["kind"] == "constant" else proportional_diffusion)(df["values"], K, d, p)
    lv = m.get("levy", {})
    if lv.get("kind", "none") == "compound_poisson":
        atoms = np.asarray(lv["atoms"], dtype=float).reshape(len(lv["masses"]), -1)
        levy = LevySpec("compound_poisson", dim=atoms.shape[1], truncation=lv.get("truncation", 1.0),
                        atoms=atoms, masses=lv["masses"])
    else:
        levy = LevySpec(truncation=lv.get("truncation", 1.0))
    F = additive_jump(m["jump"]["scales"], K, d) if "jump" in m else None
    if levy.kind != "none" and F is None:
        raise ConfigError("a Levy measure needs a jump coefficient")
    rho, lam, bounds = {}, {}, {}
    for s in m.get("switching", []):
        pair = (s["from"], s["to"])
        if pair[0] == pair[1] or max(pair) > K:
            raise ConfigError(f"bad switching pair {pair}")
        r = s["rate"]
        if r["kind"] == "constant":
            lam[pair] = constant_rate(r["value"])
        else:
            lam[pair] = sinusoidal_rate(r["base"], r["amplitude"], r.get("freq", 1.0), r.get("coord", 0),
                                        r.get("phase", 0.0))
        bounds[pair] = s["bound"]
        if "shift" in s:
            rho[pair] = constant_shift(s["shift"])
    coeffs = CoefficientSet(d, p, mu, sig, F, rho, lam, bounds)
    return ModelSpec(RegimeSet(K), levy, coeffs, 1.0, np.zeros(d), 1, name=m.get("name", "inline"))


def build_model(cfg: ExperimentConfig) -> ModelSpec:
    mb, sim = cfg.model, cfg.simulation
    if "preset" in mb:
        spec = build_preset(mb["preset"], mb.get("params"))
    else:
        spec = _inline_model(mb["inline"])
    over = {}
    if "T" in sim:
        over["horizon"] = float(sim["T"])
    if "r" in sim:
        over["start"] = float(sim["r"])
    if "y0" in sim:
        over["y0"] = np.atleast_1d(np.asarray(sim["y0"], dtype=float))
    if "c0" in sim:
        over["c0"] = int(sim["c0"])
    return replace(spec, **over) if over else spec


def build_simulation(cfg: ExperimentConfig, spec: ModelSpec, seed: Optional[int], threads: int
                     ) -> SimulationConfig:
    sim = cfg.simulation
    grid = sim.get("record_grid")
    if grid is None and "record_every" in sim:
        n = int(round((spec.horizon - spec.start) / sim["record_every"]))
        grid = np.linspace(spec.start, spec.horizon, n + 1).tolist()
    if grid is None:
        grid = [spec.start, spec.horizon]
    out = SimulationConfig(
        dt=float(sim["dt"]), construction=sim.get("construction", "thinning"), record_grid=grid,
        master_seed=int(sim.get("master_seed", 0) if seed is None else seed), path_count=int(sim["path_count"]),
        block_size=int(sim.get("block_size", 16384)), threads=threads, retain_paths=False,
        extremes=sim.get("extremes"),
    )
    out.validate(spec)
    return out


# ---------------------------------------------------------------------------
# Output formatting


def fmt(x) -> str:
    """Shortest round-trip decimal text for a number."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _csv(rows) -> str:
    return "".join(",".join(r) + "\n" for r in rows)


def paths_csv_block(spec: ModelSpec, batch) -> str:
    rows = []
    for k in range(batch.size):
        pid = batch.offset + k
        for g, t in enumerate(batch.times):
            rows.append([str(pid), fmt(t), *(fmt(v) for v in batch.y[k, g]), str(int(batch.c[k, g])),
                         fmt(batch.residence[k, g]), fmt(batch.log_weight[k, g])])
    return _csv(rows)


def paths_header(d: int) -> str:
    return _csv([["path_id", "t", *(f"y_{k + 1}" for k in range(d)), "c", "r_residence", "log_weight"]])


def summary_csv(summary, d: int, K: int) -> str:
    head = ["t", "weight_sum", "ess", *(f"mean_y_{k + 1}" for k in range(d)), *(f"var_y_{k + 1}" for k in range(d)),
            *(f"freq_c_{k}" for k in range(1, K + 1))]
    rows = [head]
    for g, t in enumerate(summary.times):
        rows.append([fmt(t), fmt(summary.weight_sum[g]), fmt(summary.ess[g]), *(fmt(v) for v in summary.mean[g]),
                     *(fmt(v) for v in summary.var[g]), *(fmt(v) for v in summary.regime_freq[g])])
    return _csv(rows)


def _clean(obj):
    """JSON-ready copy with numpy scalars converted and non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def report_entry(r: verifier.TestReport) -> dict:
    # runtime is deliberately left out: the report must be reproducible byte for byte
    return _clean({"test": r.name, "statistic": r.statistic, "se": r.se, "threshold": r.threshold,
                   "pass": r.passed, "sample_size": r.sample_size, "details": r.details})


def report_csv(reports) -> str:
    rows = [["test", "statistic", "se", "threshold", "pass", "sample_size"]]
    for r in reports:
        rows.append([r.name, fmt(r.statistic), fmt(r.se), fmt(r.threshold), fmt(bool(r.passed)), str(r.sample_size)])
    return _csv(rows)


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def emit_outputs(out_dir: Path, spec: ModelSpec, summary=None, paths_text: Optional[str] = None, reports=(),
                 report_format: str = "json", extra: Optional[dict] = None, summary_wanted: bool = True):
    out_dir.mkdir(parents=True, exist_ok=True)
    if paths_text is not None:
        _write(out_dir / "paths.csv", paths_header(spec.d) + paths_text)
    if summary is not None and summary_wanted:
        _write(out_dir / "summary.csv", summary_csv(summary, spec.d, spec.K))
    doc = {"model": spec.name, **(extra or {}), "reports": [report_entry(r) for r in reports],
           "all_passed": all(r.passed for r in reports)}
    if summary is not None:
        doc["summary"] = _clean(summary.to_dict())
    if report_format in ("json", "both"):
        _write(out_dir / "report.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if report_format in ("csv", "both"):
        _write(out_dir / "report.csv", report_csv(reports))


# ---------------------------------------------------------------------------
# Pipelines


def simulate_pipeline(spec: ModelSpec, sim: SimulationConfig, want_paths: bool):
    """Ensemble summary, plus the rendered paths CSV body when paths are requested."""
    if not want_paths:
        return simulate_ensemble(spec, sim), None
    summary = simulate_ensemble(spec, replace(sim, retain_paths=True))
    text = "".join(paths_csv_block(spec, b) for b in summary.batches)
    summary.batches = None
    return summary, text


def _test_cfg(sim: SimulationConfig, t: dict) -> SimulationConfig:
    over = {k: t[k] for k in ("path_count", "dt", "construction", "record_grid") if k in t}
    return replace(sim, **over)


def run_test(spec: ModelSpec, sim: SimulationConfig, t: dict) -> list:
    kind = t["kind"]
    cfg = _test_cfg(sim, t)
    neg = bool(t.get("negative_control", False))
    label = f"|{t['label']}" if "label" in t else ""
    if kind == "dynkin":
        center = t.get("center", spec.y0.tolist())
        suite = standard_suite(spec.d, spec.K, center=center, spread=t.get("spread", 1.0))
        reps = verifier.dynkin_test(spec, suite, cfg, times=t.get("times"),
                                    bias_allowance=t.get("bias_allowance", "pilot"), negative_control=neg)
        # a negative-control request reports only the deliberately broken family
        out = [r for r in reps if r.name.startswith("dynkin_negative_control")] if neg else reps
    elif kind == "residual":
        out = verifier.characteristics_residual_test(spec, cfg, negative_control=neg)
    elif kind == "uniqueness":
        out = [verifier.uniqueness_two_construction_test(spec, cfg, alpha=t.get("alpha", 0.01),
                                                        n_boot=t.get("n_boot", 200), coord=t.get("coord", 0),
                                                        negative_control=neg)]
    elif kind == "moment":
        counts = t.get("path_counts", [max(1, cfg.path_count // 100), max(1, cfg.path_count // 10), cfg.path_count])
        cfg = replace(cfg, extremes=t.get("extremes", cfg.extremes or "bridge"))
        out = [verifier.moment_growth_test(spec, cfg, m=t.get("m", 1), path_counts=counts,
                                           one_sided=t.get("one_sided", False), reference=t.get("reference"),
                                           coord=t.get("coord"))]
    elif kind == "markov":
        for key in ("t_mid", "lag", "ahead"):
            if key not in t:
                raise ConfigError(f"markov test needs {key!r}")
        out = [verifier.markov_property_test(spec, cfg, t["t_mid"], t["lag"], t["ahead"],
                                             residence_bins=t.get("residence_bins"), y_bins=t.get("y_bins"),
                                             min_count=t.get("min_count", 500), alpha=t.get("alpha", 0.01),
                                             label=label)]
    elif kind == "regime_marginal":
        times = t.get("times", [spec.horizon])
        oracle = t.get("oracle", "chain")
        if oracle == "chain":
            probs = verifier.markov_chain_marginals(verifier.constant_rate_matrix(spec), spec.c0, times, spec.start)
            regime = t.get("regime", 1)
            oracle = probs[:, regime - 1]
        out = verifier.regime_marginal_test(spec, cfg, times, np.asarray(oracle, dtype=float),
                                            regime=t.get("regime", 1))
    elif kind == "invariants":
        tally = verifier.InvariantTally()
        for part in run_blocks(spec, cfg, (), lambda b: verifier.check_path_invariants(spec, b, cfg.construction)):
            tally.merge(part)
        out = [verifier.TestReport(f"invariants[{spec.name}]", float(tally.violations), 0.0, 0.0,
                                   tally.violations == 0, tally.paths, 0.0, dict(tally.__dict__))]
    else:  # pragma: no cover - schema rejects unknown kinds
        raise ConfigError(f"unknown test kind {kind!r}")
    if label and kind != "markov":
        for r in out:
            r.name = r.name.replace("]", f"{label}]", 1) if r.name.endswith("]") else r.name + label
    return out


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def run(config_path, command: str = "run", seed: Optional[int] = None, threads: Optional[int] = None,
        out_dir: Optional[str] = None) -> int:
    """Execute simulate and/or verify for one config file; returns the exit code."""
    try:
        cfg = ExperimentConfig.load(config_path)
        threads = default_threads() if threads is None else int(threads)
        if threads < 1:
            raise ConfigError("--threads must be positive")
        spec = build_model(cfg)
        sim = build_simulation(cfg, spec, seed, threads)
    except (ConfigError, RSJDError, TypeError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    out = cfg.output
    target = Path(out_dir or out.get("directory", "out"))
    extra = {"master_seed": sim.master_seed, "command": command}
    try:
        summary = paths_text = None
        reports = []
        if command in ("run", "simulate"):
            summary, paths_text = simulate_pipeline(spec, sim, bool(out.get("paths_csv", False)))
        if command in ("run", "verify"):
            for t in cfg.verify.get("tests", []):
                log.info("running %s test", t["kind"])
                reports.extend(run_test(spec, sim, t))
        emit_outputs(target, spec, summary, paths_text, reports, out.get("report_format", "both"), extra,
                     summary_wanted=bool(out.get("summary_csv", True)))
        # thread count and timings vary between runs, so they live beside the report
        _write(target / "run_info.json", json.dumps(
            {"threads": threads, "master_seed": sim.master_seed,
             "runtimes": {r.name: r.runtime for r in reports}}, indent=2, sort_keys=True) + "\n")
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot write outputs to %s: %s", target, exc)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - mapped onto the exit-code contract
        log.exception("runtime error: %s", exc)
        return EXIT_RUNTIME
    for r in reports:
        log.info("%s %s statistic=%r threshold=%r", "PASS" if r.passed else "FAIL", r.name, r.statistic, r.threshold)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def _parse_at(text: str, d: int):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != d + 2:
        raise ConfigError(f"--at needs t, {d} state value(s) and c; got {len(parts)} numbers")
    c = parts[-1]
    if c != int(c):
        raise ConfigError("regime must be an integer")
    return parts[0], np.asarray(parts[1:-1]), int(c)


def generator_eval(config_path, at: str, stream=sys.stdout) -> int:
    """Print the itemised generator of every standard-suite function at one state."""
    try:
        cfg = ExperimentConfig.load(config_path)
        spec = build_model(cfg)
        t, y, c = _parse_at(at, spec.d)
        if not 1 <= c <= spec.K:
            raise ConfigError(f"regime {c} outside 1..{spec.K}")
    except (ConfigError, RSJDError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    try:
        rows = []
        for f in standard_suite(spec.d, spec.K, center=spec.y0):
            ev = evaluate_generator(spec, f, t, y, c)
            rows.append({"function": f.name, "total": ev.total, "drift": ev.drift_term,
                         "diffusion": ev.diffusion_term, "levy": ev.levy_jump_term, "switch": ev.switch_term,
                         "quadrature_se": ev.quadrature_se})
    except RSJDError as exc:
        log.error("runtime error: %s", exc)
        return EXIT_RUNTIME
    stream.write(json.dumps(_clean(rows), indent=2) + "\n")
    return EXIT_OK


def list_presets(stream=sys.stdout) -> int:
    for name in sorted(PRESETS):
        stream.write(f"{name}\t{PRESETS[name][1]}\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rsjd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "verify", "run"):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
        p.add_argument("--out", help="output directory (overrides output.directory)")
    pr = sub.add_parser("presets")
    pr.add_argument("action", choices=["list"])
    ge = sub.add_parser("generator-eval")
    ge.add_argument("config")
    ge.add_argument("--at", required=True, help="t,y_1,...,y_d,c")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        return list_presets()
    if args.command == "generator-eval":
        return generator_eval(args.config, args.at)
    return run(args.config, args.command, args.seed, args.threads, args.out)


if __name__ == "__main__":
    sys.exit(main())
