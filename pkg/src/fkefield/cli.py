"""Command-line entry point: one experiment per run, configured by a TOML file.

    fkefield <experiment> --config run.toml [--seed N] [--workers K] [--out DIR]
    fkefield report DIR

Every run writes ``manifest.json`` (resolved config, model hash, derived
exponents, package versions, output list, summary) next to its CSV, JSON and
``.f64`` outputs. Validation errors exit with 2, numerical failures with 3.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
from dataclasses import dataclass, field
from importlib import metadata
from typing import Any, Callable

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .covariance import GridSpec, SpaceTimePoint, cov_matrix, variance_bounds
from .errors import FkeError, MissingManifest, RangeError
from .green import GaussianBump, Zero, decay_radius, drift, green_eval, green_mass
from .hitting import (
    capacity_estimate,
    hausdorff_upper,
    hit_probability_mc,
    polarity_experiment,
    target_from_dict,
    target_to_dict,
)
from .model import Gauge, Model, validate
from .quadrature import QuadratureSpec
from .regularity import detect_log_factor, fit_exponent, structure_function
from .sampler import oracle_sample, spectral_samples

__all__ = ["RunConfig", "EXPERIMENTS", "load_config", "dumps_config", "loads_config", "run", "report", "main"]

log = logging.getLogger("fkefield")

MODEL_KEYS = {"d", "alpha", "gamma", "hurst", "noise", "T", "t0", "M"}
MODEL_DEFAULTS = {"T": 1.0, "t0": 0.1, "M": 2.0}
TOP_KEYS = {"seed", "workers", "out", "model", "quadrature", "experiment"}
STOCHASTIC = {"sample", "hitprob", "polarity"}
SLOPE_TOL = 0.05

# Experiment blocks: allowed keys and defaults.
EXPERIMENTS: dict[str, dict[str, Any]] = {
    "exponents": {},
    "covariance": {"n_t": 8, "n_x": 8},
    "green": {"times": [0.25, 0.5, 1.0, 2.0], "n_points": 64, "datum": {"kind": "zero"}},
    "sample": {"n_t": 8, "n_x": 8, "n_samples": 1, "n_components": 1, "method": "spectral"},
    "regularity": {"axes": ["space", "time"], "n_lags": 24, "lag_min": 1e-4, "lag_max": 0.3, "base_t": None, "base_x": None},
    "gauge": {"n": 1, "taus": [1e-4, 1e-3, 1e-2, 0.1, 0.5]},
    "capacity": {"n": 1, "target": None, "m": 1024},
    "hausdorff": {"n": 1, "target": None, "depth": 12},
    "hitprob": {"n": 1, "target": None, "n_t": 16, "n_x": 16, "n_samples": 100},
    "polarity": {
        "ns": [2, 4],
        "radii": [0.4, 0.2, 0.1],
        "n_t": 64,
        "n_x": 64,
        "n_samples": 1000,
        "strides": [9, 3, 1],
        "center": None,
    },
}


# Configuration


@dataclass
class RunConfig:
    experiment: str
    model: dict
    params: dict
    quadrature: dict = field(default_factory=dict)
    seed: int | None = None
    workers: int = 1
    out: str = "run"

    def build_model(self) -> Model:
        return validate(**self.model)

    def build_spec(self) -> QuadratureSpec:
        return QuadratureSpec(**self.quadrature)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"workers": self.workers, "out": self.out}
        if self.seed is not None:
            out["seed"] = self.seed
        out["model"] = _drop_none(self.model)
        out["quadrature"] = _drop_none(self.quadrature)
        out["experiment"] = {"kind": self.experiment, **_drop_none(self.params)}
        return out


def _drop_none(d: dict) -> dict:
    # TOML has no null; absent keys mean "use the default".
    return {k: (_drop_none(v) if isinstance(v, dict) else v) for k, v in d.items() if v is not None}


def _unknown(found, allowed, where: str) -> None:
    extra = set(found) - set(allowed)
    if extra:
        raise RangeError(f"unknown key(s) {sorted(extra)} in {where}")


def config_from_dict(raw: dict) -> RunConfig:
    _unknown(raw, TOP_KEYS, "the top level")
    if "model" not in raw or "experiment" not in raw:
        raise RangeError("config needs [model] and [experiment] tables")
    model = {**MODEL_DEFAULTS, **raw["model"]}
    _unknown(model, MODEL_KEYS, "[model]")
    exp = dict(raw["experiment"])
    kind = exp.pop("kind", None)
    if kind not in EXPERIMENTS:
        raise RangeError(f"experiment kind must be one of {sorted(EXPERIMENTS)}, got {kind!r}")
    _unknown(exp, EXPERIMENTS[kind], f"[experiment] for {kind}")
    params = {**EXPERIMENTS[kind], **exp}
    quad = {**QuadratureSpec().to_dict(), **raw.get("quadrature", {})}
    _unknown(quad, QuadratureSpec().to_dict(), "[quadrature]")
    seed = raw.get("seed")
    if seed is not None and (not isinstance(seed, int) or seed < 0):
        raise RangeError("seed must be a nonnegative integer")
    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise RangeError("workers must be a positive integer")
    return RunConfig(kind, model, params, quad, seed, workers, str(raw.get("out", "run")))


def loads_config(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise RangeError(f"config is not valid TOML: {exc}") from exc
    return config_from_dict(raw)


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return loads_config(fh.read())


def dumps_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


# Output helpers


class Outputs:
    def __init__(self, root: str):
        self.root = root
        self.files: list[str] = []
        os.makedirs(root, exist_ok=True)

    def path(self, name: str) -> str:
        self.files.append(name)
        return os.path.join(self.root, name)

    def json(self, name: str, obj) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=2, default=_jsonable)

    def csv(self, name: str, header: list[str], rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v)}")


def _finite(v: float):
    return v if math.isfinite(v) else "inf"


def _versions() -> dict:
    def ver(name: str) -> str:
        try:
            return metadata.version(name)
        except metadata.PackageNotFoundError:
            return "unknown"

    return {"fkefield": ver("artifact"), "numpy": np.__version__, "scipy": ver("scipy"), "python": platform.python_version()}


def _grid(model: Model, p: dict) -> GridSpec:
    return GridSpec.for_model(model, int(p["n_t"]), int(p["n_x"]))


# Experiments: each returns a summary dict and writes its files through ``out``.


def _exp_exponents(cfg: RunConfig, model: Model, spec: QuadratureSpec, out: Outputs) -> dict:
    summary = {**model.derived(), "log_case": model.log_case}
    out.json("exponents.json", summary)
    return summary


def _exp_covariance(cfg: RunConfig, model: Model, spec: QuadratureSpec, out: Outputs) -> dict:
    grid = _grid(model, cfg.params)
    cov = cov_matrix(model, grid, spec, workers=cfg.workers)
    cov.save(os.path.join(out.root, "covariance"))
    out.files += ["covariance.f64", "covariance.json"]
    low, high = variance_bounds(model, spec)
    diag = np.diag(cov.entries)
    summary = {
        "size": cov.size,
        "jitter": cov.jitter,
        "min_eig_ratio": cov.min_eig_ratio,
        "variance_window": [low, high],
        "diagonal_range": [float(diag.min()), float(diag.max())],
        "diagonal_in_window": bool(np.all((diag >= low) & (diag <= high))),
    }
    out.json("covariance_summary.json", summary)
    return summary


def _datum(raw: dict):
    raw = dict(raw)
    kind = raw.pop("kind", None)
    if kind == "zero":
        _unknown(raw, set(), "[experiment.datum]")
        return Zero()
    if kind == "bump":
        _unknown(raw, {"amplitude", "width"}, "[experiment.datum]")
        return GaussianBump(float(raw.get("amplitude", 1.0)), float(raw.get("width", 1.0)))
    raise RangeError(f"datum kind must be 'zero' or 'bump', got {kind!r}")


def _exp_green(cfg: RunConfig, model: Model, spec: QuadratureSpec, out: Outputs) -> dict:
    p = cfg.params
    u0 = _datum(p["datum"])
    n = int(p["n_points"])
    ax = np.linspace(-model.M, model.M, n)
    pts = ax if model.d == 1 else np.stack([ax, np.zeros_like(ax)], axis=-1)
    rows, masses, radii = [], {}, {}
    for t in p["times"]:
        t = float(t)
        G = green_eval(model, t, pts)
        D = drift(model, u0, t, pts)
        rows += [(t, x, g, dv) for x, g, dv in zip(ax, G, D)]
        masses[str(t)] = green_mass(model, t)
        radii[str(t)] = _finite(decay_radius(model, t))
    out.csv("green.csv", ["t", "x", "G", "drift"], rows)
    summary = {"mass": masses, "decay_radius": radii, "max_mass_error": max(abs(m - 1.0) for m in masses.values())}
    out.json("green.json", summary)
    return summary


def _exp_sample(cfg: RunConfig, model: Model, spec: QuadratureSpec, out: Outputs) -> dict:
    p = cfg.params
    grid = _grid(model, p)
    n_s, n_c = int(p["n_samples"]), int(p["n_components"])
    if p["method"] == "spectral":
        samples = spectral_samples(model, grid, n_s, n_c, cfg.seed, workers=cfg.workers, spec=spec)
    elif p["method"] == "oracle":
        cov = cov_matrix(model, grid, spec, workers=cfg.workers)
        samples = oracle_sample(cov, n_c, n_s, cfg.seed, grid)
    else:
        raise RangeError(f"sample method must be 'spectral' or 'oracle', got {p['method']!r}")
    digests = []
    for fs in samples:
        stem = f"sample_{fs.sample_index:05d}"
        fs.save(os.path.join(out.root, stem))
        out.files += [stem + ".f64", stem + ".f64.json"]
        digests.append(fs.digest())
    summary = {"n_samples": n_s, "n_components": n_c, "method": p["method"], "sha256": digests}
    out.json("samples.json", summary)
    return summary


def _exp_regularity(cfg: RunConfig, model: Model, spec: QuadratureSpec, out: Outputs) -> dict:
    p = cfg.params
    lags = np.geomspace(float(p["lag_min"]), float(p["lag_max"]), int(p["n_lags"]))
    base_t = model.T if p["base_t"] is None else float(p["base_t"])
    base_x = -0.5 * model.M if p["base_x"] is None else float(p["base_x"])
    base = SpaceTimePoint(base_t, tuple([base_x] * model.d))
    gauge = Gauge.from_model(model)
    fits = []
    for axis in p["axes"]:
        if axis == "time":
            base_axis = SpaceTimePoint(min(base_t, model.T - lags[-1]), base.x)
        else:
            base_axis = base
        table = structure_function(model, axis, base_axis, lags, spec)
        table.to_csv(out.path(f"structure_{axis}.csv"), gauge)
        fit = fit_exponent(table)
        theory = min(model.alpha1, 1.0) if axis == "space" else model.alpha2
        row = {
            "axis": axis,
            "fitted": fit.slope,
            "theoretical": theory,
            "r2": fit.r2,
            "pass": bool(abs(fit.slope - theory) <= SLOPE_TOL) if not (axis == "space" and model.log_case) else None,
            "monotone": table.is_monotone(),
        }
        if axis == "space" and model.log_case:
            rep = detect_log_factor(table, gauge)
            row["log_factor"] = {"ratio_band": list(rep.ratio_band), "plain_power_drift": rep.plain_power_drift}
        fits.append(row)
    summary = {"fits": fits, "tolerance": SLOPE_TOL, "base": [base_t, base_x]}
    out.json("regularity.json", summary)
    return summary


def _exp_gauge(cfg: RunConfig, model: Model, spec: QuadratureSpec, out: Outputs) -> dict:
    p = cfg.params
    gauge = Gauge.from_model(model, int(p["n"]))
    taus = np.asarray(p["taus"], dtype=float)
    rows = []
    worst = 0.0
    for tau in taus:
        q1 = float(gauge.q1(tau))
        q2 = float(gauge.q2(tau))
        back1 = float(gauge.q1_inv(q1))
        back2 = float(gauge.q2_inv(q2))
        worst = max(worst, abs(back1 - tau) / tau, abs(back2 - tau) / tau)
        rows.append((tau, q1, q2, float(gauge.g_q(tau)), float(gauge.frak_g(tau)), back1, back2))
    out.csv("gauge.csv", ["tau", "q1", "q2", "g_q", "frak_g", "q1_inv_q1", "q2_inv_q2"], rows)
    at0 = gauge.g_q_at_zero()
    summary = {"n": gauge.n, "Q": gauge.Q, "log_case": gauge.log_case, "g_q_at_zero": at0.kind, "max_round_trip_error": worst}
    out.json("gauge.json", summary)
    return summary


def _target(p: dict):
    if p["target"] is None:
        raise RangeError("this experiment needs an [experiment.target] table")
    return target_from_dict(p["target"])


def _exp_capacity(cfg: RunConfig, model: Model, spec: QuadratureSpec, out: Outputs) -> dict:
    p = cfg.params
    gauge = Gauge.from_model(model, int(p["n"]))
    target = _target(p)
    cap = capacity_estimate(gauge, target, int(p["m"]))
    summary = {"n": gauge.n, "Q": gauge.Q, "target": target_to_dict(target), "m": int(p["m"]), "capacity": _finite(cap)}
    out.json("capacity.json", summary)
    return summary


def _exp_hausdorff(cfg: RunConfig, model: Model, spec: QuadratureSpec, out: Outputs) -> dict:
    p = cfg.params
    gauge = Gauge.from_model(model, int(p["n"]))
    target = _target(p)
    h = hausdorff_upper(gauge, target, int(p["depth"]))
    summary = {"n": gauge.n, "Q": gauge.Q, "target": target_to_dict(target), "depth": int(p["depth"]), "hausdorff_upper": _finite(h)}
    out.json("hausdorff.json", summary)
    return summary


def _exp_hitprob(cfg: RunConfig, model: Model, spec: QuadratureSpec, out: Outputs) -> dict:
    p = cfg.params
    est = hit_probability_mc(
        model, int(p["n"]), _target(p), _grid(model, p), int(p["n_samples"]), cfg.seed, workers=cfg.workers
    )
    summary = {**est.to_dict(), "model_hash": model.model_hash()}
    out.json("hitprob.json", summary)
    return summary


def _exp_polarity(cfg: RunConfig, model: Model, spec: QuadratureSpec, out: Outputs) -> dict:
    p = cfg.params
    rep = polarity_experiment(
        model,
        p["ns"],
        p["radii"],
        _grid(model, p),
        int(p["n_samples"]),
        cfg.seed,
        strides=p["strides"],
        center=p["center"],
        workers=cfg.workers,
    )
    rep.save(out.path("polarity.json"), out.path("polarity.csv"))
    d = rep.to_dict()
    return {"Q": d["Q"], "slopes": d["slopes"], "verdicts": d["verdicts"], "seed": cfg.seed, "model_hash": model.model_hash()}


RUNNERS: dict[str, Callable[[RunConfig, Model, QuadratureSpec, Outputs], dict]] = {
    "exponents": _exp_exponents,
    "covariance": _exp_covariance,
    "green": _exp_green,
    "sample": _exp_sample,
    "regularity": _exp_regularity,
    "gauge": _exp_gauge,
    "capacity": _exp_capacity,
    "hausdorff": _exp_hausdorff,
    "hitprob": _exp_hitprob,
    "polarity": _exp_polarity,
}


def run(cfg: RunConfig) -> dict:
    """Validate, run one experiment, write outputs and the manifest; returns the manifest."""
    if cfg.experiment in STOCHASTIC and cfg.seed is None:
        raise RangeError(f"the {cfg.experiment} experiment needs a seed")
    model = cfg.build_model()
    spec = cfg.build_spec()
    out = Outputs(cfg.out)
    log.info("running %s for model %s", cfg.experiment, model.model_hash())
    summary = RUNNERS[cfg.experiment](cfg, model, spec, out)
    manifest = {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "model": model.to_dict(),
        "model_hash": model.model_hash(),
        "derived": model.derived(),
        "seed": cfg.seed,
        "versions": _versions(),
        "outputs": sorted(out.files),
        "summary": summary,
    }
    with open(os.path.join(cfg.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, default=_jsonable)
    with open(os.path.join(cfg.out, "config.toml"), "w") as fh:
        fh.write(dumps_config(cfg))
    return manifest


# Report


def _find_manifests(root: str) -> list[str]:
    found = []
    for dirpath, _, files in os.walk(root):
        if "manifest.json" in files:
            found.append(os.path.join(dirpath, "manifest.json"))
    return sorted(found)


def report(root: str) -> dict:
    """Merge every manifest under ``root`` into report.json and report.csv."""
    paths = _find_manifests(root)
    if not paths:
        raise MissingManifest(f"no manifest.json under {root}")
    sections: dict[str, list] = {}
    rows = []
    for path in paths:
        with open(path) as fh:
            man = json.load(fh)
        run_dir = os.path.relpath(os.path.dirname(path), root)
        kind = man.get("experiment", "unknown")
        sections.setdefault(kind, []).append({"run": run_dir, "model_hash": man.get("model_hash"), "summary": man.get("summary")})
        if kind == "regularity":
            for fit in man["summary"]["fits"]:
                rows.append([run_dir, man["model_hash"], fit["axis"], fit["fitted"], fit["theoretical"], fit["pass"]])
    result = {"n_runs": len(paths), "sections": sections}
    if rows:
        result["regularity_table"] = [dict(zip(["run", "model", "axis", "fitted", "theoretical", "pass"], r)) for r in rows]
    with open(os.path.join(root, "report.json"), "w") as fh:
        json.dump(result, fh, indent=2)
    with open(os.path.join(root, "report.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        if rows:
            w.writerow(["run", "model", "axis", "fitted", "theoretical", "pass"])
            w.writerows(rows)
        else:
            w.writerow(["run", "experiment", "model"])
            for kind, runs in sections.items():
                for r in runs:
                    w.writerow([r["run"], kind, r["model_hash"]])
    return result


# Entry point


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fkefield", description="Numerical experiments for fractional kinetic equations with time-fractional noise.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
        sp.add_argument("--workers", type=int, default=None, help="override the worker count")
        sp.add_argument("--out", default=None, help="override the output directory")
    rp = sub.add_parser("report", help="merge run manifests under a directory")
    rp.add_argument("dir")
    return ap


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = _parser().parse_args(argv)
    try:
        if args.command == "report":
            result = report(args.dir)
            print(json.dumps({"n_runs": result["n_runs"], "experiments": sorted(result["sections"])}))
            return 0
        cfg = load_config(args.config)
        if cfg.experiment != args.command:
            raise RangeError(f"config describes a {cfg.experiment} run, not {args.command}")
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            if args.workers < 1:
                raise RangeError("workers must be a positive integer")
            cfg.workers = args.workers
        if args.out is not None:
            cfg.out = args.out
        manifest = run(cfg)
        print(json.dumps(manifest["summary"], default=_jsonable))
        return 0
    except FkeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
