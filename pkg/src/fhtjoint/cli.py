"""Command-line pipelines: ``simulate``, ``fit``, ``evaluate``, ``ppc``, ``curves``.

Settings resolve in three layers: built-in defaults, then a YAML or JSON
config file (``--config``), then command-line flags.  Every run writes
``manifest.json`` holding the resolved settings under ``"config"``;
passing that manifest back as ``--config`` reproduces the directory.

Config schema (all keys optional)::

    seed: 0
    out: runs/example
    threads: 4
    chains: 3
    sampler: {iter: 2000, warmup: 1000, target_accept: 0.8, max_treedepth: 10, metric: block}
    scenario: {preset: q2-lod, overrides: {N: 300}}     # simulate, evaluate
    data: {dir: runs/sim, panel: null, survival: null}  # fit
    model: {degrees: [4, 3], lod: [null, -1.0], n_covariates: 0,
            priors: {...}, standardize_covariates: false}  # fit
    fit: runs/fit                                       # ppc, curves
    evaluate: {reps: 20, methods: [joint, tsim]}
    ppc: {draws: 2000, thresholds: [8, 10, 12]}
    curves: {profiles: [average], reference: average,
             grid: {start: 0.0, stop: 40.0, num: 81}, time_offset: null}

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import glob
import logging
import os
import sys

import numpy as np
import scipy
import yaml

from . import __version__
from .bench import METHODS, replication_records, run_replications, write_metrics_table
from .fht import NoMassError
from .io import (DataError, MissingArtifactError, load_chains, read_dataset, read_json,
                 write_dataset, write_json, write_table)
from .model import JointModel
from .report import (DEFAULT_AGE_THRESHOLDS, DEFAULT_PPC_DRAWS, InsufficientDrawsError,
                     MedianUndefinedError, get_profile, median_difference, median_event_time,
                     ppc_longitudinal, ppc_survival, survival_curve)
from .sampler import (DegenerateChainError, FatalDivergenceError, InitializationError,
                      SamplerConfig, run_chains)
from .simulate import PRESETS, ScenarioConfig, generate_dataset, get_preset
from .spec import ModelSpec

log = logging.getLogger("fhtjoint")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    """Invalid or inconsistent run settings."""


class NumericalError(RuntimeError):
    """A computation failed for numerical reasons."""


DEFAULTS = {
    "seed": 0,
    "out": None,
    "threads": None,
    "chains": 3,
    "sampler": {"iter": 2000, "warmup": 1000},
    "scenario": {"preset": None, "overrides": {}},
    "data": {"dir": None, "panel": None, "survival": None},
    "model": None,
    "fit": None,
    "evaluate": {"reps": 20, "methods": list(METHODS)},
    "ppc": {"draws": DEFAULT_PPC_DRAWS, "thresholds": list(DEFAULT_AGE_THRESHOLDS)},
    "curves": {"profiles": ["average"], "reference": "average",
               "grid": {"start": 0.0, "stop": 40.0, "num": 81}, "time_offset": None},
}


# ----------------------------------------------------------------------
# configuration

def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config_file(path, command: str) -> dict:
    """Read a YAML/JSON config, or the ``config`` section of a manifest."""
    if not os.path.exists(path):
        raise ConfigError(f"{path}: config file not found")
    with open(path) as fh:
        try:
            cfg = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f":{mark.line + 1}" if mark is not None else ""
            raise ConfigError(f"{path}{where}: invalid config ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    if "config" in cfg and "command" in cfg:
        if cfg["command"] != command:
            raise ConfigError(f"{path}: manifest is for {cfg['command']!r}, not {command!r}")
        cfg = cfg["config"]
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return cfg


def _flag_overrides(args) -> dict:
    o = {}
    for key in ("seed", "out", "threads", "chains"):
        if getattr(args, key, None) is not None:
            o[key] = getattr(args, key)
    sampler = {k: getattr(args, k) for k in ("iter", "warmup") if getattr(args, k, None) is not None}
    if sampler:
        o["sampler"] = sampler
    if getattr(args, "preset", None) is not None:
        o["scenario"] = {"preset": args.preset}
    if getattr(args, "n", None) is not None:
        o.setdefault("scenario", {})["overrides"] = {"N": args.n}
    data = {k: getattr(args, k) for k in ("panel", "survival") if getattr(args, k, None) is not None}
    if getattr(args, "data", None) is not None:
        data["dir"] = args.data
    if data:
        o["data"] = data
    if getattr(args, "fit", None) is not None:
        o["fit"] = args.fit
    if getattr(args, "reps", None) is not None:
        o["evaluate"] = {"reps": args.reps}
    if getattr(args, "methods", None):
        o.setdefault("evaluate", {})["methods"] = args.methods
    if getattr(args, "draws", None) is not None:
        o["ppc"] = {"draws": args.draws}
    if getattr(args, "thresholds", None):
        o.setdefault("ppc", {})["thresholds"] = args.thresholds
    if getattr(args, "profile", None):
        o["curves"] = {"profiles": args.profile}
    if getattr(args, "time_offset", None) is not None:
        o.setdefault("curves", {})["time_offset"] = args.time_offset
    return o


def resolve_config(args) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        cfg = _merge(cfg, load_config_file(args.config, args.command))
    cfg = _merge(cfg, _flag_overrides(args))
    if cfg["threads"] is None:
        cfg["threads"] = os.cpu_count() or 1
    if cfg["out"] is None:
        cfg["out"] = os.path.join("runs", args.command)
    _validate(cfg, args.command)
    return cfg


def _validate(cfg, command):
    def positive_int(value, name, minimum=1):
        if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
            raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")

    if isinstance(cfg["seed"], bool) or not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {cfg['seed']!r}")
    positive_int(cfg["threads"], "threads")
    positive_int(cfg["chains"], "chains")
    if command in ("simulate", "evaluate"):
        if not cfg["scenario"].get("preset"):
            raise ConfigError(f"{command} needs a scenario preset (--preset); "
                              f"choose from {sorted(PRESETS)}")
        n = cfg["scenario"].get("overrides", {}).get("N")
        if n is not None:
            positive_int(n, "n")
    if command == "evaluate":
        positive_int(cfg["evaluate"]["reps"], "reps")
        bad = set(cfg["evaluate"]["methods"]) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}; choose from {list(METHODS)}")
    if command in ("ppc", "curves") and not cfg["fit"]:
        raise ConfigError(f"{command} needs a fit directory (--fit)")
    if command == "ppc":
        positive_int(cfg["ppc"]["draws"], "draws")
    if command == "curves":
        g = cfg["curves"]["grid"]
        positive_int(g.get("num"), "grid.num", 2)
        if not 0 <= float(g["start"]) < float(g["stop"]):
            raise ConfigError("curve grid needs 0 <= start < stop")


def sampler_config(cfg) -> SamplerConfig:
    try:
        return SamplerConfig(**cfg["sampler"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sampler settings: {exc}") from None


def scenario_config(cfg) -> ScenarioConfig:
    sc = cfg["scenario"]
    try:
        return get_preset(sc["preset"], **sc.get("overrides", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario: {exc}") from None


def write_manifest(out_dir, command, cfg, extra=None):
    manifest = {"command": command, "config": cfg, "version": __version__,
                "numpy": np.__version__, "scipy": scipy.__version__}
    if extra:
        manifest.update(extra)
    write_json(os.path.join(out_dir, "manifest.json"), manifest)


def _prepare_out(cfg):
    out = cfg["out"]
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


# ----------------------------------------------------------------------
# commands

def cmd_simulate(cfg) -> str:
    """Write ``panel.csv``, ``survival.csv`` and ``truth.json``."""
    scenario = scenario_config(cfg)
    out = _prepare_out(cfg)
    data, truth = generate_dataset(scenario, np.random.default_rng(cfg["seed"]))
    write_dataset(out, data)
    write_json(os.path.join(out, "truth.json"),
               {"scenario": scenario.to_dict(), "model": scenario.model_spec().to_dict(),
                "parameters": scenario.truth_vector(), "subjects": truth})
    write_manifest(out, "simulate", cfg)
    log.info("simulated %d subjects into %s", data.N, out)
    return out


def _data_paths(cfg):
    d = cfg["data"]
    panel, surv = d.get("panel"), d.get("survival")
    if d.get("dir"):
        panel = panel or os.path.join(d["dir"], "panel.csv")
        surv = surv or os.path.join(d["dir"], "survival.csv")
    if not panel or not surv:
        raise ConfigError("fit needs data: --data DIR or both --panel and --survival")
    return panel, surv


def _model_spec(cfg) -> tuple[ModelSpec, float]:
    """Model spec and reporting time offset from config, preset or the data's truth file."""
    offset = 0.0
    if cfg.get("model"):
        try:
            return ModelSpec.from_dict(cfg["model"]), offset
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from None
    if cfg["scenario"].get("preset"):
        sc = scenario_config(cfg)
        return sc.model_spec(), sc.time_offset
    d = cfg["data"].get("dir")
    truth = os.path.join(d, "truth.json") if d else None
    if truth and os.path.exists(truth):
        t = read_json(truth)
        return ModelSpec.from_dict(t["model"]), float(t["scenario"].get("time_offset", 0.0))
    raise ConfigError("no model structure: give a 'model' section, --preset, or a simulated data dir")


def global_names(model: JointModel) -> list:
    """Names of the population-level parameters, in draw-file order."""
    lay = model.constrained_layout
    stop = lay.slices["B"].start
    return model.param_names[:stop]


def cmd_fit(cfg) -> str:
    """Fit the joint model; writes draws, ``summary.csv`` and ``diagnostics.json``."""
    spec, offset = _model_spec(cfg)
    panel_path, surv_path = _data_paths(cfg)
    config = sampler_config(cfg)
    data, _ = read_dataset(panel_path, surv_path, lod=spec.lod)
    try:
        model = JointModel(data, spec, survival=True)
    except ValueError as exc:
        raise DataError(f"{panel_path}: {exc}") from None
    out = _prepare_out(cfg)
    for stale in glob.glob(os.path.join(out, "chain_*.csv")):
        os.remove(stale)
    draws = run_chains(
        model, config, chains=cfg["chains"], seed=cfg["seed"], threads=cfg["threads"], out_dir=out)
    names = global_names(model)
    summary = draws.summary(names)
    rhat_available = draws.n_chains >= 2
    if not rhat_available:
        log.warning("R-hat unavailable with a single chain")
    cols = ("parameter", "mean", "sd", "q2.5", "q50", "q97.5", "rhat", "ess")
    write_table(os.path.join(out, "summary.csv"), cols,
                [[row["parameter"]] + [row[c] if (c != "rhat" or rhat_available) else "NA"
                                       for c in cols[1:]] for row in summary])
    max_rhat = draws.max_rhat(names) if rhat_available else None
    diag = {
        "rhat_available": rhat_available,
        "max_rhat": max_rhat,
        "converged": bool(rhat_available and max_rhat < 1.1),
        "min_ess": min(row["ess"] for row in summary),
        "n_divergent": draws.n_divergent,
        "divergence_fraction": draws.divergence_fraction,
        "chains": [{"seed": c.seed, "step_size": c.step_size, "n_divergent": c.n_divergent,
                    "warmup_divergences": c.warmup_divergences,
                    "mean_accept_stat": float(np.mean(c.accept_stat)),
                    "mean_treedepth": float(np.mean(c.treedepth))} for c in draws.chains],
    }
    write_json(os.path.join(out, "diagnostics.json"), diag)
    write_manifest(out, "fit", cfg, {"model": spec.to_dict(), "time_offset": offset,
                                     "inputs": {"panel": panel_path, "survival": surv_path}})
    if rhat_available:
        log.info("fit done: max R-hat %.3f, %d divergences", max_rhat, draws.n_divergent)
    return out


def cmd_evaluate(cfg) -> str:
    """Replication benchmark; writes ``metrics.csv`` and ``replications.json``."""
    scenario = scenario_config(cfg)
    config = sampler_config(cfg)
    out = _prepare_out(cfg)
    ev = cfg["evaluate"]
    result = run_replications(scenario, ev["reps"], config, methods=tuple(ev["methods"]),
                              base_seed=cfg["seed"], chains=cfg["chains"], threads=cfg["threads"])
    write_metrics_table(os.path.join(out, "metrics.csv"), result)
    records = replication_records(result)
    for r in records:
        r.pop("seconds", None)
    write_json(os.path.join(out, "replications.json"),
               {"excluded": result.excluded, "replications": records})
    write_manifest(out, "evaluate", cfg)
    return out


class FittedRun:
    """Data, model spec and posterior draws of a ``fit`` output directory."""

    def __init__(self, fit_dir):
        manifest = read_json(os.path.join(fit_dir, "manifest.json"))
        if manifest.get("command") != "fit":
            raise DataError(f"{fit_dir}/manifest.json: not a fit directory")
        fcfg = manifest["config"]
        self.spec = ModelSpec.from_dict(manifest["model"])
        self.time_offset = float(manifest.get("time_offset", 0.0))
        inputs = manifest["inputs"]
        self.data, self.ids = read_dataset(inputs["panel"], inputs["survival"], lod=self.spec.lod)
        paths = [os.path.join(fit_dir, f"chain_{k + 1}.csv") for k in range(fcfg["chains"])]
        missing = [p for p in paths if not os.path.exists(p)]
        if missing:
            raise MissingArtifactError(f"{missing[0]}: draw file missing from fit directory")
        layout = JointModel(self.data, self.spec, survival=True).constrained_layout
        self.draws = load_chains(paths, layout)


def cmd_ppc(cfg) -> str:
    """Posterior predictive p-values of the longitudinal and survival parts."""
    run = FittedRun(cfg["fit"])
    out = _prepare_out(cfg)
    rng = np.random.default_rng(cfg["seed"])
    pc = cfg["ppc"]
    lon = ppc_longitudinal(run.draws, run.data.panel, run.spec, rng, max_draws=pc["draws"])
    sur = ppc_survival(run.draws, run.data.survival, run.spec, rng,
                       thresholds=pc["thresholds"], max_draws=pc["draws"])
    rows = [[sid, q + 1, lon.p_values[i, q]] for i, sid in enumerate(run.ids)
            for q in range(run.spec.Q)]
    write_table(os.path.join(out, "ppc_longitudinal.csv"), ("subject_id", "biomarker", "p_value"), rows)
    write_table(os.path.join(out, "ppc_survival.csv"), ("statistic", "p_value"),
                [[k, v] for k, v in sur.p_values.items()])
    write_manifest(out, "ppc", cfg, {"n_draws": lon.n_draws})
    return out


def cmd_curves(cfg) -> str:
    """Survival curves, median event times and paired median differences per profile."""
    run = FittedRun(cfg["fit"])
    out = _prepare_out(cfg)
    cc = cfg["curves"]
    offset = run.time_offset if cc.get("time_offset") is None else float(cc["time_offset"])
    g = cc["grid"]
    grid = np.linspace(float(g["start"]), float(g["stop"]), int(g["num"]))
    zbar = np.asarray(run.data.survival.covariates).mean(axis=0)
    try:
        profiles = {name: get_profile(name, run.spec) for name in cc["profiles"]}
        ref = get_profile(cc["reference"], run.spec)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"curves: {exc}") from None
    curve_rows, median_rows, diff_rows = [], [], []
    for name, prof in profiles.items():
        curve = survival_curve(run.draws, prof, grid, run.spec, zbar, offset)
        curve_rows += [[name, *row] for row in curve.rows()]
        try:
            m = median_event_time(run.draws, prof, run.spec, zbar, offset)
            median_rows.append([name, m.mean, m.lower, m.upper])
            if name != cc["reference"]:
                d = median_difference(run.draws, prof, ref, run.spec, zbar)
                diff_rows.append([name, cc["reference"], d.mean, d.lower, d.upper])
        except MedianUndefinedError as exc:
            log.warning("profile %s: %s", name, exc)
            median_rows.append([name, "NA", "NA", "NA"])
    write_table(os.path.join(out, "curves.csv"), ("profile", "time", "mean", "lo", "hi"), curve_rows)
    write_table(os.path.join(out, "medians.csv"), ("profile", "mean", "lo", "hi"), median_rows)
    write_table(os.path.join(out, "median_differences.csv"),
                ("profile", "reference", "mean", "lo", "hi"), diff_rows)
    write_manifest(out, "curves", cfg)
    return out


HANDLERS = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate,
            "ppc": cmd_ppc, "curves": cmd_curves}


# ----------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, help="master random seed")
    shared.add_argument("--out", help="output directory")
    shared.add_argument("--config", help="YAML/JSON config file or a previous manifest.json")
    shared.add_argument("--threads", type=int, help="worker processes (default: logical cores)")
    shared.add_argument("--chains", type=int, help="number of chains (default 3)")
    shared.add_argument("--iter", type=int, help="total iterations per chain, warmup included")
    shared.add_argument("--warmup", type=int, help="warmup iterations per chain")
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fhtjoint", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[shared], help="simulate a dataset from a preset")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--n", type=int, help="number of subjects")

    p = sub.add_parser("fit", parents=[shared], help="fit the joint model")
    p.add_argument("--data", help="directory holding panel.csv and survival.csv")
    p.add_argument("--panel")
    p.add_argument("--survival")
    p.add_argument("--preset", choices=sorted(PRESETS), help="take the model structure from a preset")

    p = sub.add_parser("evaluate", parents=[shared], help="replication benchmark")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--n", type=int, help="subjects per replication")
    p.add_argument("--reps", type=int, help="number of replications")
    p.add_argument("--methods", nargs="+", choices=list(METHODS))

    p = sub.add_parser("ppc", parents=[shared], help="posterior predictive checks of a fit")
    p.add_argument("--fit", help="fit output directory")
    p.add_argument("--draws", type=int, help="maximum posterior draws used")
    p.add_argument("--thresholds", type=float, nargs="+", help="ages for event counts")

    p = sub.add_parser("curves", parents=[shared], help="survival curves and medians of a fit")
    p.add_argument("--fit", help="fit output directory")
    p.add_argument("--profile", action="append", help="covariate profile (repeatable)")
    p.add_argument("--time-offset", type=float, dest="time_offset")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InsufficientDrawsError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FatalDivergenceError, InitializationError, DegenerateChainError, NoMassError,
            NumericalError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
