"""Replication harness: coverage, bias, interval length and RMSE.

Two methods are compared on simulated data: the joint model, and the
two-stage baseline that fits the longitudinal submodel alone and then
regresses the event times on posterior-mean latents (``tsim``).
"""
from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .model import JointModel, ThresholdModel
from .sampler import FatalDivergenceError, PosteriorDraws, SamplerConfig, run_chains
from .simulate import ScenarioConfig, generate_dataset
from .spec import ModelSpec
from .threshold import empirical_standardize

log = logging.getLogger(__name__)

METHODS = ("joint", "tsim")
RHAT_THRESHOLD = 1.1
# offsets separating the sampler streams from the data stream of a replication
JOINT_SEED_OFFSET = 1_000_000
STAGE1_SEED_OFFSET = 2_000_000


@dataclass(frozen=True)
class MetricRow:
    """Simulation metrics of one parameter under one method."""

    parameter: str
    truth: float
    coverage: float
    bias: float
    ail: float
    rmse: float
    n: int = 0
    method: str = ""


def compute_metrics(truth, estimates, intervals, parameter: str = "", method: str = "") -> MetricRow:
    """Coverage, signed bias, average interval length and RMSE.

    Parameters
    ----------
    truth : float
    estimates : array_like, shape (R,)
        Posterior means.
    intervals : array_like, shape (R, 2)
        Credible-interval endpoints; the truth counts as covered when it
        equals an endpoint.
    """
    est = np.asarray(estimates, dtype=float).reshape(-1)
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if est.shape[0] < 1 or iv.shape[0] != est.shape[0]:
        raise ValueError("need R >= 1 estimates with one interval each")
    if np.any(iv[:, 0] > iv[:, 1]):
        raise ValueError("interval bounds must be ordered")
    err = est - truth
    return MetricRow(parameter=parameter, truth=float(truth),
                     coverage=float(np.mean((iv[:, 0] <= truth) & (truth <= iv[:, 1]))),
                     bias=float(err.mean()), ail=float(np.mean(iv[:, 1] - iv[:, 0])),
                     rmse=float(np.sqrt(np.mean(err ** 2))), n=int(est.shape[0]), method=method)


def summarize(draws: PosteriorDraws, names):
    """Posterior means and central 95% intervals for the named parameters."""
    x = draws.select(names).reshape(-1, len(names))
    lo, hi = np.percentile(x, [2.5, 97.5], axis=0)
    return x.mean(axis=0), lo, hi


# ----------------------------------------------------------------------
# fitting

def fit_joint(data: Dataset, spec: ModelSpec, config: SamplerConfig = SamplerConfig(),
              chains: int = 3, seed: int = 0, threads: int = 1, out_dir=None) -> PosteriorDraws:
    """Fit the joint model; chains use seeds ``seed, seed + 1, ...``."""
    model = JointModel(data, spec, survival=True)
    return run_chains(model, config, chains=chains, seed=seed, threads=threads, out_dir=out_dir)


def stage_two_design(stage1: PosteriorDraws, data: Dataset, spec: ModelSpec) -> np.ndarray:
    """Design rows built from empirically standardised posterior-mean latents.

    Random effects and log residual variances are replaced by their
    posterior means, each column is centred and scaled by its sample SD,
    and the baseline covariates are appended unchanged.
    """
    B = stage1.block("B").mean(axis=0)
    logvar = stage1.block("logvar").mean(axis=0)
    N, Q = logvar.shape
    cols = [np.ones((N, 1))]
    for q in range(Q):
        latent = np.column_stack([B[:, q, 0], B[:, q, 1], logvar[:, q]])
        cols.append(empirical_standardize(latent))
    Z = np.asarray(data.survival.covariates, dtype=float).reshape(N, -1)
    if spec.standardize_covariates and Z.shape[1] > 0:
        Z = empirical_standardize(Z)
    cols.append(Z)
    return np.hstack(cols)


@dataclass
class TwoStageFit:
    stage1: PosteriorDraws
    stage2: PosteriorDraws
    W: np.ndarray


def tsim_two_stage(data: Dataset, spec: ModelSpec, config: SamplerConfig = SamplerConfig(),
                   chains: int = 3, seed: int = 0, threads: int = 1) -> TwoStageFit:
    """Two-stage baseline: longitudinal fit, then threshold regression on posterior means."""
    stage1 = run_chains(JointModel(data, spec, survival=False), config, chains=chains,
                        seed=seed, threads=threads)
    W = stage_two_design(stage1, data, spec)
    model = ThresholdModel(W, data.survival.time, data.survival.event, spec.priors)
    stage2 = run_chains(model, config, chains=chains, seed=seed + chains, threads=threads)
    return TwoStageFit(stage1, stage2, W)


# ----------------------------------------------------------------------
# replications

@dataclass
class ReplicationResult:
    """Per-replication, per-method outcome."""

    index: int
    seed: int
    method: str
    names: list
    estimate: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None
    max_rhat: float = np.nan
    divergence_fraction: float = np.nan
    seconds: float = 0.0
    error: str | None = None

    @property
    def converged(self) -> bool:
        return self.error is None and np.isfinite(self.max_rhat) and self.max_rhat < RHAT_THRESHOLD


def _coef_names(spec: ModelSpec):
    D = spec.n_coef
    return [f"alpha[{k + 1}]" for k in range(D)] + [f"eta[{k + 1}]" for k in range(D)]


def run_replication(scenario: ScenarioConfig, index: int, config: SamplerConfig,
                    methods=METHODS, base_seed: int = 0, chains: int = 3) -> list[ReplicationResult]:
    """Simulate replication ``index`` and fit every requested method."""
    seed = base_seed + index
    data, _ = generate_dataset(scenario, np.random.default_rng(seed))
    spec = scenario.model_spec()
    truth = scenario.truth_vector()
    coef = _coef_names(spec)
    out = []
    for method in methods:
        start = time.perf_counter()
        try:
            if method == "joint":
                draws = fit_joint(data, spec, config, chains=chains, seed=seed + JOINT_SEED_OFFSET)
                names = list(truth)
            elif method == "tsim":
                fit = tsim_two_stage(data, spec, config, chains=chains, seed=seed + STAGE1_SEED_OFFSET)
                draws = fit.stage2
                names = coef
            else:
                raise ValueError(f"unknown method {method!r}")
            est, lo, hi = summarize(draws, names)
            if method == "tsim":
                long_names = [n for n in truth if not n.startswith(("alpha", "eta"))]
                rhat = max(fit.stage1.max_rhat(long_names), fit.stage2.max_rhat(coef))
            else:
                rhat = draws.max_rhat(names)
            res = ReplicationResult(index, seed, method, names, est, lo, hi, rhat,
                                    draws.divergence_fraction)
        except (FatalDivergenceError, FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
            log.warning("replication %d (%s) failed: %s", index, method, exc)
            res = ReplicationResult(index, seed, method, coef, error=str(exc))
        res.seconds = time.perf_counter() - start
        out.append(res)
    return out


def _replication_task(args):
    return run_replication(*args)


@dataclass
class BenchResult:
    """Metric tables per method plus the raw replication records."""

    tables: dict
    replications: list
    excluded: dict = field(default_factory=dict)

    def rows(self) -> list[MetricRow]:
        return [row for method in self.tables for row in self.tables[method]]

    def row(self, method: str, parameter: str) -> MetricRow:
        for r in self.tables[method]:
            if r.parameter == parameter:
                return r
        raise KeyError(parameter)


def aggregate(replications, scenario: ScenarioConfig, methods=METHODS) -> BenchResult:
    """Metric tables from replication records, excluding non-converged fits."""
    truth = scenario.truth_vector()
    tables, excluded = {}, {}
    for method in methods:
        recs = sorted((r for r in replications if r.method == method), key=lambda r: r.index)
        kept = [r for r in recs if r.converged]
        excluded[method] = len(recs) - len(kept)
        if excluded[method]:
            log.warning("%s: excluded %d of %d replications", method, excluded[method], len(recs))
        rows = []
        if kept:
            for k, name in enumerate(kept[0].names):
                est = np.array([r.estimate[k] for r in kept])
                iv = np.array([[r.lower[k], r.upper[k]] for r in kept])
                rows.append(compute_metrics(truth[name], est, iv, name, method))
        tables[method] = rows
    return BenchResult(tables, list(replications), excluded)


def run_replications(scenario: ScenarioConfig, R: int, config: SamplerConfig = SamplerConfig(),
                     methods=METHODS, base_seed: int = 0, chains: int = 3,
                     threads: int | None = 1) -> BenchResult:
    """Fit ``R`` simulated datasets with each method and aggregate the metrics.

    Replication ``r`` simulates its data with seed ``base_seed + r``.  Fits
    whose maximum split R-hat over the reported parameters reaches 1.1, or
    that fail numerically, are excluded and counted.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    tasks = [(scenario, r, config, tuple(methods), base_seed, chains) for r in range(R)]
    threads = os.cpu_count() if threads is None else threads
    if threads > 1 and R > 1:
        with ProcessPoolExecutor(max_workers=min(threads, R)) as pool:
            results = [res for batch in pool.map(_replication_task, tasks) for res in batch]
    else:
        results = [res for t in tasks for res in _replication_task(t)]
    return aggregate(results, scenario, methods)


TABLE_COLUMNS = ("parameter", "model", "coverage_pct", "bias", "ail", "rmse", "truth", "n")


def write_metrics_table(path, result: BenchResult) -> None:
    """Write the metric tables as CSV (coverage in percent)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for row in result.rows():
            w.writerow([row.parameter, row.method, f"{100 * row.coverage:.1f}", f"{row.bias:.4f}",
                        f"{row.ail:.4f}", f"{row.rmse:.4f}", f"{row.truth:g}", row.n])


def replication_records(result: BenchResult) -> list[dict]:
    """Per-replication diagnostics as plain dictionaries."""
    out = []
    for r in result.replications:
        d = {k: v for k, v in asdict(r).items() if k not in ("estimate", "lower", "upper", "names")}
        d["converged"] = r.converged
        out.append(d)
    return out
