"""Posterior predictive checks, survival curves and median event times."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import LongitudinalPanel, SurvivalData
from .fht import FhtParams, NoMassError, cure_rate, fht_logsf, fht_quantile, fht_sample, fht_sample_truncated
from .longitudinal import impute_rows, poly_basis
from .spec import ModelSpec
from .threshold import build_design, empirical_standardize

MIN_PPC_DRAWS = 100
DEFAULT_PPC_DRAWS = 2000
DEFAULT_AGE_THRESHOLDS = (8.0, 10.0, 12.0)


class InsufficientDrawsError(ValueError):
    """Fewer posterior draws than a predictive check needs."""


class MedianUndefinedError(ValueError):
    """A draw's hitting probability does not reach one half."""

    def __init__(self, message, draw_index):
        super().__init__(message)
        self.draw_index = draw_index


# ----------------------------------------------------------------------
# draw access

def _pooled_block(draws, name):
    """``(K, ...)`` draws of a block from PosteriorDraws or a mapping of arrays."""
    if isinstance(draws, dict):
        return np.asarray(draws[name], dtype=float)
    return draws.block(name)


def _has_block(draws, name) -> bool:
    if isinstance(draws, dict):
        return name in draws
    return draws.has_block(name)


def _thin(K, max_draws):
    if max_draws is None or K <= max_draws:
        return np.arange(K)
    return np.unique(np.linspace(0, K - 1, max_draws).round().astype(int))


def _global_blocks(draws, spec: ModelSpec, idx=None):
    out = {}
    for name in ("beta", "sigma", "omega", "gamma", "psi", "alpha", "eta", "B", "logvar", "r"):
        if _has_block(draws, name):
            x = _pooled_block(draws, name)
            out[name] = x if idx is None else x[idx]
    if "r" not in out and spec.Q == 2:
        raise KeyError("draws lack residual correlations")
    return out


# ----------------------------------------------------------------------
# profiles

@dataclass(frozen=True)
class CovariateProfile:
    """A hypothetical subject for survival summaries.

    Parameters
    ----------
    name : str
    offsets : dict
        Standardised design entries keyed by :meth:`ModelSpec.coef_labels`
        (for example ``{"b1_variability": 0.5}``); unspecified entries are 0.
    covariates : sequence of float, optional
        Baseline covariate values; defaults to the sample mean.
    """

    name: str = "average"
    offsets: dict = field(default_factory=dict)
    covariates: tuple | None = None

    def __post_init__(self):
        if not all(np.isfinite(v) for v in self.offsets.values()):
            raise ValueError("profile offsets must be finite")
        if self.covariates is not None:
            object.__setattr__(self, "covariates", tuple(float(v) for v in self.covariates))
            if not all(np.isfinite(self.covariates)):
                raise ValueError("profile covariates must be finite")

    def design_row(self, spec: ModelSpec, covariate_mean=None) -> np.ndarray:
        """Design row ``W`` for this profile under ``spec``."""
        labels = spec.coef_labels()
        unknown = set(self.offsets) - set(labels[1:1 + 3 * spec.Q])
        if unknown:
            raise ValueError(f"unknown profile entries {sorted(unknown)}; choose from {labels[1:]}")
        W = np.zeros(spec.n_coef)
        W[0] = 1.0
        for k, label in enumerate(labels):
            if label in self.offsets:
                W[k] = self.offsets[label]
        K = spec.n_covariates
        if K:
            if self.covariates is not None:
                z = np.asarray(self.covariates, dtype=float)
            elif spec.standardize_covariates:
                z = np.zeros(K)
            elif covariate_mean is not None:
                z = np.asarray(covariate_mean, dtype=float).reshape(-1)
            else:
                raise ValueError("profile needs covariate values or the sample mean")
            if z.shape != (K,):
                raise ValueError(f"profile has {z.shape[0]} covariates, model expects {K}")
            W[1 + 3 * spec.Q:] = z
        return W


_KIND = {"int": "intercept", "slope": "slope", "var": "variability"}
_LEVEL = {"high": 0.5, "low": -0.5}
BIOMARKER_ALIASES = {"fsh": 1, "amh": 2}


def profile_presets(spec: ModelSpec) -> dict:
    """Named profiles varying one standardised coordinate to +/-0.5.

    Names are ``average`` and ``b{q}-{int|slope|var}-{high|low}``; for two
    biomarkers ``fsh`` and ``amh`` alias ``b1`` and ``b2``.
    """
    out = {"average": CovariateProfile("average")}
    for q in range(1, spec.Q + 1):
        prefixes = [f"b{q}"] + [a for a, k in BIOMARKER_ALIASES.items() if k == q and spec.Q == 2]
        for kind, label in _KIND.items():
            for level, value in _LEVEL.items():
                for prefix in prefixes:
                    name = f"{prefix}-{kind}-{level}"
                    out[name] = CovariateProfile(name, {f"b{q}_{label}": value})
    return out


def get_profile(name: str, spec: ModelSpec) -> CovariateProfile:
    presets = profile_presets(spec)
    try:
        return presets[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(presets)}") from None


# ----------------------------------------------------------------------
# survival summaries

def _coef_draws(draws):
    return _pooled_block(draws, "alpha"), _pooled_block(draws, "eta")


def profile_params(draws, profile: CovariateProfile, spec: ModelSpec, covariate_mean=None) -> FhtParams:
    """Per-draw hitting-time parameters of a profile."""
    alpha, eta = _coef_draws(draws)
    W = profile.design_row(spec, covariate_mean)
    return FhtParams(np.exp(alpha @ W), eta @ W, 1.0)


@dataclass
class CurveSummary:
    """Pointwise posterior mean and central 95% band of a survival curve."""

    time: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    per_draw: np.ndarray = field(repr=False, default=None)

    def rows(self):
        return list(zip(self.time, self.mean, self.lower, self.upper))


def survival_curve(draws, profile: CovariateProfile, grid, spec: ModelSpec,
                   covariate_mean=None, time_offset: float = 0.0) -> CurveSummary:
    """Posterior survival curve of a profile on a time grid.

    ``grid`` is on the model time scale; ``time_offset`` is only added to
    the reported times.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be increasing and nonnegative")
    p = profile_params(draws, profile, spec, covariate_mean)
    y0, zeta, _ = p.arrays()
    S = np.exp(fht_logsf(grid[None, :], FhtParams(y0[:, None], zeta[:, None], 1.0)))
    S = np.clip(S, 0.0, 1.0)
    lo, hi = np.percentile(S, [2.5, 97.5], axis=0)
    return CurveSummary(grid + time_offset, S.mean(axis=0), lo, hi, S)


@dataclass
class MedianSummary:
    """Posterior mean and central 95% interval of a per-draw median."""

    mean: float
    lower: float
    upper: float
    per_draw: np.ndarray = field(repr=False, default=None)


def _summarize(x) -> MedianSummary:
    lo, hi = np.percentile(x, [2.5, 97.5])
    return MedianSummary(float(np.mean(x)), float(lo), float(hi), x)


def per_draw_medians(draws, profile, spec, covariate_mean=None) -> np.ndarray:
    p = profile_params(draws, profile, spec, covariate_mean)
    cure = np.atleast_1d(cure_rate(p))
    bad = np.nonzero(cure >= 0.5)[0]
    if bad.size:
        raise MedianUndefinedError(
            f"draw {bad[0]} has cure rate {cure[bad[0]]:.3f} >= 0.5; median undefined", int(bad[0]))
    return np.atleast_1d(fht_quantile(0.5, p))


def median_event_time(draws, profile: CovariateProfile, spec: ModelSpec,
                      covariate_mean=None, time_offset: float = 0.0) -> MedianSummary:
    """Posterior summary of a profile's median event time.

    Raises
    ------
    MedianUndefinedError
        If some draw never reaches hitting probability one half.
    """
    return _summarize(per_draw_medians(draws, profile, spec, covariate_mean) + time_offset)


def median_difference(draws, profile_a: CovariateProfile, profile_b: CovariateProfile,
                      spec: ModelSpec, covariate_mean=None) -> MedianSummary:
    """Paired posterior summary of ``median(a) - median(b)`` computed draw by draw."""
    a = per_draw_medians(draws, profile_a, spec, covariate_mean)
    b = per_draw_medians(draws, profile_b, spec, covariate_mean)
    return _summarize(a - b)


# ----------------------------------------------------------------------
# posterior predictive checks

def _check_draws(K, min_draws):
    if K < min_draws:
        raise InsufficientDrawsError(f"predictive checks need at least {min_draws} draws, got {K}")


def _row_means(panel: LongitudinalPanel, spec: ModelSpec, beta, B):
    """``(n_obs, Q)`` means for one draw."""
    offsets = np.concatenate([[0], np.cumsum(spec.degrees)])
    mu = np.empty((panel.n_obs, spec.Q))
    subj, t = panel.subject, panel.time
    for q in range(spec.Q):
        mu[:, q] = (poly_basis(t, spec.degrees[q]) @ beta[offsets[q]:offsets[q + 1]]
                    + B[subj, q, 0] + B[subj, q, 1] * t)
    return mu


@dataclass
class LongitudinalPPC:
    """Per-subject, per-biomarker predictive p-values."""

    p_values: np.ndarray
    n_draws: int

    def fraction_within(self, lo=0.25, hi=0.75) -> np.ndarray:
        """Share of subjects with p-value in ``(lo, hi)``, per biomarker."""
        return np.mean((self.p_values > lo) & (self.p_values < hi), axis=0)


def ppc_longitudinal(draws, panel: LongitudinalPanel, spec: ModelSpec, rng: np.random.Generator,
                     max_draws: int | None = DEFAULT_PPC_DRAWS,
                     min_draws: int = MIN_PPC_DRAWS) -> LongitudinalPPC:
    """Chi-squared discrepancy check of every subject's trajectory.

    For each draw the censored entries are imputed from their truncated
    conditional law, a replicated panel is simulated from the same draw,
    and ``T = sum_j (x_ij - mu_ij)**2 / s_i**2`` is computed for both.  The
    p-value is the share of draws with ``T_completed <= T_replicated``.
    """
    K = _pooled_block(draws, "beta").shape[0]
    _check_draws(K, min_draws)
    idx = _thin(K, max_draws)
    g = _global_blocks(draws, spec, idx)
    N, Q = panel.N, panel.Q
    subj = panel.subject
    exceed = np.zeros((N, Q))
    for k in range(idx.shape[0]):
        mu = _row_means(panel, spec, g["beta"][k], g["B"][k])
        s = np.exp(0.5 * g["logvar"][k])[subj]
        r = g["r"][k][subj] if Q == 2 else None
        x = impute_rows(rng, panel.values, panel.censored, mu, s, r, panel.lod)
        e1 = rng.standard_normal(mu.shape)
        if Q == 2:
            e1[:, 1] = r * e1[:, 0] + np.sqrt(1.0 - r * r) * e1[:, 1]
        x_rep = mu + s * e1
        t_obs = np.zeros((N, Q))
        t_rep = np.zeros((N, Q))
        for q in range(Q):
            t_obs[:, q] = np.bincount(subj, ((x[:, q] - mu[:, q]) / s[:, q]) ** 2, minlength=N)
            t_rep[:, q] = np.bincount(subj, ((x_rep[:, q] - mu[:, q]) / s[:, q]) ** 2, minlength=N)
        exceed += t_obs <= t_rep
    return LongitudinalPPC(exceed / idx.shape[0], int(idx.shape[0]))


def sample_beyond(rng: np.random.Generator, p: FhtParams, lower) -> np.ndarray:
    """Hitting times conditional on ``S > lower``, never-hit included as ``inf``."""
    y0, zeta, _ = p.arrays()
    lower = np.asarray(lower, dtype=float)
    cure = np.broadcast_to(np.asarray(cure_rate(p), dtype=float), lower.shape)
    surv = np.exp(fht_logsf(lower, p))
    p_never = np.where(surv > 0, np.minimum(cure / np.maximum(surv, 1e-300), 1.0), 1.0)
    out = np.full(lower.shape, np.inf)
    hit = rng.random(lower.shape) >= p_never
    if np.any(hit):
        for i in np.nonzero(hit)[0]:
            try:
                out[i] = fht_sample_truncated(rng, FhtParams(y0[i], zeta[i], 1.0), lower[i])
            except NoMassError:
                out[i] = np.inf
    return out


def _survival_stats(times, thresholds):
    return np.concatenate([[np.median(times)], [np.sum(times <= a) for a in thresholds]])


@dataclass
class SurvivalPPC:
    """Predictive p-values for the median event time and event counts by age."""

    p_values: dict
    n_draws: int


def survival_params_from_draw(g: dict, k: int, spec: ModelSpec, Z) -> FhtParams:
    """Per-subject hitting-time parameters implied by draw ``k``."""
    s = np.exp(0.5 * g["logvar"][k])
    W = build_design(g["B"][k], s, g["sigma"][k], g["gamma"][k], g["psi"][k], Z)
    return FhtParams(np.exp(W @ g["alpha"][k]), W @ g["eta"][k], 1.0)


def ppc_survival(draws, survival: SurvivalData, spec: ModelSpec, rng: np.random.Generator,
                 thresholds=DEFAULT_AGE_THRESHOLDS, max_draws: int | None = DEFAULT_PPC_DRAWS,
                 min_draws: int = MIN_PPC_DRAWS, y0_scale: float = 1.0) -> SurvivalPPC:
    """Predictive check of the event-time distribution.

    For each draw, censored subjects get completed times from the law
    conditional on exceeding their censoring time, replicated times are
    simulated for all subjects, and the median event time and the number of
    events by each threshold are compared.  ``y0_scale`` multiplies the
    initial status in the replication path only (a diagnostic lever).
    """
    K = _pooled_block(draws, "alpha").shape[0]
    _check_draws(K, min_draws)
    idx = _thin(K, max_draws)
    g = _global_blocks(draws, spec, idx)
    thresholds = tuple(float(a) for a in thresholds)
    Z = np.asarray(survival.covariates, dtype=float)
    if spec.standardize_covariates and Z.shape[1] > 0:
        Z = empirical_standardize(Z)
    time = np.asarray(survival.time, dtype=float)
    cens = np.asarray(survival.event) == 0
    exceed = np.zeros(1 + len(thresholds))
    for k in range(idx.shape[0]):
        p = survival_params_from_draw(g, k, spec, Z)
        y0, zeta, _ = p.arrays()
        completed = time.copy()
        if np.any(cens):
            completed[cens] = sample_beyond(rng, FhtParams(y0[cens], zeta[cens], 1.0), time[cens])
        replicated = fht_sample(rng, FhtParams(y0 * y0_scale, zeta, 1.0))
        exceed += _survival_stats(completed, thresholds) <= _survival_stats(replicated, thresholds)
    p_values = exceed / idx.shape[0]
    names = ["median"] + [f"events_by_{a:g}" for a in thresholds]
    return SurvivalPPC(dict(zip(names, p_values)), int(idx.shape[0]))
