"""First-hitting-time law of a Wiener process with drift.

The latent process ``Y(t) = y0 + zeta * t + sigma * W(t)`` starts at
``y0 > 0`` and the event happens when it first reaches 0.  For
``zeta < 0`` the hitting time is inverse-Gaussian with mean ``-y0/zeta`` and
shape ``y0**2/sigma2``; for ``zeta > 0`` the law is defective and the missing
mass is the cure rate.

All functions accept scalars or broadcastable arrays inside :class:`FhtParams`.
Never-hitting draws are represented by ``np.inf``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import log_ndtr

LOG_2PI = np.log(2.0 * np.pi)
NO_MASS_TOL = 1e-12


class NoMassError(ValueError):
    """Raised when there is no hitting mass beyond a truncation point."""


class InfeasibleQuantileError(ValueError):
    """Raised when a requested quantile exceeds the hitting probability."""


@dataclass(frozen=True)
class FhtParams:
    """Parameters of the Wiener first-hitting-time law.

    Parameters
    ----------
    y0 : float or ndarray
        Initial latent health status, strictly positive.
    zeta : float or ndarray
        Drift. Negative values push the process towards the boundary.
    sigma2 : float or ndarray
        Process variance per unit time.
    """

    y0: float | np.ndarray
    zeta: float | np.ndarray
    sigma2: float | np.ndarray = 1.0

    def __post_init__(self):
        y0 = np.asarray(self.y0, dtype=float)
        zeta = np.asarray(self.zeta, dtype=float)
        sigma2 = np.asarray(self.sigma2, dtype=float)
        if not np.all(np.isfinite(y0)) or np.any(y0 <= 0):
            raise ValueError("y0 must be finite and > 0")
        if not np.all(np.isfinite(zeta)):
            raise ValueError("zeta must be finite")
        if not np.all(np.isfinite(sigma2)) or np.any(sigma2 <= 0):
            raise ValueError("sigma2 must be finite and > 0")

    def arrays(self):
        return (np.asarray(self.y0, dtype=float),
                np.asarray(self.zeta, dtype=float),
                np.asarray(self.sigma2, dtype=float))

    def reflected(self) -> "FhtParams":
        """Same law with the drift pointed at the boundary."""
        y0, zeta, sigma2 = self.arrays()
        return FhtParams(y0, -np.abs(zeta), sigma2)


def _scalarize(x):
    x = np.asarray(x)
    return x.item() if x.ndim == 0 else x


def fht_logpdf(t, p: FhtParams):
    """Log-density of the hitting time at ``t > 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("hitting-time density requires t > 0")
    y0, zeta, sigma2 = p.arrays()
    out = (np.log(y0) - 0.5 * (LOG_2PI + np.log(sigma2) + 3.0 * np.log(t))
           - (y0 + zeta * t) ** 2 / (2.0 * sigma2 * t))
    return _scalarize(out)


def _logsf(t, y0, zeta, sigma2):
    # log P(S > t); t == 0 handled by the caller
    sq = np.sqrt(sigma2 * t)
    l1 = log_ndtr((y0 + zeta * t) / sq)
    l2 = -2.0 * y0 * zeta / sigma2 + log_ndtr((zeta * t - y0) / sq)
    ratio = np.minimum(np.exp(l2 - l1), 1.0)
    with np.errstate(divide="ignore"):
        return l1 + np.log1p(-ratio)


def fht_logsf(t, p: FhtParams):
    """Log of the survival function ``P(S > t)``; ``S = inf`` counts as surviving."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("survival requires t >= 0")
    y0, zeta, sigma2 = p.arrays()
    t, y0, zeta, sigma2 = np.broadcast_arrays(t, y0, zeta, sigma2)
    out = np.zeros(t.shape)
    pos = t > 0
    if np.any(pos):
        out[pos] = _logsf(t[pos], y0[pos], zeta[pos], sigma2[pos])
    inf = np.isinf(t)
    if np.any(inf):
        out[inf] = np.log(_cure(y0[inf], zeta[inf], sigma2[inf]))
    return _scalarize(out)


def fht_survival(t, p: FhtParams):
    """Survival function ``P(S > t)``.  Tends to :func:`cure_rate` as ``t -> inf``."""
    return _scalarize(np.exp(fht_logsf(t, p)))


def _cure(y0, zeta, sigma2):
    with np.errstate(over="ignore"):
        return np.where(zeta > 0, -np.expm1(-2.0 * y0 * np.maximum(zeta, 0.0) / sigma2), 0.0)


def cure_rate(p: FhtParams):
    """Probability that the process never reaches the boundary."""
    return _scalarize(_cure(*p.arrays()))


def _log_hit_tail(t, y0, zeta, sigma2):
    """log P(t < S < inf), evaluated through the reflected (proper) law."""
    log_hit = np.where(zeta > 0, -2.0 * y0 * np.maximum(zeta, 0.0) / sigma2, 0.0)
    t = np.asarray(t, dtype=float)
    out = np.array(log_hit + np.zeros(np.broadcast(t, y0).shape))
    pos = np.broadcast_to(t > 0, out.shape)
    if np.any(pos):
        tb, yb, zb, sb = (np.broadcast_to(a, out.shape)[pos] for a in (t, y0, zeta, sigma2))
        out[pos] = out[pos] + _logsf(tb, yb, -np.abs(zb), sb)
    return out


def _solve_log_tail(log_target, y0, zeta, sigma2, log_lo):
    """Vectorised bisection in log-time for ``_log_hit_tail(t) = log_target``.

    ``log_target`` must lie below the tail mass at ``exp(log_lo)``.
    """
    log_target, y0, zeta, sigma2, lo = (
        np.array(a, dtype=float) for a in np.broadcast_arrays(log_target, y0, zeta, sigma2, log_lo))
    mean_scale = np.where(zeta != 0, y0 / np.maximum(np.abs(zeta), 1e-300), y0 ** 2 / sigma2)
    hi = np.maximum(lo + 1.0, np.log(np.maximum(mean_scale, 1e-300)) + 1.0)
    for _ in range(200):
        bad = _log_hit_tail(np.exp(hi), y0, zeta, sigma2) > log_target
        if not np.any(bad):
            break
        hi = np.where(bad, hi + 2.0, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        above = _log_hit_tail(np.exp(mid), y0, zeta, sigma2) > log_target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.all(hi - lo < 1e-14 * np.maximum(1.0, np.abs(hi))):
            break
    return np.exp(0.5 * (lo + hi))


def fht_quantile(q, p: FhtParams):
    """Time ``t`` with ``P(S <= t) = q``.

    Raises
    ------
    InfeasibleQuantileError
        If ``q >= 1 - cure_rate(p)``; the law never accumulates that much mass.
    """
    q = np.asarray(q, dtype=float)
    if np.any(~((q > 0) & (q < 1))):
        raise ValueError("quantile level must lie in (0, 1)")
    y0, zeta, sigma2 = p.arrays()
    cure = _cure(y0, zeta, sigma2)
    if np.any(q >= 1.0 - cure):
        raise InfeasibleQuantileError(
            f"quantile {q} not reachable: hitting probability is {1.0 - cure}")
    # S(t) - cure = 1 - q - cure
    log_target = np.log1p(-(q + cure))
    return _scalarize(_solve_log_tail(log_target, y0, zeta, sigma2, np.log(1e-12)))


def _msh_draw(rng, mean, shape, size):
    """Michael-Schucany-Haas transformation sampler for the inverse-Gaussian law."""
    nu = rng.standard_normal(size)
    y = nu * nu
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        phi = mean * y / (2.0 * shape)
        x = mean / (1.0 + phi + np.sqrt(phi * phi + 2.0 * phi))
        u = rng.random(size)
        out = np.where(u <= mean / (mean + x), x, mean * mean / x)
        # zero drift: one-sided stable (Levy) law
        levy = shape / y
    return np.where(np.isinf(mean), levy, out)


def fht_sample(rng: np.random.Generator, p: FhtParams, size=None):
    """Draw hitting times; never-hitting draws are ``np.inf``.

    For positive drift a Bernoulli(cure) decides whether the path ever hits;
    given a hit, the time follows the law with the reflected drift.
    """
    y0, zeta, sigma2 = p.arrays()
    shape_ = np.broadcast(y0, zeta, sigma2).shape if size is None else size
    y0, zeta, sigma2 = (np.broadcast_to(a, shape_) for a in (y0, zeta, sigma2))
    with np.errstate(divide="ignore"):
        mean = np.where(zeta != 0, y0 / np.abs(zeta), np.inf)
    t = _msh_draw(rng, mean, y0 * y0 / sigma2, shape_)
    cure = _cure(y0, zeta, sigma2)
    if np.any(cure > 0):
        never = rng.random(shape_) < cure
        t = np.where(never, np.inf, t)
    return _scalarize(t)


def fht_sample_truncated(rng: np.random.Generator, p: FhtParams, lower, size=None):
    """Draw ``S`` conditional on ``lower < S < inf`` by inverting the conditional law.

    Raises
    ------
    NoMassError
        If the hitting mass beyond ``lower`` is below ``1e-12``.
    """
    y0, zeta, sigma2 = p.arrays()
    lower = np.asarray(lower, dtype=float)
    if np.any(lower < 0):
        raise ValueError("truncation point must be >= 0")
    shape_ = np.broadcast(y0, zeta, sigma2, lower).shape if size is None else size
    y0, zeta, sigma2, lower = (np.broadcast_to(a, shape_) for a in (y0, zeta, sigma2, lower))
    log_mass = _log_hit_tail(lower, y0, zeta, sigma2)
    if np.any(log_mass < np.log(NO_MASS_TOL)):
        raise NoMassError("hitting mass beyond the truncation point is below 1e-12")
    u = rng.random(shape_)
    log_target = np.log(u) + log_mass
    log_lo = np.log(np.maximum(lower, 1e-12))
    return _scalarize(_solve_log_tail(log_target, y0, zeta, sigma2, log_lo))


@numba.njit(cache=True)
def _simulate_paths(y0, zeta, sigma, dt, horizon, n_paths, seed, bridge, refine):
    np.random.seed(seed)
    out = np.empty(n_paths)
    for k in range(n_paths):
        t = 0.0
        y = y0
        hit = np.inf
        while t < horizon:
            step = dt
            if refine > 0.0:
                far = (y / (refine * sigma)) ** 2
                if far > step:
                    step = far
            if t + step > horizon:
                step = horizon - t
            y_new = y + zeta * step + sigma * np.sqrt(step) * np.random.standard_normal()
            t += step
            if y_new <= 0.0:
                hit = t
                break
            if bridge and np.random.random() < np.exp(-2.0 * y * y_new / (sigma * sigma * step)):
                hit = t
                break
            y = y_new
        out[k] = hit
    return out


def fht_mc_oracle(p: FhtParams, dt: float, horizon: float, n_paths: int,
                  rng: np.random.Generator, bridge: bool = True, refine: float = 6.0):
    """Simulate Wiener paths and record their first passage below zero.

    Parameters
    ----------
    p : FhtParams
        Scalar process parameters.
    dt : float
        Base time step, used whenever the path is close to the boundary.
    horizon : float
        Paths still alive at ``horizon`` are reported as ``np.inf``.
    n_paths : int
        Number of simulated paths.
    rng : numpy.random.Generator
        Source for the simulation seed.
    bridge : bool
        Apply the Brownian-bridge crossing test between grid points, which
        removes the discrete-monitoring bias.
    refine : float
        When positive, a path at level ``y`` takes steps of
        ``max(dt, (y / (refine * sigma))**2)``.  Exact together with ``bridge``
        since Gaussian increments are exact for any step length.  Set to 0 for
        a fixed grid.

    Returns
    -------
    ndarray
        Hitting times, ``np.inf`` for paths that survive the horizon.
    """
    if dt <= 0 or horizon <= 0 or n_paths <= 0:
        raise ValueError("dt, horizon and n_paths must be positive")
    y0, zeta, sigma2 = (float(a) for a in p.arrays())
    seed = int(rng.integers(0, 2**31 - 1))
    return _simulate_paths(y0, zeta, np.sqrt(sigma2), float(dt), float(horizon),
                           int(n_paths), seed, bool(bridge), float(refine))
