"""Threshold regression linking longitudinal latents to the hitting-time law.

The design row of subject ``i`` is, per biomarker, the standardised random
intercept, standardised random slope and standardised log residual variance,
preceded by an intercept and followed by the baseline covariates::

    W_i = (1, b'_i11, b'_i12, s'_i1, ..., b'_iQ1, b'_iQ2, s'_iQ, Z_i)

with ``log(y0_i) = alpha @ W_i`` and ``zeta_i = eta @ W_i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SurvivalRecord
from .fht import FhtParams, fht_logpdf


class ConstraintViolationError(ValueError):
    """An augmented event time does not exceed its censoring time."""


class DegenerateSDError(ValueError):
    """Empirical standardisation of a constant vector."""


@dataclass(frozen=True)
class SurvivalCoefficients:
    """Regression coefficients for ``log(y0)`` (alpha) and the drift (eta)."""

    alpha: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        if alpha.shape != eta.shape or alpha.ndim != 1:
            raise ValueError("alpha and eta must be vectors of equal length")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "eta", eta)


def build_design(B, s, sigma, gamma, psi, Z=None) -> np.ndarray:
    """Design rows for all subjects.

    Parameters
    ----------
    B : ndarray, shape (N, Q, 2)
        Random intercepts and slopes.
    s : ndarray, shape (N, Q)
        Residual standard deviations.
    sigma : ndarray, shape (Q, 2)
        Random-effect scales used for standardisation.
    gamma, psi : ndarray, shape (Q,)
        Location and scale of the log residual variances.
    Z : ndarray, shape (N, K), optional
        Baseline covariates, appended unchanged.
    """
    B = np.asarray(B, dtype=float)
    s = np.asarray(s, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if np.any(~(sigma > 0)) or np.any(~(psi > 0)):
        raise ValueError("standardising scales must be > 0")
    N, Q, _ = B.shape
    b_std = B / sigma[None, :, :]
    s_std = (np.log(s ** 2) - np.asarray(gamma)[None, :]) / psi[None, :]
    blocks = np.concatenate([b_std, s_std[:, :, None]], axis=2).reshape(N, 3 * Q)
    Z = np.zeros((N, 0)) if Z is None else np.asarray(Z, dtype=float).reshape(N, -1)
    return np.hstack([np.ones((N, 1)), blocks, Z])


def build_design_row(B_i, s_i, sigma, gamma, psi, Z_i=None) -> np.ndarray:
    """Design row of one subject; see :func:`build_design`."""
    Z = None if Z_i is None else np.atleast_2d(np.asarray(Z_i, dtype=float))
    return build_design(np.asarray(B_i)[None], np.asarray(s_i)[None], sigma, gamma, psi, Z)[0]


def link_latents(W, coef: SurvivalCoefficients) -> FhtParams:
    """Map design rows to hitting-time parameters with unit process variance."""
    W = np.asarray(W, dtype=float)
    if W.shape[-1] != coef.alpha.shape[0]:
        raise ValueError(f"design row has {W.shape[-1]} entries, coefficients {coef.alpha.shape[0]}")
    return FhtParams(np.exp(W @ coef.alpha), W @ coef.eta, 1.0)


def surv_logdensity(rec: SurvivalRecord, p: FhtParams, augmented_time=None) -> float:
    """Log-density of one subject's (possibly augmented) event time."""
    if rec.event == 1:
        return float(fht_logpdf(rec.time, p))
    if augmented_time is None:
        raise ConstraintViolationError("censored record needs an augmented event time")
    if not augmented_time > rec.time:
        raise ConstraintViolationError(
            f"augmented time {augmented_time} does not exceed censoring time {rec.time}")
    return float(fht_logpdf(augmented_time, p))


def empirical_standardize(x, axis=0):
    """Centre by the sample mean and scale by the (N-1) sample SD."""
    x = np.asarray(x, dtype=float)
    sd = x.std(axis=axis, ddof=1, keepdims=True)
    if np.any(~(sd > 0)):
        raise DegenerateSDError("cannot standardise a constant vector")
    return (x - x.mean(axis=axis, keepdims=True)) / sd
