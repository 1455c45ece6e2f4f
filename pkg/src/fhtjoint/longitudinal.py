"""Multivariate mixed-effects submodel with detection-limit censoring.

Each biomarker ``q`` has a polynomial fixed-effect mean of ``m_q`` terms plus
a random intercept and slope.  Residuals within a visit are Gaussian with a
subject-specific covariance ``S_i = diag(s_i) D_i diag(s_i)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, log_ndtr, ndtri_exp

from .data import LongitudinalPanel
from .spec import PriorConfig

LOG_2PI = np.log(2.0 * np.pi)
GIBBS_SWEEPS = 20
SINGULAR_COND = 1e12


class NotPositiveDefiniteError(ValueError):
    """A residual covariance that should be positive definite is not."""


class SingularBlockError(np.linalg.LinAlgError):
    """The observed block of a residual covariance is numerically singular."""


@dataclass
class LongitudinalParams:
    """Constrained-scale parameters of the longitudinal submodel.

    Attributes
    ----------
    beta : list of ndarray
        Fixed effects per biomarker, lengths ``m_q``.
    B : ndarray, shape (N, Q, 2)
        Random intercepts and slopes.
    sigma : ndarray, shape (Q, 2)
        Random-effect standard deviations.
    omega : ndarray, shape (Q,)
        Intercept-slope correlation of each biomarker's random effects.
    s : ndarray, shape (N, Q)
        Subject residual standard deviations.
    gamma, psi : ndarray, shape (Q,)
        Mean and SD of the subject log-variances ``log(s**2)``.
    r : ndarray, shape (N,), optional
        Between-biomarker residual correlation (``Q = 2`` only).
    a, b : float, optional
        Beta hyperparameters of the correlation prior (``Q = 2`` only).
    """

    beta: list
    B: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray
    s: np.ndarray
    gamma: np.ndarray
    psi: np.ndarray
    r: np.ndarray | None = None
    a: float | None = None
    b: float | None = None

    @property
    def Q(self) -> int:
        return len(self.beta)

    def re_cov(self, q: int) -> np.ndarray:
        sd = np.diag(self.sigma[q])
        corr = np.array([[1.0, self.omega[q]], [self.omega[q], 1.0]])
        return sd @ corr @ sd

    def residual_cov(self, i: int) -> np.ndarray:
        return residual_cov(self.s[i], None if self.r is None else self.r[i])


def residual_cov(s_i, r_i=None) -> np.ndarray:
    s_i = np.atleast_1d(np.asarray(s_i, dtype=float))
    corr = np.eye(s_i.shape[0])
    if s_i.shape[0] == 2:
        corr[0, 1] = corr[1, 0] = 0.0 if r_i is None else r_i
    return s_i[:, None] * corr * s_i[None, :]


def poly_basis(t, m: int) -> np.ndarray:
    """Columns ``1, t, ..., t**(m-1)``."""
    t = np.asarray(t, dtype=float)
    return t[..., None] ** np.arange(m)


def mean_value(t, beta_q, b_iq):
    """Mean of one biomarker: polynomial fixed effects plus random intercept and slope."""
    beta_q = np.asarray(beta_q, dtype=float)
    out = poly_basis(t, beta_q.shape[0]) @ beta_q + b_iq[0] + b_iq[1] * np.asarray(t, dtype=float)
    return out.item() if np.ndim(out) == 0 else out


def row_means(panel: LongitudinalPanel, params: LongitudinalParams) -> np.ndarray:
    """Mean vector ``mu_ij`` for every panel row, shape ``(n_obs, Q)``."""
    t = panel.time
    mu = np.empty((panel.n_obs, panel.Q))
    for q in range(panel.Q):
        b = params.B[panel.subject, q]
        mu[:, q] = poly_basis(t, len(params.beta[q])) @ params.beta[q] + b[:, 0] + b[:, 1] * t
    return mu


def complete_values(panel: LongitudinalPanel, augmented) -> np.ndarray:
    """Panel values with censored entries replaced by their augmentations."""
    x = np.array(panel.values)
    rows, cols = panel.censored_index()
    augmented = np.asarray(augmented, dtype=float).reshape(-1)
    if augmented.shape[0] != rows.shape[0]:
        raise ValueError(f"expected {rows.shape[0]} augmented values, got {augmented.shape[0]}")
    if np.any(augmented >= panel.lod[cols]):
        raise ValueError("augmented values must lie strictly below their detection limit")
    x[rows, cols] = augmented
    return x


def gaussian_row_logdensity(resid, s, r=None) -> np.ndarray:
    """Q-variate (Q <= 2) Gaussian log-density of residual rows.

    ``resid`` and ``s`` have shape ``(n, Q)``; ``r`` has shape ``(n,)``.
    """
    if np.any(~(s > 0)):
        raise NotPositiveDefiniteError("residual standard deviations must be > 0")
    eps = resid / s
    Q = resid.shape[1]
    out = -0.5 * Q * LOG_2PI - np.log(s).sum(axis=1)
    if Q == 1 or r is None:
        return out - 0.5 * (eps ** 2).sum(axis=1)
    if np.any(~(np.abs(r) < 1)):
        raise NotPositiveDefiniteError("residual correlation must lie in (-1, 1)")
    one_m = 1.0 - r * r
    quad = eps[:, 0] ** 2 - 2.0 * r * eps[:, 0] * eps[:, 1] + eps[:, 1] ** 2
    return out - 0.5 * np.log(one_m) - 0.5 * quad / one_m


def long_logdensity(panel: LongitudinalPanel, params: LongitudinalParams, augmented) -> float:
    """Log-likelihood of the completed biomarker panel given all latent effects."""
    x = complete_values(panel, augmented)
    resid = x - row_means(panel, params)
    s = params.s[panel.subject]
    r = None if params.r is None else params.r[panel.subject]
    return float(gaussian_row_logdensity(resid, s, r).sum())


def random_effects_logdensity(params: LongitudinalParams) -> float:
    """Sum of ``N_2(b_iq; 0, Sigma_q)`` over subjects and biomarkers."""
    total = 0.0
    for q in range(params.Q):
        cov = params.re_cov(q)
        prec = np.linalg.inv(cov)
        b = params.B[:, q, :]
        quad = np.einsum("ij,jk,ik->i", b, prec, b)
        total += float(np.sum(-LOG_2PI - 0.5 * np.linalg.slogdet(cov)[1] - 0.5 * quad))
    return total


def _half_cauchy_logpdf(x, scale):
    return np.log(2.0 / (np.pi * scale)) - np.log1p((x / scale) ** 2)


def _normal_logpdf(x, mean, sd):
    return -0.5 * LOG_2PI - np.log(sd) - 0.5 * ((x - mean) / sd) ** 2


def lkj2_logpdf(rho, shape):
    """LKJ density of a 2x2 correlation matrix, as a density on its off-diagonal."""
    # (rho + 1) / 2 ~ Beta(shape, shape)
    return (shape - 1.0) * np.log1p(-rho * rho) - (2.0 * shape - 1.0) * np.log(2.0) - betaln(shape, shape)


def prior_logdensity(params: LongitudinalParams, priors: PriorConfig = PriorConfig()) -> float:
    """Log prior of the longitudinal parameters; ``-inf`` outside the support.

    The subject log-variances ``log(s**2)`` get their hierarchical Normal
    density here, as a density in log-variance coordinates.  Random effects
    are not included, see :func:`random_effects_logdensity`.
    """
    sigma = np.asarray(params.sigma, dtype=float)
    psi = np.asarray(params.psi, dtype=float)
    s = np.asarray(params.s, dtype=float)
    omega = np.asarray(params.omega, dtype=float)
    if np.any(~(sigma > 0)) or np.any(~(psi > 0)) or np.any(~(s > 0)) or np.any(~(np.abs(omega) < 1)):
        return -np.inf
    if params.r is not None:
        if np.any(~(np.abs(params.r) < 1)) or not (params.a > 0) or not (params.b > 0):
            return -np.inf
    lp = 0.0
    for beta_q in params.beta:
        lp += float(np.sum(_normal_logpdf(np.asarray(beta_q), 0.0, priors.beta_scale)))
    lp += float(np.sum(_half_cauchy_logpdf(sigma, priors.re_scale)))
    lp += float(np.sum(lkj2_logpdf(omega, priors.lkj_shape)))
    logvar = np.log(s ** 2)
    lp += float(np.sum(_normal_logpdf(logvar, params.gamma[None, :], psi[None, :])))
    lp += float(np.sum(_normal_logpdf(np.asarray(params.gamma), 0.0, priors.gamma_scale)))
    lp += float(np.sum(_half_cauchy_logpdf(psi, priors.psi_scale)))
    if params.r is not None:
        a, b = params.a, params.b
        w = 0.5 * (np.asarray(params.r) + 1.0)
        lp += float(np.sum((a - 1.0) * np.log(w) + (b - 1.0) * np.log1p(-w) - betaln(a, b) - np.log(2.0)))
        lp += np.log(priors.corr_rate_a) - priors.corr_rate_a * a
        lp += np.log(priors.corr_rate_b) - priors.corr_rate_b * b
    return lp


def truncnorm_upper(rng: np.random.Generator, mean, sd, upper):
    """Gaussian draws conditioned to lie strictly below ``upper`` (inverse CDF, log scale)."""
    mean, sd, upper = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mean, sd, upper)))
    alpha = (upper - mean) / sd
    log_mass = log_ndtr(alpha)
    u = rng.random(mean.shape)
    z = ndtri_exp(np.log(u) + log_mass)
    x = mean + sd * z
    x = np.where(x < upper, x, np.nextafter(upper, -np.inf))
    return x.item() if x.ndim == 0 else x


def conditional_gaussian(mu, S, flags, x_obs):
    """Mean and covariance of the flagged block given the unflagged entries."""
    flags = np.asarray(flags, dtype=bool)
    c, o = np.nonzero(flags)[0], np.nonzero(~flags)[0]
    mu = np.asarray(mu, dtype=float)
    S = np.asarray(S, dtype=float)
    if o.size == 0:
        return mu[c], S[np.ix_(c, c)]
    S_o = S[np.ix_(o, o)]
    if np.linalg.cond(S_o) > SINGULAR_COND:
        raise SingularBlockError("observed covariance block is numerically singular")
    S_co = S[np.ix_(c, o)]
    gain = np.linalg.solve(S_o, S_co.T).T
    mean = mu[c] + gain @ (np.asarray(x_obs, dtype=float) - mu[o])
    cov = S[np.ix_(c, c)] - gain @ S_co.T
    return mean, cov


def impute_censored_conditional(rng: np.random.Generator, values, flags, mu, S, lod):
    """Impute the flagged entries of one visit row.

    Draws from the Gaussian of the flagged block conditional on the observed
    entries, truncated above at the detection limits.  One flagged entry is
    drawn by inverse CDF; several by Gibbs sweeps over univariate truncated
    conditionals.

    Returns
    -------
    ndarray
        Copy of ``values`` with flagged entries replaced.
    """
    values = np.array(values, dtype=float)
    flags = np.asarray(flags, dtype=bool)
    lod = np.broadcast_to(np.asarray(lod, dtype=float), values.shape)
    if not flags.any():
        raise ValueError("row has no censored entry")
    c = np.nonzero(flags)[0]
    mean, cov = conditional_gaussian(mu, S, flags, values[~flags])
    upper = lod[c]
    if c.size == 1:
        values[c] = truncnorm_upper(rng, mean[0], np.sqrt(cov[0, 0]), upper[0])
        return values
    sd = np.sqrt(np.diag(cov))
    x = truncnorm_upper(rng, mean, sd, upper)
    for _ in range(GIBBS_SWEEPS):
        for k in range(c.size):
            m_k, v_k = _univariate_conditional(mean, cov, k, x)
            x[k] = truncnorm_upper(rng, m_k, np.sqrt(v_k), upper[k])
    values[c] = x
    return values


def _univariate_conditional(mean, cov, k, x):
    others = np.arange(mean.shape[0]) != k
    gain = np.linalg.solve(cov[np.ix_(others, others)], cov[others, k])
    m = mean[k] + gain @ (x[others] - mean[others])
    v = cov[k, k] - gain @ cov[others, k]
    return m, v


def impute_rows(rng: np.random.Generator, values, flags, mu, s, r=None, lod=None):
    """Vectorised conditional truncated-Gaussian imputation for Q <= 2.

    Parameters
    ----------
    values, flags, mu, s : ndarray, shape (n, Q)
        Stored values, censoring flags, row means and residual SDs.
    r : ndarray, shape (n,), optional
        Residual correlations when ``Q = 2``.
    lod : ndarray, shape (Q,)

    Returns
    -------
    ndarray
        Completed values; unflagged entries are passed through.
    """
    x = np.array(values, dtype=float)
    flags = np.asarray(flags, dtype=bool)
    lod = np.broadcast_to(np.asarray(lod, dtype=float), x.shape)
    Q = x.shape[1]
    if Q == 1 or r is None:
        rows = flags
        x[rows] = truncnorm_upper(rng, mu[rows], s[rows], lod[rows])
        return x
    r = np.asarray(r, dtype=float)
    for q in (0, 1):
        o = 1 - q
        one = flags[:, q] & ~flags[:, o]
        if np.any(one):
            m = mu[one, q] + r[one] * s[one, q] * (x[one, o] - mu[one, o]) / s[one, o]
            sd = s[one, q] * np.sqrt(1.0 - r[one] ** 2)
            x[one, q] = truncnorm_upper(rng, m, sd, lod[one, q])
    both = flags[:, 0] & flags[:, 1]
    if np.any(both):
        mb, sb, rb, lb = mu[both], s[both], r[both], lod[both]
        xb = truncnorm_upper(rng, mb, sb, lb)
        cond_sd = sb * np.sqrt(1.0 - rb ** 2)[:, None]
        for _ in range(GIBBS_SWEEPS):
            for q in (0, 1):
                o = 1 - q
                m = mb[:, q] + rb * sb[:, q] * (xb[:, o] - mb[:, o]) / sb[:, o]
                xb[:, q] = truncnorm_upper(rng, m, cond_sd[:, q], lb[:, q])
        x[both] = xb
    return x
