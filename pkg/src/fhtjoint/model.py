"""Joint log-posterior on the unconstrained scale, with analytic gradient.

Coordinates of the unconstrained vector:

========== =================================== ==============================
block      constrained quantity                transform
========== =================================== ==============================
beta       fixed effects                       identity
log_sigma  random-effect SDs ``sigma[q, p]``   log
atanh_om   random-effect correlation ``om[q]`` atanh
z          random effects ``b[i, q, p]``       ``b = sigma z``
logvar     ``log(s[i, q]**2)``                 identity
atanh_r    residual correlation ``r[i]``       atanh
gamma      log-variance location               identity
log_psi    log-variance scale                  log
log_ab     Beta hyperparameters ``a, b``       log
alpha/eta  threshold-regression coefficients   identity
u          censored biomarker values           ``x = L - exp(u)``
v          censored event times                ``t = C + exp(v)``
========== =================================== ==============================
"""
from __future__ import annotations

import numpy as np
from numba import njit
from scipy.special import betaln, digamma, expit

from .data import Dataset
from .longitudinal import LOG_2PI, LongitudinalParams, lkj2_logpdf, poly_basis
from .spec import ModelSpec, PriorConfig
from .threshold import empirical_standardize

LOG2 = np.log(2.0)


_BLOCK_ORDER = ("beta", "log_sigma", "atanh_om", "z", "logvar", "atanh_r", "gamma", "log_psi",
                "log_ab", "alpha", "eta", "u", "v")


class Layout:
    """Named blocks of a flat parameter vector."""

    def __init__(self, blocks):
        self.blocks = []
        self.slices = {}
        self.shapes = {}
        start = 0
        for name, shape in blocks:
            shape = tuple(shape)
            size = int(np.prod(shape)) if shape else 1
            self.blocks.append(name)
            self.slices[name] = slice(start, start + size)
            self.shapes[name] = shape
            start += size
        self.size = start

    def __contains__(self, name):
        return name in self.slices

    def get(self, vec, name):
        """Block ``name`` of ``vec`` (last axis), reshaped."""
        vec = np.asarray(vec)
        part = vec[..., self.slices[name]]
        return part.reshape(vec.shape[:-1] + self.shapes[name])

    def unpack(self, vec) -> dict:
        return {name: self.get(vec, name) for name in self.blocks}

    def pack(self, values: dict) -> np.ndarray:
        out = np.empty(self.size)
        for name in self.blocks:
            out[self.slices[name]] = np.asarray(values[name], dtype=float).reshape(-1)
        return out

    def element_names(self, labels=None) -> list[str]:
        labels = labels or {}
        names = []
        for name in self.blocks:
            if name in labels:
                names.extend(labels[name])
                continue
            shape = self.shapes[name]
            if not shape:
                names.append(name)
            else:
                names.extend(f"{name}[{','.join(str(k + 1) for k in idx)}]"
                             for idx in np.ndindex(*shape))
        return names


def _softplus(x):
    return np.logaddexp(0.0, x)


def _log_sech2(x):
    """log(1 - tanh(x)**2), stable for large |x|."""
    ax = np.abs(x)
    return 2.0 * (LOG2 - ax - np.log1p(np.exp(-2.0 * ax)))


def _half_cauchy_log_scale(log_x, scale):
    """Half-Cauchy log-density on ``x = exp(log_x)`` plus the log Jacobian."""
    ratio2 = np.exp(2.0 * (log_x - np.log(scale)))
    value = np.log(2.0 / (np.pi * scale)) - np.log1p(ratio2) + log_x
    grad = 1.0 - 2.0 * ratio2 / (1.0 + ratio2)
    return value, grad


@njit(cache=True, error_model="numpy")
def _nb_log_sech2(x):
    ax = abs(x)
    return 2.0 * (LOG2 - ax - np.log1p(np.exp(-2.0 * ax)))


@njit(cache=True, error_model="numpy")
def _nb_half_cauchy_log_scale(log_x, scale):
    ratio2 = np.exp(2.0 * (log_x - np.log(scale)))
    return (np.log(2.0 / (np.pi * scale)) - np.log1p(ratio2) + log_x,
            1.0 - 2.0 * ratio2 / (1.0 + ratio2))


@njit(cache=True, error_model="numpy")
def _joint_kernel(theta, grad, off, N, Q, beta_off, subj, t, x_obs, cens_rows, cens_cols,
                  cens_lod, survival, Z, event_time, cens_pos, hyper):
    """Log-posterior terms shared by every model variant, with gradient.

    ``off`` gives the start of each unconstrained block (see ``_BLOCK_ORDER``;
    -1 when absent), ``cens_pos[i]`` the position of subject ``i`` in the
    censored-time block (-1 for events), and ``hyper`` the prior constants
    ``(beta_scale, re_scale, lkj_shape, lkj_const, gamma_scale, psi_scale,
    coef_scale)``.  The Beta prior on the residual correlations and its
    hyperpriors are added by the caller.  ``grad`` is accumulated in place.
    """
    o_beta, o_lsig, o_om, o_z, o_h, o_ar, o_gam, o_lpsi = off[0], off[1], off[2], off[3], off[4], off[5], off[6], off[7]
    o_alpha, o_eta, o_u, o_v = off[9], off[10], off[11], off[12]
    beta_scale, re_scale, lkj_shape, lkj_const, gamma_scale, psi_scale, coef_scale = (
        hyper[0], hyper[1], hyper[2], hyper[3], hyper[4], hyper[5], hyper[6])
    value = 0.0

    sig = np.empty((Q, 2))
    om = np.empty(Q)
    c = np.empty(Q)
    psi = np.empty(Q)
    for q in range(Q):
        for p in range(2):
            sig[q, p] = np.exp(theta[o_lsig + 2 * q + p])
        om[q] = np.tanh(theta[o_om + q])
        c[q] = 1.0 / np.cosh(theta[o_om + q])
        psi[q] = np.exp(theta[o_lpsi + q])

    z1 = np.empty((N, Q))
    z2 = np.empty((N, Q))
    gstd = np.empty((N, Q))
    b1 = np.empty((N, Q))
    b2 = np.empty((N, Q))
    h = np.empty((N, Q))
    s_inv = np.empty((N, Q))
    for i in range(N):
        for q in range(Q):
            z1[i, q] = theta[o_z + 2 * (i * Q + q)]
            gstd[i, q] = theta[o_z + 2 * (i * Q + q) + 1]
            z2[i, q] = (gstd[i, q] - om[q] * z1[i, q]) / c[q]
            b1[i, q] = sig[q, 0] * z1[i, q]
            b2[i, q] = sig[q, 1] * gstd[i, q]
            h[i, q] = theta[o_h + i * Q + q]
            s_inv[i, q] = np.exp(-0.5 * h[i, q])
    r = np.zeros(N)
    log_dd = np.zeros(N)
    if Q == 2:
        for i in range(N):
            r[i] = np.tanh(theta[o_ar + i])
            log_dd[i] = _nb_log_sech2(theta[o_ar + i])

    # completed biomarker values: x = L - exp(u), log Jacobian u
    x = x_obs.copy()
    n_cens = cens_rows.shape[0]
    exp_u = np.empty(n_cens)
    for k in range(n_cens):
        exp_u[k] = np.exp(theta[o_u + k])
        x[cens_rows[k], cens_cols[k]] = cens_lod[k] - exp_u[k]

    # ---- longitudinal likelihood ----
    n = x.shape[0]
    dl_dx = np.empty((n, Q))
    g_b1 = np.zeros((N, Q))
    g_b2 = np.zeros((N, Q))
    g_r = np.zeros(N)
    eps = np.empty(Q)
    d_eps = np.empty(Q)
    for j in range(n):
        i = subj[j]
        tj = t[j]
        for q in range(Q):
            mu = b1[i, q] + b2[i, q] * tj
            tk = 1.0
            for k in range(beta_off[q], beta_off[q + 1]):
                mu += theta[o_beta + k] * tk
                tk *= tj
            eps[q] = (x[j, q] - mu) * s_inv[i, q]
            value -= 0.5 * h[i, q]
        if Q == 1:
            value -= 0.5 * LOG_2PI + 0.5 * eps[0] * eps[0]
            d_eps[0] = -eps[0]
        else:
            rr = r[i]
            dd = np.exp(log_dd[i])
            quad = eps[0] * eps[0] - 2.0 * rr * eps[0] * eps[1] + eps[1] * eps[1]
            value -= LOG_2PI + 0.5 * log_dd[i] + 0.5 * quad / dd
            d_eps[0] = -(eps[0] - rr * eps[1]) / dd
            d_eps[1] = -(eps[1] - rr * eps[0]) / dd
            g_r[i] += rr / dd + (eps[0] * eps[1] * dd - rr * quad) / (dd * dd)
        for q in range(Q):
            de = d_eps[q] * s_inv[i, q]  # d/dx = -d/dmu
            dl_dx[j, q] = de
            g_b1[i, q] -= de
            g_b2[i, q] -= de * tj
            grad[o_h + i * Q + q] += -0.5 - 0.5 * eps[q] * d_eps[q]
            tk = 1.0
            for k in range(beta_off[q], beta_off[q + 1]):
                grad[o_beta + k] -= de * tk
                tk *= tj
    if Q == 2:
        for i in range(N):
            grad[o_ar + i] += g_r[i] * np.exp(log_dd[i])
    for k in range(n_cens):
        grad[o_u + k] += -dl_dx[cens_rows[k], cens_cols[k]] * exp_u[k] + 1.0
        value += theta[o_u + k]

    g_z1 = np.empty((N, Q))
    g_gstd = np.empty((N, Q))
    for i in range(N):
        for q in range(Q):
            g_z1[i, q] = sig[q, 0] * g_b1[i, q]
            g_gstd[i, q] = sig[q, 1] * g_b2[i, q]
            grad[o_lsig + 2 * q] += g_b1[i, q] * b1[i, q]
            grad[o_lsig + 2 * q + 1] += g_b2[i, q] * b2[i, q]

    # ---- threshold regression ----
    w2 = coef_scale * coef_scale
    if survival:
        D = 1 + 3 * Q + Z.shape[1]
        W = np.empty(D)
        for i in range(N):
            W[0] = 1.0
            for q in range(Q):
                W[1 + 3 * q] = z1[i, q]
                W[2 + 3 * q] = gstd[i, q]
                W[3 + 3 * q] = (h[i, q] - theta[o_gam + q]) / psi[q]
            for k in range(Z.shape[1]):
                W[1 + 3 * Q + k] = Z[i, k]
            log_y0 = 0.0
            zeta = 0.0
            for k in range(D):
                log_y0 += W[k] * theta[o_alpha + k]
                zeta += W[k] * theta[o_eta + k]
            y0 = np.exp(log_y0)
            tau = event_time[i]
            kc = cens_pos[i]
            if kc >= 0:
                exp_v = np.exp(theta[o_v + kc])
                tau += exp_v
            A = y0 + zeta * tau
            value += log_y0 - 0.5 * LOG_2PI - 1.5 * np.log(tau) - A * A / (2.0 * tau)
            d_ly0 = 1.0 - A * y0 / tau
            d_zeta = -A
            if kc >= 0:
                d_tau = -1.5 / tau - A * zeta / tau + A * A / (2.0 * tau * tau)
                grad[o_v + kc] += d_tau * exp_v + 1.0
                value += theta[o_v + kc]
            for k in range(D):
                grad[o_alpha + k] += W[k] * d_ly0
                grad[o_eta + k] += W[k] * d_zeta
            for q in range(Q):
                g_z1[i, q] += d_ly0 * theta[o_alpha + 1 + 3 * q] + d_zeta * theta[o_eta + 1 + 3 * q]
                g_gstd[i, q] += d_ly0 * theta[o_alpha + 2 + 3 * q] + d_zeta * theta[o_eta + 2 + 3 * q]
                g_s = d_ly0 * theta[o_alpha + 3 + 3 * q] + d_zeta * theta[o_eta + 3 + 3 * q]
                grad[o_h + i * Q + q] += g_s / psi[q]
                grad[o_gam + q] -= g_s / psi[q]
                grad[o_lpsi + q] -= g_s * W[3 + 3 * q]
        for k in range(D):
            for o in (o_alpha, o_eta):
                value += -0.5 * LOG_2PI - np.log(coef_scale) - 0.5 * theta[o + k] ** 2 / w2
                grad[o + k] -= theta[o + k] / w2

    # standardised effects: (z1, gstd) ~ N(0, [[1, om], [om, 1]])
    for q in range(Q):
        log_c = 0.5 * _nb_log_sech2(theta[o_om + q])
        for i in range(N):
            w = z2[i, q]
            grad[o_z + 2 * (i * Q + q)] += g_z1[i, q] - z1[i, q] + w * om[q] / c[q]
            grad[o_z + 2 * (i * Q + q) + 1] += g_gstd[i, q] - w / c[q]
            grad[o_om + q] += z1[i, q] * w * c[q] - w * w * om[q] + om[q]
            value += -LOG_2PI - log_c - 0.5 * (z1[i, q] ** 2 + w * w)

    # ---- priors ----
    for q in range(Q):
        lpsi = theta[o_lpsi + q]
        gam = theta[o_gam + q]
        for i in range(N):
            dev = (h[i, q] - gam) / psi[q]
            value += -0.5 * LOG_2PI - lpsi - 0.5 * dev * dev
            grad[o_h + i * Q + q] -= dev / psi[q]
            grad[o_gam + q] += dev / psi[q]
            grad[o_lpsi + q] += -1.0 + dev * dev
        value += -0.5 * LOG_2PI - np.log(gamma_scale) - 0.5 * gam * gam / (gamma_scale * gamma_scale)
        grad[o_gam + q] -= gam / (gamma_scale * gamma_scale)
        hv, hg = _nb_half_cauchy_log_scale(lpsi, psi_scale)
        value += hv
        grad[o_lpsi + q] += hg
        for p in range(2):
            hv, hg = _nb_half_cauchy_log_scale(theta[o_lsig + 2 * q + p], re_scale)
            value += hv
            grad[o_lsig + 2 * q + p] += hg
        value += lkj_shape * _nb_log_sech2(theta[o_om + q]) + lkj_const
        grad[o_om + q] += -2.0 * lkj_shape * om[q]
    l2 = beta_scale * beta_scale
    for k in range(beta_off[Q]):
        value += -0.5 * LOG_2PI - np.log(beta_scale) - 0.5 * theta[o_beta + k] ** 2 / l2
        grad[o_beta + k] -= theta[o_beta + k] / l2
    return value


def survival_terms(W, alpha, eta, tau):
    """Hitting-time log-density of ``tau`` with ``log y0 = W alpha``, ``zeta = W eta``.

    Returns the per-subject values and partial derivatives with respect to
    ``log y0``, ``zeta`` and ``tau``.
    """
    log_y0 = W @ alpha
    zeta = W @ eta
    y0 = np.exp(log_y0)
    A = y0 + zeta * tau
    value = log_y0 - 0.5 * LOG_2PI - 1.5 * np.log(tau) - A * A / (2.0 * tau)
    d_log_y0 = 1.0 - A * y0 / tau
    d_zeta = -A
    d_tau = -1.5 / tau - A * zeta / tau + A * A / (2.0 * tau * tau)
    return value, d_log_y0, d_zeta, d_tau


class JointModel:
    """Unconstrained log-posterior of the joint (or longitudinal-only) model.

    Parameters
    ----------
    data : Dataset
    spec : ModelSpec
    survival : bool
        Include the threshold-regression component.  ``False`` gives the
        first stage of the two-stage baseline.
    """

    def __init__(self, data: Dataset, spec: ModelSpec, survival: bool = True):
        panel, surv = data.panel, data.survival
        if panel.Q != spec.Q:
            raise ValueError(f"panel has {panel.Q} biomarkers, spec expects {spec.Q}")
        if not np.array_equal(np.asarray(panel.lod), np.asarray(spec.lod)):
            raise ValueError("panel detection limits disagree with the model spec")
        if survival and surv.n_covariates != spec.n_covariates:
            raise ValueError(
                f"survival data has {surv.n_covariates} covariates, spec expects {spec.n_covariates}")
        self.data = data
        self.spec = spec
        self.priors: PriorConfig = spec.priors
        self.survival = survival
        self.N, self.Q = panel.N, panel.Q
        self.subject = panel.subject
        self.t = panel.time
        self.bases = [poly_basis(panel.time, m) for m in spec.degrees]
        self.beta_offsets = np.concatenate([[0], np.cumsum(spec.degrees)])
        self.x_obs = np.array(panel.values)
        self.cens_rows, self.cens_cols = panel.censored_index()
        self.cens_lod = panel.lod[self.cens_cols]
        self.n_cens_x = self.cens_rows.shape[0]
        self.event_time = np.array(surv.time)
        self.cens_subjects = np.nonzero(surv.event == 0)[0]
        Z = np.array(surv.covariates)
        if spec.standardize_covariates and Z.shape[1] > 0:
            Z = empirical_standardize(Z)
        self.Z = Z

        Q, N = self.Q, self.N
        D = spec.n_coef
        blocks = [("beta", (int(sum(spec.degrees)),)), ("log_sigma", (Q, 2)), ("atanh_om", (Q,)),
                  ("z", (N, Q, 2)), ("logvar", (N, Q))]
        if Q == 2:
            blocks.append(("atanh_r", (N,)))
        blocks += [("gamma", (Q,)), ("log_psi", (Q,))]
        if Q == 2:
            blocks.append(("log_ab", (2,)))
        if survival:
            blocks += [("alpha", (D,)), ("eta", (D,))]
        blocks.append(("u", (self.n_cens_x,)))
        if survival:
            blocks.append(("v", (self.cens_subjects.shape[0],)))
        self.layout = Layout(blocks)

        cblocks = [("beta", (int(sum(spec.degrees)),)), ("sigma", (Q, 2)), ("omega", (Q,)),
                   ("gamma", (Q,)), ("psi", (Q,))]
        if Q == 2:
            cblocks += [("a", ()), ("b", ())]
        if survival:
            cblocks += [("alpha", (D,)), ("eta", (D,))]
        cblocks += [("B", (N, Q, 2)), ("logvar", (N, Q))]
        if Q == 2:
            cblocks.append(("r", (N,)))
        cblocks.append(("x_cens", (self.n_cens_x,)))
        if survival:
            cblocks.append(("t_cens", (self.cens_subjects.shape[0],)))
        self.constrained_layout = Layout(cblocks)
        beta_labels = [f"beta[{q + 1},{k + 1}]" for q, m in enumerate(spec.degrees) for k in range(m)]
        omega_labels = [f"omega[{q + 1}][1,2]" for q in range(Q)]
        self.param_names = self.constrained_layout.element_names(
            {"beta": beta_labels, "omega": omega_labels})

        # flat inputs of the compiled kernel
        self._offsets = np.array([self.layout.slices[b].start if b in self.layout else -1
                                  for b in _BLOCK_ORDER], dtype=np.int64)
        self._beta_off = self.beta_offsets.astype(np.int64)
        self._cens_pos = np.full(N, -1, dtype=np.int64)
        self._cens_pos[self.cens_subjects] = np.arange(self.cens_subjects.shape[0])
        pr = self.priors
        kappa = pr.lkj_shape
        self._hyper = np.array([pr.beta_scale, pr.re_scale, kappa,
                                -(2.0 * kappa - 1.0) * LOG2 - betaln(kappa, kappa),
                                pr.gamma_scale, pr.psi_scale, pr.coef_scale])
        self.Z = np.ascontiguousarray(self.Z, dtype=float).reshape(N, -1)

    @property
    def dim(self) -> int:
        return self.layout.size

    @property
    def metric_groups(self) -> list:
        """Coordinate groups for block-dense mass adaptation.

        One group holds every global parameter; each subject gets a group
        with its standardised effects, log-variances and residual correlation.
        """
        L = self.layout
        idx = np.arange(L.size)
        local = {"z", "logvar", "atanh_r", "u", "v"}
        glob = np.concatenate([idx[L.slices[b]] for b in L.blocks if b not in local])
        per_subject = [idx[L.slices["z"]].reshape(self.N, -1), idx[L.slices["logvar"]].reshape(self.N, -1)]
        if self.Q == 2:
            per_subject.append(idx[L.slices["atanh_r"]].reshape(self.N, 1))
        return [glob[None, :], np.hstack(per_subject)]

    # ------------------------------------------------------------------
    def constrain(self, theta) -> np.ndarray:
        """Flat constrained vector (see ``constrained_layout``) for one or many states."""
        theta = np.asarray(theta, dtype=float)
        L = self.layout
        lead = theta.shape[:-1]
        sigma = np.exp(L.get(theta, "log_sigma"))
        om = np.tanh(L.get(theta, "atanh_om"))
        z = L.get(theta, "z")
        B = np.empty(z.shape)
        B[..., 0] = sigma[..., None, :, 0] * z[..., 0]
        B[..., 1] = sigma[..., None, :, 1] * z[..., 1]
        out = {"beta": L.get(theta, "beta"), "sigma": sigma, "omega": om,
               "gamma": L.get(theta, "gamma"), "psi": np.exp(L.get(theta, "log_psi")),
               "B": B, "logvar": L.get(theta, "logvar"),
               "x_cens": self.cens_lod - np.exp(L.get(theta, "u"))}
        if self.Q == 2:
            ab = np.exp(L.get(theta, "log_ab"))
            out["a"], out["b"] = ab[..., 0], ab[..., 1]
            out["r"] = np.tanh(L.get(theta, "atanh_r"))
        if self.survival:
            out["alpha"] = L.get(theta, "alpha")
            out["eta"] = L.get(theta, "eta")
            out["t_cens"] = self.event_time[self.cens_subjects] + np.exp(L.get(theta, "v"))
        CL = self.constrained_layout
        flat = np.empty(lead + (CL.size,))
        for name in CL.blocks:
            flat[..., CL.slices[name]] = np.asarray(out[name]).reshape(lead + (-1,))
        return flat

    def unconstrain(self, values: dict) -> np.ndarray:
        """Inverse of :meth:`constrain` for a single state given as constrained blocks."""
        sigma = np.asarray(values["sigma"], dtype=float)
        om = np.asarray(values["omega"], dtype=float)
        B = np.asarray(values["B"], dtype=float)
        z = np.empty(B.shape)
        z[..., 0] = B[..., 0] / sigma[None, :, 0]
        z[..., 1] = B[..., 1] / sigma[None, :, 1]
        out = {"beta": values["beta"], "log_sigma": np.log(sigma), "atanh_om": np.arctanh(om),
               "z": z, "logvar": values["logvar"], "gamma": values["gamma"],
               "log_psi": np.log(values["psi"]),
               "u": np.log(self.cens_lod - np.asarray(values["x_cens"], dtype=float))}
        if self.Q == 2:
            out["atanh_r"] = np.arctanh(values["r"])
            out["log_ab"] = np.log([values["a"], values["b"]])
        if self.survival:
            out["alpha"] = values["alpha"]
            out["eta"] = values["eta"]
            out["v"] = np.log(np.asarray(values["t_cens"], dtype=float)
                              - self.event_time[self.cens_subjects])
        return self.layout.pack(out)

    def initial_state(self, rng: np.random.Generator, radius: float = 1.0) -> np.ndarray:
        """Starting point with the longitudinal blocks at crude moment estimates.

        Random effects and residual variances come from per-subject least
        squares on the residuals of a pooled polynomial fit, with censored
        entries at their limit; hyperparameters are their sample moments.
        Every other coordinate (survival coefficients, augmentations, Beta
        shapes) is uniform on ``(-radius, radius)``.
        """
        theta = rng.uniform(-radius, radius, self.dim)
        d = self.constrained_layout.unpack(self.constrain(theta))
        N, Q, subj, t = self.N, self.Q, self.subject, self.t
        n = np.bincount(subj, minlength=N).astype(float)
        St, Stt = np.bincount(subj, t, N), np.bincount(subj, t * t, N)
        den = n * Stt - St ** 2
        beta, B, logvar = [], np.zeros((N, Q, 2)), np.zeros((N, Q))
        resid = np.zeros_like(self.x_obs)
        for q in range(Q):
            X = self.bases[q]
            bq = np.linalg.lstsq(X, self.x_obs[:, q], rcond=None)[0]
            e = self.x_obs[:, q] - X @ bq
            Se, Ste = np.bincount(subj, e, N), np.bincount(subj, t * e, N)
            slope = np.where(den > 1e-12, (n * Ste - St * Se) / np.where(den > 1e-12, den, 1.0), 0.0)
            B[:, q, 1] = slope
            B[:, q, 0] = (Se - slope * St) / n
            resid[:, q] = e - B[subj, q, 0] - B[subj, q, 1] * t
            ss = np.bincount(subj, resid[:, q] ** 2, N)
            pooled = ss.sum() / max(self.t.shape[0] - 2 * N, 1)
            var = np.where(n > 2, ss / np.maximum(n - 2, 1), pooled)
            logvar[:, q] = np.log(np.maximum(var, 1e-3 * pooled))
            beta.append(bq)
        d["beta"] = np.concatenate(beta)
        d["B"] = B
        d["sigma"] = np.maximum(B.std(axis=0), 1e-3)
        d["omega"] = np.array([np.clip(np.corrcoef(B[:, q].T)[0, 1], -0.9, 0.9) if N > 2 else 0.0
                               for q in range(Q)])
        d["omega"] = np.nan_to_num(d["omega"])
        d["logvar"] = logvar
        d["gamma"] = logvar.mean(axis=0)
        d["psi"] = np.maximum(logvar.std(axis=0), 0.1)
        if Q == 2:
            s = np.sqrt(np.bincount(subj, resid[:, 0] ** 2, N) * np.bincount(subj, resid[:, 1] ** 2, N))
            c = np.bincount(subj, resid[:, 0] * resid[:, 1], N)
            d["r"] = np.clip(np.where(s > 0, c / np.where(s > 0, s, 1.0), 0.0), -0.9, 0.9)
        return self.unconstrain(d)

    def longitudinal_params(self, constrained) -> LongitudinalParams:
        """Structured longitudinal parameters from one flat constrained vector."""
        d = self.constrained_layout.unpack(constrained)
        beta = [d["beta"][self.beta_offsets[q]:self.beta_offsets[q + 1]] for q in range(self.Q)]
        return LongitudinalParams(
            beta=beta, B=d["B"], sigma=d["sigma"], omega=d["omega"], s=np.exp(0.5 * d["logvar"]),
            gamma=d["gamma"], psi=d["psi"], r=d.get("r"),
            a=None if self.Q == 1 else float(d["a"]), b=None if self.Q == 1 else float(d["b"]))

    # ------------------------------------------------------------------
    def logp_and_grad(self, theta):
        """Log-posterior density (including log Jacobians) and its gradient."""
        theta = np.asarray(theta, dtype=float)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            value, grad = self._logp_and_grad(theta)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros_like(theta)
        return value, grad

    def logp(self, theta) -> float:
        return self.logp_and_grad(theta)[0]

    def _logp_and_grad(self, theta):
        L, pr = self.layout, self.priors
        grad = np.zeros_like(theta)
        value = _joint_kernel(theta, grad, self._offsets, self.N, self.Q, self._beta_off,
                              self.subject, self.t, self.x_obs, self.cens_rows, self.cens_cols,
                              self.cens_lod, self.survival, self.Z, self.event_time,
                              self._cens_pos, self._hyper)
        if self.Q == 2:
            N = self.N
            ar = L.get(theta, "atanh_r")
            lab = L.get(theta, "log_ab")
            a, b = np.exp(lab)
            x2 = 2.0 * ar
            log_w = -_softplus(-x2)
            log_1mw = -_softplus(x2)
            w = expit(x2)
            # Beta(a, b) on (r + 1) / 2, Jacobians of r -> (r+1)/2 and atanh included
            value += np.sum(a * log_w + b * log_1mw) + N * (LOG2 - betaln(a, b))
            grad[L.slices["atanh_r"]] += 2.0 * a * (1.0 - w) - 2.0 * b * w
            dab = digamma(a + b)
            g_ab = grad[L.slices["log_ab"]]
            g_ab[0] += a * (np.sum(log_w) - N * (digamma(a) - dab))
            g_ab[1] += b * (np.sum(log_1mw) - N * (digamma(b) - dab))
            na, nb = pr.corr_rate_a, pr.corr_rate_b
            value += np.log(na) - na * a + lab[0] + np.log(nb) - nb * b + lab[1]
            g_ab[0] += 1.0 - na * a
            g_ab[1] += 1.0 - nb * b
        return float(value), grad


class ThresholdModel:
    """Threshold regression alone, on fixed design rows (second stage of the two-stage fit)."""

    def __init__(self, W, event_time, event, priors: PriorConfig = PriorConfig()):
        self.W = np.asarray(W, dtype=float)
        self.event_time = np.asarray(event_time, dtype=float)
        self.cens_subjects = np.nonzero(np.asarray(event) == 0)[0]
        self.priors = priors
        D = self.W.shape[1]
        self.layout = Layout([("alpha", (D,)), ("eta", (D,)), ("v", (self.cens_subjects.shape[0],))])
        self.constrained_layout = Layout([("alpha", (D,)), ("eta", (D,)),
                                          ("t_cens", (self.cens_subjects.shape[0],))])
        self.param_names = self.constrained_layout.element_names()

    @property
    def dim(self) -> int:
        return self.layout.size

    @property
    def metric_groups(self) -> list:
        return [np.arange(2 * self.W.shape[1])[None, :]]

    def constrain(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.array(theta)
        sl = self.layout.slices["v"]
        out[..., sl] = self.event_time[self.cens_subjects] + np.exp(theta[..., sl])
        return out

    def logp_and_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        L = self.layout
        alpha, eta, v = L.get(theta, "alpha"), L.get(theta, "eta"), L.get(theta, "v")
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            tau = self.event_time.copy()
            exp_v = np.exp(v)
            tau[self.cens_subjects] += exp_v
            sv, d_ly0, d_zeta, d_tau = survival_terms(self.W, alpha, eta, tau)
            w2 = self.priors.coef_scale ** 2
            const = -0.5 * LOG_2PI - np.log(self.priors.coef_scale)
            value = (np.sum(sv) + np.sum(v) + np.sum(const - 0.5 * alpha ** 2 / w2)
                     + np.sum(const - 0.5 * eta ** 2 / w2))
            grad = np.concatenate([self.W.T @ d_ly0 - alpha / w2, self.W.T @ d_zeta - eta / w2,
                                   d_tau[self.cens_subjects] * exp_v + 1.0])
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros_like(theta)
        return float(value), grad
