"""No-U-Turn sampler with warmup adaptation, multi-chain runs and diagnostics.

The transition is the multinomial variant of NUTS with the generalised
U-turn criterion (including the checks across subtree boundaries).  During
warmup the step size is tuned by dual averaging and a diagonal inverse mass
matrix is estimated over doubling windows.

Any object exposing ``dim``, ``logp_and_grad(theta)``, ``constrain(theta)``
and ``param_names`` can be sampled; :class:`DensityModel` wraps a bare
log-density function.
"""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0


class FatalDivergenceError(RuntimeError):
    """More than half of the post-warmup transitions diverged."""


class DegenerateChainError(ValueError):
    """R-hat is undefined because the within-chain variance is zero."""


class InitializationError(RuntimeError):
    """No finite starting point found."""


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    Attributes
    ----------
    iter, warmup : int
        Total iterations per chain and how many of them are warmup.
    target_accept : float
        Dual-averaging target for the mean acceptance statistic.
    max_treedepth : int
        Trajectories stop after ``2**max_treedepth`` leapfrog steps.
    metric : {'block', 'diag', 'dense'}
        ``'block'`` adapts dense blocks over the coordinate groups listed in
        the model's ``metric_groups`` and a diagonal metric elsewhere; models
        without that attribute fall back to diagonal.
    init_radius : float
        Initial unconstrained coordinates are uniform on ``(-r, r)``.
    init : {'model', 'uniform'}
        ``'model'`` uses the model's ``initial_state(rng, radius)`` when it
        has one; ``'uniform'`` always draws every coordinate uniformly.
    """

    iter: int = 2000
    warmup: int = 1000
    target_accept: float = 0.8
    max_treedepth: int = 10
    init_radius: float = 1.0
    init: str = "model"
    max_init_tries: int = 100
    # dual averaging
    da_gamma: float = 0.05
    da_t0: float = 10.0
    da_kappa: float = 0.75
    # mass-matrix windows
    init_buffer: int = 75
    term_buffer: int = 50
    base_window: int = 25
    adapt_mass: bool = True
    metric: str = "block"

    def __post_init__(self):
        if not self.iter > self.warmup:
            raise ValueError("iter must exceed warmup")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.metric not in ("diag", "dense", "block"):
            raise ValueError("metric must be 'diag', 'dense' or 'block'")
        if self.init not in ("model", "uniform"):
            raise ValueError("init must be 'model' or 'uniform'")
        if self.max_treedepth < 1:
            raise ValueError("max_treedepth must be >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ChainResult:
    """Output of one chain.

    ``draws`` holds the kept iterations on the constrained scale; the
    remaining arrays are per kept iteration.
    """

    draws: np.ndarray
    param_names: list
    accept_stat: np.ndarray
    treedepth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    seed: int | None = None
    warmup_divergences: int = 0

    @property
    def n_divergent(self) -> int:
        return int(self.divergent.sum())

    @property
    def divergence_fraction(self) -> float:
        return float(self.divergent.mean()) if self.divergent.size else 0.0


class DensityModel:
    """Adapter turning ``f(theta) -> (logp, grad)`` into a samplable model."""

    def __init__(self, logp_and_grad, dim: int, param_names=None):
        self._f = logp_and_grad
        self.dim = int(dim)
        self.param_names = list(param_names) if param_names is not None else [
            f"theta[{k + 1}]" for k in range(self.dim)]

    def logp_and_grad(self, theta):
        value, grad = self._f(theta)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros_like(theta)
        return float(value), np.asarray(grad, dtype=float)

    def constrain(self, theta):
        return np.asarray(theta, dtype=float)


# ----------------------------------------------------------------------
# warmup adaptation

class DualAveraging:
    """Nesterov dual averaging of ``log(step_size)``."""

    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = np.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * np.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return float(np.exp(x))

    @property
    def final_step_size(self) -> float:
        return float(np.exp(self.x_bar))


def adaptation_windows(warmup, init_buffer=75, term_buffer=50, base_window=25):
    """End iterations (exclusive) of the slow mass-matrix windows, and the first start.

    Follows the usual fast/slow/fast schedule with doubling slow windows; when
    warmup is too short for the defaults the buffers become 15% / 75% / 10%.
    """
    if warmup < 20:
        return warmup, []
    if init_buffer + base_window + term_buffer > warmup:
        init_buffer = int(0.15 * warmup)
        term_buffer = int(0.1 * warmup)
        base_window = warmup - init_buffer - term_buffer
    ends = []
    start, size = init_buffer, base_window
    last = warmup - term_buffer
    while start < last:
        end = start + size
        # the final window absorbs a remainder smaller than twice its size
        if end + 2 * size > last:
            end = last
        ends.append(end)
        start, size = end, 2 * size
    return init_buffer, ends


class Metric:
    """Inverse mass matrix: diagonal plus dense blocks.

    Parameters
    ----------
    diag : ndarray, shape (dim,)
        Diagonal inverse-metric entries; entries covered by a group are ignored.
    groups : list of ndarray of int, each shape (G, k)
        Each row lists coordinates sharing one dense ``k x k`` block.
    dense : list of ndarray, each shape (G, k, k), optional
        Dense inverse metric of each block; identity when omitted.
    """

    def __init__(self, diag, groups=(), dense=None):
        self.diag = np.asarray(diag, dtype=float)
        self.groups = [np.asarray(g, dtype=np.int64) for g in groups if np.size(g)]
        if dense is None:
            dense = [np.broadcast_to(np.eye(g.shape[1]), g.shape + (g.shape[1],)).copy()
                     for g in self.groups]
        self.dense = [np.asarray(d, dtype=float) for d in dense]
        self._chol = [np.linalg.cholesky(d) for d in self.dense]

    def apply(self, p):
        out = self.diag * p
        for g, d in zip(self.groups, self.dense):
            out[g] = np.einsum("gij,gj->gi", d, p[g])
        return out

    def sample(self, rng):
        z = rng.standard_normal(self.diag.shape[0])
        p = z / np.sqrt(self.diag)
        for g, c in zip(self.groups, self._chol):
            # p = L^{-T} z has covariance (L L^T)^{-1}
            p[g] = np.linalg.solve(np.swapaxes(c, 1, 2), z[g][..., None])[..., 0]
        return p

    def variances(self):
        out = self.diag.copy()
        for g, d in zip(self.groups, self.dense):
            out[g] = np.diagonal(d, axis1=1, axis2=2)
        return out


class _Welford:
    """Running mean and (co)variance for metric estimation."""

    def __init__(self, dim, groups):
        self.n = 0
        self.groups = groups
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)
        self.c2 = [np.zeros(g.shape + (g.shape[1],)) for g in groups]

    def add(self, x):
        self.n += 1
        old = x - self.mean
        self.mean += old / self.n
        new = x - self.mean
        self.m2 += old * new
        for g, c2 in zip(self.groups, self.c2):
            c2 += old[g][:, :, None] * new[g][:, None, :]

    def metric(self) -> Metric:
        n = self.n
        w, reg = n / (n + 5.0), 1e-3 * (5.0 / (n + 5.0))
        diag = w * self.m2 / (n - 1) + reg
        dense = []
        for g, c2 in zip(self.groups, self.c2):
            d = w * c2 / (n - 1) + reg * np.eye(g.shape[1])
            dense.append(0.5 * (d + np.swapaxes(d, 1, 2)))
        return Metric(diag, self.groups, dense)


# ----------------------------------------------------------------------
# NUTS transition

class _Point:
    __slots__ = ("theta", "p", "logp", "grad")

    def __init__(self, theta, p, logp, grad):
        self.theta, self.p, self.logp, self.grad = theta, p, logp, grad

    def copy(self):
        return _Point(self.theta, self.p, self.logp, self.grad)


class _Nuts:
    def __init__(self, model, rng, max_treedepth):
        self.model = model
        self.rng = rng
        self.max_treedepth = max_treedepth
        self.step_size = 1.0
        self.metric = Metric(np.ones(model.dim))

    def hamiltonian(self, z):
        if not np.isfinite(z.logp):
            return np.inf
        return -z.logp + 0.5 * np.dot(z.p, self.metric.apply(z.p))

    def leapfrog(self, z, eps):
        p = z.p + 0.5 * eps * z.grad
        theta = z.theta + eps * self.metric.apply(p)
        logp, grad = self.model.logp_and_grad(theta)
        if np.isfinite(logp):
            p = p + 0.5 * eps * grad
        return _Point(theta, p, logp, grad)

    def sample_momentum(self):
        return self.metric.sample(self.rng)

    def find_reasonable_step_size(self, z0):
        """Double or halve the step until the one-step acceptance crosses 0.8."""
        eps = self.step_size
        z = z0.copy()
        z.p = self.sample_momentum()
        H0 = self.hamiltonian(z)
        z1 = self.leapfrog(z, eps)
        delta = H0 - self.hamiltonian(z1)
        direction = 1 if delta > np.log(0.8) else -1
        for _ in range(100):
            z.p = self.sample_momentum()
            H0 = self.hamiltonian(z)
            z1 = self.leapfrog(z, eps)
            delta = H0 - self.hamiltonian(z1)
            if direction == 1 and not delta > np.log(0.8):
                break
            if direction == -1 and not delta < np.log(0.8):
                break
            eps = eps * 2.0 if direction == 1 else eps * 0.5
            if eps > 1e7 or eps < 1e-12:
                break
        self.step_size = float(eps)

    @staticmethod
    def _criterion(p_sharp_minus, p_sharp_plus, rho):
        return np.dot(p_sharp_plus, rho) > 0 and np.dot(p_sharp_minus, rho) > 0

    def _build_tree(self, depth, z, H0, sign, stats):
        """Extend ``z`` by ``2**depth`` leapfrog steps in direction ``sign``.

        Returns ``(valid, end_point, proposal, log_sum_weight, rho, p_beg,
        p_end, p_sharp_beg, p_sharp_end)``.
        """
        if depth == 0:
            z_new = self.leapfrog(z, sign * self.step_size)
            stats["n_leapfrog"] += 1
            h = self.hamiltonian(z_new)
            if np.isnan(h):
                h = np.inf
            if h - H0 > MAX_DELTA_H:
                stats["divergent"] = True
            stats["sum_metro_prob"] += 1.0 if H0 - h > 0 else np.exp(H0 - h)
            p_sharp = self.metric.apply(z_new.p)
            valid = not stats["divergent"]
            return (valid, z_new, z_new, H0 - h, z_new.p.copy(), z_new.p, z_new.p, p_sharp, p_sharp)

        (valid, z, prop_init, lsw_init, rho_init, p_beg, p_init_end,
         ps_beg, ps_init_end) = self._build_tree(depth - 1, z, H0, sign, stats)
        if not valid:
            return (False, z, prop_init, -np.inf, rho_init, p_beg, p_init_end, ps_beg, ps_init_end)
        (valid, z, prop_final, lsw_final, rho_final, p_final_beg, p_end,
         ps_final_beg, ps_end) = self._build_tree(depth - 1, z, H0, sign, stats)
        if not valid:
            return (False, z, prop_final, -np.inf, rho_final, p_beg, p_end, ps_beg, ps_end)

        lsw = np.logaddexp(lsw_init, lsw_final)
        if lsw_final > lsw or self.rng.uniform() < np.exp(lsw_final - lsw):
            proposal = prop_final
        else:
            proposal = prop_init
        rho = rho_init + rho_final
        persist = self._criterion(ps_beg, ps_end, rho)
        persist = persist and self._criterion(ps_beg, ps_final_beg, rho_init + p_final_beg)
        persist = persist and self._criterion(ps_init_end, ps_end, rho_final + p_init_end)
        return (persist, z, proposal, lsw, rho, p_beg, p_end, ps_beg, ps_end)

    def transition(self, z0):
        z0 = z0.copy()
        z0.p = self.sample_momentum()
        H0 = self.hamiltonian(z0)
        z_fwd = z_bck = z_sample = z0
        p_sharp0 = self.metric.apply(z0.p)
        p_fwd_fwd = p_fwd_bck = p_bck_fwd = p_bck_bck = z0.p
        ps_fwd_fwd = ps_fwd_bck = ps_bck_fwd = ps_bck_bck = p_sharp0
        rho = z0.p.copy()
        log_sum_weight = 0.0
        stats = {"n_leapfrog": 0, "sum_metro_prob": 0.0, "divergent": False}
        depth = 0
        while depth < self.max_treedepth:
            if self.rng.uniform() > 0.5:
                rho_bck = rho
                (valid, z_fwd, prop, lsw_sub, rho_fwd, p_fwd_bck, p_fwd_fwd,
                 ps_fwd_bck, ps_fwd_fwd) = self._build_tree(depth, z_fwd, H0, 1, stats)
            else:
                rho_fwd = rho
                (valid, z_bck, prop, lsw_sub, rho_bck, p_bck_fwd, p_bck_bck,
                 ps_bck_fwd, ps_bck_bck) = self._build_tree(depth, z_bck, H0, -1, stats)
            if not valid:
                break
            depth += 1
            if lsw_sub > log_sum_weight or self.rng.uniform() < np.exp(lsw_sub - log_sum_weight):
                z_sample = prop
            log_sum_weight = np.logaddexp(log_sum_weight, lsw_sub)
            rho = rho_bck + rho_fwd
            persist = self._criterion(ps_bck_bck, ps_fwd_fwd, rho)
            persist = persist and self._criterion(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck)
            persist = persist and self._criterion(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd)
            if not persist:
                break
        n = stats["n_leapfrog"]
        accept = stats["sum_metro_prob"] / n if n else 0.0
        return z_sample, accept, depth, n, stats["divergent"]


# ----------------------------------------------------------------------
# chains

def _initial_point(model, rng, config):
    use_model = config.init == "model" and hasattr(model, "initial_state")
    for _ in range(config.max_init_tries):
        if use_model:
            theta = model.initial_state(rng, config.init_radius)
        else:
            theta = rng.uniform(-config.init_radius, config.init_radius, size=model.dim)
        logp, grad = model.logp_and_grad(theta)
        if np.isfinite(logp) and np.all(np.isfinite(grad)):
            return _Point(theta, np.zeros(model.dim), logp, grad)
    raise InitializationError(f"no finite initial point after {config.max_init_tries} tries")


def run_chain(rng: np.random.Generator, model, config: SamplerConfig = SamplerConfig(),
              init=None, draws_path=None, seed=None) -> ChainResult:
    """Run one NUTS chain.

    Parameters
    ----------
    rng : numpy.random.Generator
    model : object
        Provides ``dim``, ``logp_and_grad``, ``constrain`` and ``param_names``.
    config : SamplerConfig
    init : ndarray, optional
        Unconstrained starting point; drawn uniformly when omitted.
    draws_path : path-like, optional
        Kept draws are streamed to this CSV file, one row per iteration.

    Raises
    ------
    FatalDivergenceError
        If more than half of the kept transitions diverged.
    """
    nuts = _Nuts(model, rng, config.max_treedepth)
    if init is None:
        z = _initial_point(model, rng, config)
    else:
        theta = np.asarray(init, dtype=float)
        logp, grad = model.logp_and_grad(theta)
        if not np.isfinite(logp):
            raise InitializationError("supplied initial point has non-finite log density")
        z = _Point(theta, np.zeros(model.dim), logp, grad)

    warmup = config.warmup
    adapt = warmup > 0
    if adapt:
        nuts.find_reasonable_step_size(z)
    da = DualAveraging(nuts.step_size, config.target_accept, config.da_gamma, config.da_t0,
                       config.da_kappa)
    first, window_ends = adaptation_windows(warmup, config.init_buffer, config.term_buffer,
                                            config.base_window)
    if not config.adapt_mass:
        window_ends = []
    window_ends = list(window_ends)
    groups = []
    if config.metric == "block":
        groups = [np.asarray(g, dtype=np.int64) for g in getattr(model, "metric_groups", [])]
    elif config.metric == "dense":
        groups = [np.arange(model.dim)[None, :]]
    welford = _Welford(model.dim, groups)

    n_keep = config.iter - warmup
    names = list(model.param_names)
    draws = None
    accept = np.empty(n_keep)
    depth = np.empty(n_keep, dtype=np.int64)
    n_leap = np.empty(n_keep, dtype=np.int64)
    divergent = np.zeros(n_keep, dtype=bool)
    warmup_div = 0

    fh = writer = None
    if draws_path is not None:
        fh = open(draws_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(names)
    try:
        for it in range(config.iter):
            z, a, d, n, div = nuts.transition(z)
            if it < warmup:
                warmup_div += div
                nuts.step_size = da.update(a)
                if window_ends and first <= it < window_ends[0]:
                    welford.add(z.theta)
                if window_ends and it + 1 == window_ends[0]:
                    nuts.metric = welford.metric()
                    welford = _Welford(model.dim, groups)
                    window_ends.pop(0)
                    nuts.find_reasonable_step_size(z)
                    da.restart(nuts.step_size)
                if it + 1 == warmup:
                    nuts.step_size = da.final_step_size
                continue
            k = it - warmup
            row = np.asarray(model.constrain(z.theta), dtype=float)
            if draws is None:
                draws = np.empty((n_keep, row.shape[0]))
            draws[k] = row
            accept[k], depth[k], n_leap[k], divergent[k] = a, d, n, div
            if writer is not None:
                writer.writerow([repr(float(v)) for v in row])
    finally:
        if fh is not None:
            fh.close()

    result = ChainResult(draws=draws, param_names=names, accept_stat=accept, treedepth=depth,
                         n_leapfrog=n_leap, divergent=divergent, step_size=nuts.step_size,
                         inv_metric=nuts.metric.variances(), seed=seed,
                         warmup_divergences=int(warmup_div))
    if result.divergence_fraction > 0.5:
        raise FatalDivergenceError(
            f"{result.n_divergent} of {n_keep} post-warmup transitions diverged")
    if result.n_divergent:
        log.info("%d post-warmup divergences", result.n_divergent)
    return result


def _chain_task(args):
    model, config, seed, path = args
    return run_chain(np.random.default_rng(seed), model, config, draws_path=path, seed=seed)


def run_chains(model, config: SamplerConfig = SamplerConfig(), chains: int = 3, seed: int = 0,
               threads: int | None = 1, out_dir=None, prefix: str = "chain") -> "PosteriorDraws":
    """Run independent chains with seeds ``seed + chain_index``.

    ``threads > 1`` runs chains in worker processes; results do not depend
    on the thread count.  With ``out_dir`` each chain streams its draws to
    ``{prefix}_{k}.csv``.
    """
    if chains < 1:
        raise ValueError("chains must be >= 1")
    paths = [None] * chains
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        paths = [os.path.join(out_dir, f"{prefix}_{k + 1}.csv") for k in range(chains)]
    tasks = [(model, config, seed + k, paths[k]) for k in range(chains)]
    threads = os.cpu_count() if threads is None else threads
    if threads > 1 and chains > 1:
        with ProcessPoolExecutor(max_workers=min(threads, chains)) as pool:
            results = list(pool.map(_chain_task, tasks))
    else:
        results = [_chain_task(t) for t in tasks]
    layout = getattr(model, "constrained_layout", None)
    return PosteriorDraws(results, layout=layout)


# ----------------------------------------------------------------------
# diagnostics

def split_rhat(chains) -> np.ndarray:
    """Split-chain potential scale reduction.

    Parameters
    ----------
    chains : array_like, shape (m, n) or (m, n, d)
        ``m >= 2`` chains of equal length ``n >= 4``.

    Raises
    ------
    DegenerateChainError
        If any parameter has zero within-chain variance.
    """
    x = np.asarray(chains, dtype=float)
    scalar = x.ndim == 2
    if scalar:
        x = x[..., None]
    m, n = x.shape[:2]
    if m < 2 or n < 4:
        raise ValueError("need at least 2 chains of length >= 4")
    half = n // 2
    x = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    n = half
    chain_means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean(axis=0)
    B = n * chain_means.var(axis=0, ddof=1)
    if np.any(W <= 0):
        raise DegenerateChainError("zero within-chain variance")
    rhat = np.sqrt(((n - 1) / n * W + B / n) / W)
    return rhat[0] if scalar else rhat


def _autocovariance(x):
    """Biased autocovariance of each row via FFT."""
    n = x.shape[-1]
    size = 1 << int(np.ceil(np.log2(2 * n)))
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, n=size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=-1)[..., :n]
    return acov / n


def effective_sample_size(chains) -> np.ndarray:
    """Multi-chain ESS with Geyer's initial-positive-sequence truncation.

    The autocorrelation sum stops at the first lag pair whose sum is
    negative; pair sums are also forced to be monotone.
    """
    x = np.asarray(chains, dtype=float)
    scalar = x.ndim == 2
    if scalar:
        x = x[..., None]
    m, n, d = x.shape
    out = np.full(d, np.nan)
    for j in range(d):
        xj = x[:, :, j]
        acov = _autocovariance(xj)
        chain_var = acov[:, 0] * n / (n - 1.0)
        W = chain_var.mean()
        var_plus = W * (n - 1.0) / n
        if m > 1:
            var_plus += xj.mean(axis=1).var(ddof=1)
        if not var_plus > 0:
            continue
        rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        total = 0.0
        prev = np.inf
        t = 0
        while t + 1 < n:
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            pair = min(pair, prev)
            total += pair
            prev = pair
            t += 2
        tau = -1.0 + 2.0 * total
        tau = max(tau, 1.0 / np.log10(m * n)) if m * n > 1 else tau
        out[j] = m * n / tau
    return out[0] if scalar else out


def rhat_ess(chains):
    """Per-parameter split R-hat and ESS for a list of :class:`ChainResult`.

    Parameters with zero within-chain variance get ``nan`` R-hat.
    """
    x = np.stack([c.draws if isinstance(c, ChainResult) else np.asarray(c) for c in chains])
    if x.shape[0] < 2:
        raise ValueError("R-hat needs at least two chains")
    n = x.shape[1]
    half = n // 2
    split = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    W = split.var(axis=1, ddof=1).mean(axis=0)
    rhat = np.full(x.shape[2], np.nan)
    ok = W > 0
    if np.any(ok):
        rhat[ok] = split_rhat(x[:, :, ok])
    return rhat, effective_sample_size(x)


def mcse_mean(chains) -> np.ndarray:
    """Monte Carlo standard error of the posterior mean."""
    x = np.asarray(chains, dtype=float)
    scalar = x.ndim == 2
    if scalar:
        x = x[..., None]
    sd = x.reshape(-1, x.shape[-1]).std(axis=0, ddof=1)
    out = sd / np.sqrt(effective_sample_size(x))
    return out[0] if scalar else out


# ----------------------------------------------------------------------
# containers

@dataclass
class PosteriorDraws:
    """Kept draws of several chains with named access.

    Attributes
    ----------
    chains : list of ChainResult
    layout : Layout, optional
        Block layout of the constrained vector, enabling :meth:`block`.
    """

    chains: list
    layout: object = None
    _stack: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not self.chains:
            raise ValueError("no chains")
        self.names = list(self.chains[0].param_names)
        self._index = {name: k for k, name in enumerate(self.names)}
        self._stack = np.stack([c.draws for c in self.chains])

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    @property
    def n_draws(self) -> int:
        return self._stack.shape[0] * self._stack.shape[1]

    @property
    def array(self) -> np.ndarray:
        """Draws as ``(chains, iterations, parameters)``."""
        return self._stack

    def pooled(self) -> np.ndarray:
        """Draws from all chains stacked as ``(n_draws, parameters)``."""
        return self._stack.reshape(-1, self._stack.shape[-1])

    def __getitem__(self, name) -> np.ndarray:
        """Pooled draws of a single named parameter."""
        return self._stack[:, :, self._index[name]].reshape(-1)

    def block(self, name) -> np.ndarray:
        """Pooled draws of a named block, shaped ``(n_draws, *block_shape)``."""
        if self.layout is None:
            raise KeyError("draws carry no block layout")
        sl = self.layout.slices[name]
        return self.pooled()[:, sl].reshape((-1,) + tuple(self.layout.shapes[name]))

    def has_block(self, name) -> bool:
        return self.layout is not None and name in self.layout

    def select(self, names) -> np.ndarray:
        idx = [self._index[n] for n in names]
        return self._stack[:, :, idx]

    @property
    def n_divergent(self) -> int:
        return sum(c.n_divergent for c in self.chains)

    @property
    def divergence_fraction(self) -> float:
        return self.n_divergent / self.n_draws

    def rhat_ess(self, names=None):
        x = self._stack if names is None else self.select(names)
        if self.n_chains < 2:
            return np.full(x.shape[-1], np.nan), effective_sample_size(x)
        return rhat_ess([x[k] for k in range(x.shape[0])])

    def max_rhat(self, names=None) -> float:
        rhat, _ = self.rhat_ess(names)
        return float(np.nanmax(rhat)) if np.any(np.isfinite(rhat)) else np.nan

    def summary(self, names=None) -> list[dict]:
        """Mean, SD, 2.5/50/97.5 percentiles, R-hat and ESS per parameter."""
        names = self.names if names is None else list(names)
        x = self.select(names)
        flat = x.reshape(-1, x.shape[-1])
        rhat, ess = self.rhat_ess(names)
        q = np.percentile(flat, [2.5, 50, 97.5], axis=0)
        return [{"parameter": n, "mean": float(flat[:, k].mean()), "sd": float(flat[:, k].std(ddof=1)),
                 "q2.5": float(q[0, k]), "q50": float(q[1, k]), "q97.5": float(q[2, k]),
                 "rhat": float(rhat[k]), "ess": float(ess[k])} for k, n in enumerate(names)]


def read_draws_csv(path) -> tuple[list, np.ndarray]:
    """Read a per-chain draw file written by :func:`run_chain`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, np.asarray(rows, dtype=float).reshape(-1, len(header))
