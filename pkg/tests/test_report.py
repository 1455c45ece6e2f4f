import numpy as np
import pytest

from fhtjoint.data import LongitudinalPanel, SurvivalData
from fhtjoint.fht import FhtParams, fht_quantile, fht_sample
from fhtjoint.report import (CovariateProfile, InsufficientDrawsError, MedianUndefinedError,
                             get_profile, per_draw_medians, median_difference, median_event_time, ppc_longitudinal,
                             ppc_survival, profile_presets, survival_curve)
from fhtjoint.simulate import generate_dataset, get_preset

Q1 = get_preset("q1-lod").model_spec()


def _coef_draws(alpha, eta):
    return {"alpha": np.atleast_2d(alpha), "eta": np.atleast_2d(eta)}


def _posterior_like(K=200, seed=0):
    rng = np.random.default_rng(seed)
    alpha = np.array([3.5, 0.2, -0.1, 0.1]) + 0.05 * rng.standard_normal((K, 4))
    eta = np.array([-3.0, 0.1, 0.2, -1.0]) + 0.05 * rng.standard_normal((K, 4))
    return _coef_draws(alpha, eta)


def _truth_draws(cfg, truth, K):
    rep = lambda x: np.repeat(np.asarray(x, dtype=float)[None], K, axis=0)
    d = dict(beta=rep(np.concatenate(cfg.beta)), sigma=rep(cfg.sigma), omega=rep(cfg.omega),
             gamma=rep(cfg.gamma), psi=rep(cfg.psi), alpha=rep(cfg.alpha), eta=rep(cfg.eta),
             B=rep(truth["B"]), logvar=rep(truth["logvar"]))
    if "r" in truth:
        d["r"] = rep(truth["r"])
    return d


def test_curve_starts_at_one_with_zero_width():
    c = survival_curve(_posterior_like(), CovariateProfile(), np.linspace(0, 40, 41), Q1)
    assert c.mean[0] == 1.0 and c.lower[0] == 1.0 and c.upper[0] == 1.0


def test_curve_draws_monotone_and_band_bounds():
    c = survival_curve(_posterior_like(), get_profile("b1-var-high", Q1), np.linspace(0, 60, 121), Q1)
    assert np.all(np.diff(c.per_draw, axis=1) <= 1e-15)
    assert np.all((c.lower >= 0) & (c.upper <= 1))
    tol = 1e-12 * c.mean  # the mean of equal values can differ from them by an ulp
    assert np.all((c.lower <= c.mean + tol) & (c.mean <= c.upper + tol))


def test_time_offset_only_shifts_reported_times():
    d = _posterior_like()
    a = survival_curve(d, CovariateProfile(), [0, 5, 10], Q1)
    b = survival_curve(d, CovariateProfile(), [0, 5, 10], Q1, time_offset=42.0)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(b.time, [42, 47, 52])


@pytest.mark.parametrize("grid", [[1, 0], [-1, 2], [[0, 1]]])
def test_bad_grid(grid):
    with pytest.raises(ValueError):
        survival_curve(_posterior_like(), CovariateProfile(), grid, Q1)


def test_single_draw_median_is_quantile():
    d = _coef_draws([0.0, 0, 0, 0], [-1.0, 0, 0, 0])
    m = median_event_time(d, CovariateProfile(), Q1)
    assert m.mean == fht_quantile(0.5, FhtParams(1.0, -1.0, 1.0))
    assert m.lower == m.upper == m.mean


def test_median_undefined_reports_draw():
    eta = np.tile([-1.0, 0, 0, 0], (5, 1))
    eta[3, 0] = 1.0  # cure 1 - exp(-2) > 0.5
    with pytest.raises(MedianUndefinedError) as err:
        median_event_time(_coef_draws(np.zeros((5, 4)), eta), CovariateProfile(), Q1)
    assert err.value.draw_index == 3


def test_lower_drift_shortens_every_median():
    d = _posterior_like()
    shifted = dict(d, eta=d["eta"] - np.array([0.2, 0, 0, 0]))
    a = per_draw_medians(d, CovariateProfile(), Q1)
    b = per_draw_medians(shifted, CovariateProfile(), Q1)
    assert np.all(b < a)


def test_median_difference_is_paired():
    d = _posterior_like(K=400)
    hi, lo = get_profile("b1-var-high", Q1), get_profile("b1-var-low", Q1)
    diff = median_difference(d, hi, lo, Q1)
    np.testing.assert_allclose(diff.per_draw,
                               per_draw_medians(d, hi, Q1) - per_draw_medians(d, lo, Q1))
    # eta on variability is -1, so high variability fails earlier
    assert diff.upper < 0


def test_median_matches_sampling():
    p = FhtParams(np.exp(1.2), -0.8, 1.0)
    x = fht_sample(np.random.default_rng(0), p, size=200_000)
    assert abs(np.median(x) - fht_quantile(0.5, p)) < 0.05


def test_profile_names_and_errors():
    names = profile_presets(get_preset("q2-lod").model_spec())
    assert {"average", "fsh-var-high", "amh-slope-low", "b2-int-high"} <= set(names)
    assert "fsh-var-high" not in profile_presets(Q1)
    with pytest.raises(ValueError):
        get_profile("nope", Q1)
    with pytest.raises(ValueError):
        CovariateProfile("bad", {"b9_slope": 0.5}).design_row(Q1)
    with pytest.raises(ValueError):
        CovariateProfile("bad", {"b1_slope": np.inf})


def test_profile_design_row():
    W = get_profile("b1-slope-low", Q1).design_row(Q1)
    np.testing.assert_array_equal(W, [1, 0, -0.5, 0])


def test_ppc_needs_enough_draws():
    cfg = get_preset("q1-lod", N=10)
    data, truth = generate_dataset(cfg, np.random.default_rng(0))
    d = _truth_draws(cfg, truth, 50)
    with pytest.raises(InsufficientDrawsError):
        ppc_longitudinal(d, data.panel, Q1, np.random.default_rng(0))
    with pytest.raises(InsufficientDrawsError):
        ppc_survival(d, data.survival, Q1, np.random.default_rng(0))


def test_ppc_longitudinal_exact_fit_gives_one():
    panel = LongitudinalPanel([0], [1.0], [[0.5]], [[False]], [-np.inf])
    spec = get_preset("q1-lod").model_spec()
    K = 100
    beta = np.zeros((K, 3))
    beta[:, 0] = 0.5
    d = dict(beta=beta, B=np.zeros((K, 1, 1, 2)), logvar=np.zeros((K, 1, 1)))
    res = ppc_longitudinal(d, panel, spec, np.random.default_rng(0))
    assert res.p_values[0, 0] == 1.0


def test_ppc_at_truth_is_calibrated():
    cfg = get_preset("q2-lod", N=200)
    data, truth = generate_dataset(cfg, np.random.default_rng(14))
    spec = cfg.model_spec()
    d = _truth_draws(cfg, truth, 200)
    res = ppc_longitudinal(d, data.panel, spec, np.random.default_rng(1))
    assert np.all((res.p_values >= 0) & (res.p_values <= 1))
    # at the generating values p is roughly uniform over subjects
    assert np.all(np.abs(res.fraction_within() - 0.5) < 0.12)
    surv = ppc_survival(d, data.survival, spec, np.random.default_rng(2))
    assert set(surv.p_values) == {"median", "events_by_8", "events_by_10", "events_by_12"}
    assert all(0.05 < p < 0.95 for p in surv.p_values.values())


def test_ppc_survival_inflated_start_pushes_p_up():
    cfg = get_preset("q1-lod", N=200)
    data, truth = generate_dataset(cfg, np.random.default_rng(4))
    d = _truth_draws(cfg, truth, 100)
    res = ppc_survival(d, data.survival, cfg.model_spec(), np.random.default_rng(0), y0_scale=3.0)
    assert res.p_values["median"] == 1.0


def test_ppc_survival_no_censoring_symmetric():
    # data drawn from the replication law itself: p-values centre on 0.5
    cfg = get_preset("q1-lod", N=100)
    _, truth = generate_dataset(cfg, np.random.default_rng(0))
    d = _truth_draws(cfg, truth, 100)
    rng = np.random.default_rng(3)
    from fhtjoint.report import _global_blocks, survival_params_from_draw
    p = survival_params_from_draw(_global_blocks(d, Q1), 0, Q1, np.zeros((100, 0)))
    ps = []
    for _ in range(40):
        t = fht_sample(rng, p)
        assert np.all(np.isfinite(t))
        sd = SurvivalData(t, np.ones(100, dtype=int), np.zeros((100, 0)))
        ps.append(ppc_survival(d, sd, Q1, rng).p_values["median"])
    assert abs(np.mean(ps) - 0.5) < 0.1
