import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fhtjoint.data import LongitudinalPanel
from fhtjoint.longitudinal import (LongitudinalParams, NotPositiveDefiniteError, SingularBlockError,
                                   conditional_gaussian, impute_censored_conditional, impute_rows,
                                   lkj2_logpdf, long_logdensity, mean_value, poly_basis,
                                   prior_logdensity, truncnorm_upper)
from fhtjoint.spec import PriorConfig

LOG_2PI = np.log(2 * np.pi)


def test_mean_value_examples():
    assert mean_value(0.0, [3, -0.2, 0.04, -0.001], np.zeros(2)) == pytest.approx(3.0)
    assert mean_value(1.0, [0.0, 0.0], np.array([2.0, -1.0])) == pytest.approx(1.0)
    assert mean_value(2.0, [6.6, 0.03, -0.05], np.array([0.5, 0.1])) == pytest.approx(7.16)


def test_poly_basis_columns():
    B = poly_basis(np.array([0.0, 2.0]), 3)
    np.testing.assert_array_equal(B, [[1, 0, 0], [1, 2, 4]])


def _params(N, Q, rng, r=True):
    beta = [rng.normal(size=3) for _ in range(Q)]
    return LongitudinalParams(
        beta=beta, B=rng.normal(scale=0.3, size=(N, Q, 2)), sigma=np.full((Q, 2), 0.5),
        omega=np.zeros(Q), s=rng.uniform(0.5, 1.5, size=(N, Q)), gamma=np.zeros(Q),
        psi=np.ones(Q), r=rng.uniform(-0.6, 0.6, size=N) if (Q == 2 and r) else None,
        a=1.0 if Q == 2 else None, b=1.0 if Q == 2 else None)


def _panel(N, Q, rng, visits=2, lod=None):
    t = np.tile(np.arange(visits, dtype=float), N)
    subj = np.repeat(np.arange(N), visits)
    x = rng.normal(size=(N * visits, Q))
    lod = np.full(Q, -np.inf) if lod is None else np.asarray(lod, dtype=float)
    cens = x < lod
    x = np.where(cens, lod, x)
    return LongitudinalPanel(subj, t, x, cens, lod)


def test_single_visit_peak():
    panel = LongitudinalPanel([0], [0.0], [[1.0]], [[False]], [-np.inf])
    params = LongitudinalParams(beta=[np.array([1.0])], B=np.zeros((1, 1, 2)), sigma=np.ones((1, 2)),
                                omega=np.zeros(1), s=np.ones((1, 1)), gamma=np.zeros(1), psi=np.ones(1))
    assert long_logdensity(panel, params, []) == pytest.approx(-0.5 * LOG_2PI)


def test_independence_factorisation():
    rng = np.random.default_rng(0)
    panel = _panel(4, 2, rng, visits=3)
    p = _params(4, 2, rng, r=False)
    p.r = np.zeros(4)
    joint = long_logdensity(panel, p, [])
    total = 0.0
    for q in range(2):
        sub = LongitudinalPanel(panel.subject, panel.time, panel.values[:, [q]],
                                panel.censored[:, [q]], panel.lod[[q]])
        pq = LongitudinalParams([p.beta[q]], p.B[:, [q]], p.sigma[[q]], p.omega[[q]], p.s[:, [q]],
                                p.gamma[[q]], p.psi[[q]])
        total += long_logdensity(sub, pq, [])
    assert joint == pytest.approx(total, abs=1e-10)


def test_matches_dense_brute_force():
    rng = np.random.default_rng(1)
    panel = _panel(3, 2, rng, visits=2, lod=[-np.inf, -0.3])
    p = _params(3, 2, rng)
    rows, cols = panel.censored_index()
    aug = panel.lod[cols] - rng.uniform(0.1, 1.0, size=rows.shape[0])
    x = np.array(panel.values)
    x[rows, cols] = aug
    ref = 0.0
    for j in range(panel.n_obs):
        i = panel.subject[j]
        mu = [mean_value(panel.time[j], p.beta[q], p.B[i, q]) for q in range(2)]
        ref += stats.multivariate_normal(mu, p.residual_cov(i)).logpdf(x[j])
    assert long_logdensity(panel, p, aug) == pytest.approx(ref, abs=1e-10)


def test_invariant_to_subject_order():
    rng = np.random.default_rng(2)
    panel = _panel(5, 2, rng, visits=3)
    p = _params(5, 2, rng)
    perm = np.array([3, 0, 4, 1, 2])
    q = LongitudinalParams(p.beta, p.B[perm], p.sigma, p.omega, p.s[perm], p.gamma, p.psi,
                           p.r[perm], p.a, p.b)
    assert long_logdensity(panel.take(perm), q, []) == pytest.approx(
        long_logdensity(panel, p, []), rel=1e-12)


def test_bad_correlation_raises():
    rng = np.random.default_rng(3)
    panel = _panel(2, 2, rng)
    p = _params(2, 2, rng)
    p.r = np.array([0.2, 1.0])
    with pytest.raises(NotPositiveDefiniteError):
        long_logdensity(panel, p, [])


def test_augmented_values_must_be_below_limit():
    panel = LongitudinalPanel([0, 0], [0.0, 1.0], [[-1.0], [0.5]], [[True], [False]], [-1.0])
    params = LongitudinalParams([np.zeros(1)], np.zeros((1, 1, 2)), np.ones((1, 2)), np.zeros(1),
                                np.ones((1, 1)), np.zeros(1), np.ones(1))
    with pytest.raises(ValueError):
        long_logdensity(panel, params, [-0.5])


def test_prior_beta_contribution():
    rng = np.random.default_rng(4)
    p = _params(3, 2, rng)
    p.beta = [np.zeros(4), np.zeros(3)]
    base = LongitudinalParams([np.zeros(0), np.zeros(0)], p.B, p.sigma, p.omega, p.s, p.gamma,
                              p.psi, p.r, p.a, p.b)
    diff = prior_logdensity(p) - prior_logdensity(base)
    assert diff == pytest.approx(7 * np.log(1 / (100 * np.sqrt(2 * np.pi))), abs=1e-12)


def test_lkj_uniform_at_unit_shape():
    vals = lkj2_logpdf(np.array([-0.9, 0.0, 0.5]), 1.0)
    np.testing.assert_allclose(vals, np.log(0.5))


def test_beta_prior_on_r_with_jacobian():
    rng = np.random.default_rng(5)
    p = _params(1, 2, rng)
    p.r = np.array([0.0])
    no_r = LongitudinalParams(p.beta, p.B, p.sigma, p.omega, p.s, p.gamma, p.psi)
    expo = 2 * (np.log(0.1) - 0.1)
    assert prior_logdensity(p) - prior_logdensity(no_r) == pytest.approx(np.log(0.5) + expo)


@pytest.mark.parametrize("field,value", [("sigma", -1.0), ("psi", 0.0), ("r", 1.0),
                                         ("a", 0.0), ("b", -2.0)])
def test_prior_outside_support_is_minus_inf(field, value):
    rng = np.random.default_rng(6)
    p = _params(2, 2, rng)
    if field in ("sigma", "psi", "r"):
        arr = np.array(getattr(p, field), dtype=float)
        arr.flat[0] = value
        setattr(p, field, arr)
    else:
        setattr(p, field, value)
    assert prior_logdensity(p) == -np.inf


def test_conditional_schur_complement():
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    m, c = conditional_gaussian([0.0, 0.0], S, [False, True], [1.0])
    assert m[0] == pytest.approx(0.5) and c[0, 0] == pytest.approx(0.75)


def test_conditional_singular_block():
    S = np.array([[1e-14, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    S[1, 1] = 1.0
    with pytest.raises(SingularBlockError):
        conditional_gaussian(np.zeros(3), S, [False, False, True], [0.0, 0.0])


def test_imputation_without_truncation_matches_conditional():
    rng = np.random.default_rng(7)
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    draws = np.array([impute_censored_conditional(rng, [1.0, 0.0], [False, True], [0.0, 0.0], S,
                                                  [np.inf, np.inf])[1] for _ in range(20_000)])
    n = draws.size
    assert abs(draws.mean() - 0.5) < 3 * np.sqrt(0.75 / n)
    assert abs(draws.var() - 0.75) < 3 * 0.75 * np.sqrt(2 / n)


def test_imputation_against_rejection_oracle():
    rng = np.random.default_rng(8)
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    n = 20_000
    x = impute_rows(rng, np.tile([1.0, 0.0], (n, 1)), np.tile([False, True], (n, 1)),
                    np.zeros((n, 2)), np.ones((n, 2)), np.full(n, 0.5), [np.inf, 0.0])[:, 1]
    assert np.all(x < 0.0)
    pool = rng.normal(0.5, np.sqrt(0.75), size=400_000)
    ref = pool[pool < 0.0]
    se = np.sqrt(x.var() / n + ref.var() / ref.size)
    assert abs(x.mean() - ref.mean()) < 3 * se


def test_both_flagged_gibbs_matches_rejection():
    rng = np.random.default_rng(9)
    n = 4000
    S = np.array([[1.0, 0.6], [0.6, 1.0]])
    lod = np.array([0.2, -0.1])
    x = impute_rows(rng, np.tile(lod, (n, 1)), np.ones((n, 2), bool), np.zeros((n, 2)),
                    np.ones((n, 2)), np.full(n, 0.6), lod)
    assert np.all(x < lod)
    pool = rng.multivariate_normal(np.zeros(2), S, size=400_000)
    ref = pool[np.all(pool < lod, axis=1)]
    for q in range(2):
        se = np.sqrt(x[:, q].var() / n + ref[:, q].var() / ref.shape[0])
        assert abs(x[:, q].mean() - ref[:, q].mean()) < 3 * se


@settings(max_examples=50, deadline=None)
@given(mean=st.floats(-5, 5), sd=st.floats(0.01, 5), upper=st.floats(-10, 10),
       seed=st.integers(0, 2 ** 31))
def test_truncnorm_strictly_below(mean, sd, upper, seed):
    x = truncnorm_upper(np.random.default_rng(seed), np.full(50, mean), sd, upper)
    assert np.all(x < upper)


def test_prior_config_rejects_nonpositive():
    with pytest.raises(ValueError):
        PriorConfig(re_scale=0.0)
