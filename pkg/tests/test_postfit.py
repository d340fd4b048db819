import numpy as np
import pytest

from vifa.data import Dataset, simulate, template
from vifa.encoder import EncoderParams
from vifa.objective import ConfigError, NoiseBlock, iw_elbo
from vifa.data import one_hot_rows
from vifa.postfit import (ScreePoint, approx_loglik, approx_loglik_terms, bias_mse, derive_seed,
                          elbow_hint, holdout_split, map_scores, offdiag, scree_curve,
                          score_correlations)
from vifa.trainer import FitConfig, FittedModel, fit


@pytest.fixture(scope="module")
def data():
    return simulate(template("five-factor"), 400, seed=3)


@pytest.fixture(scope="module")
def model(data):
    return fit(data, FitConfig(P=2, M=64, anneal_tau=50, max_iters=150, seed=4))


def test_derive_seed():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)
    assert derive_seed(1, 2) != derive_seed(2, 2)


@pytest.mark.parametrize("fraction,n_hold", [(0.025, 10), (0.2, 80)])
def test_holdout_split(data, fraction, n_hold):
    train, hold, omega = holdout_split(data, fraction, seed=9)
    assert hold.n_respondents == n_hold
    assert train.n_respondents + hold.n_respondents == data.n_respondents
    np.testing.assert_array_equal(hold.responses, data.responses[omega])
    _, _, again = holdout_split(data, fraction, seed=9)
    np.testing.assert_array_equal(omega, again)
    _, _, other = holdout_split(data, fraction, seed=10)
    assert not np.array_equal(omega, other)


def test_holdout_split_errors(data):
    with pytest.raises(ConfigError):
        holdout_split(data, 0.0, 1)
    with pytest.raises(ConfigError):
        holdout_split(data, 1.0, 1)
    with pytest.raises(ConfigError):
        holdout_split(data, 0.9, 1, min_train=128)


def test_r1_matches_pointwise_elbo(model, data):
    """With a single draw the estimate is the pointwise log weight of that draw."""
    hold = data.subset(np.arange(20))
    terms = approx_loglik_terms(model, hold, R_eval=1, seed=5)
    eps = np.random.default_rng([5, 0]).standard_normal((20, 250, 2))[:, :1]
    rows = one_hot_rows(hold.responses, hold.category_counts)
    value = iw_elbo(model.item_bank, model.encoder, rows, hold.responses,
                    NoiseBlock(eps[:, :, None, :]), "pointwise")
    np.testing.assert_allclose(terms, value.per_respondent, rtol=1e-12)


def test_common_random_numbers_monotone(model, data):
    hold = data.subset(np.arange(100))
    vals = [approx_loglik(model, hold, R, seed=1) for R in (1, 10, 100, 1000)]
    assert all(np.isfinite(vals))
    assert vals == sorted(vals)
    assert approx_loglik(model, hold, 100, seed=1) == vals[2]


def test_width_mismatch(model):
    with pytest.raises(ValueError, match="width"):
        approx_loglik(model, Dataset(np.zeros((2, 3), int), np.full(3, 2)), 5)


def test_map_scores(model, data):
    s = map_scores(model, data)
    assert s.shape == (data.n_respondents, 2)
    perm = np.random.default_rng(0).permutation(data.n_respondents)
    np.testing.assert_array_equal(map_scores(model, data.subset(perm)), s[perm])
    np.testing.assert_allclose(map_scores(model, data, chunk=7), s, rtol=1e-12, atol=1e-13)


def test_zero_encoder_scores(model, data):
    enc = model.encoder
    zero = EncoderParams(np.zeros_like(enc.W1), np.zeros_like(enc.b1), np.zeros_like(enc.W2),
                         np.zeros_like(enc.b2))
    m = FittedModel(model.item_bank, zero, model.config)
    np.testing.assert_array_equal(map_scores(m, data), 0.0)


def test_bias_mse_examples():
    truth = {"a": np.zeros(2)}
    r = bias_mse([{"a": np.ones(2)}, {"a": -np.ones(2)}], truth)
    np.testing.assert_array_equal(r.bias["a"], 0.0)
    np.testing.assert_array_equal(r.mse["a"], 1.0)
    assert r.rmse["a"] == 1.0 and r.n_replications == 2
    rng = np.random.default_rng(0)
    est = [{"a": rng.normal(0.3, 0.5, 2)} for _ in range(50)]
    r = bias_mse(est, truth)
    stack = np.stack([e["a"] for e in est])
    np.testing.assert_allclose(r.mse["a"], r.bias["a"] ** 2 + stack.var(axis=0))
    with pytest.raises(ValueError):
        bias_mse(est[:1], truth)
    with pytest.raises(ValueError, match="shape"):
        bias_mse(est, {"a": np.zeros(3)})
    assert set(r.to_json()) >= {"bias", "mse", "rmse", "n_replications"}


def test_offdiag_and_score_correlations():
    phi = np.array([[1, 0.1, 0.2], [0.1, 1, 0.3], [0.2, 0.3, 1]])
    np.testing.assert_array_equal(offdiag(phi), [0.1, 0.2, 0.3])
    x = np.random.default_rng(0).normal(size=(50, 2))
    np.testing.assert_allclose(score_correlations(2 * x + 1, x), 1.0)


def test_elbow_hint():
    pts = [ScreePoint(P, v, 0.2, 10) for P, v in zip(range(1, 6), [100, 60, 30, 29, 28.5])]
    assert elbow_hint(pts) == 3
    assert elbow_hint(pts[:2]) is None


def test_scree_single_dimension(data):
    cfg = FitConfig(P=1, M=32, anneal_tau=10, max_iters=30)
    pts = scree_curve(data, [1], cfg, holdout_fraction=0.2, R_eval=20, seed=2)
    assert len(pts) == 1 and pts[0].P == 1 and np.isfinite(pts[0].neg_approx_loglik)
    assert pts[0].neg_approx_loglik > 0
    again = scree_curve(data, [1], cfg, holdout_fraction=0.2, R_eval=20, seed=2)
    assert again[0].neg_approx_loglik == pts[0].neg_approx_loglik


def test_scree_parallel_matches_serial(data):
    cfg = FitConfig(P=1, M=32, anneal_tau=10, max_iters=20)
    a = scree_curve(data, [1, 2], cfg, R_eval=10, seed=2)
    b = scree_curve(data, [1, 2], cfg, R_eval=10, seed=2, jobs=2)
    assert [p.neg_approx_loglik for p in a] == [p.neg_approx_loglik for p in b]


def test_scree_config_errors(data):
    cfg = FitConfig(P=1)
    with pytest.raises(ConfigError):
        scree_curve(data, [], cfg)
    with pytest.raises(ConfigError):
        scree_curve(data, [3, 2], cfg)
