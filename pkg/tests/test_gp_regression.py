import math

import numpy as np
import pytest

from stackelucb.errors import InputError
from stackelucb.gp_regression import (
    ConfidenceConfig,
    Observation,
    PosteriorModel,
    beta_t,
    conf_bounds,
    confidence_box,
    posterior_mean,
    posterior_var,
    realized_info_gain,
)
from stackelucb.kernels import GamePoint, KernelSpec, gram_matrix, kernel_diag, cross_matrix

RBF = KernelSpec("rbf", lengthscale=0.6)


def dense_oracle(spec, lam, Z, Y, Q):
    """Explicit inverse of the regularized Gram matrix; tiny scale only."""
    K = gram_matrix(spec, Z)
    inv = np.linalg.inv(K + lam * np.eye(len(Z)))
    Kq = cross_matrix(spec, Z, Q)
    mean = Kq.T @ inv @ Y
    var = kernel_diag(spec, Q) - np.einsum("ij,ik,kj->j", Kq, inv, Kq)
    return mean, var


def build(spec, lam, Z, Y):
    model = PosteriorModel(spec, lam)
    for z, y in zip(Z, Y):
        model.update(GamePoint(z[:2], z[2:]), y)
    return model


def test_empty_history_prior():
    model = PosteriorModel(RBF, 1.0)
    q = GamePoint([0.3, 0.2], [1.0])
    np.testing.assert_array_equal(posterior_mean(model, q), [0.0])
    np.testing.assert_array_equal(posterior_var(model, q), [1.0])


def test_single_observation_arithmetic():
    model = PosteriorModel(KernelSpec("rbf"), 1.0)
    z1 = GamePoint([0.5], [0.1])
    model.update(Observation(z1, 2.0))
    assert posterior_mean(model, z1)[0] == pytest.approx(1.0, abs=1e-14)
    assert posterior_var(model, z1)[0] == pytest.approx(0.5, abs=1e-14)


def test_far_query_reverts_to_prior():
    model = PosteriorModel(KernelSpec("rbf", lengthscale=0.1), 1.0)
    model.update(GamePoint([0.0], [0.0]), 1.0)
    assert posterior_var(model, GamePoint([50.0], [0.0]))[0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_five_points_vs_dense_solve(seed):
    rng = np.random.default_rng(seed)
    Z = rng.uniform(-1, 1, size=(5, 3))
    Y = rng.normal(size=(5, 1))
    Q = rng.uniform(-1, 1, size=(1, 3))
    model = build(RBF, 1.0, Z, Y)
    mean, var = model.predict(Q)
    om, ov = dense_oracle(RBF, 1.0, Z, Y, Q)
    np.testing.assert_allclose(mean, om, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(var, ov, rtol=1e-8, atol=1e-12)


def test_chol_reconstructs_regularized_gram():
    rng = np.random.default_rng(4)
    Z = rng.normal(size=(30, 3))
    model = build(KernelSpec("matern", nu=1.5), 0.5, Z, rng.normal(size=(30, 1)))
    L = model.chol
    target = gram_matrix(model.kernel, Z) + 0.5 * np.eye(30)
    assert np.linalg.norm(L @ L.T - target) / np.linalg.norm(target) < 1e-8
    assert np.allclose(L, np.tril(L))


def test_update_moves_mean_toward_observation():
    rng = np.random.default_rng(5)
    model = build(RBF, 1.0, rng.uniform(size=(4, 3)), rng.normal(size=(4, 1)))
    z = GamePoint([0.3, 0.3], [0.3])
    y = 1.7
    before_mean, before_var = posterior_mean(model, z)[0], posterior_var(model, z)[0]
    model.update(z, y)
    after_mean, after_var = posterior_mean(model, z)[0], posterior_var(model, z)[0]
    assert abs(after_mean - y) < abs(before_mean - y)
    assert after_var <= before_var


def test_incremental_matches_batch():
    rng = np.random.default_rng(6)
    Z = rng.normal(size=(2, 3))
    Y = rng.normal(size=(2, 1))
    inc = build(RBF, 1.0, Z, Y)
    batch = PosteriorModel.from_data(RBF, 1.0, Z, Y)
    Q = rng.normal(size=(10, 3))
    for a, b in zip(inc.predict(Q), batch.predict(Q)):
        np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-12)


def test_periodic_rebuild_agrees_with_incremental():
    rng = np.random.default_rng(7)
    Z = rng.normal(size=(40, 3))
    Y = rng.normal(size=(40, 2))
    a = PosteriorModel(RBF, 1.0, rebuild_every=7)
    b = PosteriorModel(RBF, 1.0, rebuild_every=10_000)
    for z, y in zip(Z, Y):
        a.update(GamePoint(z[:2], z[2:]), y)
        b.update(GamePoint(z[:2], z[2:]), y)
    Q = rng.normal(size=(5, 3))
    for u, v in zip(a.predict(Q), b.predict(Q)):
        np.testing.assert_allclose(u, v, rtol=1e-9, atol=1e-12)


def test_nonfinite_response_rejected():
    model = PosteriorModel(RBF, 1.0)
    with pytest.raises(InputError):
        model.update(GamePoint([0.0, 0.0], [0.0]), float("nan"))
    assert len(model) == 0


def test_output_dimension_mismatch_rejected():
    model = PosteriorModel(RBF, 1.0)
    model.update(GamePoint([0.0, 0.0], [0.0]), [1.0, 2.0])
    with pytest.raises(InputError):
        model.update(GamePoint([0.0, 0.0], [0.0]), [1.0])


def test_multi_output_shares_variance_and_matches_per_output():
    rng = np.random.default_rng(8)
    Z = rng.normal(size=(6, 3))
    Y = rng.normal(size=(6, 2))
    joint = build(RBF, 1.0, Z, Y)
    q = GamePoint([0.1, -0.2], [0.3])
    v = posterior_var(joint, q)
    assert v.shape == (2,) and v[0] == v[1]
    for i in range(2):
        single = build(RBF, 1.0, Z, Y[:, i:i + 1])
        assert posterior_mean(single, q)[0] == pytest.approx(posterior_mean(joint, q)[i], abs=1e-12)


# -- beta schedule -------------------------------------------------------------

def test_beta_empty_history():
    cfg = ConfidenceConfig(sigma_noise=1.0, rkhs_bound=2.0, delta=0.1)
    assert beta_t(cfg, PosteriorModel(RBF, 1.0)) == pytest.approx(math.sqrt(2 * math.log(10)) + 2, abs=1e-12)
    assert beta_t(cfg, PosteriorModel(RBF, 1.0)) == pytest.approx(4.1460, abs=1e-4)


def test_beta_one_observation():
    cfg = ConfidenceConfig(sigma_noise=1.0, rkhs_bound=2.0, delta=0.1)
    model = PosteriorModel(KernelSpec("rbf"), 1.0)
    model.update(GamePoint([0.0], [0.0]), 0.3)
    expected = math.sqrt(2 * math.log(10) + math.log(2)) + 2
    assert beta_t(cfg, model) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(4.3018, abs=1e-4)


def test_beta_uses_lambda_inverse_on_noise_term():
    cfg = ConfidenceConfig(sigma_noise=2.0, rkhs_bound=1.0, delta=0.5)
    model = PosteriorModel(RBF, 4.0)
    assert beta_t(cfg, model) == pytest.approx(2.0 / 4.0 * math.sqrt(2 * math.log(2)) + 1.0 / 2.0)


def test_beta_override():
    cfg = ConfidenceConfig(beta_override=0.5)
    model = PosteriorModel(RBF, 1.0)
    assert beta_t(cfg, model) == 0.5
    model.update(GamePoint([0.0, 0.0], [0.0]), 1.0)
    assert beta_t(cfg, model) == 0.5


def test_beta_nondecreasing():
    rng = np.random.default_rng(9)
    cfg = ConfidenceConfig()
    model = PosteriorModel(RBF, 1.0)
    prev = beta_t(cfg, model)
    for _ in range(50):
        model.update(GamePoint(rng.normal(size=2), rng.normal(size=1)), rng.normal())
        cur = beta_t(cfg, model)
        assert cur >= prev - 1e-12
        prev = cur


# -- confidence bounds -----------------------------------------------------------

def test_zero_beta_collapses_bounds():
    model = build(RBF, 1.0, np.random.default_rng(0).normal(size=(3, 3)), np.ones((3, 1)))
    q = GamePoint([0.0, 0.0], [0.0])
    lcb, ucb = conf_bounds(model, ConfidenceConfig(beta_override=0.0), q)
    np.testing.assert_array_equal(lcb, ucb)
    np.testing.assert_array_equal(lcb, posterior_mean(model, q))


def test_empty_bounds_unit_beta():
    lcb, ucb = conf_bounds(PosteriorModel(RBF, 1.0), ConfidenceConfig(beta_override=1.0), GamePoint([0.0, 0.0], [0.0]))
    assert lcb[0] == -1.0 and ucb[0] == 1.0


def test_width_identity():
    rng = np.random.default_rng(10)
    model = build(RBF, 1.0, rng.normal(size=(8, 3)), rng.normal(size=(8, 1)))
    cfg = ConfidenceConfig(beta_override=1.7)
    Q = rng.normal(size=(100, 3))
    lcb, ucb = confidence_box(model, cfg, Q)
    _, var = model.predict(Q)
    np.testing.assert_allclose(ucb[:, 0] - lcb[:, 0], 2 * 1.7 * np.sqrt(var), rtol=1e-12, atol=1e-15)
    assert np.all(lcb <= ucb)


# -- information gain --------------------------------------------------------------

def test_info_gain_empty_and_single():
    model = PosteriorModel(KernelSpec("rbf"), 1.0)
    assert realized_info_gain(model) == 0.0
    model.update(GamePoint([0.0], [0.0]), 1.0)
    assert realized_info_gain(model) == pytest.approx(0.5 * math.log(2), abs=1e-14)
    assert realized_info_gain(model) == pytest.approx(0.34657, abs=1e-5)


def test_info_gain_diagonal_factorizes():
    spec = KernelSpec("rbf", lengthscale=1e-3)
    model = PosteriorModel(spec, 2.0)
    for i in range(5):
        model.update(GamePoint([float(i)], [0.0]), 0.0)
    assert realized_info_gain(model) == pytest.approx(5 * 0.5 * math.log(1 + 1 / 2.0), abs=1e-12)


def test_info_gain_monotone():
    rng = np.random.default_rng(11)
    model = PosteriorModel(KernelSpec("matern", nu=1.5), 1.0)
    prev = 0.0
    for _ in range(100):
        model.update(GamePoint(rng.uniform(size=2), rng.uniform(size=1)), rng.normal())
        cur = realized_info_gain(model)
        assert cur >= prev - 1e-12
        prev = cur


def test_variance_clamp_at_history_points():
    rng = np.random.default_rng(12)
    Z = rng.uniform(size=(20, 3))
    model = build(KernelSpec("rbf", lengthscale=2.0), 1e-3, Z, rng.normal(size=(20, 1)))
    Q = np.vstack([Z] * 50 + [rng.uniform(size=(9000, 3))])
    _, var = model.predict(Q)
    assert np.all(var >= 0)


# -- merged repeats ------------------------------------------------------------------------

def _repeated_data(seed=13, n_distinct=6, n_obs=40):
    rng = np.random.default_rng(seed)
    base = rng.uniform(size=(n_distinct, 3))
    Z = base[rng.integers(n_distinct, size=n_obs)]
    return Z, rng.normal(size=(n_obs, 2)), rng.uniform(size=(15, 3))


def test_merged_repeats_match_dense_solve():
    Z, Y, Q = _repeated_data()
    mean0, var0 = dense_oracle(RBF, 0.3, Z, Y, Q)
    merged = PosteriorModel(RBF, 0.3, merge_repeats=True)
    for z, y in zip(Z, Y):
        merged.update(z, y)
    mean, var = merged.predict(Q)
    assert merged.t == 40 and len(merged.inputs) == 6
    np.testing.assert_allclose(mean, mean0, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(var, var0, rtol=1e-8, atol=1e-10)


def test_merged_repeats_keep_log_det_and_beta():
    Z, Y, _ = _repeated_data(seed=14)
    plain = PosteriorModel.from_data(RBF, 0.5, Z, Y)
    merged = PosteriorModel.from_data(RBF, 0.5, Z, Y, merge_repeats=True)
    incremental = PosteriorModel(RBF, 0.5, merge_repeats=True)
    for z, y in zip(Z, Y):
        incremental.update(z, y)
    assert merged.log_det() == pytest.approx(plain.log_det(), rel=1e-10)
    assert incremental.log_det() == pytest.approx(plain.log_det(), rel=1e-10)
    cfg = ConfidenceConfig(sigma_noise=0.1)
    assert beta_t(cfg, merged) == pytest.approx(beta_t(cfg, plain), rel=1e-12)
    np.testing.assert_allclose(merged.targets, incremental.targets, rtol=1e-12)
    np.testing.assert_array_equal(merged.counts, incremental.counts)


def test_merge_without_repeats_is_plain():
    rng = np.random.default_rng(15)
    Z, Y, Q = rng.uniform(size=(10, 3)), rng.normal(size=(10, 1)), rng.uniform(size=(4, 3))
    a = PosteriorModel.from_data(RBF, 0.2, Z, Y)
    b = PosteriorModel.from_data(RBF, 0.2, Z, Y, merge_repeats=True)
    np.testing.assert_allclose(a.predict(Q)[0], b.predict(Q)[0], rtol=1e-12)
    np.testing.assert_allclose(a.chol, b.chol, rtol=1e-12)
