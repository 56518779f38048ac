import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stackelucb.errors import InputError
from stackelucb.gp_regression import ConfidenceConfig, PosteriorModel, confidence_box
from stackelucb.kernels import GamePoint, KernelSpec
from stackelucb.policies import (
    Exp3,
    Feedback,
    GPUCB,
    RewardOracle,
    SingleOpponentUCB,
    StackelUCB,
    Strategy,
    best_offline_act,
    exp3_play_probs,
    exp3_update,
    gp_ucb_act,
    hedge_update,
    max_min_act,
    mw_update,
    optimistic_reward,
    optimistic_rewards,
    single_opponent_act,
    stackelucb_act,
    stackelucb_update,
    default_eta,
)

RBF = KernelSpec("rbf", lengthscale=0.5)


def identity_reward():
    return RewardOracle(lambda X, Y: Y[:, 0])


def neg_abs_reward():
    return RewardOracle(lambda X, Y: -np.abs(Y[:, 0]))


# -- optimistic reward ---------------------------------------------------------------

def test_zero_width_box():
    oracle = RewardOracle(lambda X, Y: X[:, 0] * Y[:, 0] - Y[:, 0] ** 2)
    _, v, _ = oracle.maximize_over_box(np.array([[2.0]]), np.array([[0.3]]), np.array([[0.3]]))
    assert v[0] == pytest.approx(2 * 0.3 - 0.09, abs=1e-12)


def test_monotone_reward_takes_upper_end():
    y, v, _ = identity_reward().maximize_over_box(np.zeros((1, 1)), [[-1.0]], [[2.0]])
    assert v[0] == 2.0 and y[0, 0] == 2.0


def test_neg_abs_interior_max():
    y, v, _ = neg_abs_reward().maximize_over_box(np.zeros((1, 1)), [[-1.0]], [[2.0]])
    assert v[0] == pytest.approx(0.0, abs=1e-6)
    assert y[0, 0] == pytest.approx(0.0, abs=1e-6)


def test_golden_refines_off_grid_peak():
    peak = 0.123456
    oracle = RewardOracle(lambda X, Y: -(Y[:, 0] - peak) ** 2)
    y, v, flags = oracle.maximize_over_box(np.zeros((1, 1)), [[-1.0]], [[1.0]])
    assert abs(y[0, 0] - peak) < 1e-6 and not flags.any()


def test_vector_box_maximizer():
    target = np.array([0.31, -0.77])
    oracle = RewardOracle(lambda X, Y: -np.abs(Y - target).sum(axis=1))
    y, v, _ = oracle.maximize_over_box(np.zeros((1, 1)), [[-1.0, -1.0]], [[1.0, 1.0]])
    np.testing.assert_allclose(y[0], target, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0, 3), st.floats(-2, 2))
def test_box_max_dominates_interior(lo, width, c):
    oracle = RewardOracle(lambda X, Y: np.sin(3 * Y[:, 0]) - 0.2 * (Y[:, 0] - c) ** 2)
    _, v, _ = oracle.maximize_over_box(np.zeros((1, 1)), [[lo]], [[lo + width]])
    ys = np.linspace(lo, lo + width, 2001)
    assert v[0] >= np.max(np.sin(3 * ys) - 0.2 * (ys - c) ** 2) - 1e-6


def test_response_bounds_clip_box():
    oracle = RewardOracle(lambda X, Y: -Y[:, 0], response_lo=[0.0])
    _, v, _ = oracle.maximize_over_box(np.zeros((1, 1)), [[-5.0]], [[3.0]])
    assert v[0] == 0.0


def test_optimistic_reward_covers_truth():
    rng = np.random.default_rng(0)
    model = PosteriorModel(RBF, 1.0)
    for _ in range(10):
        z = rng.uniform(size=2)
        model.update(GamePoint(z[:1], z[1:]), np.sin(3 * z.sum()))
    conf = ConfidenceConfig(beta_override=2.0)
    oracle = RewardOracle(lambda X, Y: -np.abs(Y[:, 0] - X[:, 0]))
    for x in np.linspace(0, 1, 5):
        lcb, ucb = confidence_box(model, conf, np.array([[x, 0.5]]))
        truth = np.sin(3 * (x + 0.5))
        if lcb[0, 0] <= truth <= ucb[0, 0]:
            assert optimistic_reward(oracle, model, conf, [x], [0.5]) >= -abs(truth - x) - 1e-9


# -- multiplicative weights -------------------------------------------------------------

def test_equal_rewards_leave_strategy():
    s = Strategy(np.array([0.1, 0.2, 0.7]))
    np.testing.assert_allclose(mw_update(s, [0.4, 0.4, 0.4], 0.9).probs, s.probs, rtol=1e-15)


def test_mw_hand_arithmetic():
    s = mw_update(Strategy.uniform(2), [1.0, 0.0], math.log(2))
    np.testing.assert_allclose(s.probs, [2 / 3, 1 / 3], rtol=1e-15)


def test_default_eta_value():
    assert default_eta(41, 500) == pytest.approx(math.sqrt(8 * math.log(41) / 500), rel=1e-15)
    assert default_eta(41, 500) == pytest.approx(0.243756, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=12), st.floats(-50, 50), st.floats(0.01, 5))
def test_mw_shift_invariance(rewards, c, eta):
    n = len(rewards)
    s = Strategy(np.linspace(1, 2, n))
    a = mw_update(s, rewards, eta).probs
    b = mw_update(s, np.asarray(rewards) + c, eta).probs
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)
    assert abs(a.sum() - 1) <= 1e-12 and np.all(a >= 0)


def test_hedge_cases():
    s = Strategy.uniform(3)
    np.testing.assert_allclose(hedge_update(s, np.zeros(3), 1.0).probs, s.probs)
    np.testing.assert_allclose(hedge_update(Strategy.uniform(2), [1.0, 0.0], math.log(2)).probs, [2 / 3, 1 / 3])
    with pytest.raises(InputError):
        hedge_update(s, np.zeros(4), 1.0)


def test_exp3_cases():
    w = Strategy(np.array([0.5, 0.3, 0.2]))
    np.testing.assert_allclose(exp3_play_probs(exp3_update(w, 1, 0.7, 0.3, 1.0), 1.0), np.full(3, 1 / 3))
    np.testing.assert_allclose(exp3_update(w, 2, 0.0, 0.3, 0.1).probs, w.probs, rtol=1e-15)
    assert exp3_update(w, 2, 0.5, 0.3, 0.1).probs[2] > w.probs[2]
    with pytest.raises(InputError):
        exp3_update(w, 0, 1.5, 0.3, 0.1)


def test_strategy_invariant_after_updates():
    rng = np.random.default_rng(1)
    s = Strategy.uniform(30)
    for _ in range(500):
        s = mw_update(s, rng.uniform(size=30), 0.5)
        assert abs(s.probs.sum() - 1) <= 1e-12 and np.all(s.probs >= 0)


# -- StackelUCB ---------------------------------------------------------------------------

def make_agent(n=4, seed=0, horizon=100, probs=None):
    actions = np.linspace(0, 1, n)[:, None]
    agent = StackelUCB(actions, neg_abs_reward(), RBF, 1.0, ConfidenceConfig(beta_override=1.0),
                       horizon, (-3.0, 0.0), np.random.default_rng(seed))
    if probs is not None:
        agent._strategy = Strategy(np.asarray(probs, float))
    return agent


def test_degenerate_strategy_always_zero():
    agent = make_agent(probs=[1, 0, 0, 0])
    assert all(stackelucb_act(agent)[1] == 0 for _ in range(200))


def test_uniform_sampling_frequencies():
    agent = make_agent()
    counts = np.bincount([agent.act(0) for _ in range(100_000)], minlength=4) / 100_000
    assert np.all(np.abs(counts - 0.25) <= 0.01)


def test_sampling_deterministic_given_seed():
    a, b = make_agent(seed=5), make_agent(seed=5)
    assert [a.act(0) for _ in range(50)] == [b.act(0) for _ in range(50)]


def test_update_uses_pre_update_bounds():
    agent = make_agent(horizon=50)
    theta = np.array([0.2])
    pre_model = agent.model.copy()
    vals, _ = optimistic_rewards(agent.oracle, pre_model, agent.conf, agent.actions, theta)
    from stackelucb.policies import mw_update as mw, rescale
    expected = mw(agent.strategy, np.clip(rescale(vals, (-3.0, 0.0)), 0, 1), agent.eta).probs
    stackelucb_update(agent, 1, theta, [0.7])
    np.testing.assert_allclose(agent.strategy.probs, expected, rtol=1e-14)
    assert len(agent.model) == 1


def test_rejects_nonfinite_response():
    agent = make_agent()
    before = agent.strategy.probs.copy()
    with pytest.raises(InputError):
        stackelucb_update(agent, 0, [0.1], [float("inf")])
    np.testing.assert_array_equal(agent.strategy.probs, before)
    assert len(agent.model) == 0


def test_large_beta_saturates_separable_reward():
    # r(x, y) = x - |y| saturates at x when the box covers 0
    oracle = RewardOracle(lambda X, Y: X[:, 0] - np.abs(Y[:, 0]) / 10.0)
    actions = np.array([[0.0], [0.5], [1.0]])
    agent = StackelUCB(actions, oracle, RBF, 1.0, ConfidenceConfig(beta_override=1e6), 100, (-1.0, 1.0),
                       np.random.default_rng(0), eta=1.0)
    agent.model.update(np.array([0.5, 0.0]), [3.0])
    stackelucb_update(agent, 1, [0.0], [2.0])
    expected = mw_update(Strategy.uniform(3), (actions[:, 0] + 1.0) / 2.0, 1.0).probs
    np.testing.assert_allclose(agent.strategy.probs, expected, rtol=1e-7)


# -- single opponent -----------------------------------------------------------------------

def test_single_action_set():
    agent = SingleOpponentUCB(np.array([[0.3]]), neg_abs_reward(), RBF, 1.0, ConfidenceConfig(beta_override=1.0), [0.0])
    assert single_opponent_act(agent)[0] == 0.3
    with pytest.raises(InputError):
        single_opponent_act(agent, actions=[])


def test_empty_model_separable_reward():
    actions = np.array([[0.1], [0.9], [0.4]])
    oracle = RewardOracle(lambda X, Y: 2 * X[:, 0] - Y[:, 0] ** 2)
    agent = SingleOpponentUCB(actions, oracle, RBF, 1.0, ConfidenceConfig(beta_override=1.0), [0.0])
    assert agent.act(0) == 1


def test_single_opponent_matches_brute_force():
    rng = np.random.default_rng(3)
    actions = rng.uniform(size=(5, 1))
    model = PosteriorModel(RBF, 1.0)
    for _ in range(4):
        z = rng.uniform(size=2)
        model.update(GamePoint(z[:1], z[1:]), rng.normal())
    conf = ConfidenceConfig(beta_override=0.8)
    oracle = RewardOracle(lambda X, Y: -np.abs(Y[:, 0] - X[:, 0]))
    agent = SingleOpponentUCB(actions, oracle, RBF, 1.0, conf, [0.4], model=model)
    brute = []
    for x in actions[:, 0]:
        lcb, ucb = confidence_box(model, conf, np.array([[x, 0.4]]))
        ys = np.linspace(lcb[0, 0], ucb[0, 0], 100_001)
        brute.append(np.max(-np.abs(ys - x)))
    assert agent.act(0) == int(np.argmax(brute))


def test_single_opponent_learned_response_hits_bilevel_optimum():
    actions = np.linspace(0, 1, 7)[:, None]
    b = lambda x: np.sin(4 * x)
    oracle = RewardOracle(lambda X, Y: -(Y[:, 0] - 0.5) ** 2 + 0.1 * X[:, 0])
    model = PosteriorModel(RBF, 1e-6)
    for x in np.linspace(0, 1, 41):
        model.update(np.array([x, 0.0]), [b(x)])
    agent = SingleOpponentUCB(actions, oracle, RBF, 1e-6, ConfidenceConfig(beta_override=0.0), [0.0], model=model)
    truth = -(b(actions[:, 0]) - 0.5) ** 2 + 0.1 * actions[:, 0]
    assert agent.act(0) == int(np.argmax(truth))


# -- baselines --------------------------------------------------------------------------

def test_gp_ucb_cases():
    actions = np.linspace(0, 1, 5)[:, None]
    model = PosteriorModel(RBF, 1.0)
    assert gp_ucb_act(model, ConfidenceConfig(beta_override=1.0), actions) == 0
    model.update(np.array([0.5]), [5.0])
    conf0 = ConfidenceConfig(beta_override=0.0)
    assert gp_ucb_act(model, conf0, actions) == 2
    conf = ConfidenceConfig(beta_override=2.0)
    mean, var = model.predict(actions)
    assert gp_ucb_act(model, conf, actions) == int(np.argmax(mean[:, 0] + 2 * np.sqrt(var)))


def test_max_min_cases():
    const = RewardOracle(lambda X, Y: np.ones(X.shape[0]))
    assert max_min_act(const, np.eye(3), np.zeros((4, 1))) == 0
    table = np.array([[3, 1, 4, 1], [5, 9, 2, 6], [5, 3, 5, 8]], float)
    oracle = RewardOracle(lambda X, Y: table[X[:, 0].astype(int), Y[:, 0].astype(int)])
    actions = np.arange(3)[:, None]
    responses = np.arange(4)[:, None]
    assert max_min_act(oracle, actions, responses) == int(np.argmax(table.min(axis=1)))
    assert max_min_act(oracle, actions, responses[2:3]) == int(np.argmax(table[:, 2]))


def test_best_offline_cases():
    actions = np.linspace(0, 1, 5)[:, None]
    b = lambda x: np.cos(3 * x)
    oracle = RewardOracle(lambda X, Y: -(Y[:, 0] - 0.2) ** 2)
    xs = np.linspace(0, 1, 200)
    model = PosteriorModel.from_data(RBF, 1e-6, np.c_[xs, np.zeros_like(xs)], b(xs))
    opt = int(np.argmax(-(b(actions[:, 0]) - 0.2) ** 2))
    assert best_offline_act(model, oracle, actions, [0.0]) == opt
    empty = PosteriorModel(RBF, 1.0, n_outputs=1)
    assert best_offline_act(empty, oracle, actions, [0.0]) == int(np.argmax(oracle.eval(actions, np.zeros((5, 1)))))
    single = PosteriorModel(KernelSpec("rbf"), 1.0)
    single.update(np.array([0.5, 0.0]), [2.0])
    assert single.predict(np.array([[0.5, 0.0]]))[0][0, 0] == pytest.approx(1.0)
