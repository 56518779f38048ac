"""
Decision-making agents for repeated games with an unknown opponent.

All agents follow the same two-call protocol driven by the game loop:
``act(t)`` returns an action index before the opponent type is revealed, and
``observe(feedback)`` delivers the revealed type, the noisy response and
whatever reward information the agent is entitled to.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputError
from .gp_regression import ConfidenceConfig, PosteriorModel, beta_t, confidence_box
from .kernels import KernelSpec

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
GRID_POINTS = 33
ARG_TOL = 1e-6


# -- strategies --------------------------------------------------------------------

@dataclass
class Strategy:
    """Probability vector over a finite action set."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise InputError("strategy must be a nonempty 1-D vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InputError("strategy entries must be finite and nonnegative")
        total = p.sum()
        if not total > 0:
            raise InputError("strategy has zero mass")
        self.probs = p / total

    @classmethod
    def uniform(cls, n: int) -> "Strategy":
        return cls(np.full(n, 1.0 / n))

    def __len__(self):
        return self.probs.size

    def entropy(self) -> float:
        p = self.probs[self.probs > 0]
        return float(-(p * np.log(p)).sum())

    def sample(self, rng: np.random.Generator) -> int:
        # inverse-CDF on one uniform draw keeps the stream consumption fixed per round
        cdf = np.cumsum(self.probs)
        u = rng.random() * cdf[-1]
        return int(min(np.searchsorted(cdf, u, side="right"), self.probs.size - 1))


def mw_update(strategy: Strategy, rewards, eta: float) -> Strategy:
    """``p'[x] ∝ p[x] * exp(eta * rewards[x])``, computed in log space."""
    r = np.asarray(rewards, dtype=float)
    if r.shape != strategy.probs.shape:
        raise InputError(f"reward vector has shape {r.shape}, strategy has {strategy.probs.shape}")
    if not np.all(np.isfinite(r)):
        raise InputError("rewards must be finite")
    with np.errstate(divide="ignore"):
        logits = np.log(strategy.probs) + eta * r
    logits -= logits.max()
    return Strategy(np.exp(logits))


def hedge_update(strategy: Strategy, full_rewards, eta: float) -> Strategy:
    return mw_update(strategy, full_rewards, eta)


def exp3_play_probs(weights: Strategy, gamma_mix: float) -> np.ndarray:
    """Sampling distribution: weights mixed with the uniform distribution."""
    n = len(weights)
    return (1.0 - gamma_mix) * weights.probs + gamma_mix / n


def exp3_update(strategy: Strategy, played: int, reward: float, eta: float, gamma_mix: float) -> Strategy:
    """
    Importance-weighted multiplicative update of the Exp3 weight distribution.

    ``strategy`` holds the unmixed weights; the importance weight divides the
    reward by the probability with which ``played`` was actually sampled,
    i.e. by :func:`exp3_play_probs`. Returns the updated unmixed weights.
    """
    if not 0.0 <= reward <= 1.0:
        raise InputError(f"Exp3 reward {reward} outside [0, 1]")
    if not 0.0 <= gamma_mix <= 1.0:
        raise InputError("gamma_mix must lie in [0, 1]")
    n = len(strategy)
    if not 0 <= played < n:
        raise InputError("played index out of range")
    p_play = exp3_play_probs(strategy, gamma_mix)[played]
    est = np.zeros(n)
    est[played] = reward / p_play
    return mw_update(strategy, est, eta)


def default_eta(n_actions: int, horizon: int) -> float:
    """MW step ``sqrt(8 log|X| / T)``."""
    if n_actions < 1 or horizon < 1:
        raise InputError("need at least one action and one round")
    return math.sqrt(8.0 * math.log(n_actions) / horizon)


def exp3_gamma(n_actions: int, horizon: int) -> float:
    return min(1.0, math.sqrt(n_actions * math.log(n_actions) / ((math.e - 1.0) * horizon)))


# -- reward oracle ---------------------------------------------------------------------

class RewardOracle:
    """
    The learner's known reward ``r(x, y)`` with a box maximizer.

    Parameters
    ----------
    fn : callable
        Vectorized ``fn(X, Y) -> (n,)`` for ``X`` of shape ``(n, d)`` and ``Y``
        of shape ``(n, m)``.
    response_lo, response_hi : array-like, optional
        Feasible response range. Confidence boxes are intersected with it
        before maximization.
    lipschitz : float
        Lipschitz constant of ``fn`` under the 1-norm.
    maximizer : callable, optional
        Specialized ``maximizer(X, lo, hi) -> (Ystar, values)``; replaces the
        generic grid/golden-section search.
    """

    def __init__(self, fn: Callable, response_lo=None, response_hi=None, lipschitz: float = 1.0,
                 maximizer: Optional[Callable] = None):
        self.fn = fn
        self.response_lo = None if response_lo is None else np.atleast_1d(np.asarray(response_lo, float))
        self.response_hi = None if response_hi is None else np.atleast_1d(np.asarray(response_hi, float))
        self.lipschitz = float(lipschitz)
        self.maximizer = maximizer

    def eval(self, X, Y) -> np.ndarray:
        """Rewards for row-aligned ``X (n, d)`` and ``Y (n, m)``; a single row broadcasts."""
        X = np.atleast_2d(np.asarray(X, float))
        Y = np.atleast_2d(np.asarray(Y, float))
        n = max(X.shape[0], Y.shape[0])
        X = np.broadcast_to(X, (n, X.shape[1]))
        Y = np.broadcast_to(Y, (n, Y.shape[1]))
        return np.asarray(self.fn(X, Y), dtype=float)

    def clip_box(self, lo: np.ndarray, hi: np.ndarray):
        """Intersect boxes with the feasible response range; empty boxes collapse to the nearest face."""
        lo, hi = lo.copy(), hi.copy()
        if self.response_lo is not None:
            lo = np.maximum(lo, self.response_lo)
            hi = np.maximum(hi, self.response_lo)
        if self.response_hi is not None:
            hi = np.minimum(hi, self.response_hi)
            lo = np.minimum(lo, self.response_hi)
        return lo, hi

    def maximize_over_box(self, X, lo, hi):
        """Maximize ``r(x, y)`` over ``y in [lo, hi]`` for a batch of actions.

        Returns ``(Ystar, values, flags)``; ``flags`` marks rows where the
        refinement step failed and the grid value was used.
        """
        X = np.atleast_2d(np.asarray(X, float))
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        if lo.shape != hi.shape or lo.shape[0] != X.shape[0]:
            raise InputError("box bounds must have shape (n, m) matching the actions")
        if np.any(lo > hi):
            raise InputError("box lower bound exceeds upper bound")
        lo, hi = self.clip_box(lo, hi)
        if self.maximizer is not None:
            ystar, vals = self.maximizer(X, lo, hi)
            return ystar, np.asarray(vals, float), np.zeros(X.shape[0], dtype=bool)
        if lo.shape[1] == 1:
            return _maximize_scalar(self.eval, X, lo, hi)
        return _maximize_vector(self.eval, X, lo, hi)


def _golden_section(f: Callable, a: np.ndarray, b: np.ndarray, tol: float = ARG_TOL):
    """Batched golden-section search for maxima of ``f`` on ``[a, b]`` (one interval per row)."""
    a, b = a.astype(float), b.astype(float)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while np.max(b - a) > tol:
        left = fc >= fd
        a = np.where(left, a, c)
        b = np.where(left, d, b)
        new_c = np.where(left, b - GOLDEN * (b - a), d)
        new_d = np.where(left, c, a + GOLDEN * (b - a))
        fp = f(np.where(left, new_c, new_d))
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
        c, d = new_c, new_d
    mid = 0.5 * (a + b)
    return mid, f(mid)


def _maximize_scalar(reward: Callable, X, lo, hi):
    n = X.shape[0]
    ts = np.linspace(0.0, 1.0, GRID_POINTS)
    grid = lo + (hi - lo) * ts[None, :]  # (n, G)
    flat_x = np.repeat(X, GRID_POINTS, axis=0)
    vals = reward(flat_x, grid.reshape(-1, 1)).reshape(n, GRID_POINTS)
    best = np.argmax(vals, axis=1)
    rows = np.arange(n)
    gbest_y, gbest_v = grid[rows, best], vals[rows, best]
    a = grid[rows, np.maximum(best - 1, 0)]
    b = grid[rows, np.minimum(best + 1, GRID_POINTS - 1)]

    def f(y):
        return reward(X, y[:, None])

    y_ref, v_ref = _golden_section(f, a, b)
    bad = ~np.isfinite(v_ref)
    use_ref = (v_ref > gbest_v) & ~bad
    ystar = np.where(use_ref, y_ref, gbest_y)
    vstar = np.where(use_ref, v_ref, gbest_v)
    return ystar[:, None], vstar, bad


def _maximize_vector(reward: Callable, X, lo, hi):
    """Per-coordinate grid (``GRID_POINTS`` per axis) followed by one coordinate-descent pass."""
    n, m = lo.shape
    ts = np.linspace(0.0, 1.0, GRID_POINTS)
    axes = np.stack(np.meshgrid(*([ts] * m), indexing="ij"), axis=-1).reshape(-1, m)  # (G^m, m)
    G = axes.shape[0]
    pts = lo[:, None, :] + (hi - lo)[:, None, :] * axes[None, :, :]  # (n, G, m)
    vals = reward(np.repeat(X, G, axis=0), pts.reshape(-1, m)).reshape(n, G)
    best = np.argmax(vals, axis=1)
    rows = np.arange(n)
    y = pts[rows, best].copy()
    v = vals[rows, best].copy()
    step = (hi - lo) / (GRID_POINTS - 1)
    bad = np.zeros(n, dtype=bool)
    for j in range(m):
        a = np.maximum(y[:, j] - step[:, j], lo[:, j])
        b = np.minimum(y[:, j] + step[:, j], hi[:, j])

        def f(c, j=j):
            yy = y.copy()
            yy[:, j] = c
            return reward(X, yy)

        cj, vj = _golden_section(f, a, b)
        ok = np.isfinite(vj)
        bad |= ~ok
        better = ok & (vj > v)
        y[better, j] = cj[better]
        v = np.where(better, vj, v)
    return y, v, bad


def optimistic_rewards(oracle: RewardOracle, model: PosteriorModel, conf: ConfidenceConfig,
                       actions: np.ndarray, theta, beta: Optional[float] = None):
    """Optimistic reward of every action against type ``theta``.

    Returns ``(values, flags)``: the maximum of ``r(x, y)`` over the
    confidence box of each action, and a per-action solver fallback flag.
    """
    actions = np.atleast_2d(np.asarray(actions, float))
    theta = np.atleast_1d(np.asarray(theta, float))
    Q = np.hstack([actions, np.broadcast_to(theta, (actions.shape[0], theta.size))])
    lcb, ucb = confidence_box(model, conf, Q, beta=beta)
    _, vals, flags = oracle.maximize_over_box(actions, lcb, ucb)
    return vals, flags


def optimistic_reward(oracle: RewardOracle, model: PosteriorModel, conf: ConfidenceConfig, x, theta) -> float:
    vals, _ = optimistic_rewards(oracle, model, conf, np.atleast_2d(np.asarray(x, float)), theta)
    return float(vals[0])


def argmax_lowest(values) -> int:
    """Index of the maximum; ties resolved toward the lowest index."""
    values = np.asarray(values, float)
    if values.size == 0:
        raise InputError("cannot take argmax over an empty action set")
    return int(np.flatnonzero(values == values.max())[0])


def rescale(values, reward_range) -> np.ndarray:
    lo, hi = reward_range
    return (np.asarray(values, float) - lo) / (hi - lo)


# -- agents ------------------------------------------------------------------------------

@dataclass
class Feedback:
    """What the learner sees at the end of a round."""

    t: int
    action_index: int
    theta: np.ndarray
    y: np.ndarray
    observed_reward: float
    full_rewards: Optional[Callable[[], np.ndarray]] = None


class Agent:
    """Base class; subclasses override :meth:`act` and :meth:`observe`."""

    name = "agent"
    last_optimistic: Optional[float] = None
    solver_fallback = False

    def act(self, t: int) -> int:
        raise NotImplementedError

    def observe(self, fb: Feedback) -> None:
        pass

    @property
    def strategy(self) -> Optional[Strategy]:
        return None


class StackelUCB(Agent):
    """Multiplicative weights driven by optimistic reward estimates.

    Each round the agent samples from its strategy. After the type and the
    noisy response are revealed, the optimistic reward of every action is
    computed from the confidence bounds *before* the new observation is
    absorbed; the strategy takes an MW step on those rewards (rescaled to
    [0, 1] by the declared reward range) and only then the posterior is
    updated.
    """

    name = "stackelucb"

    def __init__(self, actions, oracle: RewardOracle, kernel: KernelSpec, lam: float,
                 conf: ConfidenceConfig, horizon: int, reward_range, rng: np.random.Generator,
                 eta: Optional[float] = None, prior_mean=None):
        self.actions = np.atleast_2d(np.asarray(actions, float))
        n = self.actions.shape[0]
        self.oracle = oracle
        self.model = PosteriorModel(kernel, lam, prior_mean=prior_mean, merge_repeats=True)
        self.conf = conf
        self.eta = default_eta(n, horizon) if eta is None else float(eta)
        self.reward_range = reward_range
        self.rng = rng
        self._strategy = Strategy.uniform(n)

    @property
    def strategy(self) -> Strategy:
        return self._strategy

    def act(self, t: int) -> int:
        return self._strategy.sample(self.rng)

    def observe(self, fb: Feedback) -> None:
        y = np.atleast_1d(np.asarray(fb.y, float))
        if not np.all(np.isfinite(y)):
            raise InputError("non-finite response; round rejected")
        vals, flags = optimistic_rewards(self.oracle, self.model, self.conf, self.actions, fb.theta)
        scaled = np.clip(rescale(vals, self.reward_range), 0.0, 1.0)
        new_strategy = mw_update(self._strategy, scaled, self.eta)
        self.model.update((np.concatenate([self.actions[fb.action_index], np.atleast_1d(fb.theta)])), y)
        self._strategy = new_strategy
        self.last_optimistic = float(vals[fb.action_index])
        self.solver_fallback = bool(flags.any())


def stackelucb_act(agent: StackelUCB, t: int = 0):
    idx = agent.act(t)
    return agent.actions[idx], idx


def stackelucb_update(agent: StackelUCB, action_index: int, theta, y) -> StackelUCB:
    agent.observe(Feedback(0, action_index, np.atleast_1d(theta), np.atleast_1d(y), float("nan")))
    return agent


class SingleOpponentUCB(Agent):
    """Deterministic bilevel rule for a fixed, known opponent type.

    Plays the action maximizing the optimistic reward against ``theta_bar``.
    """

    name = "single_ucb"

    def __init__(self, actions, oracle: RewardOracle, kernel: KernelSpec, lam: float,
                 conf: ConfidenceConfig, theta_bar, model: Optional[PosteriorModel] = None,
                 prior_mean=None):
        self.actions = np.atleast_2d(np.asarray(actions, float))
        self.oracle = oracle
        self.model = model if model is not None else PosteriorModel(kernel, lam, prior_mean=prior_mean,
                                                                    merge_repeats=True)
        self.conf = conf
        self.theta_bar = np.atleast_1d(np.asarray(theta_bar, float))

    def act(self, t: int) -> int:
        vals, flags = optimistic_rewards(self.oracle, self.model, self.conf, self.actions, self.theta_bar)
        idx = argmax_lowest(vals)
        self.last_optimistic = float(vals[idx])
        self.solver_fallback = bool(flags.any())
        return idx

    def observe(self, fb: Feedback) -> None:
        y = np.atleast_1d(np.asarray(fb.y, float))
        self.model.update(np.concatenate([self.actions[fb.action_index], np.atleast_1d(fb.theta)]), y)


def single_opponent_act(agent: SingleOpponentUCB, theta_bar=None, actions=None):
    if actions is not None and len(actions) == 0:
        raise InputError("empty action set")
    if theta_bar is not None:
        agent.theta_bar = np.atleast_1d(np.asarray(theta_bar, float))
    if actions is not None:
        agent.actions = np.atleast_2d(np.asarray(actions, float))
    return agent.actions[agent.act(0)]


class Hedge(Agent):
    """Full-information MW on the true reward of every action (idealized benchmark)."""

    name = "hedge"

    def __init__(self, n_actions: int, horizon: int, reward_range, rng: np.random.Generator,
                 eta: Optional[float] = None):
        self.eta = default_eta(n_actions, horizon) if eta is None else float(eta)
        self.reward_range = reward_range
        self.rng = rng
        self._strategy = Strategy.uniform(n_actions)

    @property
    def strategy(self) -> Strategy:
        return self._strategy

    def act(self, t: int) -> int:
        return self._strategy.sample(self.rng)

    def observe(self, fb: Feedback) -> None:
        if fb.full_rewards is None:
            raise InputError("Hedge needs full-information rewards")
        scaled = np.clip(rescale(fb.full_rewards(), self.reward_range), 0.0, 1.0)
        self._strategy = hedge_update(self._strategy, scaled, self.eta)


class Exp3(Agent):
    """Bandit-feedback MW with uniform exploration mixing."""

    name = "exp3"

    def __init__(self, n_actions: int, horizon: int, reward_range, rng: np.random.Generator,
                 gamma_mix: Optional[float] = None, eta: Optional[float] = None):
        self.gamma_mix = exp3_gamma(n_actions, horizon) if gamma_mix is None else float(gamma_mix)
        self.eta = self.gamma_mix / n_actions if eta is None else float(eta)
        self.reward_range = reward_range
        self.rng = rng
        self.weights = Strategy.uniform(n_actions)

    @property
    def strategy(self) -> Strategy:
        return Strategy(exp3_play_probs(self.weights, self.gamma_mix))

    def act(self, t: int) -> int:
        return self.strategy.sample(self.rng)

    def observe(self, fb: Feedback) -> None:
        r = float(np.clip(rescale(fb.observed_reward, self.reward_range), 0.0, 1.0))
        self.weights = exp3_update(self.weights, fb.action_index, r, self.eta, self.gamma_mix)


class GPUCB(Agent):
    """Single-level GP bandit on the composite reward ``g(x) = r(x, b(x, theta_bar))``."""

    name = "gp_ucb"

    def __init__(self, actions, kernel: KernelSpec, lam: float, conf: ConfidenceConfig, theta_bar=None,
                 prior_mean=None):
        self.actions = np.atleast_2d(np.asarray(actions, float))
        self.theta_bar = None if theta_bar is None else np.atleast_1d(np.asarray(theta_bar, float))
        self.model = PosteriorModel(kernel, lam, n_outputs=1, prior_mean=prior_mean, merge_repeats=True)
        self.conf = conf

    def _inputs(self, X):
        if self.theta_bar is None:
            return X
        return np.hstack([X, np.broadcast_to(self.theta_bar, (X.shape[0], self.theta_bar.size))])

    def act(self, t: int) -> int:
        return gp_ucb_act(self.model, self.conf, self._inputs(self.actions))

    def observe(self, fb: Feedback) -> None:
        self.model.update(self._inputs(self.actions[fb.action_index:fb.action_index + 1])[0], [fb.observed_reward])


def gp_ucb_act(model: PosteriorModel, conf: ConfidenceConfig, actions) -> int:
    """Index maximizing ``mu + beta * sigma`` of the composite-reward model."""
    mean, var = model.predict(np.atleast_2d(actions))
    return argmax_lowest(mean[:, 0] + beta_t(conf, model) * np.sqrt(var))


class FixedAction(Agent):
    name = "fixed_action"

    def __init__(self, index: int):
        self.index = int(index)

    def act(self, t: int) -> int:
        return self.index


def max_min_act(oracle: RewardOracle, actions, response_space_sample) -> int:
    """Action maximizing the worst-case reward over a sample of responses."""
    X = np.atleast_2d(np.asarray(actions, float))
    Ys = np.asarray(response_space_sample, float)
    if Ys.ndim == 1:
        Ys = Ys[:, None]
    n, k = X.shape[0], Ys.shape[0]
    table = oracle.eval(np.repeat(X, k, axis=0), np.tile(Ys, (n, 1))).reshape(n, k)
    return argmax_lowest(table.min(axis=1))


def best_offline_act(offline_model: PosteriorModel, oracle: RewardOracle, actions, theta_bar) -> int:
    """Action maximizing the reward at the offline posterior-mean response."""
    X = np.atleast_2d(np.asarray(actions, float))
    th = np.atleast_1d(np.asarray(theta_bar, float))
    Q = np.hstack([X, np.broadcast_to(th, (X.shape[0], th.size))])
    mean, _ = offline_model.predict(Q)
    return argmax_lowest(oracle.eval(X, mean))
