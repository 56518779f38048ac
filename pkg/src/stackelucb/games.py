"""
Repeated-game protocol, regret accounting and simplex discretization.

A round proceeds as: the agent samples an action; the type sequence produces
the opponent type from the past only; the opponent responds; the agent
receives the type and a noisy response. Rewards used for accounting are
computed from the noiseless response.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InputError, SetupError
from .policies import Agent, Feedback, RewardOracle

log = logging.getLogger(__name__)


@dataclass
class TypeHistory:
    """What an adaptive adversary may look at: past strategies and realized actions."""

    strategies: list = field(default_factory=list)
    actions: list = field(default_factory=list)


@dataclass
class GameEnv:
    """A finite-action repeated game.

    ``respond(x, theta)`` is the hidden response function; ``type_sequence(t,
    history)`` yields the opponent type of round ``t`` and must not depend on
    the current action. ``respond_all(theta)`` is an optional vectorized
    response of every action, used for hindsight regret and full-information
    baselines.
    """

    actions: np.ndarray
    type_sequence: Callable[[int, TypeHistory], np.ndarray]
    respond: Callable[[np.ndarray, np.ndarray], np.ndarray]
    reward: RewardOracle
    noise_sigma: float = 0.0
    reward_range: tuple = (0.0, 1.0)
    respond_all: Optional[Callable[[np.ndarray], np.ndarray]] = None
    theta_bar: Optional[np.ndarray] = None
    name: str = "game"
    _table_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.actions = np.atleast_2d(np.asarray(self.actions, float))
        if self.actions.shape[0] == 0:
            raise SetupError("environment needs at least one action")
        lo, hi = self.reward_range
        if not hi > lo:
            raise SetupError("reward_range must satisfy lo < hi")
        if self.noise_sigma < 0:
            raise SetupError("noise_sigma must be nonnegative")

    @property
    def n_actions(self) -> int:
        return self.actions.shape[0]

    def responses(self, theta) -> np.ndarray:
        """Noiseless responses of every action to ``theta``, shape ``(n, m)``."""
        theta = np.atleast_1d(np.asarray(theta, float))
        if self.respond_all is not None:
            out = np.asarray(self.respond_all(theta), float)
        else:
            out = np.array([np.atleast_1d(self.respond(x, theta)) for x in self.actions])
        return out.reshape(self.n_actions, -1)

    def reward_table(self, theta) -> np.ndarray:
        """``r(x, b(x, theta))`` for every action; memoized on the type vector."""
        theta = np.atleast_1d(np.asarray(theta, float))
        key = theta.tobytes()
        hit = self._table_cache.get(key)
        if hit is None:
            if len(self._table_cache) > 4096:
                self._table_cache.clear()
            hit = self.reward.eval(self.actions, self.responses(theta))
            self._table_cache[key] = hit
        return hit


@dataclass
class RoundRecord:
    t: int
    action_index: int
    theta: np.ndarray
    y_observed: np.ndarray
    y_true: np.ndarray
    reward: float
    optimistic_reward: Optional[float]
    cumulative_reward: float
    strategy_entropy: Optional[float]
    regret: float = float("nan")
    solver_fallback: bool = False


def play_round(env: GameEnv, agent: Agent, t: int, rng: np.random.Generator,
               history: Optional[TypeHistory] = None, cumulative: float = 0.0) -> RoundRecord:
    """Execute one protocol round and return its record.

    ``rng`` drives the observation noise only; the agent and the type
    sequence own their randomness.
    """
    history = history if history is not None else TypeHistory()
    strat = agent.strategy
    idx = agent.act(t)
    if not 0 <= idx < env.n_actions:
        raise SetupError(f"agent chose action {idx} outside 0..{env.n_actions - 1}")
    theta = np.atleast_1d(np.asarray(env.type_sequence(t, history), float))
    x = env.actions[idx]
    y_true = np.atleast_1d(np.asarray(env.respond(x, theta), float))
    noise = rng.normal(size=y_true.shape) * env.noise_sigma if env.noise_sigma > 0 else np.zeros_like(y_true)
    y_obs = y_true + noise
    reward = float(env.reward.eval(x, y_true)[0])
    observed_reward = float(env.reward.eval(x, y_obs)[0])
    agent.observe(Feedback(t, idx, theta, y_obs, observed_reward, full_rewards=lambda: env.reward_table(theta)))
    history.strategies.append(None if strat is None else strat.probs.copy())
    history.actions.append(idx)
    return RoundRecord(
        t=t,
        action_index=idx,
        theta=theta,
        y_observed=y_obs,
        y_true=y_true,
        reward=reward,
        optimistic_reward=agent.last_optimistic,
        cumulative_reward=cumulative + reward,
        strategy_entropy=None if strat is None else strat.entropy(),
        solver_fallback=agent.solver_fallback,
    )


def run_game(env: GameEnv, agent: Agent, horizon: int, rng: np.random.Generator,
             with_regret: bool = True) -> list[RoundRecord]:
    if horizon < 1:
        raise InputError("horizon must be at least 1")
    history = TypeHistory()
    records: list[RoundRecord] = []
    total = 0.0
    for t in range(1, horizon + 1):
        rec = play_round(env, agent, t, rng, history, total)
        total = rec.cumulative_reward
        records.append(rec)
    if with_regret:
        for rec, reg in zip(records, cumulative_regret(records, env)):
            rec.regret = float(reg)
    return records


def cumulative_regret(records: list[RoundRecord], env: GameEnv) -> np.ndarray:
    """Regret ``R(T')`` of every prefix against the best fixed action in hindsight."""
    if not records:
        return np.zeros(0)
    table = np.vstack([env.reward_table(r.theta) for r in records])  # (T, n)
    best = np.cumsum(table, axis=0).max(axis=1)
    realized = np.cumsum([r.reward for r in records])
    log.debug("hindsight sweep over %d actions x %d rounds", table.shape[1], table.shape[0])
    return best - realized


# -- type sequences -------------------------------------------------------------------

def constant_types(theta) -> Callable:
    theta = np.atleast_1d(np.asarray(theta, float))
    return lambda t, history: theta


def cyclic_types(types) -> Callable:
    types = np.atleast_2d(np.asarray(types, float))
    return lambda t, history: types[(t - 1) % types.shape[0]]


# -- simplex discretization -------------------------------------------------------------

@dataclass(frozen=True)
class SimplexGrid:
    """All points ``(i_1, ..., i_n) / m`` with nonnegative integers summing to ``m``."""

    n_l: int
    resolution: int

    def __post_init__(self):
        if self.n_l < 1 or self.resolution < 1:
            raise InputError("n_l and resolution must be positive")

    @property
    def size(self) -> int:
        return math.comb(self.resolution + self.n_l - 1, self.n_l - 1)

    def compositions(self) -> np.ndarray:
        """Integer compositions in lexicographic order, shape ``(size, n_l)``."""
        n, m = self.n_l, self.resolution
        rows = []
        # bars-and-stars over n-1 separators, emitted in lexicographic order of the counts
        for bars in itertools.combinations(range(m + n - 1), n - 1):
            prev, counts = -1, []
            for b in bars:
                counts.append(b - prev - 1)
                prev = b
            counts.append(m + n - 1 - prev - 1)
            rows.append(counts)
        arr = np.array(rows, dtype=np.int64).reshape(-1, n)
        order = np.lexsort(arr.T[::-1])
        return arr[order]

    @property
    def points(self) -> np.ndarray:
        return self.compositions() / self.resolution

    @property
    def covering_radius(self) -> float:
        return covering_radius(self.n_l, self.resolution)


def covering_radius(n_l: int, m: int) -> float:
    """Worst-case 1-norm distance from a simplex point to its nearest grid point.

    The nearest point is the largest-remainder rounding of ``m x``; with ``k``
    coordinates rounded up the error is maximized when all fractional parts
    equal ``k / n_l``, giving ``2 k (n_l - k) / (n_l m)``.
    """
    ks = range(0, min(n_l - 1, m) + 1)
    return max(2.0 * k * (n_l - k) / (n_l * m) for k in ks)


@dataclass(frozen=True)
class MeshChoice:
    resolution: int
    radius: float
    target: float
    grid_size: int
    capped: bool


def mesh_for_target(n_l: int, L_r: float, L_b: float, T: int, max_points: int = 200_000,
                    target: Optional[float] = None) -> MeshChoice:
    """Smallest grid resolution whose covering radius meets the discretization target.

    The target is ``sqrt(n_l / T) / (L_r (1 + L_b))`` unless given explicitly.
    Resolutions whose grid would exceed ``max_points`` are not considered; the
    largest affordable one is returned with ``capped=True``.
    """
    if n_l < 1 or T < 1 or not L_r > 0 or L_b < 0:
        raise InputError("n_l, T, L_r must be positive and L_b nonnegative")
    if target is None:
        target = math.sqrt(n_l / T) / (L_r * (1.0 + L_b))
    if not target > 0:
        raise InputError("target radius must be positive")
    m = 1
    while True:
        if covering_radius(n_l, m) <= target:
            return MeshChoice(m, covering_radius(n_l, m), target, math.comb(m + n_l - 1, n_l - 1), False)
        nxt = math.comb(m + n_l, n_l - 1)
        if nxt > max_points:
            log.warning("simplex grid capped at resolution %d (%d points); target radius %.3g not met",
                        m, math.comb(m + n_l - 1, n_l - 1), target)
            return MeshChoice(m, covering_radius(n_l, m), target, math.comb(m + n_l - 1, n_l - 1), True)
        m += 1


def project_to_grid(x, grid: SimplexGrid) -> np.ndarray:
    """1-norm nearest grid point; ties resolved toward the lexicographically smallest point."""
    x = np.asarray(x, float)
    if x.shape != (grid.n_l,):
        raise InputError(f"point has shape {x.shape}, grid expects ({grid.n_l},)")
    if np.any(x < -1e-12) or abs(x.sum() - 1.0) > 1e-9:
        raise InputError("point is not on the simplex")
    m = grid.resolution
    u = np.clip(x, 0.0, None) * m
    base = np.floor(u + 1e-12).astype(np.int64)
    base = np.minimum(base, m)
    frac = u - base
    k = int(m - base.sum())
    if k < 0:
        # rounding overshoot on points numerically at the grid
        base = np.floor(u).astype(np.int64)
        frac = u - base
        k = int(m - base.sum())
    # round up the k largest remainders; on ties prefer later coordinates (lexicographically smaller result)
    order = sorted(range(grid.n_l), key=lambda i: (-frac[i], -i))
    out = base.copy()
    for i in order[:k]:
        out[i] += 1
    return out / m


# -- Stackelberg wrapper ----------------------------------------------------------------

@dataclass
class StackelbergBase:
    """Leader-follower game with a continuous leader simplex."""

    n_leader: int
    respond: Callable[[np.ndarray, np.ndarray], np.ndarray]
    reward: RewardOracle
    type_sequence: Callable[[int, TypeHistory], np.ndarray]
    noise_sigma: float = 0.0
    reward_range: tuple = (0.0, 1.0)
    name: str = "stackelberg"


def stackelberg_wrap(base: StackelbergBase, grid: SimplexGrid) -> GameEnv:
    """Finite game whose actions are the grid's mixed strategies."""
    if grid.n_l != base.n_leader:
        raise SetupError("grid dimension does not match the leader's action count")
    actions = grid.points

    def respond_all(theta):
        return np.array([np.atleast_1d(base.respond(x, theta)) for x in actions])

    return GameEnv(
        actions=actions,
        type_sequence=base.type_sequence,
        respond=base.respond,
        reward=base.reward,
        noise_sigma=base.noise_sigma,
        reward_range=base.reward_range,
        respond_all=respond_all,
        name=f"{base.name}-grid{grid.resolution}",
    )
