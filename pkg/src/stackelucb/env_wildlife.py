"""
Wildlife protection game: rangers commit to a patrol coverage over a 5x5
park, a boundedly rational poacher picks a location by Subjective Utility.

The poacher's location is chosen from a fixed candidate set (a uniform
41x41 grid over the park plus the cell centres), ordered lexicographically
so that ties resolve to the first candidate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .errors import InputError, SetupError
from .games import GameEnv, constant_types
from .gp_regression import PosteriorModel
from .kernels import KernelSpec
from .policies import RewardOracle, argmax_lowest

log = logging.getLogger(__name__)

GRID_POINTS = 41
NOISE_SIGMA = 0.02  # 2% of the unit park width
N_MIXED = 500


@dataclass(frozen=True)
class SUParams:
    """Poacher preferences; ``su_sign_literal`` applies ``-w1 f(x)`` with ``w1`` as given."""

    w1: float = -3.0
    w2: float = 1.0
    w3: float = 1.0
    delta: float = 2.0
    gamma: float = 3.0
    zeta: float = 0.5
    su_sign_literal: bool = True

    @classmethod
    def from_dict(cls, cfg: Optional[dict]) -> "SUParams":
        cfg = dict(cfg or {})
        unknown = set(cfg) - set(cls.__dataclass_fields__)
        if unknown:
            raise SetupError(f"unknown SU parameters: {sorted(unknown)}")
        return cls(**cfg)

    @property
    def coverage_weight(self) -> float:
        """Coefficient multiplying ``f(x[i])`` in the poacher's utility."""
        return -self.w1 if self.su_sign_literal else -abs(self.w1)


@dataclass(frozen=True)
class GaussianBump:
    mean: tuple
    sd: float
    weight: float


@dataclass
class Park:
    """Unit-square park split into ``n x n`` cells indexed row-major from the origin corner.

    The density is a sum of weighted isotropic Gaussian bumps clamped to
    [0, 1]. Cell ``i`` covers row ``i // n`` (second coordinate) and column
    ``i % n`` (first coordinate); boundary points go to the lowest-index
    touching cell.
    """

    bumps: list
    poacher_start: np.ndarray
    n: int = 5
    grid_points: int = GRID_POINTS
    cell_rewards: float = 1.0
    poach_penalty: float = -1.0
    candidates: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.poacher_start = np.asarray(self.poacher_start, float)
        if self.poacher_start.shape != (2,) or np.any(self.poacher_start < 0) or np.any(self.poacher_start > 1):
            raise SetupError("poacher start must be a point in the unit square")
        if not self.bumps:
            raise SetupError("density needs at least one component")
        self._means = np.array([b.mean for b in self.bumps], float)
        self._sds = np.array([b.sd for b in self.bumps], float)
        self._weights = np.array([b.weight for b in self.bumps], float)
        if np.any(self._sds <= 0):
            raise SetupError("density components need positive widths")
        g = np.linspace(0.0, 1.0, self.grid_points)
        grid = np.array([(a, b) for a in g for b in g])
        centres = np.array([self.cell_centre(i) for i in range(self.n_cells)])
        cand = np.vstack([grid, centres])
        # centres can sit on the grid up to an ulp; round so they merge, then sort lexicographically
        cand = np.unique(np.round(cand, 12), axis=0)
        self.candidates = cand
        self.candidate_cells = self.cell_of(cand)
        self.candidate_density = self.density(cand)
        corners = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], float)
        self.max_distance = float(np.max(np.linalg.norm(corners - self.poacher_start, axis=1)))

    @property
    def n_cells(self) -> int:
        return self.n * self.n

    def cell_centre(self, i: int) -> np.ndarray:
        row, col = divmod(i, self.n)
        return np.array([(col + 0.5) / self.n, (row + 0.5) / self.n])

    def cell_of(self, Y) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, float))
        if np.any(Y < 0) or np.any(Y > 1):
            raise InputError("location outside the park")
        idx = np.clip(np.ceil(Y * self.n).astype(np.int64) - 1, 0, self.n - 1)
        return idx[:, 1] * self.n + idx[:, 0]

    def density(self, Y) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, float))
        d2 = ((Y[:, None, :] - self._means[None, :, :]) ** 2).sum(axis=2)
        phi = (self._weights * np.exp(-0.5 * d2 / self._sds ** 2)).sum(axis=1)
        return np.clip(phi, 0.0, 1.0)

    def distance(self, Y) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, float))
        return np.linalg.norm(Y - self.poacher_start, axis=1)

    def max_cell_density(self) -> np.ndarray:
        """Per-cell maximum of the density over the candidates in the cell."""
        out = np.zeros(self.n_cells)
        np.maximum.at(out, self.candidate_cells, self.candidate_density)
        return out

    @classmethod
    def from_dict(cls, cfg: dict) -> "Park":
        try:
            bumps = [GaussianBump(tuple(float(v) for v in b["mean"]), float(b["sd"]), float(b["weight"]))
                     for b in cfg["components"]]
            return cls(bumps=bumps, poacher_start=np.asarray(cfg["poacher_start"], float),
                       n=int(cfg.get("cells_per_side", 5)), grid_points=int(cfg.get("grid_points", GRID_POINTS)))
        except (KeyError, TypeError, ValueError) as exc:
            raise SetupError(f"malformed park description: {exc}") from exc


def load_park(path=None):
    """Read a park fixture; returns ``(park, su_params)``. Without ``path`` the bundled park is used."""
    if path is None:
        text = resources.files("stackelucb").joinpath("data/park.yaml").read_text()
    else:
        p = Path(path)
        if not p.exists():
            raise SetupError(f"park file not found: {p}")
        text = p.read_text()
    cfg = yaml.safe_load(text)
    if not isinstance(cfg, dict):
        raise SetupError("park file must hold a mapping")
    return Park.from_dict(cfg), SUParams.from_dict(cfg.get("su"))


# -- utilities ---------------------------------------------------------------------------

def s_shaped(p, delta: float = 2.0, gamma: float = 3.0):
    """Probability weighting ``delta p^g / (delta p^g + (1 - p)^g)``."""
    p = np.asarray(p, float)
    if np.any(p < 0) or np.any(p > 1):
        raise InputError("probability outside [0, 1]")
    num = delta * p ** gamma
    return num / (num + (1.0 - p) ** gamma)


def poaching_reward(park: Park, params: SUParams, Y) -> np.ndarray:
    """Density at ``Y`` minus ``zeta`` times the normalized distance from the poacher's start."""
    return park.density(Y) - params.zeta * park.distance(Y) / park.max_distance


def subjective_utility(park: Park, params: SUParams, x, Y) -> np.ndarray:
    x = np.asarray(x, float)
    cells = park.cell_of(Y)
    f = s_shaped(x[cells], params.delta, params.gamma)
    return params.coverage_weight * f + params.w2 * poaching_reward(park, params, Y) + params.w3 * park.poach_penalty


def _candidate_utilities(park: Park, params: SUParams, X) -> np.ndarray:
    """SU of every candidate for every coverage row, shape ``(n, n_candidates)``."""
    X = np.atleast_2d(np.asarray(X, float))
    base = params.w2 * poaching_reward(park, params, park.candidates) + params.w3 * park.poach_penalty
    cover = params.coverage_weight * s_shaped(X, params.delta, params.gamma)
    return cover[:, park.candidate_cells] + base[None, :]


def poacher_respond(park: Park, params: SUParams, x) -> np.ndarray:
    """SU-maximizing candidate location; ties go to the lexicographically first."""
    su = _candidate_utilities(park, params, x)[0]
    return park.candidates[argmax_lowest(su)].copy()


def rangers_reward(park: Park, X, Y) -> np.ndarray:
    """``x[j] R - (1 - x[j]) phi(y)`` for the cell ``j`` containing ``y``, row-aligned."""
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    j = park.cell_of(Y)
    xj = X[np.arange(X.shape[0]), j]
    return xj * park.cell_rewards - (1.0 - xj) * park.density(Y)


# -- game -------------------------------------------------------------------------------

@dataclass
class WildlifeGame:
    park: Park
    params: SUParams
    actions: np.ndarray

    def __post_init__(self):
        su = _candidate_utilities(self.park, self.params, self.actions)
        # np.argmax returns the first maximizer, i.e. the lexicographically smallest candidate
        self.response_index = np.argmax(su, axis=1)
        self.responses = self.park.candidates[self.response_index]
        self.theta_bar = self.park.max_cell_density()
        self._plan_of = {a.tobytes(): i for i, a in enumerate(self.actions)}

    @property
    def n_actions(self) -> int:
        return self.actions.shape[0]

    def respond(self, x, theta=None) -> np.ndarray:
        x = np.asarray(x, float)
        i = self._plan_of.get(x.tobytes())
        if i is not None:
            return self.responses[i].copy()
        return poacher_respond(self.park, self.params, x)

    def candidate_rewards(self, X) -> np.ndarray:
        """Rangers' reward against every candidate location, shape ``(n, n_candidates)``."""
        X = np.atleast_2d(np.asarray(X, float))
        xj = X[:, self.park.candidate_cells]
        return xj * self.park.cell_rewards - (1.0 - xj) * self.park.candidate_density[None, :]

    def true_rewards(self) -> np.ndarray:
        return rangers_reward(self.park, self.actions, self.responses)

    def oracle(self) -> RewardOracle:
        park = self.park
        cand = park.candidates

        def fn(X, Y):
            return rangers_reward(park, X, np.clip(Y, 0.0, 1.0))

        def maximizer(X, lo, hi):
            # the poacher only ever stands on a candidate, so the box maximum is taken over those
            R = self.candidate_rewards(X)
            inside = ((cand[None, :, 0] >= lo[:, :1]) & (cand[None, :, 0] <= hi[:, :1])
                      & (cand[None, :, 1] >= lo[:, 1:2]) & (cand[None, :, 1] <= hi[:, 1:2]))
            masked = np.where(inside, R, -np.inf)
            best = np.argmax(masked, axis=1)
            vals = masked[np.arange(X.shape[0]), best]
            ystar = cand[best].copy()
            empty = ~inside.any(axis=1)
            if empty.any():
                mid = 0.5 * (lo[empty] + hi[empty])
                ystar[empty] = mid
                vals[empty] = fn(X[empty], mid)
            return ystar, vals

        return RewardOracle(fn, response_lo=[0.0, 0.0], response_hi=[1.0, 1.0], lipschitz=1.0,
                            maximizer=maximizer)

    def opt_action(self) -> int:
        return argmax_lowest(self.true_rewards())

    def max_min_action(self) -> int:
        return argmax_lowest(self.candidate_rewards(self.actions).min(axis=1))

    def offline_model(self, kernel: KernelSpec, lam: float, n_points: int, rng: np.random.Generator,
                      noise_sigma: float = NOISE_SIGMA, prior_mean=None) -> PosteriorModel:
        """Regression of the poacher's response on random simplex coverages with noisy locations."""
        X = rng.dirichlet(np.ones(self.park.n_cells), size=n_points)
        su = _candidate_utilities(self.park, self.params, X)
        Y = self.park.candidates[np.argmax(su, axis=1)] + noise_sigma * rng.normal(size=(n_points, 2))
        Z = np.hstack([X, np.broadcast_to(self.theta_bar, (n_points, self.theta_bar.size))])
        return PosteriorModel.from_data(kernel, lam, Z, Y, prior_mean=prior_mean)

    def offline_prior_means(self, rng: np.random.Generator, n_points: int = 100,
                            noise_sigma: float = NOISE_SIGMA):
        """Average noisy response and reward over plays of random actions.

        Used as constant prior means: a zero prior puts the poacher at the park
        corner and makes every unexplored patrol look attractive.
        """
        idx = rng.choice(self.n_actions, size=min(n_points, self.n_actions), replace=False)
        Y = self.responses[idx]
        noisy_y = Y + noise_sigma * rng.normal(size=Y.shape)
        R = rangers_reward(self.park, self.actions[idx], Y) + 2 * noise_sigma * rng.normal(size=len(idx))
        return noisy_y.mean(axis=0), float(R.mean())

    def best_offline_action(self, model: PosteriorModel) -> int:
        Z = np.hstack([self.actions, np.broadcast_to(self.theta_bar, (self.n_actions, self.theta_bar.size))])
        mean, _ = model.predict(Z)
        return argmax_lowest(self.oracle().eval(self.actions, mean))


def sample_patrol_strategies(n_cells: int, n_mixed: int, rng: np.random.Generator) -> np.ndarray:
    """``n_mixed`` uniform-Dirichlet coverages followed by the ``n_cells`` pure strategies."""
    mixed = rng.dirichlet(np.ones(n_cells), size=n_mixed)
    return np.vstack([mixed, np.eye(n_cells)])


def build_wildlife_game(park: Optional[Park] = None, params: Optional[SUParams] = None,
                        n_mixed: int = N_MIXED, seed: int = 0) -> WildlifeGame:
    if park is None:
        park, fixture_params = load_park()
        params = params or fixture_params
    params = params or SUParams()
    actions = sample_patrol_strategies(park.n_cells, n_mixed, np.random.default_rng(seed))
    return WildlifeGame(park, params, actions)


def build_wildlife_env(game: WildlifeGame, noise_sigma: float = NOISE_SIGMA) -> GameEnv:
    """Single-opponent game against the fixed type ``theta_bar`` with 2-D location responses."""
    theta = game.theta_bar
    return GameEnv(
        actions=game.actions,
        type_sequence=constant_types(theta),
        respond=game.respond,
        reward=game.oracle(),
        noise_sigma=noise_sigma,
        reward_range=(-1.0, 1.0),
        respond_all=lambda th: game.responses,
        theta_bar=theta,
        name="wildlife",
    )
