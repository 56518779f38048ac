"""Synthetic games with RKHS-sampled responses, used for checks and small demos."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .games import GameEnv, StackelbergBase, constant_types, cyclic_types
from .kernels import KernelSpec, as_array, cross_matrix, gram_matrix
from .policies import RewardOracle


@dataclass
class RKHSFunction:
    """``f(z) = sum_j a_j k(z, c_j)`` with RKHS norm ``sqrt(a' K a)``."""

    kernel: KernelSpec
    centers: np.ndarray
    coef: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.coef @ gram_matrix(self.kernel, self.centers) @ self.coef))

    def __call__(self, Z) -> np.ndarray:
        return cross_matrix(self.kernel, as_array(Z), self.centers) @ self.coef


def sample_rkhs_function(kernel: KernelSpec, centers, norm_bound: float, rng: np.random.Generator,
                         fill: float = 1.0) -> RKHSFunction:
    """Random kernel expansion rescaled to RKHS norm ``fill * norm_bound``."""
    C = as_array(centers)
    a = rng.normal(size=C.shape[0])
    norm = np.sqrt(a @ gram_matrix(kernel, C) @ a)
    return RKHSFunction(kernel, C, a * (fill * norm_bound / norm))


def peak_reward(target_of_x):
    """``r(x, y) = exp(-(y - target(x))^2)``: bounded in (0, 1], Lipschitz with constant sqrt(2/e)."""

    def fn(X, Y):
        return np.exp(-((Y[:, 0] - target_of_x(X)) ** 2))

    return fn


def peak_oracle(target_of_x) -> RewardOracle:
    """Oracle for :func:`peak_reward`; the box maximum sits at the target clipped into the box."""
    fn = peak_reward(target_of_x)

    def maximizer(X, lo, hi):
        ystar = np.clip(target_of_x(X)[:, None], lo, hi)
        return ystar, fn(X, ystar)

    return RewardOracle(fn, lipschitz=float(np.sqrt(2 / np.e)), maximizer=maximizer)


def make_synthetic_env(seed: int = 0, n_actions: int = 20, n_types: int = 5, action_dim: int = 2,
                       type_dim: int = 1, kernel: KernelSpec | None = None, rkhs_bound: float = 1.0,
                       noise_sigma: float = 0.1, cyclic: bool = True, n_centers: int = 30):
    """Random finite game with an RKHS response; returns ``(env, response_function)``.

    Actions and types are drawn uniformly from the unit cube. The learner's
    reward peaks where the response matches ``2 x[0] - 1``.
    """
    rng = np.random.default_rng(seed)
    kernel = kernel or KernelSpec("rbf", lengthscale=0.5)
    actions = rng.uniform(size=(n_actions, action_dim))
    types = rng.uniform(size=(n_types, type_dim))
    centers = rng.uniform(size=(n_centers, action_dim + type_dim))
    f = sample_rkhs_function(kernel, centers, rkhs_bound, rng)

    def respond(x, theta):
        return f(np.concatenate([x, theta])[None, :])

    def respond_all(theta):
        Z = np.hstack([actions, np.broadcast_to(theta, (n_actions, type_dim))])
        return f(Z)[:, None]

    oracle = peak_oracle(lambda X: 2.0 * X[:, 0] - 1.0)
    env = GameEnv(
        actions=actions,
        type_sequence=cyclic_types(types) if cyclic else constant_types(types[0]),
        respond=respond,
        reward=oracle,
        noise_sigma=noise_sigma,
        reward_range=(0.0, 1.0),
        respond_all=respond_all,
        theta_bar=None if cyclic else types[0],
        name="synthetic",
    )
    env.types = types
    return env, f


def make_stackelberg_base(seed: int = 0, n_leader: int = 3, n_types: int = 4,
                          noise_sigma: float = 0.05) -> StackelbergBase:
    """
    Leader with ``n_leader`` pure actions against followers of random linear types.

    A follower of type ``theta`` best-responds to the mixed strategy ``x`` by
    maximizing ``y * <theta, M x> - y^2 / 2`` over a fixed grid of
    ``y in [-2, 2]``; ties go to the smallest ``y``. The leader's reward is
    ``(<u, x> + exp(-(y - c)^2)) / 2``.
    """
    rng = np.random.default_rng(seed)
    M = rng.uniform(-1.0, 1.0, size=(2, n_leader))
    types = rng.uniform(-1.0, 1.0, size=(n_types, 2))
    u = rng.uniform(size=n_leader)
    c = 0.5
    y_grid = np.linspace(-2.0, 2.0, 401)

    def respond(x, theta):
        s = float(np.asarray(theta) @ (M @ np.asarray(x)))
        util = y_grid * s - 0.5 * y_grid ** 2
        return np.array([y_grid[int(np.argmax(util))]])

    def fn(X, Y):
        return 0.5 * (X @ u + np.exp(-((Y[:, 0] - c) ** 2)))

    return StackelbergBase(
        n_leader=n_leader,
        respond=respond,
        reward=RewardOracle(fn, response_lo=[-2.0], response_hi=[2.0], lipschitz=1.0),
        type_sequence=cyclic_types(types),
        noise_sigma=noise_sigma,
        reward_range=(0.0, 1.0),
        name="stackelberg_synthetic",
    )
