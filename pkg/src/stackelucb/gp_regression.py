"""
Online kernel ridge regression with confidence bounds.

The posterior is kept as a lower Cholesky factor of ``K_t + lam * I`` that is
extended by one row per observation (``O(t^2)`` per update) and rebuilt from
scratch every ``rebuild_every`` updates. Vector-valued responses share the
factor; each output dimension gets its own coefficient column.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import InputError, NumericalConsistencyError
from .kernels import GamePoint, KernelSpec, as_array, cross_matrix, gram_matrix, kernel_diag

JITTER_START = 1e-10
JITTER_ESCALATIONS = 3
NEGATIVE_VAR_TOL = 1e-6


@dataclass(frozen=True)
class Observation:
    point: GamePoint
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, dtype=float)))


@dataclass(frozen=True)
class ConfidenceConfig:
    """Parameters of the confidence-width schedule.

    ``sigma_noise`` is the sub-Gaussian noise scale, ``rkhs_bound`` the bound
    on the RKHS norm of the response function and ``delta`` the failure
    probability. A non-``None`` ``beta_override`` replaces the schedule.
    """

    sigma_noise: float = 1.0
    rkhs_bound: float = 1.0
    delta: float = 0.05
    beta_override: Optional[float] = None

    def __post_init__(self):
        if not self.sigma_noise > 0:
            raise InputError("sigma_noise must be positive")
        if not self.rkhs_bound > 0:
            raise InputError("rkhs_bound must be positive")
        if not 0 < self.delta < 1:
            raise InputError("delta must lie in (0, 1)")
        if self.beta_override is not None and not self.beta_override >= 0:
            raise InputError("beta_override must be nonnegative")


class PosteriorModel:
    """Kernel ridge regression state over observed (x, theta, y) triples.

    Parameters
    ----------
    kernel : KernelSpec
        Kernel over concatenated ``(x || theta)`` inputs.
    lam : float
        Ridge regularization added to the diagonal of the Gram matrix.
    n_outputs : int, optional
        Response dimension. Inferred from the first observation if omitted.
    rebuild_every : int
        Number of incremental updates between full refactorizations.
    prior_mean : float or array-like, optional
        Constant prior mean per output; the regression is run on the
        offsets from it. Zero when omitted.
    merge_repeats : bool
        Store repeated inputs once, with their mean target and a ridge of
        ``lam / count``. The posterior and ``log_det`` are unchanged; the
        factor then has one row per distinct input, which keeps long runs
        over a finite input set cheap.
    """

    def __init__(self, kernel: KernelSpec, lam: float = 1.0, n_outputs: Optional[int] = None,
                 rebuild_every: int = 512, prior_mean=None, merge_repeats: bool = False):
        if not lam > 0:
            raise InputError("lam must be positive")
        self.kernel = kernel
        self.lam = float(lam)
        self.prior_mean = None if prior_mean is None else np.atleast_1d(np.asarray(prior_mean, float))
        if n_outputs is None and self.prior_mean is not None:
            n_outputs = self.prior_mean.size
        if self.prior_mean is not None and self.prior_mean.size != n_outputs:
            raise InputError("prior mean length differs from the number of outputs")
        self.n_outputs = n_outputs
        self.rebuild_every = int(rebuild_every)
        self.merge_repeats = bool(merge_repeats)
        self.t = 0  # observations absorbed
        self._n = 0  # stored rows; equals t unless repeats are merged
        self._counts = np.zeros(0)
        self._row_of: dict = {}
        self.jitter = 0.0
        self._dim: Optional[int] = None
        self._cap = 0
        self._Z = np.zeros((0, 0))
        self._Y = np.zeros((0, n_outputs or 1))
        self._L = np.zeros((0, 0))
        self._alpha = np.zeros((0, n_outputs or 1))
        self._since_rebuild = 0

    # -- accessors -----------------------------------------------------------
    @property
    def inputs(self) -> np.ndarray:
        return self._Z[: self._n]

    @property
    def targets(self) -> np.ndarray:
        """Stored targets; averages per distinct input when repeats are merged."""
        return self._Y[: self._n]

    @property
    def counts(self) -> np.ndarray:
        return self._counts[: self._n]

    @property
    def chol(self) -> np.ndarray:
        """Lower factor of ``K + diag(lam / counts)`` over the stored rows."""
        return self._L[: self._n, : self._n]

    @property
    def alpha(self) -> np.ndarray:
        return self._alpha

    @property
    def history(self) -> list[Observation]:
        d = self._dim or 0
        return [Observation(GamePoint(z[:d], z[d:]), y) for z, y in zip(self.inputs, self.targets)]

    def __len__(self):
        return self.t

    def copy(self) -> "PosteriorModel":
        new = PosteriorModel(self.kernel, self.lam, self.n_outputs, self.rebuild_every, self.prior_mean,
                             self.merge_repeats)
        new.t, new._n, new.jitter, new._dim, new._cap = self.t, self._n, self.jitter, self._dim, self._cap
        new._Z, new._Y, new._L = self._Z.copy(), self._Y.copy(), self._L.copy()
        new._counts, new._row_of = self._counts.copy(), dict(self._row_of)
        new._alpha = self._alpha.copy()
        new._since_rebuild = self._since_rebuild
        return new

    # -- construction ---------------------------------------------------------
    @classmethod
    def from_data(cls, kernel: KernelSpec, lam: float, Z, Y, action_dim: Optional[int] = None,
                  **kw) -> "PosteriorModel":
        """Batch construction from stacked inputs and targets."""
        Z = as_array(Z)
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Z.shape[0] != Y.shape[0]:
            raise InputError("inputs and targets disagree in length")
        model = cls(kernel, lam, n_outputs=Y.shape[1], **kw)
        if Z.shape[0] == 0:
            return model
        if not np.all(np.isfinite(Z)) or not np.all(np.isfinite(Y)):
            raise InputError("observations contain non-finite values")
        model._dim = action_dim
        if model.merge_repeats:
            _, first, inverse, counts = np.unique(Z, axis=0, return_index=True, return_inverse=True,
                                                  return_counts=True)
            inverse = inverse.ravel()
            # keep distinct inputs in order of first appearance
            order = np.argsort(first)
            rank = np.empty_like(order)
            rank[order] = np.arange(order.size)
            rows = rank[inverse]
            n = order.size
            sums = np.zeros((n, Y.shape[1]))
            np.add.at(sums, rows, Y)
            model._ensure_capacity(n, Z.shape[1])
            model._Z[:n] = Z[first[order]]
            model._counts[:n] = counts[order]
            model._Y[:n] = sums / model._counts[:n, None]
            model._row_of = {model._Z[i].tobytes(): i for i in range(n)}
        else:
            n = Z.shape[0]
            model._ensure_capacity(n, Z.shape[1])
            model._Z[:n] = Z
            model._Y[:n] = Y
            model._counts[:n] = 1.0
        model._n = n
        model.t = Z.shape[0]
        model._refactor()
        return model

    def _ensure_capacity(self, need: int, width: int):
        if need <= self._cap:
            return
        cap = max(need, 2 * self._cap, 16)
        m = self.n_outputs
        Z = np.zeros((cap, width))
        Y = np.zeros((cap, m))
        L = np.zeros((cap, cap))
        c = np.zeros(cap)
        n = self._n
        if n:
            Z[:n] = self._Z[:n]
            Y[:n] = self._Y[:n]
            L[:n, :n] = self._L[:n, :n]
            c[:n] = self._counts[:n]
        self._Z, self._Y, self._L, self._counts, self._cap = Z, Y, L, c, cap

    def _refactor(self):
        """Full Cholesky of ``K + diag(lam / counts) + jitter I`` with jitter escalation."""
        K = gram_matrix(self.kernel, self.inputs)
        n = self._n
        ridge = np.diag(self.lam / self.counts)
        jitter = self.jitter
        for attempt in range(JITTER_ESCALATIONS + 2):
            try:
                L = np.linalg.cholesky(K + ridge + jitter * np.eye(n))
                break
            except np.linalg.LinAlgError:
                if attempt > JITTER_ESCALATIONS:
                    raise NumericalConsistencyError("Cholesky failed after jitter escalation") from None
                jitter = JITTER_START if jitter == 0 else jitter * 10
        self.jitter = jitter
        self._L[:n, :n] = L
        self._since_rebuild = 0
        self._solve_alpha()

    def _solve_alpha(self):
        if self._n == 0:
            self._alpha = np.zeros((0, self.n_outputs))
            return
        Y = self.targets if self.prior_mean is None else self.targets - self.prior_mean
        self._alpha = cho_solve((self.chol, True), Y, check_finite=False)

    # -- updates --------------------------------------------------------------
    def update(self, obs, y=None) -> "PosteriorModel":
        """Absorb one observation; accepts an :class:`Observation` or ``(point, y)``."""
        if not isinstance(obs, Observation):
            obs = Observation(obs if isinstance(obs, GamePoint) else GamePoint(obs, []), y)
        z = obs.point.concat()
        yv = obs.y
        if not np.all(np.isfinite(yv)) or not np.all(np.isfinite(z)):
            raise InputError("observation contains non-finite values")
        if self.n_outputs is None:
            self.n_outputs = yv.size
            self._Y = np.zeros((0, yv.size))
        if yv.size != self.n_outputs:
            raise InputError(f"response has {yv.size} outputs, model expects {self.n_outputs}")
        if self._dim is None:
            self._dim = obs.point.x.size
        if self._n and z.size != self._Z.shape[1]:
            raise InputError(f"point has {z.size} dims, model expects {self._Z.shape[1]}")
        if self.merge_repeats:
            i = self._row_of.get(z.tobytes())
            if i is not None:
                self._counts[i] += 1.0
                self._Y[i] += (yv - self._Y[i]) / self._counts[i]
                self.t += 1
                self._refactor()
                return self
            self._row_of[z.tobytes()] = self._n
        self._ensure_capacity(self._n + 1, z.size)
        n = self._n
        self._Z[n] = z
        self._Y[n] = yv
        self._counts[n] = 1.0
        self.t += 1
        self._since_rebuild += 1
        if self._since_rebuild >= self.rebuild_every:
            self._n = n + 1
            self._refactor()
            return self
        self._extend_factor(z)
        self._n = n + 1
        self._solve_alpha()
        return self

    def _extend_factor(self, z: np.ndarray):
        n = self._n
        kzz = float(kernel_diag(self.kernel, z[None, :])[0])
        if n == 0:
            row = np.zeros(0)
        else:
            kvec = cross_matrix(self.kernel, self.inputs, z[None, :])[:, 0]
            row = solve_triangular(self.chol, kvec, lower=True, check_finite=False)
        d2 = kzz + self.lam + self.jitter - float(row @ row)
        jitter = self.jitter
        escalations = 0
        while d2 <= 0:
            if escalations >= JITTER_ESCALATIONS:
                self._n = n + 1
                self._refactor()
                self._n = n
                return
            jitter = JITTER_START if jitter == 0 else jitter * 10
            d2 = kzz + self.lam + jitter - float(row @ row)
            escalations += 1
        self.jitter = jitter
        self._L[n, :n] = row
        self._L[n, n] = math.sqrt(d2)
        self._L[:n, n] = 0.0

    # -- predictions ----------------------------------------------------------
    def _queries(self, queries) -> np.ndarray:
        if isinstance(queries, GamePoint):
            return queries.concat()[None, :]
        Q = as_array(queries)
        if self._n and Q.shape[1] != self._Z.shape[1]:
            raise InputError(f"query has {Q.shape[1]} dims, model expects {self._Z.shape[1]}")
        return Q

    def predict(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean ``(n, m)`` and shared variance ``(n,)`` at a batch of queries."""
        Q = self._queries(queries)
        m = self.n_outputs or 1
        prior = kernel_diag(self.kernel, Q)
        offset = np.zeros(m) if self.prior_mean is None else self.prior_mean
        if self._n == 0:
            return np.broadcast_to(offset, (Q.shape[0], m)).copy(), prior.copy()
        Kq = cross_matrix(self.kernel, self.inputs, Q)
        mean = Kq.T @ self._alpha + offset
        V = solve_triangular(self.chol, Kq, lower=True, check_finite=False)
        var = prior - np.einsum("ij,ij->j", V, V)
        floor = -NEGATIVE_VAR_TOL * np.maximum(1.0, prior)
        if np.any(var < floor):
            raise NumericalConsistencyError(f"posterior variance {var.min():.3e} is negative beyond tolerance")
        return mean, np.clip(var, 0.0, prior)

    def posterior_mean(self, query) -> np.ndarray:
        return self.predict(query)[0][0]

    def posterior_var(self, query) -> np.ndarray:
        mean, var = self.predict(query)
        return np.full(mean.shape[1], var[0])

    def log_det(self) -> float:
        """``log det(I + K_t / lam)`` from the factor of ``K_t + lam I``."""
        if self._n == 0:
            return 0.0
        # det(I + K_t / lam) = det(N) det(K_u + lam N^-1) / lam^u for distinct inputs with counts N
        return float(2.0 * np.sum(np.log(np.diag(self.chol))) - self._n * math.log(self.lam)
                     + np.sum(np.log(self.counts)))


def posterior_mean(model: PosteriorModel, query) -> np.ndarray:
    return model.posterior_mean(query)


def posterior_var(model: PosteriorModel, query) -> np.ndarray:
    return model.posterior_var(query)


def update(model: PosteriorModel, obs: Observation) -> PosteriorModel:
    return model.update(obs)


def realized_info_gain(model: PosteriorModel) -> float:
    """Half the log-determinant of ``I + K_t / lam`` at the observed points."""
    return 0.5 * model.log_det()


def beta_t(cfg: ConfidenceConfig, model: PosteriorModel) -> float:
    """Confidence width multiplier for the current history.

    ``sigma / lam * sqrt(2 log(1/delta) + log det(I + K/lam)) + B / sqrt(lam)``,
    or ``cfg.beta_override`` when it is set.
    """
    if cfg.beta_override is not None:
        return float(cfg.beta_override)
    lam = model.lam
    inner = 2.0 * math.log(1.0 / cfg.delta) + max(model.log_det(), 0.0)
    return cfg.sigma_noise / lam * math.sqrt(inner) + cfg.rkhs_bound / math.sqrt(lam)


def confidence_box(model: PosteriorModel, cfg: ConfidenceConfig, queries, beta: Optional[float] = None):
    """Batched ``(lcb, ucb)``, each of shape ``(n, m)``."""
    b = beta_t(cfg, model) if beta is None else float(beta)
    mean, var = model.predict(queries)
    width = b * np.sqrt(var)[:, None]
    return mean - width, mean + width


def conf_bounds(model: PosteriorModel, cfg: ConfidenceConfig, query) -> tuple[np.ndarray, np.ndarray]:
    lcb, ucb = confidence_box(model, cfg, query)
    return lcb[0], ucb[0]


def log_marginal_likelihood(kernel: KernelSpec, Z, Y, noise_var: float) -> float:
    """Gaussian-process evidence of ``Y`` (summed over output columns) under a zero prior mean."""
    Z = as_array(Z)
    Y = np.asarray(Y, float).reshape(Z.shape[0], -1)
    n = Z.shape[0]
    K = gram_matrix(kernel, Z) + noise_var * np.eye(n)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = cho_solve((L, True), Y)
    per_col = -0.5 * np.sum(Y * alpha, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi)
    return float(per_col.sum())


def fit_kernel(base: KernelSpec, Z, Y, noise_var: float, ls_bounds=(1e-2, 1e2),
               var_bounds=(1e-4, 1e2)) -> KernelSpec:
    """Maximum-evidence isotropic lengthscale and variance scale for a stationary kernel.

    Optimizes in log space with L-BFGS-B from the settings of ``base``.
    """
    from scipy.optimize import minimize

    if not base.stationary:
        raise InputError("evidence fitting is implemented for stationary kernels only")

    def spec(p):
        return KernelSpec(family=base.family, nu=base.nu, lengthscale=float(np.exp(p[0])),
                          variance_scale=float(np.exp(p[1])))

    def loss(p):
        v = log_marginal_likelihood(spec(p), Z, Y, noise_var)
        return 1e12 if not np.isfinite(v) else -v

    ls0 = float(np.mean(base.lengthscale)) if isinstance(base.lengthscale, tuple) else float(base.lengthscale)
    x0 = np.log([np.clip(ls0, *ls_bounds), np.clip(base.variance_scale, *var_bounds)])
    res = minimize(loss, x0, method="L-BFGS-B", bounds=[np.log(ls_bounds), np.log(var_bounds)])
    return spec(res.x)
