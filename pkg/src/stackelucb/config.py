"""
Experiment configuration: a YAML mapping validated into :class:`ExperimentConfig`.

Example::

    env: traffic
    agent: stackelucb
    horizon: 500
    seeds: [0, 1, 2]
    kernel: recommended
    lambda: 1.0
    confidence: {beta_override: 0.5}
    traffic: {origin: 13, dest: 7}

Every failure is raised as :class:`ConfigError` before any simulation runs.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import yaml

from .errors import ConfigError, InputError
from .gp_regression import ConfidenceConfig
from .kernels import KernelSpec

ENVS = ("synthetic", "traffic", "wildlife", "stackelberg_synthetic")
AGENTS = ("stackelucb", "single_ucb", "hedge", "exp3", "gp_ucb", "max_min", "best_offline", "fixed_action")

# allowed keys of every env block, with defaults
ENV_DEFAULTS = {
    "synthetic": {"env_seed": 0, "n_actions": 20, "n_types": 5, "action_dim": 2, "type_dim": 1,
                  "rkhs_bound": 1.0, "noise_sigma": 0.1, "cyclic": True, "lengthscale": 0.5},
    "traffic": {"network": None, "scale": 0.01, "origin": 13, "dest": 7, "noise_sigma": 5.0, "kappa": 10.0,
                "total_units": 300.0},
    "wildlife": {"park": None, "action_seed": 0, "n_mixed": 500, "noise_sigma": 0.02,
                 "offline_points": 1000, "prior_points": 100},
    "stackelberg_synthetic": {"env_seed": 0, "n_leader": 3, "n_types": 4, "noise_sigma": 0.05,
                              "resolution": 10},
}

_FIXED = re.compile(r"^fixed_action\((\d+)\)$")


@dataclass
class ExperimentConfig:
    env: str
    agent: str
    horizon: int
    seeds: list
    kernel: Union[KernelSpec, str] = "recommended"
    confidence: ConfidenceConfig = field(default_factory=ConfidenceConfig)
    lam: float = 1.0
    eta_override: Optional[float] = None
    gamma_mix: Optional[float] = None
    action_index: Optional[int] = None
    prior_mean: Union[str, list, None] = None
    env_params: dict = field(default_factory=dict)
    name: str = ""

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return replace(self, seeds=list(seeds))

    @property
    def agent_label(self) -> str:
        return f"fixed_action({self.action_index})" if self.agent == "fixed_action" else self.agent

    def to_dict(self) -> dict:
        out = {
            "env": self.env,
            "agent": self.agent_label,
            "horizon": self.horizon,
            "seeds": list(self.seeds),
            "kernel": self.kernel if isinstance(self.kernel, str) else self.kernel.to_dict(),
            "lambda": self.lam,
            "confidence": {
                "sigma_noise": self.confidence.sigma_noise,
                "rkhs_bound": self.confidence.rkhs_bound,
                "delta": self.confidence.delta,
                "beta_override": self.confidence.beta_override,
            },
            "eta_override": self.eta_override,
            "gamma_mix": self.gamma_mix,
            "prior_mean": self.prior_mean,
            self.env: dict(self.env_params),
        }
        if self.name:
            out["name"] = self.name
        return out


def _positive(value, what, integer=False):
    try:
        v = int(value) if integer else float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a number, got {value!r}") from None
    if integer and v != value:
        raise ConfigError(f"{what} must be an integer")
    if v <= 0:
        raise ConfigError(f"{what} must be positive")
    return v


def parse_config(raw: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Validate a raw mapping; relative fixture paths resolve against ``base_dir``."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    raw = dict(raw)
    known = {"env", "agent", "horizon", "seeds", "kernel", "lambda", "confidence", "eta_override",
             "gamma_mix", "prior_mean", "name", "action_index"} | set(ENV_DEFAULTS)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    env = raw.get("env")
    if env not in ENVS:
        raise ConfigError(f"env must be one of {ENVS}, got {env!r}")
    for other in set(ENV_DEFAULTS) - {env}:
        if other in raw:
            raise ConfigError(f"block {other!r} does not apply to env {env!r}")

    agent = raw.get("agent")
    action_index = raw.get("action_index")
    m = _FIXED.match(str(agent))
    if m:
        agent, action_index = "fixed_action", int(m.group(1))
    if agent not in AGENTS:
        raise ConfigError(f"agent must be one of {AGENTS} or fixed_action(i), got {agent!r}")
    if agent == "fixed_action" and (action_index is None or int(action_index) < 0):
        raise ConfigError("fixed_action needs a nonnegative action index")

    if "horizon" not in raw:
        raise ConfigError("horizon is required")
    horizon = _positive(raw["horizon"], "horizon", integer=True)
    seeds = raw.get("seeds", [0])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds must be a nonempty list of nonnegative integers")

    kernel = raw.get("kernel", "recommended")
    if kernel != "recommended":
        if not isinstance(kernel, dict):
            raise ConfigError("kernel must be 'recommended' or a mapping")
        try:
            kernel = KernelSpec.from_dict(kernel)
        except (InputError, TypeError) as exc:
            raise ConfigError(f"bad kernel: {exc}") from exc

    conf_raw = raw.get("confidence") or {}
    if not isinstance(conf_raw, dict):
        raise ConfigError("confidence must be a mapping")
    try:
        confidence = ConfidenceConfig(**conf_raw)
    except (InputError, TypeError) as exc:
        raise ConfigError(f"bad confidence block: {exc}") from exc

    lam = _positive(raw.get("lambda", 1.0), "lambda")
    eta = raw.get("eta_override")
    eta = None if eta is None else _positive(eta, "eta_override")
    gamma_mix = raw.get("gamma_mix")
    if gamma_mix is not None:
        gamma_mix = _positive(gamma_mix, "gamma_mix")
        if gamma_mix > 1:
            raise ConfigError("gamma_mix must lie in (0, 1]")
    prior_mean = raw.get("prior_mean")
    if prior_mean not in (None, "offline") and not (
            isinstance(prior_mean, list) and all(isinstance(v, (int, float)) for v in prior_mean)):
        raise ConfigError("prior_mean must be 'offline', a list of numbers, or absent")

    block = raw.get(env) or {}
    if not isinstance(block, dict):
        raise ConfigError(f"{env} block must be a mapping")
    defaults = ENV_DEFAULTS[env]
    bad = set(block) - set(defaults)
    if bad:
        raise ConfigError(f"unknown {env} keys: {sorted(bad)}")
    params = {**defaults, **block}
    for key in ("network", "park"):
        if params.get(key) is not None:
            p = Path(params[key])
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            if not p.exists():
                raise ConfigError(f"{key} file not found: {p}")
            params[key] = str(p)

    return ExperimentConfig(env=env, agent=agent, horizon=horizon, seeds=seeds, kernel=kernel,
                            confidence=confidence, lam=lam, eta_override=eta, gamma_mix=gamma_mix,
                            action_index=None if action_index is None else int(action_index),
                            prior_mean=prior_mean, env_params=params, name=str(raw.get("name", "")))


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return parse_config(raw, base_dir=p.parent)
