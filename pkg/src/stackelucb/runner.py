"""
Seeded experiment runs, multi-seed sweeps and plot-data files.

Every run owns one master seed. Independent child streams are split off it by
label (``agent``, ``noise``, ``demand``), so adding a consumer of randomness
never shifts the draws of the others. Environment structure (action sets,
offline data) is seeded from the environment block, not from the run seed,
so all runs of a sweep face the same game.
"""
from __future__ import annotations

import csv
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .config import ExperimentConfig, parse_config
from .errors import ConfigError, InputError
from .games import GameEnv, RoundRecord, SimplexGrid, TypeHistory, run_game, stackelberg_wrap
from .gp_regression import PosteriorModel
from .kernels import KernelSpec, recommended_kernel
from .policies import (
    GPUCB,
    Agent,
    Exp3,
    FixedAction,
    Hedge,
    SingleOpponentUCB,
    StackelUCB,
    best_offline_act,
    max_min_act,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "action_index", "theta", "y_observed", "y_true", "reward", "optimistic_reward",
               "cumulative_reward", "regret", "time_avg_regret", "strategy_entropy", "solver_fallback")
PLOT_KINDS = ("time_avg_regret", "reward_curve", "congestion_map")
WITHIN = 0.05  # relative gap to OPT counted as converged
GENERIC_OFFLINE_POINTS = 200


def stream(seed: int, label: str) -> np.random.Generator:
    """Child generator of ``seed`` identified by ``label``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())]))


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def fmt_vec(v) -> str:
    return ";".join(fmt(a) for a in np.ravel(v))


def theta_field(theta) -> str:
    # long type vectors (traffic demands) are written as a digest of their bytes
    theta = np.ascontiguousarray(np.ravel(theta), dtype=np.float64)
    if theta.size <= 8:
        return fmt_vec(theta)
    return f"crc32:{zlib.crc32(theta.tobytes()):08x}"


# -- scenarios -------------------------------------------------------------------------------

@dataclass
class Scenario:
    """A built environment plus what the baselines and summaries need."""

    kind: str
    env: GameEnv
    game: object = None
    opt_reward: Optional[float] = None
    action_dim: int = 0
    type_dim: int = 0


def _freeze(params: dict) -> str:
    return yaml.safe_dump(params, sort_keys=True)


@lru_cache(maxsize=8)
def _static_scenario(kind: str, frozen: str) -> Scenario:
    p = yaml.safe_load(frozen)
    if kind == "synthetic":
        from .synthetic import make_synthetic_env

        env, _ = make_synthetic_env(seed=p["env_seed"], n_actions=p["n_actions"], n_types=p["n_types"],
                                    action_dim=p["action_dim"], type_dim=p["type_dim"],
                                    kernel=KernelSpec("rbf", lengthscale=p["lengthscale"]),
                                    rkhs_bound=p["rkhs_bound"], noise_sigma=p["noise_sigma"], cyclic=p["cyclic"])
        return Scenario(kind, env, action_dim=p["action_dim"], type_dim=p["type_dim"])
    if kind == "stackelberg_synthetic":
        from .synthetic import make_stackelberg_base

        base = make_stackelberg_base(seed=p["env_seed"], n_leader=p["n_leader"], n_types=p["n_types"],
                                     noise_sigma=p["noise_sigma"])
        env = stackelberg_wrap(base, SimplexGrid(p["n_leader"], p["resolution"]))
        return Scenario(kind, env, action_dim=p["n_leader"], type_dim=2)
    if kind == "traffic":
        from .env_traffic import build_traffic_game, load_network

        net = load_network(p["network"], scale=p["scale"])
        game = build_traffic_game(net, p["origin"], p["dest"], kappa=p["kappa"], total_units=p["total_units"])
        return Scenario(kind, None, game, action_dim=net.n_edges, type_dim=len(net.od_pairs))
    if kind == "wildlife":
        from .env_wildlife import build_wildlife_env, build_wildlife_game, load_park

        park, params = load_park(p["park"])
        game = build_wildlife_game(park, params, n_mixed=p["n_mixed"], seed=p["action_seed"])
        env = build_wildlife_env(game, noise_sigma=p["noise_sigma"])
        return Scenario(kind, env, game, opt_reward=float(game.true_rewards().max()),
                        action_dim=park.n_cells, type_dim=park.n_cells)
    raise ConfigError(f"unknown env {kind!r}")


def build_scenario(cfg: ExperimentConfig, seed: int) -> Scenario:
    scn = _static_scenario(cfg.env, _freeze(cfg.env_params))
    if cfg.env != "traffic":
        return scn
    from .env_traffic import build_traffic_env

    # the demand stream is the only per-run part of the traffic game
    demand_seed = int(stream(seed, "demand").integers(2 ** 32))
    env = build_traffic_env(scn.game, demand_seed=demand_seed, noise_sigma=cfg.env_params["noise_sigma"])
    return Scenario(scn.kind, env, scn.game, None, scn.action_dim, scn.type_dim)


# -- agents ----------------------------------------------------------------------------------

def resolve_kernel(cfg: ExperimentConfig, scn: Scenario) -> KernelSpec:
    if isinstance(cfg.kernel, KernelSpec):
        return cfg.kernel
    if scn.kind == "synthetic":
        return KernelSpec("rbf", lengthscale=cfg.env_params["lengthscale"])
    if scn.kind == "wildlife" and cfg.agent == "gp_ucb":
        return recommended_kernel("wildlife_reward")
    return recommended_kernel(scn.kind, scn.action_dim, scn.type_dim)


def _prior_means(cfg: ExperimentConfig, scn: Scenario):
    """``(response_mean, reward_mean)`` or ``(None, None)``."""
    pm = cfg.prior_mean
    if pm is None:
        return None, None
    if isinstance(pm, list):
        return np.asarray(pm, float), float(pm[0])
    rng = stream(cfg.env_params.get("action_seed", cfg.env_params.get("env_seed", 0)), "prior")
    if scn.kind == "wildlife":
        return scn.game.offline_prior_means(rng, cfg.env_params["prior_points"], cfg.env_params["noise_sigma"])
    env = scn.env
    idx = rng.integers(env.n_actions, size=GENERIC_OFFLINE_POINTS)
    ts = rng.integers(1, cfg.horizon + 1, size=idx.size)
    Y = np.array([np.atleast_1d(env.respond(env.actions[i], env.type_sequence(int(t), TypeHistory())))
                  for i, t in zip(idx, ts)])
    R = env.reward.eval(env.actions[idx], Y)
    return Y.mean(axis=0), float(R.mean())


def _response_sample(scn: Scenario) -> np.ndarray:
    env = scn.env
    if scn.kind == "traffic":
        return np.linspace(0.0, scn.game.max_response(), 101)[:, None]
    lo, hi = env.reward.response_lo, env.reward.response_hi
    if lo is not None and hi is not None and np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and lo.size == 1:
        return np.linspace(lo[0], hi[0], 101)[:, None]
    Y = np.vstack([env.responses(env.type_sequence(t, TypeHistory())) for t in range(1, 11)])
    return np.linspace(Y.min(axis=0), Y.max(axis=0), 101)


def _offline_action(cfg: ExperimentConfig, scn: Scenario, kernel: KernelSpec, prior) -> int:
    env = scn.env
    seed = cfg.env_params.get("action_seed", cfg.env_params.get("env_seed", 0))
    rng = stream(seed, "offline")
    if scn.kind == "wildlife":
        model = scn.game.offline_model(kernel, cfg.lam, cfg.env_params["offline_points"], rng,
                                       cfg.env_params["noise_sigma"], prior_mean=prior)
        return scn.game.best_offline_action(model)
    idx = rng.integers(env.n_actions, size=GENERIC_OFFLINE_POINTS)
    ts = rng.integers(1, cfg.horizon + 1, size=idx.size)
    thetas = np.array([env.type_sequence(int(t), TypeHistory()) for t in ts])
    Y = np.array([np.atleast_1d(env.respond(env.actions[i], th)) for i, th in zip(idx, thetas)])
    Y = Y + env.noise_sigma * rng.normal(size=Y.shape)
    model = PosteriorModel.from_data(kernel, cfg.lam, np.hstack([env.actions[idx], thetas]), Y, prior_mean=prior)
    theta_ref = env.theta_bar if env.theta_bar is not None else thetas.mean(axis=0)
    return best_offline_act(model, env.reward, env.actions, theta_ref)


def make_agent(cfg: ExperimentConfig, scn: Scenario, seed: int) -> Agent:
    env = scn.env
    rng = stream(seed, "agent")
    kernel = resolve_kernel(cfg, scn)
    if cfg.agent == "stackelucb":
        prior, _ = _prior_means(cfg, scn)
        return StackelUCB(env.actions, env.reward, kernel, cfg.lam, cfg.confidence, cfg.horizon, env.reward_range,
                          rng, eta=cfg.eta_override, prior_mean=prior)
    if cfg.agent == "single_ucb":
        if env.theta_bar is None:
            raise ConfigError(f"single_ucb needs a fixed opponent type; env {scn.kind!r} has none")
        prior, _ = _prior_means(cfg, scn)
        return SingleOpponentUCB(env.actions, env.reward, kernel, cfg.lam, cfg.confidence, env.theta_bar,
                                 prior_mean=prior)
    if cfg.agent == "hedge":
        return Hedge(env.n_actions, cfg.horizon, env.reward_range, rng, eta=cfg.eta_override)
    if cfg.agent == "exp3":
        return Exp3(env.n_actions, cfg.horizon, env.reward_range, rng, gamma_mix=cfg.gamma_mix, eta=cfg.eta_override)
    if cfg.agent == "gp_ucb":
        _, prior = _prior_means(cfg, scn)
        return GPUCB(env.actions, kernel, cfg.lam, cfg.confidence, env.theta_bar,
                     prior_mean=None if prior is None else [prior])
    if cfg.agent == "max_min":
        if scn.kind == "wildlife":
            return FixedAction(scn.game.max_min_action())
        return FixedAction(max_min_act(env.reward, env.actions, _response_sample(scn)))
    if cfg.agent == "best_offline":
        prior, _ = _prior_means(cfg, scn)
        return FixedAction(_offline_action(cfg, scn, kernel, prior))
    if cfg.agent == "fixed_action":
        if cfg.action_index >= env.n_actions:
            raise ConfigError(f"action index {cfg.action_index} outside 0..{env.n_actions - 1}")
        return FixedAction(cfg.action_index)
    raise ConfigError(f"unknown agent {cfg.agent!r}")


# -- runs ------------------------------------------------------------------------------------

@dataclass
class RunSummary:
    env: str
    agent: str
    seed: int
    horizon: int
    cumulative_reward: float
    final_regret: float
    time_avg_regret: list
    rewards: list
    avg_congestion: Optional[float] = None
    edge_congestion: Optional[list] = None
    edges: Optional[list] = None
    opt_reward: Optional[float] = None
    rounds_to_within_5pct_of_opt: Optional[int] = None
    name: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunSummary":
        return cls(**json.loads(text))


def first_within(rewards, opt: float, rel: float = WITHIN) -> Optional[int]:
    """First round (1-based) whose reward is within ``rel |opt|`` of ``opt``."""
    hit = np.flatnonzero(np.asarray(rewards) >= opt - rel * abs(opt))
    return int(hit[0]) + 1 if hit.size else None


def summarize(cfg: ExperimentConfig, scn: Scenario, seed: int, records: list[RoundRecord]) -> RunSummary:
    rewards = np.array([r.reward for r in records])
    regret = np.array([r.regret for r in records])
    t = np.arange(1, len(records) + 1)
    out = RunSummary(env=cfg.env, agent=cfg.agent_label, seed=int(seed), horizon=len(records),
                     cumulative_reward=float(rewards.sum()), final_regret=float(regret[-1]),
                     time_avg_regret=(regret / t).tolist(), rewards=rewards.tolist(), name=cfg.name)
    if scn.kind == "traffic":
        game = scn.game
        per_edge = np.mean([game.edge_congestion_of(r.action_index, r.theta) for r in records], axis=0)
        out.avg_congestion = float(np.mean([r.y_true[0] for r in records]))
        out.edge_congestion = per_edge.tolist()
        out.edges = [[int(a), int(b)] for a, b in zip(game.network.edge_from, game.network.edge_to)]
    if scn.opt_reward is not None:
        out.opt_reward = scn.opt_reward
        out.rounds_to_within_5pct_of_opt = first_within(rewards, scn.opt_reward)
    return out


def write_records_csv(path, records: list[RoundRecord]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([
                r.t, r.action_index, theta_field(r.theta), fmt_vec(r.y_observed), fmt_vec(r.y_true), fmt(r.reward),
                fmt(r.optimistic_reward), fmt(r.cumulative_reward), fmt(r.regret), fmt(r.regret / r.t),
                fmt(r.strategy_entropy), fmt(r.solver_fallback),
            ])


def run_label(cfg: ExperimentConfig, seed: int) -> str:
    base = cfg.name or f"{cfg.env}_{cfg.agent_label}"
    base = base.replace("(", "_").replace(")", "")
    return f"{base}_seed{seed}"


def run_experiment(cfg: ExperimentConfig, seed: Optional[int] = None, out_dir=None):
    """Play one seeded run; returns ``(records, summary)`` and writes files when ``out_dir`` is set."""
    seed = cfg.seeds[0] if seed is None else int(seed)
    scn = build_scenario(cfg, seed)
    agent = make_agent(cfg, scn, seed)
    records = run_game(scn.env, agent, cfg.horizon, stream(seed, "noise"))
    summary = summarize(cfg, scn, seed, records)
    if out_dir is not None:
        out = Path(out_dir)
        label = run_label(cfg, seed)
        write_records_csv(out / f"{label}.csv", records)
        (out / f"{label}.summary.json").write_text(summary.to_json())
    log.info("%s seed %d: cumulative reward %.4g, regret %.4g", cfg.agent_label, seed,
             summary.cumulative_reward, summary.final_regret)
    return records, summary


def _run_job(args):
    cfg_dict, seed, out_dir = args
    cfg = parse_config(cfg_dict)
    return run_experiment(cfg, seed, out_dir)[1]


def sweep(configs, jobs: int = 1, out_dir=None) -> list[RunSummary]:
    """Every (config, seed) pair as an independent run; order follows the inputs."""
    configs = [configs] if isinstance(configs, ExperimentConfig) else list(configs)
    if not configs:
        raise InputError("sweep needs at least one config")
    tasks = [(c.to_dict(), s, out_dir) for c in configs for s in c.seeds]
    if jobs <= 1:
        return [_run_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_job, tasks))


# -- aggregation and plot data ---------------------------------------------------------------

def mean_stderr(values):
    """Mean and standard error along the first axis; stderr is zero for one sample."""
    a = np.asarray(values, float)
    if a.shape[0] == 0:
        raise InputError("nothing to aggregate")
    m = a.mean(axis=0)
    se = a.std(axis=0, ddof=1) / np.sqrt(a.shape[0]) if a.shape[0] > 1 else np.zeros_like(m)
    return m, se


def aggregate(summaries: list[RunSummary]) -> dict:
    """Mean and standard error of the headline numbers, grouped by agent label."""
    groups: dict = {}
    for s in summaries:
        groups.setdefault(s.name or s.agent, []).append(s)
    out = {}
    for key, group in groups.items():
        cr, cr_se = mean_stderr([s.cumulative_reward for s in group])
        rg, rg_se = mean_stderr([s.final_regret for s in group])
        row = {"n_runs": len(group), "cumulative_reward": float(cr), "cumulative_reward_se": float(cr_se),
               "final_regret": float(rg), "final_regret_se": float(rg_se)}
        if group[0].avg_congestion is not None:
            c, c_se = mean_stderr([s.avg_congestion for s in group])
            row.update(avg_congestion=float(c), avg_congestion_se=float(c_se))
        if group[0].opt_reward is not None:
            curve, _ = mean_stderr([s.rewards for s in group])
            row.update(opt_reward=group[0].opt_reward, final_reward=float(curve[-1]),
                       rounds_to_within_5pct_of_opt=first_within(curve, group[0].opt_reward))
        out[key] = row
    return out


def emit_plot_data(summaries: list[RunSummary], kind: str, path) -> Path:
    """Write one plot table for ``summaries`` (runs of a single configuration)."""
    if kind not in PLOT_KINDS:
        raise InputError(f"kind must be one of {PLOT_KINDS}")
    if not summaries:
        raise InputError("no summaries to plot")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if kind == "congestion_map":
            if any(s.edge_congestion is None for s in summaries):
                raise InputError("congestion maps need traffic runs")
            m, _ = mean_stderr([s.edge_congestion for s in summaries])
            w.writerow(("edge_id", "from", "to", "time_avg_congestion"))
            for e, ((a, b), v) in enumerate(zip(summaries[0].edges, m)):
                w.writerow((e, a, b, fmt(v)))
            return path
        key = "time_avg_regret" if kind == "time_avg_regret" else "rewards"
        curves = [getattr(s, key) for s in summaries]
        if len({len(c) for c in curves}) != 1:
            raise InputError("runs have different horizons")
        m, se = mean_stderr(curves)
        w.writerow(("t", "mean", "stderr"))
        for t, (a, b) in enumerate(zip(m, se), start=1):
            w.writerow((t, fmt(a), fmt(b)))
    return path


def load_summaries(directory) -> list[RunSummary]:
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"not a directory: {d}")
    return [RunSummary.from_json(p.read_text()) for p in sorted(d.glob("*.summary.json"))]
