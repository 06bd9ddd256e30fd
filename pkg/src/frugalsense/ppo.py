"""Proximal policy optimisation for the sensing environment.

Rollouts use the stochastic policy; advantages come from generalized
advantage estimation with the critic head; updates maximise the clipped
surrogate with value and entropy terms. Every random draw comes from one
``numpy.random.Generator`` seeded by the config, so a run is reproducible
and can be resumed from a checkpoint bit-for-bit.
"""
from __future__ import annotations

import csv
import json
import math
import os
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import _accel, nn
from .env import EnvConfig, ContextModel, SensingEnv
from .errors import ConfigError, EmptyBuffer, NonFiniteLoss
from .policies import NeuralPolicy

CURVE_HEADER = ("episode", "reward", "update")
SWEEP_HEADER = ("agent_id", "seed", "gamma", "lambda", "clip", "lr", "final_fi", "final_rmse")


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-4
    epochs_per_update: int = 4
    minibatch_size: int = 64
    rollout_episodes: int = 8
    total_updates: int = 625
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    seed: int = 0
    hidden: tuple = (32, 32, 32, 32)
    shared: bool = True
    checkpoint_every: int = 25
    reward_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        if not 0.0 < self.clip_epsilon <= 1.0:
            raise ConfigError("clip_epsilon must lie in (0, 1]")
        if self.learning_rate <= 0 or self.value_coef <= 0 or self.max_grad_norm <= 0:
            raise ConfigError("learning_rate, value_coef and max_grad_norm must be > 0")
        if self.entropy_coef < 0:
            raise ConfigError("entropy_coef must be >= 0")
        if min(self.epochs_per_update, self.minibatch_size, self.rollout_episodes,
               self.checkpoint_every) < 1 or self.total_updates < 0:
            raise ConfigError("epoch, batch, episode and checkpoint counts must be >= 1")
        if self.reward_scale <= 0:
            raise ConfigError("reward_scale must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "PPOConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ppo keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


# ------------------------------------------------------------ episodes ---

class DayEpisodes:
    """Episodes of a sensing environment starting on a random day from ``days``."""

    def __init__(self, env: SensingEnv, days):
        self.env = env
        self.days = [int(d) for d in days]
        if not self.days:
            raise ConfigError("no start days")
        self.state_dim = env.config.state_dim
        self.n_actions = env.config.horizon_h

    def reset(self, rng: np.random.Generator, day: int | None = None) -> np.ndarray:
        if day is None:
            day = self.days[int(rng.integers(len(self.days)))]
        self.env.reset(day)
        return self.env.state_vector()

    def step(self, sleep: int):
        res = self.env.step(sleep)
        return self.env.state_vector(), res.reward, res.done, res.info


class BanditEpisodes:
    """One-step episodes with two actions: sleep 1 pays 1, sleep 2 pays 0."""

    state_dim = 1
    n_actions = 2

    def reset(self, rng: np.random.Generator, day=None) -> np.ndarray:
        return np.ones(1)

    def step(self, sleep: int):
        return np.ones(1), (1.0 if sleep == 1 else 0.0), True, {}


# -------------------------------------------------------------- buffer ---

@dataclass(eq=False)
class RolloutBuffer:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)  # index 0..h-1
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    next_values: list = field(default_factory=list)
    episode_rewards: list = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.rewards)

    def arrays(self):
        return (np.asarray(self.states, dtype=np.float64), np.asarray(self.actions, dtype=np.int64),
                np.asarray(self.log_probs, dtype=np.float64), np.asarray(self.rewards, dtype=np.float64),
                np.asarray(self.values, dtype=np.float64), np.asarray(self.dones, dtype=np.float64),
                np.asarray(self.next_values, dtype=np.float64))


def collect_rollouts(env_factory, policy: NeuralPolicy, n_episodes: int,
                     rng: np.random.Generator, reward_scale: float = 1.0) -> RolloutBuffer:
    """Roll ``n_episodes`` full episodes with stochastic actions.

    ``env_factory()`` returns an episode source with ``reset(rng)`` and
    ``step(sleep)``. Stored rewards are multiplied by ``reward_scale``;
    ``episode_rewards`` keeps the unscaled totals.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env = env_factory()
    buf = RolloutBuffer()
    params = policy.params
    for _ in range(n_episodes):
        x = env.reset(rng)
        logits, value = nn.forward(params, x)
        total = 0.0
        done = False
        while not done:
            logp = nn.log_softmax(logits)
            cdf = np.cumsum(np.exp(logp))
            i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), logp.size - 1)
            x_next, r, done, _ = env.step(i + 1)
            total += r
            buf.states.append(x)
            buf.actions.append(i)
            buf.log_probs.append(float(logp[i]))
            buf.rewards.append(r * reward_scale)
            buf.values.append(value)
            buf.dones.append(1.0 if done else 0.0)
            if done:
                buf.next_values.append(0.0)
            else:
                logits, value = nn.forward(params, x_next)
                buf.next_values.append(value)
            x = x_next
        buf.episode_rewards.append(total)
    return buf


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float, normalize: bool = True) -> RolloutBuffer:
    if len(buffer) == 0:
        raise EmptyBuffer("no transitions to estimate advantages from")
    _, _, _, r, v, d, nv = buffer.arrays()
    adv = _accel.gae(r, v, d, nv, float(gamma), float(lam))
    buffer.returns = adv + v
    if normalize:
        sd = adv.std()
        adv = (adv - adv.mean()) / (sd if sd > 1e-8 else 1.0)
    buffer.advantages = adv
    return buffer


# -------------------------------------------------------------- update ---

def ppo_loss_and_grads(params: nn.MLPParams, x, a, old_logp, adv, ret, config: PPOConfig):
    """Loss (to minimise) and its gradient for one minibatch."""
    B = x.shape[0]
    logits, v = nn.forward(params, x)
    logp_all = nn.log_softmax(logits)
    p = np.exp(logp_all)
    logp = logp_all[np.arange(B), a]
    ratio = np.exp(logp - old_logp)
    eps = config.clip_epsilon
    s1 = ratio * adv
    s2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    surr = np.minimum(s1, s2)
    ent = -np.sum(p * logp_all, axis=1)
    vloss = (v - ret) ** 2
    loss = -surr.mean() + config.value_coef * vloss.mean() - config.entropy_coef * ent.mean()

    active = s1 <= s2
    g_logp = np.where(active, -ratio * adv, 0.0) / B
    onehot = np.zeros_like(p)
    onehot[np.arange(B), a] = 1.0
    dlogits = g_logp[:, None] * (onehot - p)
    dlogits += (config.entropy_coef / B) * p * (logp_all + ent[:, None])
    dvalue = 2.0 * config.value_coef * (v - ret) / B
    grads = nn.backward(params, x, dlogits, dvalue)
    stats = {"loss": float(loss), "policy": float(-surr.mean()), "value": float(vloss.mean()),
             "entropy": float(ent.mean()), "clip_frac": float(np.mean(np.abs(ratio - 1.0) > eps)),
             "ratio_first": ratio}
    return float(loss), grads, stats


def ppo_update(params: nn.MLPParams, opt: nn.AdamState, buffer: RolloutBuffer,
               config: PPOConfig, rng: np.random.Generator):
    """Clipped-surrogate epochs over ``buffer``; returns ``(params, opt, stats)``.

    Raises NonFiniteLoss if any minibatch loss or gradient is not finite;
    the caller's ``params``/``opt`` are never modified.
    """
    if buffer.advantages is None or buffer.returns is None:
        raise EmptyBuffer("compute advantages before updating")
    x, a, old_logp, _, _, _, _ = buffer.arrays()
    adv, ret = buffer.advantages, buffer.returns
    n = x.shape[0]
    history = []
    for _ in range(config.epochs_per_update):
        perm = rng.permutation(n)
        for s in range(0, n, config.minibatch_size):
            mb = perm[s:s + config.minibatch_size]
            loss, grads, stats = ppo_loss_and_grads(params, x[mb], a[mb], old_logp[mb],
                                                    adv[mb], ret[mb], config)
            gn = nn.global_norm(grads)
            if not (math.isfinite(loss) and math.isfinite(gn)):
                raise NonFiniteLoss(f"non-finite loss {loss} or gradient norm {gn}")
            if gn > config.max_grad_norm:
                grads = nn.scale(grads, config.max_grad_norm / gn)
            params, opt = nn.adam_step(params, grads, opt, lr=config.learning_rate)
            stats["grad_norm"] = gn
            history.append(stats)
    summary = {k: float(np.mean([h[k] for h in history]))
               for k in ("loss", "policy", "value", "entropy", "clip_frac", "grad_norm")}
    summary["first_ratios"] = history[0]["ratio_first"] if history else np.ones(0)
    return params, opt, summary


# ------------------------------------------------------------ training ---

@dataclass(eq=False)
class TrainingRun:
    config: PPOConfig
    curve: list  # (episode, reward, update)
    checkpoints: list  # (update, MLPParams)
    best: nn.MLPParams
    best_fi: float
    best_update: int
    params: nn.MLPParams


def validation_fi(params: nn.MLPParams, episodes: DayEpisodes, days) -> float:
    """Mean daily reward of the greedy policy over episodes starting on ``days``."""
    policy = NeuralPolicy(params, "greedy")
    env = episodes.env
    fis = []
    for d in days:
        env.reset(int(d))
        while not env.done:
            env.step(policy.action(env.state_vector()))
        fis.extend(env.day_fi)
    return float(np.mean(fis))


def write_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for ep, r, u in curve:
            w.writerow([ep, repr(float(r)), u])


def read_curve(path) -> list:
    with open(path, newline="") as fh:
        return [(int(r["episode"]), float(r["reward"]), int(r["update"])) for r in csv.DictReader(fh)]


def checkpoint_name(agent_id, update: int) -> str:
    return f"agent_{agent_id}_update_{update}.json"


def train(env_config: EnvConfig, config: PPOConfig, train_days, val_days, out_dir=None,
          agent_id=0, resume: bool = False, context_model: ContextModel | None = None,
          stop_after: int | None = None, val_config: EnvConfig | None = None) -> TrainingRun:
    """Alternate rollout collection and clipped updates for ``config.total_updates``.

    Training episodes start on days drawn from ``train_days``; the best
    checkpoint is the one with the highest greedy validation FI on
    ``val_days`` (episodes of ``val_config``, default ``env_config``). With ``out_dir`` the learning curve, checkpoints and a
    resume snapshot are written there; ``resume`` continues from the
    snapshot. ``stop_after`` ends the run early after that many updates
    (used to simulate an interruption).
    """
    ctx = context_model if context_model is not None else ContextModel(env_config)
    episodes = DayEpisodes(SensingEnv(env_config, ctx), train_days)
    val_env = SensingEnv(env_config, ctx) if val_config is None else SensingEnv(val_config)
    val_eps = DayEpisodes(val_env, val_days)
    return _train_loop(lambda: episodes, episodes.state_dim, episodes.n_actions, config,
                       out_dir, agent_id, resume, stop_after,
                       lambda p: validation_fi(p, val_eps, val_eps.days))


def train_bandit(config: PPOConfig) -> TrainingRun:
    """PPO on the two-action bandit; the validation score is P(rewarding action)."""
    env = BanditEpisodes()

    def score(p):
        return float(nn.softmax(nn.forward(p, np.ones(1))[0])[0])

    return _train_loop(lambda: env, env.state_dim, env.n_actions, config, None, 0, False, None, score)


def _snapshot_path(out_dir) -> str:
    return os.path.join(out_dir, "checkpoints", "resume.pkl")


def _train_loop(env_factory, state_dim, n_actions, config: PPOConfig, out_dir, agent_id,
                resume, stop_after, score) -> TrainingRun:
    arch = nn.MLPArchitecture(state_dim, n_actions, config.hidden, config.shared)
    ckpt_dir = None
    if out_dir is not None:
        ckpt_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)

    if resume and out_dir is not None and os.path.exists(_snapshot_path(out_dir)):
        with open(_snapshot_path(out_dir), "rb") as fh:
            snap = pickle.load(fh)
        if snap["config"] != config.to_dict():
            raise ConfigError("resume snapshot was written with a different PPO config")
        params = nn.from_dict(snap["params"])
        opt = nn.AdamState([np.array(m) for m in snap["m"]], [np.array(v) for v in snap["v"]], snap["t"])
        rng = np.random.default_rng()
        rng.bit_generator.state = snap["rng"]
        curve = [tuple(c) for c in snap["curve"]]
        best, best_fi, best_update = nn.from_dict(snap["best"]), snap["best_fi"], snap["best_update"]
        start_update = snap["update"]
        checkpoints = [(u, nn.load(os.path.join(ckpt_dir, checkpoint_name(agent_id, u))))
                       for u in snap["checkpoints"]]
    else:
        params = nn.init_params(arch, config.seed)
        opt = nn.adam_init(params)
        rng = np.random.default_rng(config.seed)
        curve, checkpoints = [], []
        best, best_fi, best_update = params, score(params), 0
        start_update = 0

    def save_checkpoint(update):
        nonlocal best, best_fi, best_update
        fi = score(params)
        if fi > best_fi:
            best, best_fi, best_update = params, fi, update
        checkpoints.append((update, params))
        if ckpt_dir is None:
            return
        nn.save(params, os.path.join(ckpt_dir, checkpoint_name(agent_id, update)))
        nn.save(best, os.path.join(ckpt_dir, "best.json"))
        write_curve(curve, os.path.join(out_dir, "learning_curve.csv"))
        snap = {"config": config.to_dict(), "params": nn.to_dict(params),
                "m": opt.m, "v": opt.v, "t": opt.t, "rng": rng.bit_generator.state,
                "curve": curve, "best": nn.to_dict(best), "best_fi": best_fi,
                "best_update": best_update, "update": update,
                "checkpoints": [u for u, _ in checkpoints]}
        tmp = _snapshot_path(out_dir) + ".tmp"
        with open(tmp, "wb") as fh:
            pickle.dump(snap, fh)
        os.replace(tmp, _snapshot_path(out_dir))
        with open(os.path.join(out_dir, "best.txt"), "w") as fh:
            fh.write(f"update {best_update}\nvalidation_fi {best_fi!r}\n")

    update = start_update
    while update < config.total_updates:
        if stop_after is not None and update - start_update >= stop_after:
            break
        policy = NeuralPolicy(params, "stochastic")
        buf = collect_rollouts(env_factory, policy, config.rollout_episodes, rng, config.reward_scale)
        episode0 = len(curve)
        curve.extend((episode0 + i, r, update) for i, r in enumerate(buf.episode_rewards))
        compute_gae(buf, config.gamma, config.gae_lambda)
        try:
            params, opt, _ = ppo_update(params, opt, buf, config, rng)
        except NonFiniteLoss:
            pass  # keep the previous parameters
        update += 1
        if update % config.checkpoint_every == 0 or update == config.total_updates:
            save_checkpoint(update)

    if out_dir is not None:
        write_curve(curve, os.path.join(out_dir, "learning_curve.csv"))
    return TrainingRun(config, curve, checkpoints, best, best_fi, best_update, params)


def smoothed(values, window: int = 50) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    i = np.arange(1, v.size + 1)
    lo = np.maximum(0, i - window)
    return (c[i] - c[lo]) / (i - lo)


# --------------------------------------------------------------- sweep ---

def _sweep_job(args):
    (agent_id, train_cfg, val_cfg, test_cfg, train_days, val_days, test_day, test_days,
     ppo_cfg, out_dir) = args
    from .evaluation import evaluate_policy

    agent_dir = os.path.join(out_dir, f"agent_{agent_id}")
    run = train(train_cfg, ppo_cfg, train_days, val_days, agent_dir, agent_id, resume=True,
                val_config=val_cfg)
    traj: list = []
    rep = evaluate_policy(NeuralPolicy(run.best, "greedy"), test_cfg, test_day, test_days,
                          name=f"agent_{agent_id}", trajectory=traj)
    os.makedirs(os.path.join(agent_dir, "eval"), exist_ok=True)
    from .env import write_trajectory
    from .evaluation import write_reports
    from .policies import write_schedule
    write_reports([rep], os.path.join(agent_dir, "eval", "report.csv"))
    write_schedule(rep.schedule, os.path.join(agent_dir, "eval", "schedule.txt"))
    write_trajectory(traj, os.path.join(agent_dir, "eval", "trajectory.csv"))
    return (agent_id, ppo_cfg.seed, ppo_cfg.gamma, ppo_cfg.gae_lambda, ppo_cfg.clip_epsilon,
            ppo_cfg.learning_rate, rep.fisher_information, rep.rmse), rep, traj


def sweep(train_cfg: EnvConfig, val_cfg: EnvConfig, test_cfg: EnvConfig, train_days, val_days,
          test_day: int, test_days: int, base: PPOConfig, grid: list[dict], out_dir,
          threads: int | None = None):
    """Train one agent per override dict in ``grid`` and score each on the test span.

    Writes ``sweep_results.csv`` and returns ``(rows, reports, trajectories)``
    ordered by agent id. Agents run in ``threads`` worker processes
    (default from ``FRUGALSENSE_THREADS``, else 1); results do not depend
    on the degree of parallelism.
    """
    os.makedirs(out_dir, exist_ok=True)
    if threads is None:
        threads = int(os.environ.get("FRUGALSENSE_THREADS", "1") or 1)
    jobs = [(i, train_cfg, val_cfg, test_cfg, list(train_days), list(val_days), test_day, test_days,
             replace(base, **g), out_dir) for i, g in enumerate(grid)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
            results = list(ex.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows = [r[0] for r in results]
    with open(os.path.join(out_dir, "sweep_results.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for row in rows:
            w.writerow([row[0], row[1], *[repr(float(x)) for x in row[2:]]])
    with open(os.path.join(out_dir, "grid.json"), "w") as fh:
        json.dump(grid, fh, indent=1)
    return rows, [r[1] for r in results], [r[2] for r in results]
