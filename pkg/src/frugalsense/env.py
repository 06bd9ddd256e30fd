"""Budget-constrained sensing environment.

The sensor sleeps for ``a`` slots, wakes up and, while it still has budget
for the day, measures the true level at the wake-up slot. The GP is
conditioned on every measurement. At each day boundary the agent receives
the mean predictive precision over that day's 96 slots under the
end-of-day posterior (``sparse_daily``), or per-step precision increments
that sum to the same daily change (``dense_delta``).

The GP posterior over the episode's slots is held as a joint block given
the context, so each measurement is an exact rank-one update; this equals
refitting on context plus measurements with the frozen hyperparameters.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import gp
from .errors import EpisodeDone, InvalidAction, SpanError
from .evaluation import fisher_information
from .timeseries import SLOTS_PER_DAY, Dataset, feature_matrix

REWARD_MODES = ("sparse_daily", "dense_delta")
TRAJECTORY_HEADER = ("step", "slot", "action", "sampled", "battery", "reward")
# per-slot features placed in the state: time-of-day sin/cos, weekday sin/cos, holiday
_STATE_FEATURE_COLUMNS = (1, 2, 3, 4, 5)


@dataclass(frozen=True, eq=False)
class EnvConfig:
    dataset: Dataset
    gp_params: gp.KernelParams
    context: Dataset | None = None
    horizon_h: int = 24
    budget_per_day: int = 14
    episode_days: int = 1
    reward_mode: str = "sparse_daily"
    day_slots: int = SLOTS_PER_DAY
    seed: int = 0

    def __post_init__(self):
        if self.day_slots != SLOTS_PER_DAY:
            raise ValueError(f"day_slots must be {SLOTS_PER_DAY}")
        if not 1 <= self.horizon_h <= self.day_slots:
            raise ValueError("horizon_h must lie in [1, day_slots]")
        if not 0 <= self.budget_per_day <= self.day_slots:
            raise ValueError("budget_per_day must lie in [0, day_slots]")
        if self.episode_days < 1:
            raise ValueError("episode_days must be >= 1")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"reward_mode must be one of {REWARD_MODES}")

    @property
    def state_dim(self) -> int:
        return 2 * self.horizon_h + 1 + 5 * self.horizon_h


@dataclass(frozen=True, eq=False)
class State:
    slot: int
    mu_horizon: np.ndarray
    sigma_horizon: np.ndarray
    battery: float
    features_horizon: np.ndarray  # (h, 5)

    def __eq__(self, other) -> bool:
        return (isinstance(other, State) and self.slot == other.slot
                and self.battery == other.battery
                and np.array_equal(self.mu_horizon, other.mu_horizon)
                and np.array_equal(self.sigma_horizon, other.sigma_horizon)
                and np.array_equal(self.features_horizon, other.features_horizon))


@dataclass(frozen=True)
class Action:
    sleep: int


@dataclass(frozen=True, eq=False)
class StepResult:
    state: State
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class ContextModel:
    """GP fitted on the context plus cached prior blocks over episode windows.

    Blocks are deterministic functions of their window, so one instance can
    be shared by any number of environments built on the same config.
    """

    def __init__(self, config: EnvConfig):
        self.params = config.gp_params
        self.holidays = config.dataset.holidays
        ctx = config.context
        if ctx is not None and len(ctx):
            self.model = gp.fit(ctx.features(), ctx.laeq, self.params, window=None)
            self.mu_center = float(np.mean(ctx.laeq))
            sd = float(np.std(ctx.laeq))
            self.mu_scale = sd if sd > 0 else 1.0
        else:
            self.model = None
            self.mu_center = self.params.mean
            self.mu_scale = float(np.sqrt(self.params.prior_variance))
        self.prior_sd = float(np.sqrt(self.params.prior_variance))
        self._blocks: dict = {}

    def block(self, start: int, length: int) -> tuple[gp.BlockPosterior, np.ndarray]:
        key = (start, length)
        if key not in self._blocks:
            X = feature_matrix(np.arange(start, start + length), self.holidays)
            self._blocks[key] = (gp.posterior_block(self.model, X, self.params), X)
        blk, X = self._blocks[key]
        return blk.copy(), X


class SensingEnv:
    def __init__(self, config: EnvConfig, context_model: ContextModel | None = None):
        self.config = config
        self.ctx = context_model if context_model is not None else ContextModel(config)
        self._done = True
        self._started = False

    # ------------------------------------------------------------ api ---
    def reset(self, start_day: int) -> State:
        cfg = self.config
        D = SLOTS_PER_DAY
        start = int(start_day) * D
        end = start + cfg.episode_days * D
        lo, hi = cfg.dataset.span
        if start_day < 0 or start < lo or end > hi:
            raise SpanError(f"episode days [{start_day}, {start_day + cfg.episode_days}) "
                            f"outside dataset span [{lo}, {hi})")
        self.start, self.end = start, end
        self.block, X = self.ctx.block(start, end - start + cfg.horizon_h)
        self.features = X[:, _STATE_FEATURE_COLUMNS]
        self.clock = start
        self.day = 0
        self.used_today = 0
        self.samples: list[int] = []
        self.day_fi: list[float] = []
        self.steps = 0
        self._day_start_fi = self._fi_of_day(0)
        self._last_fi = self._day_start_fi
        self._done = False
        self._started = True
        self.state = self._observe_state()
        return self.state

    @property
    def done(self) -> bool:
        return self._done

    @property
    def battery(self) -> float:
        n = self.config.budget_per_day
        return 0.0 if n == 0 else (n - self.used_today) / n

    def step(self, action) -> StepResult:
        if not self._started or self._done:
            raise EpisodeDone("episode finished; call reset")
        sleep = action.sleep if isinstance(action, Action) else action
        h = self.config.horizon_h
        if isinstance(sleep, (bool, np.bool_)) or not isinstance(sleep, (int, np.integer)) or not 1 <= sleep <= h:
            raise InvalidAction(f"sleep must be an integer in [1, {h}], got {sleep!r}")
        sleep = int(sleep)
        D = SLOTS_PER_DAY
        dense = self.config.reward_mode == "dense_delta"
        wake = self.clock + sleep
        reward = 0.0
        finished: list[tuple[int, float]] = []

        # close every day that ends at or before the wake-up slot
        wake_day = (wake - self.start) // D
        while self.day < min(wake_day, self.config.episode_days):
            fi = self._fi_of_day(self.day)
            finished.append((self.day, fi))
            self.day_fi.append(fi)
            reward += (fi - self._last_fi) if dense else fi
            self.day += 1
            self.used_today = 0
            if self.day < self.config.episode_days:
                self._day_start_fi = self._fi_of_day(self.day)
                self._last_fi = self._day_start_fi

        self.clock = wake
        sampled = False
        if wake < self.end:
            if self.used_today < self.config.budget_per_day:
                y = float(self.config.dataset.values_at([wake])[0])
                self.block.observe(wake - self.start, y)
                self.samples.append(wake)
                self.used_today += 1
                sampled = True
                if dense:
                    fi = self._fi_of_day(self.day)
                    reward += fi - self._last_fi
                    self._last_fi = fi
        else:
            self._done = True

        self.steps += 1
        info = {"slot": wake, "sampled": sampled,
                "day_fi": finished[-1][1] if finished else None,
                "days": finished}
        self.state = self._observe_state() if not self._done else self._terminal_state()
        return StepResult(self.state, float(reward), self._done, info)

    # -------------------------------------------------------- helpers ---
    def _fi_of_day(self, d: int) -> float:
        a = d * SLOTS_PER_DAY
        return fisher_information(self.block.predictive_variance(np.arange(a, a + SLOTS_PER_DAY)))

    def _horizon_idx(self) -> np.ndarray:
        base = self.clock - self.start + 1
        return np.arange(base, base + self.config.horizon_h)

    def _observe_state(self) -> State:
        idx = self._horizon_idx()
        return State(self.clock, self.block.predictive_mean(idx).copy(),
                     np.sqrt(self.block.predictive_variance(idx)), self.battery,
                     self.features[idx].copy())

    def _terminal_state(self) -> State:
        # the clock may run past the cached block; repeat the last horizon
        h = self.config.horizon_h
        idx = np.arange(len(self.block) - h, len(self.block))
        return State(self.clock, self.block.predictive_mean(idx).copy(),
                     np.sqrt(self.block.predictive_variance(idx)), self.battery,
                     self.features[idx].copy())

    def state_vector(self, state: State | None = None) -> np.ndarray:
        return state_vector(self.state if state is None else state, self.ctx)


def state_vector(state: State, ctx: ContextModel) -> np.ndarray:
    """``[standardized mu, sigma / prior sd, battery, features]``, length 2h + 1 + 5h."""
    mu = (state.mu_horizon - ctx.mu_center) / ctx.mu_scale
    sig = state.sigma_horizon / ctx.prior_sd
    return np.concatenate([mu, sig, [state.battery], state.features_horizon.ravel()])


def rollout(env: SensingEnv, policy, start_day: int) -> list[dict]:
    """Run one episode with ``policy.action(state_vec)``; returns per-step records."""
    env.reset(start_day)
    records = []
    while not env.done:
        a = int(policy.action(env.state_vector()))
        res = env.step(a)
        records.append({"step": env.steps - 1, "slot": res.info["slot"], "action": a,
                        "sampled": int(res.info["sampled"]), "battery": env.battery,
                        "reward": res.reward, "days": res.info["days"]})
    return records


def write_trajectory(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for r in records:
            w.writerow([r["step"], r["slot"], r["action"], r["sampled"], repr(float(r["battery"])),
                        repr(float(r["reward"]))])
