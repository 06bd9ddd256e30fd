"""The bundled synthetic benchmark: three weeks of data, two for pretraining, one held out.

Days 0-6 form the first context week, 7-13 the second and 14-20 the test
week. Agents train on 1-day episodes in the second week with the first
week as context, are validated on the first week with the second as
context, and are tested on the third week with both preceding weeks as
context. The GP hyperparameters are fitted once on the first two weeks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gp
from .env import EnvConfig
from .timeseries import SLOTS_PER_WEEK, Dataset, SyntheticProfile, generate_synthetic, split

BENCHMARK_WEEKS = 3
TRAIN_WEEKS = 2
BUDGET_PER_DAY = 14
WEEKLY_BUDGET = 100


def default_init(y, smoothness: float = 1.5) -> gp.KernelParams:
    """Starting hyperparameters scaled to the spread of ``y``."""
    vy = float(np.var(y)) or 1.0
    return gp.KernelParams(gp.MaternParams(vy / 2, 0.1, smoothness),
                           gp.PeriodicParams(vy / 2, 1.0, 1.0),
                           noise_variance=vy / 1000, mean=float(np.mean(y)))


def fit_params(context: Dataset, budget: int = 200, seed: int = 0,
               smoothness: float = 1.5) -> tuple[gp.KernelParams, float, float]:
    """Fit hyperparameters on ``context``; returns ``(params, lml_init, lml_fit)``."""
    X, y = context.features(), context.laeq
    init = default_init(y, smoothness)
    offset, scale = gp.standardization(X)
    from dataclasses import replace
    init = replace(init, input_offset=offset, input_scale=scale)
    fitted = gp.optimize_hyperparameters(X, y, init, budget=budget, seed=seed)
    return fitted, gp.log_marginal_likelihood(X, y, init), gp.log_marginal_likelihood(X, y, fitted)


@dataclass(frozen=True, eq=False)
class Benchmark:
    dataset: Dataset
    params: gp.KernelParams
    train_env: EnvConfig
    val_env: EnvConfig
    test_env: EnvConfig
    train_days: tuple
    val_days: tuple
    test_day: int
    test_days: int

    @property
    def test_span(self) -> tuple[int, int]:
        s = self.test_day * 96
        return s, s + self.test_days * 96

    @property
    def test_context(self) -> Dataset:
        return self.test_env.context


def make_benchmark(dataset: Dataset, params: gp.KernelParams, horizon_h: int = 24,
                   budget_per_day: int = BUDGET_PER_DAY, reward_mode: str = "sparse_daily",
                   seed: int = 0) -> Benchmark:
    w = SLOTS_PER_WEEK
    week1, week2 = dataset.window(0, w), dataset.window(w, 2 * w)
    context, _ = split(dataset, TRAIN_WEEKS * w)
    common = dict(horizon_h=horizon_h, budget_per_day=budget_per_day, seed=seed)
    train_env = EnvConfig(dataset, params, week1, reward_mode=reward_mode, **common)
    val_env = EnvConfig(dataset, params, week2, **common)
    test_env = EnvConfig(dataset, params, context, episode_days=7, **common)
    return Benchmark(dataset, params, train_env, val_env, test_env,
                     tuple(range(7, 14)), tuple(range(0, 7)), 14, 7)


def synthetic_dataset(profile: SyntheticProfile | None = None, weeks: int = BENCHMARK_WEEKS) -> Dataset:
    return generate_synthetic(profile or SyntheticProfile(), weeks * SLOTS_PER_WEEK)
