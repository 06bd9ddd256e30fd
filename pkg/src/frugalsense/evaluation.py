"""Model-quality metrics and schedule/policy scoring over a held-out span."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import gp
from .errors import LengthMismatch, NonPositiveVariance, SpanError
from .timeseries import Dataset, feature_matrix

REPORT_HEADER = ("policy", "fi", "rmse", "samples", "span_start", "span_end")


def rmse(mean, truth) -> float:
    m = np.asarray(mean, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if m.shape != t.shape or m.size == 0:
        raise LengthMismatch(f"rmse needs equal non-empty inputs, got {m.size} and {t.size}")
    return float(np.sqrt(np.mean((m - t) ** 2)))


def fisher_information(variance) -> float:
    """Mean predictive precision, ``mean(1 / variance)``."""
    v = np.asarray(variance, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise NonPositiveVariance("empty variance list")
    if not np.all(v > 0):
        raise NonPositiveVariance("variances must be strictly positive")
    return float(np.mean(1.0 / v))


@dataclass(frozen=True)
class EvalReport:
    fisher_information: float
    rmse: float
    num_samples_used: int
    schedule: tuple
    period_span: tuple
    policy: str = ""

    def row(self) -> list:
        return [self.policy, repr(self.fisher_information), repr(self.rmse),
                self.num_samples_used, self.period_span[0], self.period_span[1]]


def write_reports(reports, path, append: bool = False) -> None:
    """Write report rows as CSV; with ``append`` the header is written only for a new file."""
    new = not (append and os.path.exists(path) and os.path.getsize(path) > 0)
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(REPORT_HEADER)
        for r in reports:
            w.writerow(r.row())


def read_reports(path) -> list[EvalReport]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(EvalReport(float(rec["fi"]), float(rec["rmse"]), int(rec["samples"]), (),
                                  (int(rec["span_start"]), int(rec["span_end"])), rec["policy"]))
    return out


def _check_span(span) -> tuple[int, int]:
    start, end = int(span[0]), int(span[1])
    if end <= start or start < 0:
        raise SpanError(f"invalid span [{start}, {end})")
    return start, end


def posterior_over_span(dataset: Dataset, schedule, params: gp.KernelParams, span,
                        context: Dataset | None = None) -> gp.Prediction:
    """Predictive distribution at every slot of ``span``.

    The GP is fitted once (no windowing) on the context observations followed
    by the scheduled observations taken from ``dataset``. With no
    observations at all the prior is returned.
    """
    start, end = _check_span(span)
    sched = np.asarray(sorted(int(s) for s in schedule), dtype=np.int64)
    if sched.size and (sched[0] < start or sched[-1] >= end):
        raise SpanError("schedule slots must lie within the span")
    y_sched = dataset.values_at(sched)
    X_sched = feature_matrix(sched, dataset.holidays)
    if context is not None and len(context):
        X = np.vstack([context.features(), X_sched])
        y = np.concatenate([context.laeq, y_sched])
    else:
        X, y = X_sched, y_sched
    Xq = feature_matrix(np.arange(start, end), dataset.holidays)
    if y.size == 0:
        blk = gp.posterior_block(None, Xq, params)
        return gp.Prediction(blk.mean, blk.predictive_variance())
    model = gp.fit(X, y, params, window=None)
    return gp.predict(model, Xq)


def evaluate_schedule(dataset: Dataset, schedule, params: gp.KernelParams, span,
                      context: Dataset | None = None, policy: str = "") -> EvalReport:
    """FI and RMSE over every slot of ``span`` after observing ``schedule``.

    Pass ``context=None`` for context-free scoring.
    """
    start, end = _check_span(span)
    sched = tuple(sorted(int(s) for s in schedule))
    truth = dataset.values_at(np.arange(start, end))
    pred = posterior_over_span(dataset, sched, params, (start, end), context)
    return EvalReport(fisher_information(pred.variance), rmse(pred.mean, truth),
                      len(sched), sched, (start, end), policy)


def evaluate_policy(policy, env_config, start_day: int, n_days: int | None = None,
                    name: str = "", trajectory: list | None = None) -> EvalReport:
    """Roll ``policy`` through a fresh environment and score the realized schedule.

    ``policy`` needs an ``action(state_vec) -> int`` method. The rollout
    covers ``n_days`` days (default: the config's episode length) from
    ``start_day``. Step records are appended to ``trajectory`` if given.
    """
    from dataclasses import replace

    from .env import SensingEnv, rollout
    from .timeseries import SLOTS_PER_DAY

    cfg = env_config if n_days is None else replace(env_config, episode_days=int(n_days))
    env = SensingEnv(cfg)
    records = rollout(env, policy, start_day)
    if trajectory is not None:
        trajectory.extend(records)
    start = start_day * SLOTS_PER_DAY
    span = (start, start + cfg.episode_days * SLOTS_PER_DAY)
    return evaluate_schedule(cfg.dataset, env.samples, cfg.gp_params, span, cfg.context, name)
