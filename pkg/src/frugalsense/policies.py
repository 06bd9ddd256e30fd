"""Sampling policies: fixed schedules (uniform, greedy oracle, random) and neural policies."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gp, nn
from .errors import BudgetExceedsSpan, ShapeMismatch, SpanError
from .timeseries import SLOTS_PER_DAY, Dataset, feature_matrix

TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Schedule:
    slots: tuple
    span: tuple

    def __post_init__(self):
        s = tuple(int(x) for x in self.slots)
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("schedule slots must be strictly increasing")
        if s and (s[0] < self.span[0] or s[-1] >= self.span[1]):
            raise SpanError("schedule slots outside span")
        object.__setattr__(self, "slots", s)
        object.__setattr__(self, "span", (int(self.span[0]), int(self.span[1])))

    def __len__(self) -> int:
        return len(self.slots)

    def __iter__(self):
        return iter(self.slots)


def _span(span) -> tuple[int, int, int]:
    start, end = int(span[0]), int(span[1])
    if end <= start:
        raise SpanError(f"empty span [{start}, {end})")
    return start, end, end - start


def uniform_schedule(span, budget: int) -> Schedule:
    """``start + floor(i*T/N)`` for ``i = 0..N-1``."""
    start, end, T = _span(span)
    if budget < 1 or budget > T:
        raise BudgetExceedsSpan(f"budget {budget} not in [1, {T}]")
    return Schedule(tuple(start + (i * T) // budget for i in range(budget)), (start, end))


def random_schedule(span, budget: int, seed: int) -> Schedule:
    start, end, T = _span(span)
    if budget < 0 or budget > T:
        raise BudgetExceedsSpan(f"budget {budget} not in [0, {T}]")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(T, size=budget, replace=False))
    return Schedule(tuple(start + int(i) for i in pick), (start, end))


def day_chunks(span) -> list[tuple[int, int]]:
    """Split a span at calendar-day boundaries."""
    start, end, _ = _span(span)
    out, a = [], start
    while a < end:
        b = min((a // SLOTS_PER_DAY + 1) * SLOTS_PER_DAY, end)
        out.append((a, b))
        a = b
    return out


def per_day(span, budget_per_day: int, make) -> Schedule:
    """Concatenate ``make(day_span, n)`` over the calendar days of ``span``."""
    slots = []
    for a, b in day_chunks(span):
        slots.extend(make((a, b), min(budget_per_day, b - a)).slots)
    return Schedule(tuple(slots), (int(span[0]), int(span[1])))


def greedy_oracle_schedule(dataset: Dataset, span, budget: int, gp_params: gp.KernelParams,
                           context: Dataset | None = None, allocation: str = "day") -> Schedule:
    """Sequential greedy maximisation of the mean predictive precision.

    With ``allocation="day"`` each calendar day in ``span`` gets ``budget``
    samples chosen to maximise the precision over that day; with
    ``allocation="span"`` ``budget`` samples are chosen for the whole span.
    Every pick conditions on the true value at the chosen slot. Ties go to
    the lowest slot. Gains are exact rank-one updates of the joint
    posterior, which equal refits with the same hyperparameters.
    """
    start, end, T = _span(span)
    if allocation not in ("day", "span"):
        raise ValueError("allocation must be 'day' or 'span'")
    if budget < 0:
        raise BudgetExceedsSpan("budget must be >= 0")
    model = None
    if context is not None and len(context):
        model = gp.fit(context.features(), context.laeq, gp_params, window=None)
    Xq = feature_matrix(np.arange(start, end), dataset.holidays)
    blk = gp.posterior_block(model, Xq, gp_params)
    chunks = day_chunks(span) if allocation == "day" else [(start, end)]
    chosen: list[int] = []
    for a, b in chunks:
        idx = np.arange(a - start, b - start)
        n = min(budget, idx.size)
        free = np.ones(idx.size, dtype=bool)
        for _ in range(n):
            cand = idx[free]
            gains = blk.fi_after_each(cand, idx)
            # gains within round-off of the best count as ties; lowest slot wins
            j = int(np.flatnonzero(gains >= gains.max() - TIE_TOLERANCE * abs(gains.max()))[0])
            c = int(cand[j])
            blk.observe(c, float(dataset.values_at([start + c])[0]))
            free[c - idx[0]] = False
            chosen.append(start + c)
    return Schedule(tuple(sorted(chosen)), (start, end))


def write_schedule(schedule, path) -> None:
    with open(path, "w") as fh:
        for s in schedule:
            fh.write(f"{int(s)}\n")


def read_schedule(path) -> list[int]:
    with open(path) as fh:
        return [int(line) for line in fh if line.strip()]


# ------------------------------------------------------------ learned ---

class NeuralPolicy:
    """Softmax policy over sleep durations 1..h from an actor-critic network."""

    def __init__(self, params: nn.MLPParams, mode: str = "greedy", seed: int = 0):
        if mode not in ("stochastic", "greedy"):
            raise ValueError("mode must be 'stochastic' or 'greedy'")
        self.params = params
        self.mode = mode
        self.rng = np.random.default_rng(seed)

    @property
    def horizon(self) -> int:
        return self.params.arch.policy_head_dim

    def act(self, state_vec, rng: np.random.Generator | None = None) -> tuple[int, float, float]:
        """Return ``(sleep, log_prob, value)``; sleep is the chosen index plus one."""
        x = np.asarray(state_vec, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeMismatch("act takes a single state vector")
        logits, value = nn.forward(self.params, x)
        logp = nn.log_softmax(logits)
        if self.mode == "greedy":
            i = int(np.argmax(logits))
        else:
            rng = self.rng if rng is None else rng
            cdf = np.cumsum(np.exp(logp))
            i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), logp.size - 1)
        return i + 1, float(logp[i]), float(value)

    def action(self, state_vec) -> int:
        return self.act(state_vec)[0]


class FixedSleepPolicy:
    """Always sleeps the same number of slots."""

    def __init__(self, sleep: int):
        self.sleep = int(sleep)

    def action(self, state_vec) -> int:
        return self.sleep
