"""Slot-grid time representation, calendar features, CSV I/O and a synthetic
workplace-noise generator.

Time is an abstract grid of 15-minute slots counted from the dataset epoch.
Slot 0 is Monday 00:00.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import DuplicateSlot, EmptyPartition, MissingFile, MissingTruth, ParseError, SpanError

SLOTS_PER_DAY = 96
DAYS_PER_WEEK = 7
SLOTS_PER_WEEK = SLOTS_PER_DAY * DAYS_PER_WEEK

# column layout of kernel-input rows produced by feature_matrix
FEATURE_NAMES = (
    "slot_time",
    "time_of_day_sin",
    "time_of_day_cos",
    "day_of_week_sin",
    "day_of_week_cos",
    "is_holiday",
)
N_FEATURES = len(FEATURE_NAMES)


def day_of(slot: int) -> int:
    return slot // SLOTS_PER_DAY


def slot_of_day(slot: int) -> int:
    return slot % SLOTS_PER_DAY


def day_of_week(slot: int) -> int:
    return day_of(slot) % DAYS_PER_WEEK


class Measurement(NamedTuple):
    slot: int
    laeq: float


class FeatureVector(NamedTuple):
    time_of_day_sin: float
    time_of_day_cos: float
    day_of_week_sin: float
    day_of_week_cos: float
    is_holiday: int
    slot_time: float


def feature_matrix(slots: Iterable[int] | np.ndarray, calendar: Iterable[int] = ()) -> np.ndarray:
    """Kernel-input rows for ``slots``, columns ordered as ``FEATURE_NAMES``."""
    s = np.asarray(slots, dtype=np.int64).reshape(-1)
    days = s // SLOTS_PER_DAY
    tod = 2.0 * np.pi * ((s % SLOTS_PER_DAY) / SLOTS_PER_DAY)
    dow = 2.0 * np.pi * ((days % DAYS_PER_WEEK) / DAYS_PER_WEEK)
    hol = frozenset(int(d) for d in calendar)
    out = np.empty((s.shape[0], N_FEATURES))
    out[:, 0] = s / SLOTS_PER_DAY
    out[:, 1] = np.sin(tod)
    out[:, 2] = np.cos(tod)
    out[:, 3] = np.sin(dow)
    out[:, 4] = np.cos(dow)
    out[:, 5] = [1.0 if int(d) in hol else 0.0 for d in days] if hol else 0.0
    return out


def slot_to_features(slot: int, calendar: Iterable[int] = ()) -> FeatureVector:
    row = feature_matrix([slot], calendar)[0]
    return FeatureVector(
        time_of_day_sin=float(row[1]),
        time_of_day_cos=float(row[2]),
        day_of_week_sin=float(row[3]),
        day_of_week_cos=float(row[4]),
        is_holiday=int(row[5]),
        slot_time=float(row[0]),
    )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Measurements on the slot grid plus the holiday calendar (day indices)."""

    slots: np.ndarray
    laeq: np.ndarray
    holidays: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        slots = np.asarray(self.slots, dtype=np.int64).reshape(-1)
        laeq = np.asarray(self.laeq, dtype=np.float64).reshape(-1)
        if slots.shape != laeq.shape:
            raise ValueError("slots and laeq differ in length")
        if slots.size and slots[0] < 0:
            raise ValueError("slot indices must be non-negative")
        if np.any(np.diff(slots) <= 0):
            raise ValueError("slot indices must be strictly increasing")
        if not np.all(np.isfinite(laeq)):
            raise ValueError("laeq values must be finite")
        slots.setflags(write=False)
        laeq.setflags(write=False)
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "laeq", laeq)
        object.__setattr__(self, "holidays", frozenset(int(d) for d in self.holidays))

    @classmethod
    def from_measurements(cls, measurements: Iterable[Measurement], holidays=()) -> "Dataset":
        ms = sorted(measurements, key=lambda m: m.slot)
        for a, b in zip(ms, ms[1:]):
            if a.slot == b.slot:
                raise DuplicateSlot(a.slot)
        return cls(np.array([m.slot for m in ms], dtype=np.int64),
                   np.array([m.laeq for m in ms], dtype=np.float64), frozenset(holidays))

    def __len__(self) -> int:
        return int(self.slots.shape[0])

    def __iter__(self) -> Iterator[Measurement]:
        for s, v in zip(self.slots.tolist(), self.laeq.tolist()):
            yield Measurement(s, v)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (np.array_equal(self.slots, other.slots)
                and np.array_equal(self.laeq, other.laeq)
                and self.holidays == other.holidays)

    @property
    def measurements(self) -> list[Measurement]:
        return list(self)

    @property
    def span(self) -> tuple[int, int]:
        """Half-open slot span ``[first, last + 1)``."""
        if not len(self):
            raise SpanError("empty dataset has no span")
        return int(self.slots[0]), int(self.slots[-1]) + 1

    def features(self) -> np.ndarray:
        return feature_matrix(self.slots, self.holidays)

    def index_of(self, slots) -> np.ndarray:
        """Positions of ``slots`` in this dataset; -1 where absent."""
        q = np.asarray(slots, dtype=np.int64).reshape(-1)
        if not len(self):
            return np.full(q.shape, -1, dtype=np.int64)
        pos = np.minimum(np.searchsorted(self.slots, q), len(self) - 1)
        return np.where(self.slots[pos] == q, pos, -1)

    def values_at(self, slots) -> np.ndarray:
        """Truth values at ``slots``; raises MissingTruth for absent slots."""
        idx = self.index_of(slots)
        missing = np.flatnonzero(idx < 0)
        if missing.size:
            raise MissingTruth(int(np.asarray(slots).reshape(-1)[missing[0]]))
        return self.laeq[idx]

    def window(self, start: int, end: int) -> "Dataset":
        """Measurements with ``start <= slot < end``."""
        lo, hi = np.searchsorted(self.slots, [start, end])
        return Dataset(self.slots[lo:hi], self.laeq[lo:hi], self.holidays)

    def select(self, slots) -> "Dataset":
        q = np.unique(np.asarray(slots, dtype=np.int64))
        return Dataset(q, self.values_at(q), self.holidays)

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.concatenate([self.slots, other.slots]),
                       np.concatenate([self.laeq, other.laeq]),
                       self.holidays | other.holidays)


def split(dataset: Dataset, boundary: int) -> tuple[Dataset, Dataset]:
    """Split into ``slot < boundary`` and ``slot >= boundary``."""
    cut = int(np.searchsorted(dataset.slots, boundary))
    left = Dataset(dataset.slots[:cut], dataset.laeq[:cut], dataset.holidays)
    right = Dataset(dataset.slots[cut:], dataset.laeq[cut:], dataset.holidays)
    if not len(left) or not len(right):
        raise EmptyPartition(f"boundary {boundary} leaves an empty side")
    return left, right


# ------------------------------------------------------------------ I/O ---

def load_csv(path, holidays=()) -> Dataset:
    """Read a ``slot,laeq`` measurement file."""
    if not os.path.isfile(path):
        raise MissingFile(f"no such file: {path}")
    rows: list[Measurement] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["slot", "laeq"]:
            raise ParseError(1, "expected header 'slot,laeq'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ParseError(lineno, f"expected 2 fields, got {len(row)}")
            try:
                slot = int(row[0].strip(), 10)
                value = float(row[1].strip())
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from None
            if slot < 0 or not math.isfinite(value):
                raise ParseError(lineno, "negative slot or non-finite laeq")
            rows.append(Measurement(slot, value))
    return Dataset.from_measurements(rows, holidays)


def write_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("slot,laeq\n")
        for m in dataset:
            fh.write(f"{m.slot},{m.laeq!r}\n")


def load_holidays(path) -> frozenset:
    if not os.path.isfile(path):
        raise MissingFile(f"no such file: {path}")
    days = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                days.add(int(line, 10))
            except ValueError:
                raise ParseError(lineno, f"bad day index {line!r}") from None
    return frozenset(days)


def write_holidays(days: Iterable[int], path) -> None:
    with open(path, "w") as fh:
        for d in sorted(days):
            fh.write(f"{d}\n")


# ------------------------------------------------------------ synthetic ---

@dataclass(frozen=True)
class SyntheticProfile:
    """Parameters of the synthetic office-noise signal.

    The deterministic template has a night floor ``base_db`` and an
    ``office_db`` plateau during ``office_hours`` (half-open slot-of-day
    range) on workdays, with raised-cosine ramps of ``ramp_slots`` slots
    just outside the plateau. Weekends and holidays are pulled toward the
    floor by ``weekend_attenuation`` (1 means fully quiet).

    The perturbation has marginal standard deviation ``noise_sd``. A
    fraction ``white_fraction`` of its variance is independent per slot;
    the rest is white noise smoothed by a Gaussian filter of width
    ``smooth_slots`` and rescaled, i.e. slowly drifting activity.
    """

    base_db: float = 35.0
    office_db: float = 55.0
    office_hours: tuple = (32, 68)
    weekend_attenuation: float = 0.8
    noise_sd: float = 1.5
    smooth_slots: float = 4.0
    white_fraction: float = 0.05
    ramp_slots: int = 4
    holidays: tuple = ()
    seed: int = 7

    def __post_init__(self):
        if self.office_db < self.base_db:
            raise ValueError("office_db must be >= base_db")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if not 0.0 <= self.weekend_attenuation <= 1.0:
            raise ValueError("weekend_attenuation must lie in [0, 1]")
        if not 0.0 <= self.white_fraction <= 1.0:
            raise ValueError("white_fraction must lie in [0, 1]")
        if self.smooth_slots < 0 or self.ramp_slots < 0:
            raise ValueError("smooth_slots and ramp_slots must be >= 0")
        lo, hi = self.office_hours
        if not 0 <= lo <= hi <= SLOTS_PER_DAY:
            raise ValueError("office_hours must be a slot-of-day range within one day")
        object.__setattr__(self, "office_hours", (int(lo), int(hi)))
        object.__setattr__(self, "holidays", tuple(sorted(int(d) for d in self.holidays)))


def _office_weight(sod: np.ndarray, lo: int, hi: int, ramp: int) -> np.ndarray:
    w = ((sod >= lo) & (sod < hi)).astype(np.float64)
    if ramp > 0:
        up = (sod >= lo - ramp) & (sod < lo)
        w[up] = 0.5 - 0.5 * np.cos(np.pi * (sod[up] - (lo - ramp)) / ramp)
        down = (sod >= hi) & (sod < hi + ramp)
        w[down] = 0.5 + 0.5 * np.cos(np.pi * (sod[down] - hi + 1) / (ramp + 1))
    return w


def template(profile: SyntheticProfile, slots) -> np.ndarray:
    """Noise-free level for each slot."""
    s = np.asarray(slots, dtype=np.int64)
    days = s // SLOTS_PER_DAY
    lo, hi = profile.office_hours
    w = _office_weight(s % SLOTS_PER_DAY, lo, hi, profile.ramp_slots)
    quiet = (days % DAYS_PER_WEEK >= 5) | np.isin(days, np.array(profile.holidays, dtype=np.int64))
    amp = np.where(quiet, 1.0 - profile.weekend_attenuation, 1.0) * (profile.office_db - profile.base_db)
    return profile.base_db + amp * w


def generate_synthetic(profile: SyntheticProfile, num_slots: int) -> Dataset:
    if num_slots < 1:
        raise ValueError("num_slots must be >= 1")
    slots = np.arange(num_slots, dtype=np.int64)
    level = template(profile, slots)
    if profile.noise_sd > 0:
        rng = np.random.default_rng(profile.seed)
        pad = int(np.ceil(4 * profile.smooth_slots)) + 1
        drift = rng.standard_normal(num_slots + 2 * pad)
        if profile.smooth_slots > 0:
            drift = gaussian_filter1d(drift, profile.smooth_slots, mode="nearest")
            # unit marginal variance of filtered white noise
            drift /= np.sqrt(np.sum(_gaussian_taps(profile.smooth_slots) ** 2))
        drift = drift[pad:pad + num_slots]
        white = rng.standard_normal(num_slots)
        f = profile.white_fraction
        level = level + profile.noise_sd * (np.sqrt(1.0 - f) * drift + np.sqrt(f) * white)
    return Dataset(slots, level, frozenset(profile.holidays))


def _gaussian_taps(sigma: float) -> np.ndarray:
    radius = int(4.0 * sigma + 0.5)
    x = np.arange(-radius, radius + 1)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()
