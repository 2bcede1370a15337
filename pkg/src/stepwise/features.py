"""Window partitioning and per-window feature vectors.

A window of ``k`` imputed days yields ``m + 19`` values: the mean count of
each of the ``m`` slots, eleven activity summaries (:data:`EXTRACTED_NAMES`)
and the eight encoded demographics.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .cohort import DEMOGRAPHIC_FIELDS, ParticipantSeries, label

EXTRACTED_NAMES = (
    "daily_avg_steps",
    "daily_max_steps",
    "daily_min_steps",
    "weekly_max_steps",
    "weekly_min_steps",
    "total_steps",
    "active_days",
    "days_above_own_daily_mean",
    "days_above_own_weekly_mean",
    "days_above_cohort_daily_mean",
    "days_above_cohort_weekly_mean",
)
N_EXTRACTED = len(EXTRACTED_NAMES)
# "Above" means above by more than this relative margin. A fully imputed day
# equals the cohort daily mean in exact arithmetic, so without the margin its
# count would hinge on summation order.
TIE_RTOL = 1e-9
N_DEMOGRAPHIC = len(DEMOGRAPHIC_FIELDS)
FEATURE_SETS = ("das", "slots", "slots+demo", "all")


def feature_names(m: int) -> list[str]:
    return [f"slot_{j}" for j in range(m)] + list(EXTRACTED_NAMES) + [
        f"demo_{name}" for name in DEMOGRAPHIC_FIELDS]


def feature_columns(m: int, feature_set: str = "all") -> np.ndarray:
    """Indices into the full ``m + 19`` vector for a named feature set."""
    slots = np.arange(m)
    demo = np.arange(m + N_EXTRACTED, m + N_EXTRACTED + N_DEMOGRAPHIC)
    if feature_set == "all":
        return np.arange(m + N_EXTRACTED + N_DEMOGRAPHIC)
    if feature_set == "slots":
        return slots
    if feature_set == "slots+demo":
        return np.concatenate([slots, demo])
    if feature_set == "das":
        return np.array([m])
    raise ValueError(f"unknown feature set {feature_set!r}; choose from {FEATURE_SETS}")


@dataclass(frozen=True)
class WindowSpec:
    k: int
    n: int

    @property
    def window_count(self) -> int:
        return self.n // self.k

    def bounds(self, w: int) -> tuple[int, int]:
        return w * self.k, (w + 1) * self.k


def partition_windows(n: int, k: int) -> WindowSpec:
    if not 1 <= k <= n:
        raise ValueError(f"window size k={k} must satisfy 1 <= k <= n={n}")
    return WindowSpec(k, n)


def _weekly_sums(daily: np.ndarray) -> np.ndarray:
    """Sums of consecutive complete 7-day blocks along the last axis."""
    weeks = daily.shape[-1] // 7
    return daily[..., : weeks * 7].reshape(*daily.shape[:-1], weeks, 7).sum(axis=-1)


@dataclass(frozen=True)
class ParticipantStats:
    daily_mean: float
    weekly_mean: float

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> "ParticipantStats":
        daily = np.asarray(grid, dtype=float).sum(axis=1)
        weeks = _weekly_sums(daily)
        weekly = weeks.mean() if weeks.size else daily.mean() * 7
        return cls(float(daily.mean()), float(weekly))


@dataclass(frozen=True)
class CohortStats:
    cohort_daily_mean: float
    cohort_weekly_mean_per_day: float
    mean_lowest_daily: float

    @classmethod
    def from_series(cls, series: Sequence[ParticipantSeries]) -> "CohortStats":
        """Reduce over imputed series; pass the training split only."""
        if not series:
            raise ValueError("cohort statistics need at least one series")
        daily, weekly, lowest = [], [], []
        for s in series:
            ps = ParticipantStats.from_grid(s.counts)
            daily.append(ps.daily_mean)
            weekly.append(ps.weekly_mean / 7.0)
            lowest.append(s.counts.sum(axis=1).min())
        return cls(float(np.mean(daily)), float(np.mean(weekly)), float(np.mean(lowest)))


@dataclass
class WindowFeatures:
    slot_avgs: np.ndarray
    extracted: np.ndarray
    demographics_encoded: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.slot_avgs, self.extracted, self.demographics_encoded])


def _window_block(windows: np.ndarray, pstats: ParticipantStats, cstats: CohortStats) -> np.ndarray:
    """Slot means + extracted features for ``windows`` shaped (W, k, m)."""
    daily = windows.sum(axis=2)  # (W, k)
    weeks = _weekly_sums(daily)
    total = daily.sum(axis=1)

    def above(threshold):
        return (daily > threshold + TIE_RTOL * max(1.0, abs(threshold))).sum(axis=1)

    if weeks.shape[1]:
        wmax, wmin = weeks.max(axis=1), weeks.min(axis=1)
    else:
        wmax = wmin = total
    extracted = np.stack([
        daily.mean(axis=1),
        daily.max(axis=1),
        daily.min(axis=1),
        wmax,
        wmin,
        total,
        above(2.0 * cstats.mean_lowest_daily),
        above(pstats.daily_mean),
        above(pstats.weekly_mean / 7.0),
        above(cstats.cohort_daily_mean),
        above(cstats.cohort_weekly_mean_per_day),
    ], axis=1).astype(float)
    return np.concatenate([windows.mean(axis=1), extracted], axis=1)


def extract_window_features(grid_window, participant_stats: ParticipantStats,
                            cohort_stats: CohortStats, demographics: np.ndarray) -> WindowFeatures:
    """Features of a single ``(k, m)`` imputed window."""
    grid_window = np.asarray(grid_window, dtype=float)
    if np.isnan(grid_window).any():
        raise ValueError("window contains absent cells; impute first")
    block = _window_block(grid_window[None], participant_stats, cohort_stats)[0]
    m = grid_window.shape[1]
    return WindowFeatures(block[:m], block[m:], np.asarray(demographics, dtype=float))


def sequence_features(series: ParticipantSeries, k: int, cohort_stats: CohortStats,
                      vocabularies) -> np.ndarray:
    """All windows of one imputed series as a ``(n // k, m + 19)`` matrix."""
    spec = partition_windows(series.n_days, k)
    grid = series.counts
    if np.isnan(grid).any():
        raise ValueError(f"{series.key}: grid has absent cells; impute first")
    pstats = ParticipantStats.from_grid(grid)
    T = spec.window_count
    windows = grid[: T * k].reshape(T, k, series.m_slots)
    block = _window_block(windows, pstats, cohort_stats)
    demo = np.broadcast_to(series.demographics.encode(vocabularies), (T, N_DEMOGRAPHIC))
    return np.concatenate([block, demo], axis=1)


@dataclass
class SequenceDataset:
    """Raw (un-normalized) window sequences with labels and bookkeeping."""

    X: np.ndarray  # (N, T, F)
    y: np.ndarray  # (N,) int 0/1
    groups: np.ndarray  # participant id per instance
    keys: np.ndarray  # participant/period per instance
    ages: np.ndarray
    feature_names: list[str]
    k: int
    m: int

    def __len__(self) -> int:
        return len(self.y)

    @property
    def steps(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "SequenceDataset":
        idx = np.asarray(idx)
        return SequenceDataset(self.X[idx], self.y[idx], self.groups[idx], self.keys[idx],
                               self.ages[idx], self.feature_names, self.k, self.m)

    def select_features(self, feature_set: str) -> "SequenceDataset":
        cols = feature_columns(self.m, feature_set)
        names = [self.feature_names[c] for c in cols]
        return SequenceDataset(self.X[..., cols], self.y, self.groups, self.keys, self.ages,
                               names, self.k, self.m)

    def flat(self) -> np.ndarray:
        """Sequence collapsed to one row per instance (meaningful for k = n)."""
        return self.X.reshape(len(self.y), -1)


def build_sequences(series: Sequence[ParticipantSeries], k: int, crt: float, vocabularies,
                    cohort_stats: CohortStats | None = None) -> SequenceDataset:
    """Window every imputed series into a length ``n // k`` sequence.

    ``cohort_stats`` defaults to statistics of ``series`` itself; pass the
    training-split statistics when building held-out data.
    """
    series = list(series)
    if not series:
        raise ValueError("no series to window")
    m = series[0].m_slots
    if any(s.m_slots != m or s.n_days != series[0].n_days for s in series):
        raise ValueError("all series must share n_days and m_slots")
    stats = cohort_stats or CohortStats.from_series(series)
    X = np.stack([sequence_features(s, k, stats, vocabularies) for s in series])
    y = np.array([label(s.bmi_start, s.bmi_end, crt) for s in series], dtype=int)
    return SequenceDataset(
        X=X, y=y,
        groups=np.array([s.participant_id for s in series]),
        keys=np.array([s.key for s in series]),
        ages=np.array([s.demographics.age for s in series]),
        feature_names=feature_names(m), k=k, m=m,
    )


def write_feature_dump(dataset: SequenceDataset, path) -> None:
    """One CSV row per (instance, window) in :func:`feature_names` order."""
    N, T, F = dataset.X.shape
    frame = pd.DataFrame(dataset.X.reshape(N * T, F), columns=dataset.feature_names)
    pid, period = zip(*(key.split("/", 1) for key in dataset.keys))
    frame.insert(0, "window", np.tile(np.arange(T), N))
    frame.insert(0, "period", np.repeat(period, T))
    frame.insert(0, "participant_id", np.repeat(pid, T))
    frame["label"] = np.repeat(dataset.y, T)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
