"""Study file ingestion: events -> per-participant day x slot grids.

Raw inputs are three CSV files plus a JSON manifest:

* ``events.csv``: ``participant_id,timestamp,step_count``
* ``milestones.csv``: ``participant_id,milestone,bmi``
* ``demographics.csv``: ``participant_id`` followed by the eight
  :data:`DEMOGRAPHIC_FIELDS`
* ``manifest.json``: horizon, slot count, study start, CRT, observation
  periods and the categorical vocabularies (see :class:`Manifest`).

A participant contributes one instance per manifest period for which both
boundary BMIs exist and enough steps were recorded.
"""
from __future__ import annotations

import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

MILESTONES = ("enrollment", "midpoint", "closeout")
DEMOGRAPHIC_FIELDS = (
    "gender",
    "age",
    "marital",
    "adults_in_household",
    "highest_degree",
    "hispanic_or_latino",
    "race",
    "occupation",
)
CATEGORICAL_FIELDS = tuple(f for f in DEMOGRAPHIC_FIELDS if f != "age")
AGE_RANGE = (18, 120)


class CohortFormatError(ValueError):
    """Raised for malformed study files; the message names file and line."""


@dataclass(frozen=True)
class Period:
    name: str
    start_milestone: str
    end_milestone: str
    offset_days: int
    n_days: int


@dataclass(frozen=True)
class Manifest:
    study_start: dt.date
    n_days: int
    m_slots: int
    crt: float
    periods: tuple[Period, ...]
    vocabularies: dict[str, tuple[str, ...]]
    min_events_per_period: int = 1

    @property
    def study_days(self) -> int:
        return max(p.offset_days + p.n_days for p in self.periods)

    @classmethod
    def from_dict(cls, raw: dict) -> "Manifest":
        n = int(raw["n_days"])
        periods_raw = raw.get("periods") or [
            {"name": "full", "start_milestone": "enrollment",
             "end_milestone": "closeout", "offset_days": 0}
        ]
        periods = []
        for p in periods_raw:
            for key in ("start_milestone", "end_milestone"):
                if p[key] not in MILESTONES:
                    raise CohortFormatError(f"manifest: unknown milestone {p[key]!r}")
            periods.append(Period(str(p["name"]), p["start_milestone"], p["end_milestone"],
                                  int(p.get("offset_days", 0)), int(p.get("n_days", n))))
        vocab = {k: tuple(str(v) for v in vals) for k, vals in raw.get("vocabularies", {}).items()}
        missing = [f for f in CATEGORICAL_FIELDS if f not in vocab]
        if missing:
            raise CohortFormatError(f"manifest: missing vocabularies for {missing}")
        m = int(raw["m_slots"])
        if m < 1 or 24 % m:
            raise CohortFormatError(f"manifest: m_slots={m} does not divide 24")
        crt = float(raw["crt"])
        if not 0.0 < crt < 1.0:
            raise CohortFormatError(f"manifest: crt={crt} outside (0, 1)")
        return cls(
            study_start=dt.date.fromisoformat(str(raw["study_start"])),
            n_days=n,
            m_slots=m,
            crt=crt,
            periods=tuple(periods),
            vocabularies=vocab,
            min_events_per_period=int(raw.get("min_events_per_period", 1)),
        )

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "study_start": self.study_start.isoformat(),
            "n_days": self.n_days,
            "m_slots": self.m_slots,
            "crt": self.crt,
            "min_events_per_period": self.min_events_per_period,
            "periods": [
                {"name": p.name, "start_milestone": p.start_milestone,
                 "end_milestone": p.end_milestone, "offset_days": p.offset_days,
                 "n_days": p.n_days}
                for p in self.periods
            ],
            "vocabularies": {k: list(v) for k, v in self.vocabularies.items()},
        }


def read_manifest(path: str | Path) -> Manifest:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CohortFormatError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    try:
        return Manifest.from_dict(raw)
    except KeyError as exc:
        raise CohortFormatError(f"{path}: missing key {exc}") from exc


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class ObservationEvent:
    participant_id: str
    timestamp: dt.datetime
    step_count: int


@dataclass(frozen=True)
class MilestoneRecord:
    participant_id: str
    milestone: str
    bmi: float


@dataclass(frozen=True)
class DemographicProfile:
    gender: str
    age: int
    marital: str
    adults_in_household: str
    highest_degree: str
    hispanic_or_latino: str
    race: str
    occupation: str

    def encode(self, vocabularies: dict[str, Sequence[str]]) -> np.ndarray:
        """Age as-is, every categorical attribute as its vocabulary index."""
        out = np.empty(len(DEMOGRAPHIC_FIELDS))
        for i, name in enumerate(DEMOGRAPHIC_FIELDS):
            value = getattr(self, name)
            out[i] = value if name == "age" else vocabularies[name].index(value)
        return out


@dataclass
class ParticipantSeries:
    participant_id: str
    period: str
    n_days: int
    m_slots: int
    counts: np.ndarray  # (n_days, m_slots), NaN = not recorded
    demographics: DemographicProfile
    bmi_start: float
    bmi_end: float

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.shape != (self.n_days, self.m_slots):
            raise ValueError(
                f"grid shape {self.counts.shape} != ({self.n_days}, {self.m_slots})"
            )

    @property
    def key(self) -> str:
        return f"{self.participant_id}/{self.period}"

    @property
    def is_complete(self) -> bool:
        return not np.isnan(self.counts).any()


@dataclass
class LabeledInstance:
    series: ParticipantSeries
    label: bool


@dataclass
class LoadReport:
    participants_seen: int = 0
    instances: int = 0
    dropped: dict[str, list[str]] = field(default_factory=dict)
    skipped_events: int = 0
    duplicate_events: int = 0

    def drop(self, reason: str, key: str) -> None:
        self.dropped.setdefault(reason, []).append(key)

    @property
    def n_dropped(self) -> int:
        return sum(len(v) for v in self.dropped.values())


@dataclass
class Cohort:
    """Loaded instances plus the bookkeeping of what was excluded and why."""

    series: list[ParticipantSeries]
    manifest: Manifest
    report: LoadReport

    def __len__(self) -> int:
        return len(self.series)

    def __iter__(self):
        return iter(self.series)

    def __getitem__(self, i):
        return self.series[i]

    def labeled(self, crt: float | None = None) -> list[LabeledInstance]:
        crt = self.manifest.crt if crt is None else crt
        return [LabeledInstance(s, label(s.bmi_start, s.bmi_end, crt)) for s in self.series]


# -- operations ---------------------------------------------------------------

def label(bmi_start: float, bmi_end: float, crt: float) -> bool:
    """True when the relative BMI reduction reaches ``crt`` (inclusive)."""
    if not (bmi_start > 0 and bmi_end > 0):
        raise ValueError(f"BMI values must be positive, got {bmi_start}, {bmi_end}")
    if not 0.0 < crt < 1.0:
        raise ValueError(f"crt must lie in (0, 1), got {crt}")
    # Scaled comparison keeps the exact-threshold case (30.0 -> 28.5 at 5%)
    # from being lost to division rounding.
    return (bmi_start - bmi_end) >= crt * bmi_start - 1e-12 * bmi_start


def slot_of(hour: int | np.ndarray, minute: int | np.ndarray, m: int):
    """Slot index of a time of day; slots are 24/m hours wide, left-closed."""
    minutes = np.asarray(hour) * 60 + np.asarray(minute)
    return minutes * m // (24 * 60)


def slot_aggregate(events, m: int, study_start, n: int, report: LoadReport | None = None):
    """Sum step counts into an ``(n, m)`` day x slot grid.

    ``events`` is an iterable of :class:`ObservationEvent` or a DataFrame with
    ``timestamp`` and ``step_count`` columns. Cells without any event are NaN.
    Events outside ``[study_start, study_start + n days)`` are skipped and
    counted in ``report.skipped_events``.
    """
    if m < 1 or 24 % m:
        raise ValueError(f"m={m} must divide 24")
    if isinstance(events, pd.DataFrame):
        ts = pd.to_datetime(events["timestamp"])
        counts = events["step_count"].to_numpy(dtype=float)
    else:
        events = list(events)
        ts = pd.to_datetime(pd.Series([e.timestamp for e in events], dtype="datetime64[ns]"))
        counts = np.array([e.step_count for e in events], dtype=float)
    start = pd.Timestamp(study_start).normalize()
    delta = (ts - start).dt
    day = delta.days.to_numpy()
    secs = delta.seconds.to_numpy()
    inside = (day >= 0) & (day < n)
    if report is not None:
        report.skipped_events += int((~inside).sum())
    day, secs, counts = day[inside], secs[inside], counts[inside]
    slot = secs * m // 86400
    flat = day * m + slot
    sums = np.bincount(flat, weights=counts, minlength=n * m)
    seen = np.bincount(flat, minlength=n * m) > 0
    grid = np.where(seen, sums, np.nan)
    return grid.reshape(n, m)


def impute(grids: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Fill NaN cells with the cohort-wide mean of their slot column.

    Column means are pooled over every grid; a column with no observation
    anywhere is filled with 0 and a warning is logged.
    """
    grids = [np.asarray(g, dtype=float) for g in grids]
    if not grids:
        return []
    m = grids[0].shape[1]
    stacked = np.concatenate([g.reshape(-1, m) for g in grids], axis=0)
    observed = ~np.isnan(stacked)
    n_obs = observed.sum(axis=0)
    sums = np.where(observed, stacked, 0.0).sum(axis=0)
    means = np.zeros(m)
    np.divide(sums, n_obs, out=means, where=n_obs > 0)
    if (n_obs == 0).any():
        logger.warning("slot columns %s unobserved across the cohort; filled with 0",
                       np.flatnonzero(n_obs == 0).tolist())
    return [np.where(np.isnan(g), means, g) for g in grids]


@dataclass(frozen=True)
class FeatureStats:
    """Per-feature mean/std used for standardization."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "FeatureStats":
        flat = np.asarray(x, dtype=float).reshape(-1, np.shape(x)[-1])
        return cls(flat.mean(axis=0), flat.std(axis=0))


def normalize(x: np.ndarray, stats: FeatureStats) -> np.ndarray:
    """Standardize the last axis of ``x``; zero-variance features map to 0."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != stats.mean.shape[0]:
        raise ValueError(f"feature dim {x.shape[-1]} != stats dim {stats.mean.shape[0]}")
    safe = np.where(stats.std > 0, stats.std, 1.0)
    return np.where(stats.std > 0, (x - stats.mean) / safe, 0.0)


# -- file parsing ---------------------------------------------------------------

def _read_csv(path, columns: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        return pd.DataFrame({c: pd.Series(dtype=str) for c in columns})
    except pd.errors.ParserError as exc:
        raise CohortFormatError(f"{path}: {exc}") from exc
    if list(df.columns[: len(columns)]) != list(columns):
        raise CohortFormatError(f"{path}:1: expected header {','.join(columns)}")
    return df


def _fail(path, row: int, msg: str):
    # +2: header is line 1, rows are 0-based
    raise CohortFormatError(f"{path}:{row + 2}: {msg}")


def read_events(path) -> pd.DataFrame:
    """Parse ``events.csv`` into participant_id / timestamp / step_count."""
    df = _read_csv(path, ("participant_id", "timestamp", "step_count"))
    if df.empty:
        return pd.DataFrame({"participant_id": pd.Series(dtype=str),
                             "timestamp": pd.Series(dtype="datetime64[ns]"),
                             "step_count": pd.Series(dtype=np.int64)})
    bad_id = df["participant_id"].str.strip() == ""
    if bad_id.any():
        _fail(path, int(np.flatnonzero(bad_id)[0]), "empty participant_id")
    ts = pd.to_datetime(df["timestamp"], errors="coerce", format="ISO8601")
    if ts.isna().any():
        i = int(np.flatnonzero(ts.isna())[0])
        _fail(path, i, f"bad timestamp {df['timestamp'].iloc[i]!r}")
    steps = pd.to_numeric(df["step_count"], errors="coerce")
    bad = steps.isna() | (steps < 0) | (steps != np.floor(steps))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        _fail(path, i, f"step_count must be a non-negative integer, got {df['step_count'].iloc[i]!r}")
    out = pd.DataFrame({"participant_id": df["participant_id"], "timestamp": ts,
                        "step_count": steps.astype(np.int64)})
    return out


def dedupe_events(events: pd.DataFrame, report: LoadReport | None = None) -> pd.DataFrame:
    """Collapse duplicate (participant, timestamp) readings to the larger count."""
    dup = events.duplicated(["participant_id", "timestamp"], keep=False)
    if not dup.any():
        return events
    n_extra = int(dup.sum() - events[dup].groupby(["participant_id", "timestamp"]).ngroups)
    logger.warning("%d duplicate (participant, timestamp) events; keeping the larger count", n_extra)
    if report is not None:
        report.duplicate_events += n_extra
    return (events.sort_values("step_count", kind="stable")
            .drop_duplicates(["participant_id", "timestamp"], keep="last")
            .sort_index())


def read_milestones(path) -> dict[str, dict[str, float]]:
    df = _read_csv(path, ("participant_id", "milestone", "bmi"))
    out: dict[str, dict[str, float]] = {}
    for i, row in enumerate(df.itertuples(index=False)):
        if row.milestone not in MILESTONES:
            _fail(path, i, f"unknown milestone {row.milestone!r}")
        try:
            bmi = float(row.bmi)
        except ValueError:
            _fail(path, i, f"bad bmi {row.bmi!r}")
        if not (bmi > 0 and math.isfinite(bmi)):
            _fail(path, i, f"bmi must be positive, got {row.bmi!r}")
        rec = out.setdefault(row.participant_id, {})
        if row.milestone in rec:
            _fail(path, i, f"duplicate milestone {row.milestone!r} for {row.participant_id}")
        rec[row.milestone] = bmi
    return out


def read_demographics(path, vocabularies: dict[str, Sequence[str]]) -> dict[str, DemographicProfile]:
    df = _read_csv(path, ("participant_id",) + DEMOGRAPHIC_FIELDS)
    out = {}
    for i, row in enumerate(df.itertuples(index=False)):
        values = row._asdict()
        pid = values.pop("participant_id")
        try:
            age = int(values["age"])
        except ValueError:
            _fail(path, i, f"bad age {values['age']!r}")
        if not AGE_RANGE[0] <= age <= AGE_RANGE[1]:
            _fail(path, i, f"age {age} outside {AGE_RANGE}")
        for name in CATEGORICAL_FIELDS:
            if values[name] not in vocabularies[name]:
                _fail(path, i, f"{name}={values[name]!r} not in vocabulary")
        if pid in out:
            _fail(path, i, f"duplicate participant {pid}")
        values["age"] = age
        out[pid] = DemographicProfile(**{k: values[k] for k in DEMOGRAPHIC_FIELDS})
    return out


def load_cohort(events_file, milestones_file, demographics_file, manifest,
                m: int | None = None) -> Cohort:
    """Build one :class:`ParticipantSeries` per usable (participant, period).

    ``manifest`` is a :class:`Manifest` or a path to one; ``m`` overrides the
    manifest's slot count. Grids are returned un-imputed (NaN = absent).
    """
    if not isinstance(manifest, Manifest):
        manifest = read_manifest(manifest)
    m = manifest.m_slots if m is None else m
    report = LoadReport()
    events = dedupe_events(read_events(events_file), report)
    milestones = read_milestones(milestones_file)
    demographics = read_demographics(demographics_file, manifest.vocabularies)

    start = pd.Timestamp(manifest.study_start)
    end = start + pd.Timedelta(days=manifest.study_days)
    in_study = (events["timestamp"] >= start) & (events["timestamp"] < end)
    report.skipped_events += int((~in_study).sum())
    events = events[in_study]
    by_pid = {pid: g for pid, g in events.groupby("participant_id", sort=True)}

    series = []
    for pid in sorted(demographics):
        report.participants_seen += 1
        bmis = milestones.get(pid, {})
        for period in manifest.periods:
            key = f"{pid}/{period.name}"
            if period.start_milestone not in bmis or period.end_milestone not in bmis:
                report.drop("missing_milestone", key)
                continue
            p_start = manifest.study_start + dt.timedelta(days=period.offset_days)
            ev = by_pid.get(pid)
            if ev is None:
                grid = np.full((period.n_days, m), np.nan)
            else:
                grid = slot_aggregate(ev, m, p_start, period.n_days)
            n_recorded = 0 if ev is None else int(
                ((ev["timestamp"] >= pd.Timestamp(p_start))
                 & (ev["timestamp"] < pd.Timestamp(p_start) + pd.Timedelta(days=period.n_days))).sum())
            if n_recorded < manifest.min_events_per_period:
                report.drop("insufficient_events", key)
                continue
            series.append(ParticipantSeries(
                participant_id=pid, period=period.name, n_days=period.n_days, m_slots=m,
                counts=grid, demographics=demographics[pid],
                bmi_start=bmis[period.start_milestone], bmi_end=bmis[period.end_milestone],
            ))
    orphans = sorted(set(milestones) - set(demographics))
    for pid in orphans:
        report.drop("missing_demographics", pid)
    report.instances = len(series)
    if report.n_dropped:
        logger.info("dropped %d instance(s): %s", report.n_dropped,
                    {k: len(v) for k, v in report.dropped.items()})
    return Cohort(series, manifest, report)


def load_study_dir(directory, m: int | None = None) -> Cohort:
    """Load the standard file layout written by :func:`stepwise.synth.write_cohort`."""
    d = Path(directory)
    return load_cohort(d / "events.csv", d / "milestones.csv", d / "demographics.csv",
                       d / "manifest.json", m=m)


def impute_cohort(series: Iterable[ParticipantSeries]) -> list[ParticipantSeries]:
    """Return copies of ``series`` with grids imputed cohort-wide."""
    series = list(series)
    filled = impute([s.counts for s in series])
    out = []
    for s, g in zip(series, filled):
        out.append(ParticipantSeries(s.participant_id, s.period, s.n_days, s.m_slots, g,
                                     s.demographics, s.bmi_start, s.bmi_end))
    return out
