"""Synthetic step-count cohort with a planted activity -> BMI effect.

Each participant gets a personal activity level, day-to-day variation,
whole-day gaps (watch not worn) and a diurnal profile. Whether an
observation period ends with a BMI drop of at least CRT ("responder") is
drawn with probability ``p_drop_active`` when the period's daily average
steps (DAS) exceed the cohort mean and ``p_drop_inactive`` otherwise.

Responders are additionally given a rising activity trend and
non-responders a falling one by *reordering* the period's days. Reordering
leaves every order-free statistic (DAS, daily max/min, totals) untouched,
so the DAS calibration is exact and the trend is only visible to a model
that reads the window sequence.
"""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .cohort import (
    CATEGORICAL_FIELDS,
    DEMOGRAPHIC_FIELDS,
    DemographicProfile,
    Manifest,
    ParticipantSeries,
    Period,
    write_manifest,
)

# Hourly step totals shaped after a midday-heavy wear pattern: 11:00-16:00
# busiest, 00:00-05:00 quietest.
_HOURLY = np.array([
    834, 384, 240, 224, 472, 1500, 3800, 6500, 8200, 9600, 11200, 13860,
    14527, 14221, 14061, 13528, 12800, 12200, 11000, 9000, 6800, 4600, 2600, 1400,
], dtype=float)
DEFAULT_HOURLY_PROFILE = tuple(_HOURLY / _HOURLY.sum())

VOCABULARIES = {
    "gender": ("female", "male"),
    "marital": ("single", "married", "divorced", "widowed"),
    "adults_in_household": ("1", "2", "3", "4+"),
    "highest_degree": ("high_school", "some_college", "bachelor", "graduate"),
    "hispanic_or_latino": ("no", "yes"),
    "race": ("white", "black", "asian", "other"),
    "occupation": ("employed", "unemployed", "retired", "student"),
}

_BMI_MARGIN = 0.002  # keeps drawn drops clear of the CRT boundary after rounding


@dataclass
class SynthConfig:
    n_participants: int = 300
    n_days: int = 90
    m: int = 24  # recording slots per day
    seed: int = 0
    p_drop_active: float = 0.73
    p_drop_inactive: float = 0.30
    steps_log_mean: float = math.log(6500.0)
    steps_log_sigma: float = 0.45
    day_sigma: float = 0.35
    diurnal_profile: tuple[float, ...] = DEFAULT_HOURLY_PROFILE
    missing_rate: float = 0.10
    drop_magnitude_active: float = 0.07
    drop_magnitude_inactive: float = 0.01
    # Only about 1 in 6 participants completed both periods in the pilot
    # (323 instances from 275 people).
    dropout_rate: float = 0.825
    trend_noise: float = 4.0
    p_over_50: float = 0.498
    crt: float = 0.05
    study_start: dt.date = dt.date(2019, 1, 7)
    periods: int = 2

    def __post_init__(self):
        for name in ("p_drop_active", "p_drop_inactive", "missing_rate", "dropout_rate", "p_over_50"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} must lie in [0, 1]")
        if self.m < 1 or 24 % self.m:
            raise ValueError(f"m={self.m} must divide 24")
        prof = np.asarray(self.diurnal_profile, dtype=float)
        if prof.shape != (self.m,):
            raise ValueError(f"diurnal_profile needs {self.m} weights, got {prof.size}")
        if (prof < 0).any() or abs(prof.sum() - 1.0) > 1e-9:
            raise ValueError("diurnal_profile weights must be non-negative and sum to 1")
        if self.n_days < 1 or self.periods not in (1, 2):
            raise ValueError("n_days must be >= 1 and periods in {1, 2}")
        if not self.drop_magnitude_active > self.crt + _BMI_MARGIN:
            raise ValueError("drop_magnitude_active must exceed crt")

    def manifest(self, m_slots: int = 6) -> Manifest:
        if self.periods == 2:
            periods = (Period("first", "enrollment", "midpoint", 0, self.n_days),
                       Period("second", "midpoint", "closeout", self.n_days, self.n_days))
        else:
            periods = (Period("full", "enrollment", "closeout", 0, self.n_days),)
        return Manifest(self.study_start, self.n_days, m_slots, self.crt, periods,
                        dict(VOCABULARIES))


@dataclass
class SyntheticParticipant:
    participant_id: str
    demographics: DemographicProfile
    bmi: dict[str, float]
    # one entry per period actually observed
    grids: list[np.ndarray] = field(default_factory=list)  # (n_days, m) int, -1 = unrecorded day
    responder: list[bool] = field(default_factory=list)
    active: list[bool] = field(default_factory=list)
    index: int = 0


@dataclass
class SyntheticCohort:
    config: SynthConfig
    participants: list[SyntheticParticipant]
    cohort_das: float

    def manifest(self, m_slots: int = 6) -> Manifest:
        return self.config.manifest(m_slots)

    def series(self, m: int = 6) -> list[ParticipantSeries]:
        """In-memory equivalent of writing the files and loading them back."""
        cfg = self.config
        if 24 % m or m > 24 or cfg.m % m:
            raise ValueError(f"cannot aggregate {cfg.m} recording slots into {m}")
        man = self.manifest(m)
        out = []
        for p in self.participants:
            for period, grid in zip(man.periods, p.grids):
                recorded = grid[:, 0] >= 0
                agg = grid.reshape(cfg.n_days, m, cfg.m // m).sum(axis=2).astype(float)
                agg[~recorded] = np.nan
                out.append(ParticipantSeries(
                    p.participant_id, period.name, cfg.n_days, m, agg, p.demographics,
                    p.bmi[period.start_milestone], p.bmi[period.end_milestone]))
        return out


def _participant_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, stream)))


def _participant_id(index: int) -> str:
    return f"P{index + 1:05d}"


def _draw_demographics(rng: np.random.Generator, p_over_50: float) -> DemographicProfile:
    if rng.random() < p_over_50:
        age = int(np.clip(round(rng.normal(61.0, 6.0)), 51, 85))
    else:
        age = int(np.clip(round(rng.normal(38.0, 8.0)), 18, 50))
    cats = {name: VOCABULARIES[name][rng.integers(len(VOCABULARIES[name]))]
            for name in CATEGORICAL_FIELDS}
    return DemographicProfile(age=age, **cats)


def _bmi_ratio(rng: np.random.Generator, responder: bool, cfg: SynthConfig) -> float:
    if responder:
        floor = cfg.crt + _BMI_MARGIN
        return floor + rng.exponential(cfg.drop_magnitude_active - floor)
    r = rng.normal(cfg.drop_magnitude_inactive, 0.015)
    return float(np.clip(r, -0.04, cfg.crt - _BMI_MARGIN))


def generate_cohort(config: SynthConfig) -> SyntheticCohort:
    """Draw the full cohort; output depends only on ``config``."""
    cfg = config
    if cfg.n_participants < 2:
        raise ValueError("need at least 2 participants for cohort statistics")
    n, m = cfg.n_days, cfg.m
    profile = np.asarray(cfg.diurnal_profile)

    # phase 1: everything that does not depend on cohort-wide statistics
    staged = []
    for i in range(cfg.n_participants):
        rng = _participant_rng(cfg.seed, i)
        demo = _draw_demographics(rng, cfg.p_over_50)
        dropped = rng.random() < cfg.dropout_rate
        level = rng.lognormal(cfg.steps_log_mean, cfg.steps_log_sigma)
        periods = []
        for _ in range(cfg.periods):
            daily = level * rng.lognormal(0.0, 0.1) * rng.lognormal(0.0, cfg.day_sigma, size=n)
            recorded = rng.random(n) >= cfg.missing_rate
            if not recorded.any():
                recorded[0] = True
            grid = rng.poisson(daily[:, None] * profile[None, :]).astype(np.int64)
            grid[~recorded] = -1
            periods.append((daily, recorded, grid))
        staged.append((rng, demo, dropped, periods))

    # DAS as the loader computes it after imputation. Recorded days carry
    # every slot, so each slot column mean sums to the cohort's mean recorded
    # daily total whatever slot width the loader uses.
    usable = [(i, k) for i, (_, _, dropped, periods) in enumerate(staged)
              for k in range(len(periods)) if k == 0 or not dropped]
    rec_total = sum(staged[i][3][k][2][staged[i][3][k][1]].sum() for i, k in usable)
    rec_days = sum(staged[i][3][k][1].sum() for i, k in usable)
    mean_day = rec_total / rec_days
    das = {}
    for i, k in usable:
        _, recorded, grid = staged[i][3][k]
        das[i, k] = (grid[recorded].sum() + (~recorded).sum() * mean_day) / n
    cohort_das = float(np.mean(list(das.values())))

    # phase 2: outcomes and day ordering
    participants = []
    for i, (rng, demo, dropped, periods) in enumerate(staged):
        pid = _participant_id(i)
        bmi = {"enrollment": float(np.clip(rng.normal(33.0, 4.0), 22.0, 50.0))}
        milestones = ("midpoint", "closeout") if cfg.periods == 2 else ("closeout",)
        p = SyntheticParticipant(pid, demo, {}, index=i)
        current = bmi["enrollment"]
        for k, (daily, recorded, grid) in enumerate(periods):
            active = das.get((i, k), 0.0) > cohort_das
            responder = rng.random() < (cfg.p_drop_active if active else cfg.p_drop_inactive)
            # Only the complete weeks are reordered: weekly statistics ignore
            # the trailing n % 7 days, so a trend reaching into them would
            # leak its direction into order-free window features.
            key = np.log(daily)
            key = (key - key.mean()) / (key.std() + 1e-12) + rng.normal(0.0, cfg.trend_noise, n)
            span = (n // 7) * 7 or n
            order = np.arange(n)
            order[:span] = np.argsort(key[:span] if responder else -key[:span], kind="stable")
            ratio = _bmi_ratio(rng, responder, cfg)
            current = current * (1.0 - ratio)
            bmi[milestones[k]] = current
            if k == 0 or not dropped:
                p.grids.append(grid[order])
                p.responder.append(bool(responder))
                p.active.append(bool(active))
        if dropped and cfg.periods == 2:
            del bmi["closeout"]
        p.bmi = {k: round(v, 4) for k, v in bmi.items()}
        participants.append(p)
    return SyntheticCohort(cfg, participants, cohort_das)


def events_frame(cohort: SyntheticCohort) -> pd.DataFrame:
    """One event per recorded slot, at a random minute inside the slot."""
    cfg = cohort.config
    width = 24 * 60 // cfg.m
    base = np.datetime64(cfg.study_start.isoformat(), "m")
    ids, stamps, steps = [], [], []
    for p in cohort.participants:
        rng = _participant_rng(cfg.seed, p.index, stream=1)
        for k, grid in enumerate(p.grids):
            day, slot = np.nonzero(grid >= 0)
            minute = (k * cfg.n_days + day) * 1440 + slot * width + rng.integers(0, width, day.size)
            ids.append(np.full(day.size, p.participant_id, dtype=object))
            stamps.append(base + minute.astype("timedelta64[m]"))
            steps.append(grid[day, slot])
    if not ids:
        return pd.DataFrame(columns=["participant_id", "timestamp", "step_count"])
    return pd.DataFrame({
        "participant_id": np.concatenate(ids),
        "timestamp": np.datetime_as_string(np.concatenate(stamps), unit="m"),
        "step_count": np.concatenate(steps),
    })


def write_cohort(cohort: SyntheticCohort, out_dir, m_slots: int = 6) -> dict[str, Path]:
    """Write events/milestones/demographics CSVs and the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.csv" for name in ("events", "milestones", "demographics")}
    paths["manifest"] = out / "manifest.json"

    events_frame(cohort).to_csv(paths["events"], index=False, lineterminator="\n")
    rows = [(p.participant_id, ms, f"{p.bmi[ms]:.4f}")
            for p in cohort.participants for ms in ("enrollment", "midpoint", "closeout")
            if ms in p.bmi]
    pd.DataFrame(rows, columns=["participant_id", "milestone", "bmi"]).to_csv(
        paths["milestones"], index=False, lineterminator="\n")
    demo = [[p.participant_id] + [getattr(p.demographics, f) for f in DEMOGRAPHIC_FIELDS]
            for p in cohort.participants]
    pd.DataFrame(demo, columns=["participant_id", *DEMOGRAPHIC_FIELDS]).to_csv(
        paths["demographics"], index=False, lineterminator="\n")
    write_manifest(cohort.manifest(m_slots), paths["manifest"])
    return paths
