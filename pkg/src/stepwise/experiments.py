"""Cross-validated experiment harness.

Each experiment kind expands a small grid (slot count ``m``, window ``k``,
feature set, model, augmentation ``M``) and evaluates every cell with the
same participant-grouped 10-fold rotation: fold ``r`` tests, fold
``r + 1`` validates, the remaining eight train.
"""
from __future__ import annotations

import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from .cohort import ParticipantSeries, impute_cohort, label, load_cohort
from .features import (
    FEATURE_SETS,
    CohortStats,
    SequenceDataset,
    build_sequences,
    feature_columns,
    partition_windows,
)
from .model.baselines import ForestConfig, train_forest, train_logreg
from .model.lstm import ModelConfig, predict, train

KINDS = ("feature_sweep", "window_sweep", "model_sweep", "augment_sweep", "age_strata")
MODELS = ("LR", "RF", "LSTM1", "LSTM2", "LSTM3")
AGE_SPLIT = 50

DEFAULT_GRIDS = {
    "feature_sweep": {"m": [4, 6, 12], "feature_set": ["slots", "slots+demo", "all"],
                      "model": ["LR", "RF"]},
    "window_sweep": {"m": [6], "k": [3, 7, 30], "feature_set": ["all"], "model": ["LSTM1"]},
    "model_sweep": {"m": [6], "k": [7], "feature_set": ["all"], "model": list(MODELS)},
    "augment_sweep": {"m": [6], "k": [7], "feature_set": ["all"], "model": ["LSTM2"],
                      "M": [11, 10]},
    "age_strata": {"m": [6], "k": [7], "feature_set": ["all"], "model": ["LSTM2"]},
}


def default_threads() -> int:
    return max(1, int(os.environ.get("STEPWISE_THREADS", "1")))


# -- splits -------------------------------------------------------------------

@dataclass
class SplitPlan:
    fold_of: np.ndarray  # fold index per instance
    folds: int
    seed: int

    def rotation(self, r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(train, validation, test) instance indices for rotation ``r``."""
        test = np.flatnonzero(self.fold_of == r)
        val = np.flatnonzero(self.fold_of == (r + 1) % self.folds)
        train_ = np.flatnonzero((self.fold_of != r) & (self.fold_of != (r + 1) % self.folds))
        return train_, val, test

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.folds)


def kfold(y, groups=None, folds: int = 10, seed: int = 0) -> SplitPlan:
    """Stratified, participant-grouped fold assignment.

    Groups are placed largest first, positives before negatives, each into
    the currently smallest fold (ties broken toward the fold whose positive
    count it balances). With singleton groups this is a round robin, so
    fold sizes and per-fold positives each differ by at most one.
    """
    if isinstance(y, SequenceDataset):
        y, groups = y.y, y.groups if groups is None else groups
    y = np.asarray(y, dtype=int)
    n = len(y)
    if folds < 2 or n < folds:
        raise ValueError(f"cannot split {n} instances into {folds} folds")
    groups = np.arange(n) if groups is None else np.asarray(groups)
    uniq, inverse = np.unique(groups, return_inverse=True)
    if len(uniq) < folds:
        raise ValueError(f"only {len(uniq)} groups for {folds} folds")
    size = np.bincount(inverse)
    pos = np.bincount(inverse, weights=y).astype(int)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(uniq))
    majority_pos = (pos * 2 >= size).astype(int)
    order = order[np.lexsort((-majority_pos[order], -size[order]))]
    fold_n = np.zeros(folds, dtype=int)
    fold_pos = np.zeros(folds, dtype=int)
    group_fold = np.empty(len(uniq), dtype=int)
    for g in order:
        sign = 1 if majority_pos[g] else -1
        f = min(range(folds), key=lambda j: (fold_n[j], sign * fold_pos[j], j))
        group_fold[g] = f
        fold_n[f] += size[g]
        fold_pos[f] += pos[g]
    return SplitPlan(group_fold[inverse], folds, seed)


# -- augmentation -------------------------------------------------------------

def augment(dataset: SequenceDataset, M: int) -> SequenceDataset:
    """Week-subset augmentation.

    Every sequence yields one subsequence per combination of ``M - 2``
    interior steps, always bracketed by the first and last step, in
    chronological order.
    """
    T = dataset.steps
    if not 3 <= M <= T:
        raise ValueError(f"M={M} must satisfy 3 <= M <= {T}")
    combos = np.array(list(itertools.combinations(range(1, T - 1), M - 2)), dtype=int)
    C = len(combos)
    idx = np.concatenate([np.zeros((C, 1), int), combos, np.full((C, 1), T - 1)], axis=1)
    N = len(dataset)
    X = dataset.X[:, idx].reshape(N * C, M, dataset.X.shape[2])
    keys = np.array([f"{k}#{c}" for k in dataset.keys for c in range(C)])
    return SequenceDataset(X, np.repeat(dataset.y, C), np.repeat(dataset.groups, C), keys,
                           np.repeat(dataset.ages, C), dataset.feature_names, dataset.k,
                           dataset.m)


def augmented_size(n_instances: int, M: int, steps: int = 12) -> int:
    return n_instances * math.comb(steps - 2, M - 2)


# -- association ---------------------------------------------------------------

@dataclass
class AssociationStats:
    n: int
    cohort_das: float
    n_above: int
    p_drop_given_above: float | None
    p_drop_given_below: float | None
    slope: float
    slope_stderr: float
    intercept: float
    p_value: float


def association_stats(series: Sequence[ParticipantSeries], crt: float) -> AssociationStats:
    """P(drop >= CRT | DAS above cohort mean) and an OLS slope of relative
    BMI drop on DAS, over imputed series."""
    series = list(series)
    if len(series) < 2:
        raise ValueError("need at least two instances")
    das = np.array([s.counts.sum(axis=1).mean() for s in series])
    drop = np.array([(s.bmi_start - s.bmi_end) / s.bmi_start for s in series])
    improved = np.array([label(s.bmi_start, s.bmi_end, crt) for s in series])
    mean = das.mean()
    above = das > mean
    p_above = float(improved[above].mean()) if above.any() else None
    p_below = float(improved[~above].mean()) if (~above).any() else None
    if np.ptp(das) > 0:
        fit = sps.linregress(das, drop)
        slope, se, icpt, pval = fit.slope, fit.stderr, fit.intercept, fit.pvalue
    else:
        slope, se, icpt, pval = math.nan, math.nan, float(drop.mean()), math.nan
    return AssociationStats(len(series), float(mean), int(above.sum()), p_above, p_below,
                            float(slope), float(se), float(icpt), float(pval))


# -- study access ----------------------------------------------------------------

class Study:
    """Imputed series at any slot count, plus labeling metadata."""

    def __init__(self, loader: Callable[[int], list[ParticipantSeries]], crt: float,
                 vocabularies, n_days: int):
        self._loader = lru_cache(maxsize=None)(loader)
        self.crt = crt
        self.vocabularies = vocabularies
        self.n_days = n_days

    @classmethod
    def from_files(cls, events, milestones, demographics, manifest) -> "Study":
        first = load_cohort(events, milestones, demographics, manifest)
        man = first.manifest
        cache = {man.m_slots: first}

        def load(m):
            cohort = cache.pop(m, None) or load_cohort(events, milestones, demographics, manifest, m=m)
            return impute_cohort(cohort.series)
        return cls(load, man.crt, man.vocabularies, man.n_days)

    @classmethod
    def from_dir(cls, directory) -> "Study":
        d = Path(directory)
        return cls.from_files(d / "events.csv", d / "milestones.csv", d / "demographics.csv",
                              d / "manifest.json")

    @classmethod
    def from_synthetic(cls, cohort) -> "Study":
        return cls(lambda m: impute_cohort(cohort.series(m)), cohort.config.crt,
                   cohort.manifest().vocabularies, cohort.config.n_days)

    def series(self, m: int) -> list[ParticipantSeries]:
        return self._loader(m)

    def restrict(self, keep: Callable[[ParticipantSeries], bool]) -> "Study":
        parent = self
        return Study(lambda m: [s for s in parent.series(m) if keep(s)], self.crt,
                     self.vocabularies, self.n_days)


# -- report ------------------------------------------------------------------------

@dataclass
class CellResult:
    model: str
    m: int
    feature_set: str
    feature_size: int
    k: int | None
    steps: int | None
    data_size: int
    val_accuracy: list[float]
    test_accuracy: list[float]
    majority_accuracy: list[float]
    M: int | None = None
    stratum: str | None = None

    @property
    def mean_val(self) -> float:
        return float(np.mean(self.val_accuracy))

    @property
    def mean_test(self) -> float:
        return float(np.mean(self.test_accuracy))

    @property
    def mean_majority(self) -> float:
        return float(np.mean(self.majority_accuracy))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(mean_val_accuracy=self.mean_val, mean_test_accuracy=self.mean_test,
                 mean_majority_accuracy=self.mean_majority)
        return d


@dataclass
class ExperimentReport:
    kind: str
    grid: dict
    seed: int
    folds: int
    n_instances: int
    cells: list[CellResult]
    runtime_s: float = 0.0
    notes: list[str] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def cell(self, **match) -> CellResult:
        for c in self.cells:
            if all(getattr(c, k) == v for k, v in match.items()):
                return c
        raise KeyError(match)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "grid": self.grid, "seed": self.seed, "folds": self.folds,
                "n_instances": self.n_instances, "settings": self.settings,
                "notes": self.notes, "runtime_s": self.runtime_s,
                "cells": [c.to_dict() for c in self.cells]}

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def to_text(self) -> str:
        head = ["Model", "Stratum", "Time Slot", "Feature Size", "Window Size", "Step Nodes",
                "Data Size", "Accuracy (Validation)", "Accuracy (Testing)", "Majority"]
        rows = []
        for c in self.cells:
            rows.append([
                model_label(c.model), c.stratum or "", str(c.m), str(c.feature_size),
                "" if c.k is None else _window_label(c.k), "" if c.steps is None else str(c.steps),
                str(c.data_size), f"{100 * c.mean_val:.1f}%", f"{100 * c.mean_test:.1f}%",
                f"{100 * c.mean_majority:.1f}%",
            ])
        if not any(r[1] for r in rows):
            head.pop(1)
            rows = [r[:1] + r[2:] for r in rows]
        widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
                  for i, h in enumerate(head)]
        fmt = lambda r: "  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip()
        lines = [f"{self.kind} ({self.folds}-fold, seed {self.seed}, {self.n_instances} instances)",
                 fmt(head), fmt(["-" * w for w in widths])]
        lines += [fmt(r) for r in rows]
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def model_label(name: str) -> str:
    if name.startswith("LSTM"):
        n = int(name[4:])
        return f"LSTM ({n} layer{'s' if n > 1 else ''})"
    return name


def _window_label(k: int) -> str:
    return {1: "1 day", 7: "1 week", 30: "1 month"}.get(k, f"{k} days")


# -- evaluation ------------------------------------------------------------------------

def _accuracy(pred, y) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(y)))


def _fold_job(args):
    """Train and score one (cell, rotation); top-level so it can be pickled."""
    (series, study_meta, plan, r, cell, model_overrides, forest_cfg, logreg_l2, seed) = args
    crt, vocab, n_days = study_meta
    tr, va, te = plan.rotation(r)
    stats = CohortStats.from_series([series[i] for i in tr])
    model = cell["model"]
    cols = None
    if model in ("LR", "RF"):
        data = build_sequences(series, n_days, crt, vocab, stats).select_features(cell["feature_set"])
        X = data.flat()
        y = data.y
        majority = int(y[tr].mean() >= 0.5)
        if model == "LR":
            clf = train_logreg(X[tr], y[tr], l2=logreg_l2)
        else:
            fc = ForestConfig(**{**forest_cfg, "seed": seed + r})
            clf = train_forest(X[tr], y[tr], fc)
        return (_accuracy(clf.predict(X[va]), y[va]), _accuracy(clf.predict(X[te]), y[te]),
                _accuracy(np.full(len(te), majority), y[te]))

    data = build_sequences(series, cell["k"], crt, vocab, stats).select_features(cell["feature_set"])
    tr_d, va_d, te_d = data.subset(tr), data.subset(va), data.subset(te)
    if cell.get("M") is not None:
        tr_d, va_d, te_d = (augment(d, cell["M"]) for d in (tr_d, va_d, te_d))
    cfg = ModelConfig(**{**model_overrides, "feature_dim": data.X.shape[2],
                         "layers": int(model[4:]), "seed": seed + r})
    fitted = train(tr_d.X, tr_d.y, va_d.X, va_d.y, cfg)
    majority = int(tr_d.y.mean() >= 0.5)
    return (fitted.curve[fitted.best_epoch].val_accuracy,
            _accuracy(predict(fitted, te_d.X)[1], te_d.y),
            _accuracy(np.full(len(te_d.y), majority), te_d.y))


def _expand(kind: str, grid: dict | None) -> list[dict]:
    if kind not in KINDS:
        raise ValueError(f"unknown experiment kind {kind!r}; choose from {KINDS}")
    g = {**DEFAULT_GRIDS[kind], **(grid or {})}
    unknown = set(g) - {"m", "k", "feature_set", "model", "M"}
    if unknown:
        raise ValueError(f"unknown grid keys {sorted(unknown)}")
    for m in g["m"]:
        if m not in (4, 6, 12):
            raise ValueError(f"invalid slot count m={m}; use 4, 6 or 12")
    for fs in g["feature_set"]:
        if fs not in FEATURE_SETS:
            raise ValueError(f"invalid feature set {fs!r}")
    for model in g["model"]:
        if model not in MODELS:
            raise ValueError(f"invalid model {model!r}; choose from {MODELS}")
    cells = []
    for m, fs, model in itertools.product(g["m"], g["feature_set"], g["model"]):
        ks = [None] if model in ("LR", "RF") else g.get("k", [7])
        Ms = g.get("M", [None]) if kind == "augment_sweep" else [None]
        for k, M in itertools.product(ks, Ms):
            if model in ("LR", "RF") and kind == "augment_sweep":
                raise ValueError("augment_sweep needs an LSTM model")
            cells.append({"m": m, "feature_set": fs, "model": model, "k": k, "M": M})
    return cells


def run_experiment(kind: str, study: Study, grid: dict | None = None, seed: int = 0,
                   folds: int = 10, model_overrides: dict | None = None,
                   forest: dict | None = None, logreg_l2: float = 1e-2,
                   n_jobs: int | None = None) -> ExperimentReport:
    """Evaluate every grid cell with participant-grouped ``folds``-fold rotation.

    ``model_overrides`` sets :class:`ModelConfig` fields (e.g. ``epochs``) for
    every LSTM cell; ``forest`` sets :class:`ForestConfig` fields.
    """
    t0 = time.perf_counter()
    cells = _expand(kind, grid)
    model_overrides = dict(model_overrides or {})
    for key in ("feature_dim", "layers", "seed"):
        model_overrides.pop(key, None)
    forest = dict(forest or {})
    n_jobs = default_threads() if n_jobs is None else n_jobs

    strata = [(None, study)]
    if kind == "age_strata":
        strata = [("above_50", study.restrict(lambda s: s.demographics.age > AGE_SPLIT)),
                  ("50_or_below", study.restrict(lambda s: s.demographics.age <= AGE_SPLIT))]

    jobs, meta = [], []
    n_total = len(study.series(cells[0]["m"]))
    for stratum, sub in strata:
        for cell in cells:
            series = sub.series(cell["m"])
            y = np.array([label(s.bmi_start, s.bmi_end, sub.crt) for s in series], dtype=int)
            plan = kfold(y, [s.participant_id for s in series], folds, seed)
            for r in range(folds):
                jobs.append((series, (sub.crt, sub.vocabularies, sub.n_days), plan, r, cell,
                             model_overrides, forest, logreg_l2, seed))
            meta.append((stratum, cell, series))

    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_fold_job, jobs))
    else:
        results = [_fold_job(j) for j in jobs]

    out = []
    for c, (stratum, cell, series) in enumerate(meta):
        chunk = results[c * folds:(c + 1) * folds]
        m = cell["m"]
        k = cell["k"]
        steps = None if k is None else partition_windows(study.n_days, k).window_count
        size = len(series)
        if cell["M"] is not None:
            size = augmented_size(size, cell["M"], steps)
            steps = cell["M"]
        out.append(CellResult(
            model=cell["model"], m=m, feature_set=cell["feature_set"],
            feature_size=len(feature_columns(m, cell["feature_set"])), k=k, steps=steps,
            data_size=size, val_accuracy=[v for v, _, _ in chunk],
            test_accuracy=[t for _, t, _ in chunk], majority_accuracy=[q for _, _, q in chunk],
            M=cell["M"], stratum=stratum,
        ))
    notes = []
    if kind == "augment_sweep":
        notes.append("validation and test folds hold augmented sequences of held-out participants")
    report = ExperimentReport(kind, {**DEFAULT_GRIDS[kind], **(grid or {})}, seed, folds,
                              n_total, out, notes=notes,
                              settings={"model": model_overrides, "forest": forest,
                                        "logreg_l2": logreg_l2})
    report.runtime_s = time.perf_counter() - t0
    return report
