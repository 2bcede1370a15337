"""Hidden-state response analysis of a trained LSTM.

The response of hidden unit ``u`` to the input at step ``t`` is the mean,
over a dataset of sequences, of ``|h_t[u] - h_{t-1}[u]|`` with ``h_0 = 0``.
Zeroing one standardized feature and recomputing the profile shows which
steps and units depend on it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model.lstm import TrainedModel, forward_pass


@dataclass
class ResponseProfile:
    values: np.ndarray  # (steps, hidden_units)
    n_sequences: int
    layer: int


@dataclass
class AblationResult:
    feature_index: int
    diff: np.ndarray  # (steps, hidden_units), full minus ablated
    ranking: np.ndarray  # steps ordered by descending max |diff|
    full: ResponseProfile
    ablated: ResponseProfile

    @property
    def step_scores(self) -> np.ndarray:
        return np.abs(self.diff).max(axis=1)

    @property
    def aggregate(self) -> float:
        return float(np.abs(self.diff).sum())

    def top_steps(self, count: int = 2) -> list[int]:
        return [int(t) for t in self.ranking[:count]]


def _layer(model: TrainedModel, layer: int | None) -> int:
    L = model.layers
    layer = L - 1 if layer is None else layer
    if not 0 <= layer < L:
        raise ValueError(f"layer {layer} out of range for a {L}-layer model")
    return layer


def hidden_states(model: TrainedModel, Xn, layer: int | None = None) -> np.ndarray:
    """Inference-mode hidden sequence (B, T, H) of one layer for normalized input."""
    layer = _layer(model, layer)
    Xn = np.asarray(Xn, dtype=float)
    single = Xn.ndim == 2
    Xb = Xn[None] if single else Xn
    model._check(Xb)
    _, cache = forward_pass(model.params, Xb, masks=None)
    h = cache["h"][layer]
    return h[0] if single else h


def hidden_deltas(model: TrainedModel, Xn, layer: int | None = None) -> np.ndarray:
    """``h_t - h_{t-1}`` per step, zero initial state; same shape as the states."""
    h = hidden_states(model, Xn, layer)
    return np.diff(h, axis=-2, prepend=np.zeros_like(h[..., :1, :]))


def expected_response(model: TrainedModel, Xn, layer: int | None = None) -> ResponseProfile:
    """Mean absolute hidden-state delta over the sequences in ``Xn`` (B, T, F)."""
    Xn = np.asarray(Xn, dtype=float)
    if Xn.ndim != 3 or Xn.shape[0] == 0:
        raise ValueError("need a non-empty (sequences, steps, features) array")
    layer = _layer(model, layer)
    deltas = hidden_deltas(model, Xn, layer)
    return ResponseProfile(np.abs(deltas).mean(axis=0), Xn.shape[0], layer)


def ablate_feature(model: TrainedModel, Xn, feature_idx: int,
                   layer: int | None = None) -> AblationResult:
    """Response difference when standardized feature ``feature_idx`` is set to 0.

    Zero in standardized units is the feature's training mean.
    """
    Xn = np.asarray(Xn, dtype=float)
    if not 0 <= feature_idx < Xn.shape[-1]:
        raise ValueError(f"feature index {feature_idx} out of range")
    full = expected_response(model, Xn, layer)
    X_abl = Xn.copy()
    X_abl[..., feature_idx] = 0.0
    ablated = expected_response(model, X_abl, layer)
    diff = full.values - ablated.values
    ranking = np.argsort(-np.abs(diff).max(axis=1), kind="stable")
    return AblationResult(feature_idx, diff, ranking, full, ablated)


def write_profile_csv(values: np.ndarray, path) -> None:
    """Rows are time steps, columns hidden units."""
    T, H = values.shape
    header = "step," + ",".join(f"unit_{u}" for u in range(H))
    rows = [f"{t}," + ",".join(repr(float(v)) for v in values[t]) for t in range(T)]
    Path(path).write_text("\n".join([header, *rows]) + "\n")


def write_ablation(result: AblationResult, out_dir, name: str) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"diff": out / f"{name}_diff.csv", "ranking": out / f"{name}_ranking.json"}
    write_profile_csv(result.diff, paths["diff"])
    paths["ranking"].write_text(json.dumps({
        "feature_index": result.feature_index,
        "layer": result.full.layer,
        "n_sequences": result.full.n_sequences,
        "ranking": [int(t) for t in result.ranking],
        "step_scores": [float(v) for v in result.step_scores],
        "aggregate": result.aggregate,
    }, indent=2) + "\n")
    return paths
