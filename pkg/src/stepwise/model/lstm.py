"""Embedding + stacked LSTM + last-step logistic readout, in plain numpy.

Parameters live in a flat ``dict[str, ndarray]``:

=================  ======================  ===============================
name               shape                   role
=================  ======================  ===============================
``embed_W``        (embed, feature)        dense projection of raw features
``embed_b``        (embed,)
``V{l}``           (4 * hidden, in_dim)    layer ``l`` input weights
``W{l}``           (4 * hidden, hidden)    layer ``l`` recurrent weights
``b{l}``           (4 * hidden,)           gate biases, order i, f, o, g
``out_w``          (hidden,)               readout weights
``out_b``          (1,)
=================  ======================  ===============================

Dropout (inverted) acts on each layer's output on its way up to the next
layer or the readout, never on the recurrent path or the cell state.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..cohort import FeatureStats, normalize

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    feature_dim: int
    embed_dim: int = 32
    hidden_units: int = 25
    layers: int = 2
    dropout_rate: float = 0.5
    epochs: int = 150
    learning_rate: float = 1e-3
    l2_lambda: float = 1e-4
    grad_clip_norm: float = 5.0
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate={self.dropout_rate} must lie in [0, 1)")
        for name in ("feature_dim", "embed_dim", "hidden_units", "layers", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def weight_names(layers: int) -> list[str]:
    """Parameters subject to the L2 penalty (biases are exempt)."""
    return ["embed_W", *(f"V{l}" for l in range(layers)), *(f"W{l}" for l in range(layers)), "out_w"]


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases except +1 on the forget gate."""
    def glorot(rows, cols):
        limit = math.sqrt(6.0 / (rows + cols))
        return rng.uniform(-limit, limit, size=(rows, cols))

    H, E = config.hidden_units, config.embed_dim
    p = {"embed_W": glorot(E, config.feature_dim), "embed_b": np.zeros(E)}
    for l in range(config.layers):
        in_dim = E if l == 0 else H
        p[f"V{l}"] = glorot(4 * H, in_dim)
        p[f"W{l}"] = glorot(4 * H, H)
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        p[f"b{l}"] = b
    p["out_w"] = glorot(1, H)[0]
    p["out_b"] = np.zeros(1)
    return p


def n_layers(params) -> int:
    return sum(1 for name in params if name.startswith("V"))


def embed(params, x):
    """tanh(embed_W @ x + embed_b) over the last axis of ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params["embed_W"].shape[1]:
        raise ValueError(f"feature dim {x.shape[-1]} != {params['embed_W'].shape[1]}")
    return np.tanh(x @ params["embed_W"].T + params["embed_b"])


def lstm_cell(x, h_prev, c_prev, V, W, b):
    """One LSTM step; returns ``(h, c)``. Works on single vectors or batches."""
    H = W.shape[1]
    z = x @ V.T + h_prev @ W.T + b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    o = sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def dropout_masks(rng, layers, B, T, H, rate) -> np.ndarray | None:
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    return (rng.random((layers, B, T, H)) < keep) / keep


def forward_pass(params, X, masks=None):
    """Run the network over a batch ``X`` of shape (B, T, F).

    Returns ``(prob, cache)``; ``cache`` holds every intermediate needed by
    :func:`backward_pass` and by hidden-state analysis (``cache["h"][l]`` is
    the un-dropped hidden sequence of layer ``l``, shape (B, T, H)).
    """
    X = np.asarray(X, dtype=float)
    L = n_layers(params)
    B, T, _ = X.shape
    H = params["W0"].shape[1]
    e = embed(params, X)
    layer_in = e
    cache = {"X": X, "e": e, "inputs": [], "h": [], "c": [], "gates": [], "out": [], "masks": masks}
    for l in range(L):
        V, Wr, b = params[f"V{l}"], params[f"W{l}"], params[f"b{l}"]
        zx = layer_in @ V.T + b  # (B, T, 4H)
        hs = np.empty((B, T, H))
        cs = np.empty((B, T, H))
        gates = np.empty((B, T, 4 * H))
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        for t in range(T):
            z = zx[:, t] + h @ Wr.T
            ifo = sigmoid(z[:, :3 * H])
            g = np.tanh(z[:, 3 * H:])
            c = ifo[:, H:2 * H] * c + ifo[:, :H] * g
            h = ifo[:, 2 * H:] * np.tanh(c)
            gates[:, t, :3 * H] = ifo
            gates[:, t, 3 * H:] = g
            hs[:, t] = h
            cs[:, t] = c
        out = hs if masks is None else hs * masks[l]
        cache["inputs"].append(layer_in)
        cache["h"].append(hs)
        cache["c"].append(cs)
        cache["gates"].append(gates)
        cache["out"].append(out)
        layer_in = out
    logit = layer_in[:, -1] @ params["out_w"] + params["out_b"][0]
    cache["logit"] = logit
    return sigmoid(logit), cache


def loss_terms(params, logit, y, l2_lambda):
    """Mean binary cross-entropy from logits plus the L2 penalty."""
    y = np.asarray(y, dtype=float)
    # log(1 + exp(-|z|)) form avoids overflow for large logits
    bce = np.maximum(logit, 0) - logit * y + np.log1p(np.exp(-np.abs(logit)))
    data = float(bce.mean())
    reg = l2_lambda * sum(float(np.sum(params[n] ** 2)) for n in weight_names(n_layers(params)))
    return data, reg


def backward_pass(params, cache, y, l2_lambda=0.0):
    """Gradients of ``mean BCE + l2_lambda * ||weights||^2`` w.r.t. every parameter."""
    y = np.asarray(y, dtype=float)
    X, masks = cache["X"], cache["masks"]
    L = n_layers(params)
    B, T, _ = X.shape
    H = params["W0"].shape[1]
    grads = {}

    dlogit = (sigmoid(cache["logit"]) - y) / B
    top = cache["out"][-1]
    grads["out_w"] = top[:, -1].T @ dlogit
    grads["out_b"] = np.array([dlogit.sum()])
    d_out = np.zeros((B, T, H))
    d_out[:, -1] = dlogit[:, None] * params["out_w"][None, :]

    for l in reversed(range(L)):
        Wr = params[f"W{l}"]
        hs, cs, gates, inp = cache["h"][l], cache["c"][l], cache["gates"][l], cache["inputs"][l]
        dh_seq = d_out if masks is None else d_out * masks[l]
        dz = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(T)):
            i = gates[:, t, :H]
            f = gates[:, t, H:2 * H]
            o = gates[:, t, 2 * H:3 * H]
            g = gates[:, t, 3 * H:]
            tc = np.tanh(cs[:, t])
            c_prev = cs[:, t - 1] if t > 0 else 0.0
            dh = dh_seq[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz[:, t, :H] = dc * g * i * (1.0 - i)
            dz[:, t, H:2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, t, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            dz[:, t, 3 * H:] = dc * i * (1.0 - g * g)
            dc_next = dc * f
            dh_next = dz[:, t] @ Wr
        h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
        dz2 = dz.reshape(B * T, 4 * H)
        grads[f"W{l}"] = dz2.T @ h_prev.reshape(B * T, H)
        grads[f"V{l}"] = dz2.T @ inp.reshape(B * T, -1)
        grads[f"b{l}"] = dz2.sum(axis=0)
        d_out = dz @ params[f"V{l}"]

    e = cache["e"]
    dpre = (d_out * (1.0 - e * e)).reshape(B * T, -1)
    grads["embed_W"] = dpre.T @ X.reshape(B * T, -1)
    grads["embed_b"] = dpre.sum(axis=0)

    if l2_lambda:
        for name in weight_names(L):
            grads[name] = grads[name] + 2.0 * l2_lambda * params[name]
    return grads


def clip_by_global_norm(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k in params:
            self.m[k] = b1 * self.m[k] + (1 - b1) * grads[k]
            self.v[k] = b2 * self.v[k] + (1 - b2) * grads[k] * grads[k]
            params[k] -= self.lr * corr * self.m[k] / (np.sqrt(self.v[k]) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainedModel:
    params: dict[str, np.ndarray]
    config: ModelConfig
    train_stats: FeatureStats
    seq_len: int
    curve: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def layers(self) -> int:
        return n_layers(self.params)

    def normalize(self, X) -> np.ndarray:
        return normalize(X, self.train_stats)

    def _check(self, Xn):
        if Xn.ndim != 3:
            raise ValueError("expected a (batch, steps, features) array")
        if Xn.shape[1] != self.seq_len:
            raise ValueError(f"sequence length {Xn.shape[1]} != model's {self.seq_len}")
        if Xn.shape[2] != self.config.feature_dim:
            raise ValueError(f"feature dim {Xn.shape[2]} != model's {self.config.feature_dim}")


def _as_batch(X):
    X = np.asarray(X, dtype=float)
    return (X[None], True) if X.ndim == 2 else (X, False)


def forward(model: TrainedModel, X, mode: str = "infer", rng=None):
    """Probability of improvement for normalized sequence(s) ``X``.

    ``mode="train"`` samples fresh dropout masks from ``rng``; ``"infer"``
    is deterministic.
    """
    Xb, single = _as_batch(X)
    model._check(Xb)
    masks = None
    if mode == "train":
        rng = rng if rng is not None else np.random.default_rng()
        B, T, _ = Xb.shape
        masks = dropout_masks(rng, model.layers, B, T, model.config.hidden_units,
                              model.config.dropout_rate)
    elif mode != "infer":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    prob, _ = forward_pass(model.params, Xb, masks)
    return prob[0] if single else prob


def predict(model: TrainedModel, X):
    """``(probability, label)`` for raw (un-normalized) sequence(s).

    A probability of exactly 0.5 is labelled positive.
    """
    prob = forward(model, model.normalize(X), mode="infer")
    return prob, (np.asarray(prob) >= 0.5).astype(int) if np.ndim(prob) else int(prob >= 0.5)


def _evaluate(params, Xn, y, l2_lambda):
    prob, cache = forward_pass(params, Xn)
    data, reg = loss_terms(params, cache["logit"], y, l2_lambda)
    return data + reg, float(np.mean((prob >= 0.5) == (y == 1)))


def train(X_train, y_train, X_val, y_val, config: ModelConfig) -> TrainedModel:
    """Fit on raw sequences; keeps the epoch with the best validation accuracy.

    Features are standardized with statistics of ``X_train``. Ties in
    validation accuracy go to the lower validation loss, then the earlier
    epoch.
    """
    X_train = np.asarray(X_train, dtype=float)
    X_val = np.asarray(X_val, dtype=float)
    y_train = np.asarray(y_train, dtype=int)
    y_val = np.asarray(y_val, dtype=int)
    if not (np.isfinite(X_train).all() and np.isfinite(X_val).all()):
        raise ValueError("input sequences contain non-finite values")
    if len(y_train) == 0 or len(y_val) == 0:
        raise ValueError("training and validation splits must be non-empty")
    if X_train.shape[2] != config.feature_dim:
        raise ValueError(f"feature dim {X_train.shape[2]} != config {config.feature_dim}")

    rng = np.random.default_rng(config.seed)
    stats = FeatureStats.fit(X_train)
    Xt, Xv = normalize(X_train, stats), normalize(X_val, stats)
    params = init_params(config, rng)
    opt = Adam(params, lr=config.learning_rate)
    N, T, _ = Xt.shape
    H, L = config.hidden_units, config.layers

    curve = []
    best = (-1.0, math.inf)
    best_params, best_epoch = copy.deepcopy(params), -1
    for epoch in range(config.epochs):
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, config.batch_size):
            idx = order[start:start + config.batch_size]
            masks = dropout_masks(rng, L, len(idx), T, H, config.dropout_rate)
            _, cache = forward_pass(params, Xt[idx], masks)
            data, reg = loss_terms(params, cache["logit"], y_train[idx], config.l2_lambda)
            if not math.isfinite(data + reg):
                raise TrainingDivergedError(
                    f"loss became {data + reg} at epoch {epoch}, batch {start // config.batch_size}; "
                    f"lower learning_rate (now {config.learning_rate}) or grad_clip_norm "
                    f"(now {config.grad_clip_norm})")
            total += (data + reg) * len(idx)
            grads = backward_pass(params, cache, y_train[idx], config.l2_lambda)
            grads, _ = clip_by_global_norm(grads, config.grad_clip_norm)
            opt.step(params, grads)
        _, train_acc = _evaluate(params, Xt, y_train, config.l2_lambda)
        val_loss, val_acc = _evaluate(params, Xv, y_val, config.l2_lambda)
        curve.append(EpochRecord(epoch, total / N, train_acc, val_loss, val_acc))
        if val_acc > best[0] or (val_acc == best[0] and val_loss < best[1]):
            best = (val_acc, val_loss)
            best_params, best_epoch = copy.deepcopy(params), epoch
    logger.debug("best epoch %d (val acc %.3f)", best_epoch, best[0])
    return TrainedModel(best_params, config, stats, T, curve, best_epoch)
