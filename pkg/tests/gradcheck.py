"""Central finite-difference check of the LSTM network gradients."""
import numpy as np

from stepwise.model.lstm import ModelConfig, backward_pass, forward_pass, init_params, loss_terms


def total_loss(params, X, y, masks, l2):
    _, cache = forward_pass(params, X, masks)
    data, reg = loss_terms(params, cache["logit"], y, l2)
    return data + reg


def relative_errors(layers=2, feature=5, embed=4, hidden=4, steps=3, batch=2, dropout=0.0,
                    l2=1e-2, seed=0, eps=1e-6):
    """Per-tensor relative error ``|a - n| / max(|a| + |n|, tiny)`` (max over entries)."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(feature_dim=feature, embed_dim=embed, hidden_units=hidden, layers=layers)
    params = init_params(cfg, rng)
    for name in params:  # non-trivial biases too
        params[name] = params[name] + rng.normal(0, 0.3, params[name].shape)
    X = rng.normal(size=(batch, steps, feature))
    y = (np.arange(batch) % 2).astype(float)
    masks = None
    if dropout:
        keep = 1 - dropout
        masks = (rng.random((layers, batch, steps, hidden)) < keep) / keep
    _, cache = forward_pass(params, X, masks)
    grads = backward_pass(params, cache, y, l2)
    errors = {}
    for name, p in params.items():
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = total_loss(params, X, y, masks, l2)
            p[idx] = old - eps
            down = total_loss(params, X, y, masks, l2)
            p[idx] = old
            num[idx] = (up - down) / (2 * eps)
        a = grads[name]
        denom = np.maximum(np.abs(a) + np.abs(num), 1e-7)
        errors[name] = float((np.abs(a - num) / denom).max())
    return errors
