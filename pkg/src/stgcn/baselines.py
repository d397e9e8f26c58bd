"""Ablation models sharing the ST-GCN trainer and metrics.

``fnn``
    Flattened sample (K*N*F) -> two ReLU layers of width ``hidden_dim`` -> 2 logits.
``gcn_only``
    The two-layer GCN applied per window, no recurrence; window outputs are
    mean-pooled and fed to the same linear head as ST-GCN.
``gru_only``
    The GCN is replaced by a node-wise affine map F -> hidden (no adjacency),
    followed by the same GRU, pooling and head as ST-GCN.
"""

from __future__ import annotations

import numpy as np

from .model import (
    ForwardTape,
    ModelConfig,
    TrainHyper,
    _dlogits,
    _gcn_layer,
    _gcn_layer_backward,
    _gru_cell_backward,
    _head_backward,
    _head_forward,
    check_batch,
    fit,
    gru_cell,
    init_gru_params,
    register_kind,
)
from .numerics import Params, glorot_init, softmax

BASELINE_KINDS = ("fnn", "gcn_only", "gru_only")


# ---- fnn


def init_fnn(config: ModelConfig, rng) -> Params:
    d = config.num_windows * config.num_nodes * config.input_dim
    h = config.hidden_dim
    return {
        "fc1_w": glorot_init(d, h, rng),
        "fc1_b": np.zeros(h),
        "fc2_w": glorot_init(h, h, rng),
        "fc2_b": np.zeros(h),
        "w_out": glorot_init(h, 2, rng),
        "b_out": np.zeros(2),
    }


def fnn_forward(x, lap, params: Params, config: ModelConfig):
    x, lap = check_batch(x, lap, config)
    tape = ForwardTape(x=x, lap=lap)
    inp = x.reshape(x.shape[0], -1)
    a1 = inp @ params["fc1_w"] + params["fc1_b"]
    z1 = np.maximum(a1, 0.0)
    a2 = z1 @ params["fc2_w"] + params["fc2_b"]
    z2 = np.maximum(a2, 0.0)
    tape.flat, tape.logits = _head_forward(z2, params)
    tape.probs = softmax(tape.logits)
    tape.extra = {"inp": inp, "a1": a1, "z1": z1, "a2": a2}
    return tape.probs, tape


def fnn_backward(tape: ForwardTape, labels, params: Params, config: ModelConfig, scale: float = 1.0) -> Params:
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    e = tape.extra
    dlogits = _dlogits(tape.probs, labels, scale / tape.probs.shape[0])
    dz2 = _head_backward(dlogits, tape.flat, params, grads)
    da2 = dz2 * (e["a2"] > 0)
    grads["fc2_w"] += e["z1"].T @ da2
    grads["fc2_b"] += da2.sum(axis=0)
    da1 = (da2 @ params["fc2_w"].T) * (e["a1"] > 0)
    grads["fc1_w"] += e["inp"].T @ da1
    grads["fc1_b"] += da1.sum(axis=0)
    return grads


# ---- gcn_only


def init_gcn_only(config: ModelConfig, rng) -> Params:
    f, h, n = config.input_dim, config.hidden_dim, config.num_nodes
    return {
        "theta0": glorot_init(f, h, rng),
        "theta1": glorot_init(h, h, rng),
        "w_out": glorot_init(n * h, 2, rng),
        "b_out": np.zeros(2),
    }


def gcn_only_forward(x, lap, params: Params, config: ModelConfig):
    x, lap = check_batch(x, lap, config)
    tape = ForwardTape(x=x, lap=lap)
    total = None
    for t in range(config.num_windows):
        out, cache = _gcn_layer(x[:, t], lap[:, t], params, config.gcn_output_activation)
        total = out.copy() if total is None else total + out
        tape.steps.append(cache)
    tape.pooled = total / config.num_windows
    tape.flat, tape.logits = _head_forward(tape.pooled, params)
    tape.probs = softmax(tape.logits)
    return tape.probs, tape


def gcn_only_backward(tape: ForwardTape, labels, params: Params, config: ModelConfig, scale: float = 1.0) -> Params:
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dlogits = _dlogits(tape.probs, labels, scale / tape.probs.shape[0])
    dflat = _head_backward(dlogits, tape.flat, params, grads)
    dpool = dflat.reshape(tape.pooled.shape) / config.num_windows
    for cache in tape.steps:
        _gcn_layer_backward(dpool, cache, params, config.gcn_output_activation, grads)
    return grads


# ---- gru_only


def init_gru_only(config: ModelConfig, rng) -> Params:
    f, h, n = config.input_dim, config.hidden_dim, config.num_nodes
    params = {"w_in": glorot_init(f, h, rng), "b_in": np.zeros(h)}
    params.update(init_gru_params(h, h, rng))
    params["w_out"] = glorot_init(n * h, 2, rng)
    params["b_out"] = np.zeros(2)
    return params


def gru_only_forward(x, lap, params: Params, config: ModelConfig):
    x, lap = check_batch(x, lap, config)
    tape = ForwardTape(x=x, lap=lap)
    h = np.zeros((x.shape[0], config.num_nodes, config.hidden_dim))
    total = np.zeros_like(h)
    for t in range(config.num_windows):
        f_t = x[:, t] @ params["w_in"] + params["b_in"]
        h, cache = gru_cell(f_t, h, params)
        total += h
        tape.steps.append(cache)
    tape.pooled = total / config.num_windows
    tape.flat, tape.logits = _head_forward(tape.pooled, params)
    tape.probs = softmax(tape.logits)
    return tape.probs, tape


def gru_only_backward(tape: ForwardTape, labels, params: Params, config: ModelConfig, scale: float = 1.0) -> Params:
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dlogits = _dlogits(tape.probs, labels, scale / tape.probs.shape[0])
    dflat = _head_backward(dlogits, tape.flat, params, grads)
    dpool = dflat.reshape(tape.pooled.shape) / config.num_windows
    dh_carry = np.zeros_like(dpool)
    f_dim = config.input_dim
    for t in reversed(range(config.num_windows)):
        df, dh_carry = _gru_cell_backward(dpool + dh_carry, tape.steps[t], params, grads)
        df2 = df.reshape(-1, df.shape[-1])
        grads["w_in"] += tape.x[:, t].reshape(-1, f_dim).T @ df2
        grads["b_in"] += df2.sum(axis=0)
    return grads


register_kind("fnn", init_fnn, fnn_forward, fnn_backward)
register_kind("gcn_only", init_gcn_only, gcn_only_forward, gcn_only_backward)
register_kind("gru_only", init_gru_only, gru_only_forward, gru_only_backward)

_FORWARD = {"fnn": fnn_forward, "gcn_only": gcn_only_forward, "gru_only": gru_only_forward}


def baseline_forward(kind: str, sample, params: Params, config: ModelConfig) -> np.ndarray:
    """Class probabilities of one sample under the given ablation model."""
    if kind not in _FORWARD:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINE_KINDS}")
    probs, _ = _FORWARD[kind](sample.features[None], sample.laplacians[None], params, config)
    return probs[0]


def train_baseline(kind: str, train_set, config: ModelConfig, hyper: TrainHyper = TrainHyper(), progress=None):
    if kind not in _FORWARD:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINE_KINDS}")
    params, history, _ = fit(
        kind, train_set.features, train_set.laplacians, train_set.labels, config, hyper, progress=progress
    )
    return params, history
