"""ST-GCN: two-layer GCN per window, a node-wise GRU across windows, global
average pooling over the window outputs and a linear softmax head.

All forward/backward routines work on batches:

* ``x``   -- node features, shape ``(B, K, N, F)``
* ``lap`` -- normalized propagation matrices, shape ``(B, K, N, N)``

Gradients are derived by hand (backpropagation through time across the K
recurrent steps and through both graph layers in every window) and are
verified against central finite differences in the test suite.

Parameter names and shapes for hidden width ``H``, input width ``F`` and
``N`` nodes::

    theta0  (F, H)      first graph layer
    theta1  (H, H)      second graph layer
    theta_r (2H, H)     reset gate,  bias b_r (H,)
    theta_u (2H, H)     update gate, bias b_u (H,)
    theta_c (2H, H)     candidate,   bias b_c (H,)
    w_out   (N*H, 2)    classifier head, bias b_out (2,)

The classifier input is the pooled hidden state flattened node-major
(node 0's H features, then node 1, ...).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .numerics import (
    AdamState,
    Params,
    ShapeError,
    activation_grad,
    adam_step,
    apply_activation,
    assert_finite,
    glorot_init,
    make_rng,
    sigmoid,
    softmax,
)

log = logging.getLogger(__name__)

MODEL_KINDS = ("stgcn", "fnn", "gcn_only", "gru_only")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 6
    hidden_dim: int = 32
    num_nodes: int = 3
    num_windows: int = 15
    num_classes: int = 2
    gcn_output_activation: str = "sigmoid"
    seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "num_nodes", "num_windows"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_classes != 2:
            raise ConfigError(f"num_classes is fixed at 2, got {self.num_classes}")
        if self.gcn_output_activation not in ("sigmoid", "relu"):
            raise ConfigError(
                f"gcn_output_activation must be 'sigmoid' or 'relu', got {self.gcn_output_activation!r}"
            )
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.0001
    batch: int = 64
    iterations: int = 1000
    log_every: int = 50


# --------------------------------------------------------------------------
# building blocks


def gcn_forward(x: np.ndarray, laplacian: np.ndarray, params: Params, activation: str = "sigmoid") -> np.ndarray:
    """``act(L @ relu(L @ X @ theta0) @ theta1)`` for one window or a batch."""
    out, _ = _gcn_layer(np.asarray(x, dtype=np.float64), np.asarray(laplacian, dtype=np.float64), params, activation)
    return out


def _gcn_layer(x, lap, params, activation):
    theta0, theta1 = params["theta0"], params["theta1"]
    if x.shape[-1] != theta0.shape[0] or lap.shape[-1] != x.shape[-2]:
        raise ShapeError(f"gcn: x {x.shape}, laplacian {lap.shape}, theta0 {theta0.shape}")
    lx = lap @ x
    p1 = lx @ theta0
    z1 = np.maximum(p1, 0.0)
    lz = lap @ z1
    p2 = lz @ theta1
    out = apply_activation(p2, activation)
    return out, (lap, lx, p1, z1, lz, p2, out)


def _gcn_layer_backward(dout, cache, params, activation, grads):
    lap, lx, p1, z1, lz, p2, out = cache
    dp2 = dout * activation_grad(p2, out, activation)
    h = dp2.shape[-1]
    grads["theta1"] += lz.reshape(-1, lz.shape[-1]).T @ dp2.reshape(-1, h)
    dz1 = np.swapaxes(lap, -1, -2) @ (dp2 @ params["theta1"].T)
    dp1 = dz1 * (p1 > 0)
    grads["theta0"] += lx.reshape(-1, lx.shape[-1]).T @ dp1.reshape(-1, dp1.shape[-1])


def gru_cell(f_t: np.ndarray, h_prev: np.ndarray, params: Params):
    """Node-wise GRU step with shared weights.

    Returns ``(h_t, cache)``; ``cache`` holds the gate values ``r``, ``u``,
    the candidate ``c`` and the concatenated inputs needed for the backward pass.
    """
    hid = h_prev.shape[-1]
    if f_t.shape[-1] + hid != params["theta_r"].shape[0]:
        raise ShapeError(f"gru: input {f_t.shape}, state {h_prev.shape}, theta_r {params['theta_r'].shape}")
    g = np.concatenate([f_t, h_prev], axis=-1)
    r = sigmoid(g @ params["theta_r"] + params["b_r"])
    u = sigmoid(g @ params["theta_u"] + params["b_u"])
    gc = np.concatenate([f_t, r * h_prev], axis=-1)
    c = np.tanh(gc @ params["theta_c"] + params["b_c"])
    h = u * h_prev + (1.0 - u) * c
    return h, {"g": g, "gc": gc, "r": r, "u": u, "c": c, "h_prev": h_prev}


def _gru_cell_backward(dh, cache, params, grads):
    """Returns ``(d f_t, d h_prev)`` and accumulates weight gradients into ``grads``."""
    r, u, c, h_prev, g, gc = cache["r"], cache["u"], cache["c"], cache["h_prev"], cache["g"], cache["gc"]
    hid = h_prev.shape[-1]
    du = dh * (h_prev - c)
    dc = dh * (1.0 - u)
    dh_prev = dh * u

    dac = dc * (1.0 - c * c)
    dac2 = dac.reshape(-1, hid)
    grads["theta_c"] += gc.reshape(-1, gc.shape[-1]).T @ dac2
    grads["b_c"] += dac2.sum(axis=0)
    dgc = dac @ params["theta_c"].T
    df = dgc[..., :-hid].copy()
    drh = dgc[..., -hid:]
    dr = drh * h_prev
    dh_prev += drh * r

    dau = du * u * (1.0 - u)
    dar = dr * r * (1.0 - r)
    g2 = g.reshape(-1, g.shape[-1])
    dau2 = dau.reshape(-1, hid)
    dar2 = dar.reshape(-1, hid)
    grads["theta_u"] += g2.T @ dau2
    grads["b_u"] += dau2.sum(axis=0)
    grads["theta_r"] += g2.T @ dar2
    grads["b_r"] += dar2.sum(axis=0)
    dg = dau @ params["theta_u"].T + dar @ params["theta_r"].T
    df += dg[..., :-hid]
    dh_prev += dg[..., -hid:]
    return df, dh_prev


def _head_forward(pooled, params):
    flat = pooled.reshape(pooled.shape[0], -1)
    logits = flat @ params["w_out"] + params["b_out"]
    return flat, logits


def _head_backward(dlogits, flat, params, grads):
    grads["w_out"] += flat.T @ dlogits
    grads["b_out"] += dlogits.sum(axis=0)
    return dlogits @ params["w_out"].T


def init_gru_params(in_dim: int, hidden: int, rng) -> Params:
    return {
        "theta_r": glorot_init(in_dim + hidden, hidden, rng),
        "theta_u": glorot_init(in_dim + hidden, hidden, rng),
        "theta_c": glorot_init(in_dim + hidden, hidden, rng),
        "b_r": np.zeros(hidden),
        "b_u": np.zeros(hidden),
        "b_c": np.zeros(hidden),
    }


# --------------------------------------------------------------------------
# ST-GCN


@dataclass
class ForwardTape:
    """Intermediates of one batched forward pass."""

    x: np.ndarray
    lap: np.ndarray
    steps: list = field(default_factory=list)
    pooled: np.ndarray | None = None
    flat: np.ndarray | None = None
    logits: np.ndarray | None = None
    probs: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def init_params(config: ModelConfig, rng: np.random.Generator | None = None) -> Params:
    """Glorot-uniform weights, zero biases."""
    if rng is None:
        rng = make_rng(config.seed, "init", "stgcn")
    f, h, n = config.input_dim, config.hidden_dim, config.num_nodes
    params = {"theta0": glorot_init(f, h, rng), "theta1": glorot_init(h, h, rng)}
    params.update(init_gru_params(h, h, rng))
    params["w_out"] = glorot_init(n * h, 2, rng)
    params["b_out"] = np.zeros(2)
    return params


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    f, h, n = config.input_dim, config.hidden_dim, config.num_nodes
    return {
        "theta0": (f, h),
        "theta1": (h, h),
        "theta_r": (2 * h, h),
        "theta_u": (2 * h, h),
        "theta_c": (2 * h, h),
        "b_r": (h,),
        "b_u": (h,),
        "b_c": (h,),
        "w_out": (n * h, 2),
        "b_out": (2,),
    }


def check_batch(x, lap, config: ModelConfig):
    x = np.asarray(x, dtype=np.float64)
    lap = np.asarray(lap, dtype=np.float64)
    k, n, f = config.num_windows, config.num_nodes, config.input_dim
    if x.ndim != 4 or x.shape[1:] != (k, n, f):
        raise ShapeError(f"expected node features (B, {k}, {n}, {f}), got {x.shape}")
    if lap.shape != x.shape[:2] + (n, n):
        raise ShapeError(f"expected laplacians {x.shape[:2] + (n, n)}, got {lap.shape}")
    return x, lap


def forward_batch(x, lap, params: Params, config: ModelConfig) -> tuple[np.ndarray, ForwardTape]:
    x, lap = check_batch(x, lap, config)
    b = x.shape[0]
    act = config.gcn_output_activation
    tape = ForwardTape(x=x, lap=lap)
    h = np.zeros((b, config.num_nodes, config.hidden_dim))
    total = np.zeros_like(h)
    for t in range(config.num_windows):
        f_t, gcn_cache = _gcn_layer(x[:, t], lap[:, t], params, act)
        h, gru_cache = gru_cell(f_t, h, params)
        total += h
        tape.steps.append((gcn_cache, gru_cache))
    tape.pooled = total / config.num_windows
    tape.flat, tape.logits = _head_forward(tape.pooled, params)
    tape.probs = softmax(tape.logits)
    return tape.probs, tape


def backward_batch(tape: ForwardTape, labels, params: Params, config: ModelConfig, scale: float = 1.0) -> Params:
    """Gradient of ``scale * mean_b loss_b`` with respect to every parameter."""
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    b = tape.probs.shape[0]
    dlogits = _dlogits(tape.probs, labels, scale / b)
    dflat = _head_backward(dlogits, tape.flat, params, grads)
    dpool = dflat.reshape(tape.pooled.shape) / config.num_windows
    dh_carry = np.zeros_like(dpool)
    for t in reversed(range(config.num_windows)):
        gcn_cache, gru_cache = tape.steps[t]
        df, dh_carry = _gru_cell_backward(dpool + dh_carry, gru_cache, params, grads)
        _gcn_layer_backward(df, gcn_cache, params, config.gcn_output_activation, grads)
    return grads


def _dlogits(probs, labels, weight):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    d = probs.copy()
    d[np.arange(d.shape[0]), labels] -= 1.0
    return d * weight


def batch_loss(probs, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    p = probs[np.arange(probs.shape[0]), labels]
    return -np.log(np.maximum(p, np.finfo(np.float64).tiny))


def forward(sample, params: Params, config: ModelConfig):
    """Single-sample forward. Returns ``(probs[2], tape)``."""
    probs, tape = forward_batch(sample.features[None], sample.laplacians[None], params, config)
    return probs[0], tape


def backward(tape: ForwardTape, label, params: Params, config: ModelConfig, scale: float = 1.0) -> Params:
    return backward_batch(tape, np.atleast_1d(label), params, config, scale)


def loss(probs, label) -> float:
    """``-log probs[label]``."""
    if int(label) not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    return float(batch_loss(np.asarray(probs, dtype=np.float64)[None], [label])[0])


def predict(sample, params: Params, config: ModelConfig, kind: str = "stgcn") -> tuple[int, float]:
    """Returns ``(label, prob_high)``; an exact 0.5 tie resolves to class 0."""
    fwd = get_kind(kind)[1]
    probs, _ = fwd(sample.features[None], sample.laplacians[None], params, config)
    return int(probs[0, 1] > probs[0, 0]), float(probs[0, 1])


def predict_batch(x, lap, params: Params, config: ModelConfig, kind: str = "stgcn", chunk: int = 256):
    fwd = get_kind(kind)[1]
    out = []
    for i in range(0, len(x), chunk):
        probs, _ = fwd(x[i : i + chunk], lap[i : i + chunk], params, config)
        out.append(probs)
    probs = np.concatenate(out) if out else np.zeros((0, 2))
    return (probs[:, 1] > probs[:, 0]).astype(np.int64), probs[:, 1]


# --------------------------------------------------------------------------
# model registry and trainer

_KINDS: dict[str, tuple[Callable, Callable, Callable]] = {
    "stgcn": (init_params, forward_batch, backward_batch),
}


def register_kind(name: str, init_fn: Callable, forward_fn: Callable, backward_fn: Callable) -> None:
    _KINDS[name] = (init_fn, forward_fn, backward_fn)


def get_kind(kind: str):
    if kind not in _KINDS:
        from . import baselines  # noqa: F401  registers the ablation models
    if kind not in _KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    return _KINDS[kind]


def init_kind_params(kind: str, config: ModelConfig) -> Params:
    init_fn = get_kind(kind)[0]
    return init_fn(config, make_rng(config.seed, "init", kind))


def loss_and_grad(kind: str, x, lap, labels, params: Params, config: ModelConfig):
    _, fwd, bwd = get_kind(kind)
    probs, tape = fwd(x, lap, params, config)
    return float(batch_loss(probs, labels).mean()), bwd(tape, labels, params, config)


def mean_loss(kind: str, x, lap, labels, params: Params, config: ModelConfig) -> float:
    probs, _ = get_kind(kind)[1](x, lap, params, config)
    return float(batch_loss(probs, labels).mean())


def _batch_order(n: int, batch: int, iterations: int, rng: np.random.Generator):
    """Yield index arrays: consecutive slices of a permutation, reshuffled per epoch pass."""
    batch = min(batch, n)
    perm = rng.permutation(n)
    pos = 0
    for _ in range(iterations):
        if pos + batch > n:
            perm = rng.permutation(n)
            pos = 0
        yield perm[pos : pos + batch]
        pos += batch


def fit(
    kind: str,
    x,
    lap,
    labels,
    config: ModelConfig,
    hyper: TrainHyper = TrainHyper(),
    params: Params | None = None,
    progress: Callable[[int, float], None] | None = None,
):
    """Minibatch Adam on mean cross-entropy. Returns ``(params, history, grad_norms)``.

    ``history[i]`` is the mean loss of the minibatch used at iteration ``i``,
    evaluated before that iteration's update.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ConfigError("training set is empty")
    if len(np.unique(labels)) < 2:
        raise ConfigError("training set must contain both classes")
    x, lap = check_batch(x, lap, config)
    if params is None:
        params = init_kind_params(kind, config)
    state = AdamState.zeros_like(params)
    rng = make_rng(config.seed, "shuffle", kind)
    history = np.empty(hyper.iterations)
    grad_norms = np.empty(hyper.iterations)
    for it, idx in enumerate(_batch_order(n, hyper.batch, hyper.iterations, rng)):
        value, grads = loss_and_grad(kind, x[idx], lap[idx], labels[idx], params, config)
        history[it] = value
        grad_norms[it] = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        params, state = adam_step(params, grads, state, hyper.lr)
        if progress is not None and hyper.log_every and (it + 1) % hyper.log_every == 0:
            progress(it + 1, value)
    assert_finite(params, "after training")
    return params, history, grad_norms


def train(train_set, config: ModelConfig, hyper: TrainHyper = TrainHyper(), progress=None):
    """Train ST-GCN on a :class:`~stgcn.data.Dataset`. Returns ``(params, history)``."""
    params, history, _ = fit(
        "stgcn", train_set.features, train_set.laplacians, train_set.labels, config, hyper, progress=progress
    )
    return params, history
