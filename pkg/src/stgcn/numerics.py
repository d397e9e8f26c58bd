"""Dense linear algebra helpers, activations, initialization, Adam and a
finite-difference gradient oracle.

Matrices are plain ``numpy.ndarray`` objects in float64. Parameter sets are
ordered ``dict[str, np.ndarray]`` mappings; every function that touches a
parameter set iterates in the mapping's insertion order.

All randomness in the package comes from :func:`make_rng`, which builds a
``numpy.random.Generator`` on the PCG64 bit generator from a root seed plus a
tuple of stream keys (``numpy.random.SeedSequence`` spawn keys). PCG64 output
for a given seed sequence is stable across platforms and numpy releases.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

Params = dict[str, np.ndarray]

ACTIVATIONS = ("sigmoid", "relu", "tanh")


class ShapeError(ValueError):
    """Raised when array shapes are incompatible."""


def _stream_key(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key)


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Deterministic PCG64 generator for ``seed`` and the sub-stream ``keys``.

    String keys are mapped through CRC32 so that call sites can name their
    streams (``make_rng(seed, "init")``, ``make_rng(seed, "team", 3)``).
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_stream_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow in exp for large |x|
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def apply_activation(m: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(m)
    if kind == "relu":
        return relu(m)
    if kind == "tanh":
        return np.tanh(np.asarray(m, dtype=np.float64))
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_grad(pre: np.ndarray, out: np.ndarray, kind: str) -> np.ndarray:
    """Derivative of the activation, given its input ``pre`` and output ``out``."""
    if kind == "sigmoid":
        return out * (1.0 - out)
    if kind == "relu":
        return (pre > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - out * out
    raise ValueError(f"unknown activation {kind!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label) -> tuple[float, np.ndarray]:
    """Cross-entropy of ``softmax(logits)`` against a class index.

    Works for a single logit vector (returns a float loss) or a batch of rows
    with an array of labels (returns per-row losses).
    """
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)
    if z.ndim == 1:
        lab = int(label)
        if not 0 <= lab < z.shape[0]:
            raise ValueError(f"label {label} out of range")
        return float(-log_probs[lab]), probs
    labels = np.asarray(label, dtype=np.int64)
    losses = -log_probs[np.arange(z.shape[0]), labels]
    return losses, probs


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform Glorot initialization in ``±sqrt(6 / (rows + cols))``."""
    if rows < 1 or cols < 1:
        raise ValueError(f"glorot_init needs positive dims, got {rows}x{cols}")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass
class AdamState:
    """First/second moment estimates and step counter for Adam."""

    first_moment: Params
    second_moment: Params
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Params, **kwargs) -> "AdamState":
        return cls(
            first_moment={k: np.zeros_like(v) for k, v in params.items()},
            second_moment={k: np.zeros_like(v) for k, v in params.items()},
            **kwargs,
        )


def adam_step(params: Params, grads: Params, state: AdamState, lr: float) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update. Returns new params and state; inputs are not mutated."""
    if params.keys() != grads.keys() or params.keys() != state.first_moment.keys():
        raise ShapeError(
            f"parameter names differ: params={list(params)} grads={list(grads)} "
            f"state={list(state.first_moment)}"
        )
    t = state.step_count + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params: Params = {}
    new_m: Params = {}
    new_v: Params = {}
    for name, p in params.items():
        g = grads[name]
        m = state.first_moment[name]
        v = state.second_moment[name]
        if g.shape != p.shape or m.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"{name}: param {p.shape}, grad {g.shape}, moments {m.shape}/{v.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_params[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t, b1, b2, eps)


def finite_difference_gradient(
    loss_fn: Callable[[Params], float], params: Params, eps: float = 1e-5
) -> Params:
    """Central-difference gradient of ``loss_fn`` at ``params``, one scalar at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    grads: Params = {}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_fn(work)
            flat[i] = orig - eps
            f_minus = loss_fn(work)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads[name] = g
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Blockwise relative error ``max|a - n| / max(max|a|, max|n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def assert_finite(params: Params, where: str = "") -> None:
    for name, v in params.items():
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite values in {name}{' ' + where if where else ''}")
