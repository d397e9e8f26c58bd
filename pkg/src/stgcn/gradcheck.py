"""Finite-difference verification of the hand-written backward passes."""

from __future__ import annotations

import numpy as np

from .graph import build_snapshot
from .model import MODEL_KINDS, ModelConfig, init_kind_params, loss_and_grad, mean_loss
from .numerics import Params, finite_difference_gradient, make_rng, relative_error

DEFAULT_TOLERANCE = 1e-4


def random_sample(config: ModelConfig, rng: np.random.Generator, batch: int = 1):
    """Standard-normal node features, random agent positions, random labels."""
    k, n, f = config.num_windows, config.num_nodes, config.input_dim
    x = rng.normal(size=(batch, k, n, f))
    lap = np.empty((batch, k, n, n))
    for b in range(batch):
        for t in range(k):
            lap[b, t] = build_snapshot(rng.normal(scale=2.0, size=(n, 2))).laplacian
    labels = rng.integers(0, 2, size=batch)
    return x, lap, labels


def check_gradients(kind: str, config: ModelConfig, seed: int, eps: float = 1e-5) -> dict[str, float]:
    """Per-block relative error between ``backward`` and central differences on one random sample."""
    rng = make_rng(seed, "gradcheck", kind)
    x, lap, labels = random_sample(config, rng)
    params: Params = init_kind_params(kind, config)
    # nonzero biases so their gradients are exercised away from the init point
    for name, v in params.items():
        if v.ndim == 1:
            params[name] = rng.normal(scale=0.1, size=v.shape)
    _, analytic = loss_and_grad(kind, x, lap, labels, params, config)
    numeric = finite_difference_gradient(lambda p: mean_loss(kind, x, lap, labels, p, config), params, eps)
    return {name: relative_error(analytic[name], numeric[name]) for name in params}


def run_suite(seeds, config: ModelConfig, kinds=MODEL_KINDS, eps: float = 1e-5) -> dict[str, dict[str, float]]:
    """Worst per-block error over ``seeds`` for every model kind."""
    out: dict[str, dict[str, float]] = {}
    for kind in kinds:
        worst: dict[str, float] = {}
        for seed in seeds:
            cfg = ModelConfig(**{**config.to_dict(), "seed": int(seed)})
            for name, err in check_gradients(kind, cfg, int(seed), eps).items():
                worst[name] = max(worst.get(name, 0.0), err)
        out[kind] = worst
    return out
