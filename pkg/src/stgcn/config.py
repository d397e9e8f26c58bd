"""Run configuration and checkpoint (de)serialization.

Config files are single JSON objects whose keys are :class:`RunConfig` field
names; unknown keys are rejected. ``num_windows`` may appear (it is written by
:meth:`RunConfig.to_dict`) but must equal ``segment_len_s / window_interval_s``.

Checkpoint format (``format_version`` 1), one JSON object::

    {
      "format_version": 1,
      "model_kind": "stgcn" | "fnn" | "gcn_only" | "gru_only",
      "config":   {ModelConfig fields},
      "pipeline": {PipelineConfig fields},
      "params":   {name: nested row-major lists of floats, ...},
      "seed": int,
      "trained_iterations": int
    }

Floats are written with Python's shortest round-trip ``repr``, so loading a
checkpoint restores every parameter bit-for-bit and re-saving reproduces
the same bytes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .data import PipelineConfig
from .model import MODEL_KINDS, ConfigError, ModelConfig, TrainHyper, get_kind
from .numerics import Params

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model_kind: str = "stgcn"
    seed: int = 0
    # optimization
    lr: float = 0.0001
    batch: int = 64
    iterations: int = 1000
    # model
    hidden_dim: int = 32
    gcn_output_activation: str = "sigmoid"
    # pipeline
    segment_len_s: float = 30
    window_interval_s: float = 2
    threshold_points: float = 10
    features: str = "both"
    split_ratio: float = 0.8
    distance_scale: float = 1.0
    degree_from: str = "self_loops"
    normalize_positions: bool = False
    # paths
    data: str | None = None
    checkpoint: str | None = None
    report: str | None = None

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.batch < 1 or self.iterations < 0:
            raise ConfigError("batch must be >= 1 and iterations >= 0")
        # delegate the remaining checks
        self.pipeline_config()
        self.model_config()

    @property
    def num_windows(self) -> int:
        return self.pipeline_config().num_windows

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            segment_len_s=self.segment_len_s,
            window_interval_s=self.window_interval_s,
            threshold_points=self.threshold_points,
            features=self.features,
            split_ratio=self.split_ratio,
            seed=self.seed,
            distance_scale=self.distance_scale,
            degree_from=self.degree_from,
            normalize_positions=self.normalize_positions,
        )

    def model_config(self) -> ModelConfig:
        pipe = self.pipeline_config()
        return ModelConfig(
            input_dim=pipe.feature_dim,
            hidden_dim=self.hidden_dim,
            num_nodes=3,
            num_windows=pipe.num_windows,
            gcn_output_activation=self.gcn_output_activation,
            seed=self.seed,
        )

    def hyper(self) -> TrainHyper:
        return TrainHyper(lr=self.lr, batch=self.batch, iterations=self.iterations)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["num_windows"] = self.num_windows
        return d


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def config_from_dict(d: dict) -> RunConfig:
    d = dict(d)
    unknown = sorted(set(d) - _FIELD_NAMES - {"num_windows"})
    if unknown:
        raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
    k = d.pop("num_windows", None)
    cfg = RunConfig(**d)
    if k is not None and int(k) != cfg.num_windows:
        raise ConfigError(
            f"num_windows={k} disagrees with segment_len_s/window_interval_s={cfg.num_windows}"
        )
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(d)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")


def checkpoint_dict(
    kind: str, params: Params, model_cfg: ModelConfig, pipe_cfg: PipelineConfig, seed: int, trained_iterations: int
) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "model_kind": kind,
        "config": model_cfg.to_dict(),
        "pipeline": asdict(pipe_cfg),
        "params": {name: np.asarray(v, dtype=np.float64).tolist() for name, v in params.items()},
        "seed": int(seed),
        "trained_iterations": int(trained_iterations),
    }


def save_checkpoint(path, kind, params, model_cfg, pipe_cfg, seed, trained_iterations) -> None:
    doc = checkpoint_dict(kind, params, model_cfg, pipe_cfg, seed, trained_iterations)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


@dataclass
class Checkpoint:
    model_kind: str
    params: Params
    model_config: ModelConfig
    pipeline: PipelineConfig
    seed: int
    trained_iterations: int


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: invalid JSON ({exc.msg})") from None
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format_version {version!r} is incompatible (expected {FORMAT_VERSION})")
    expected = {"format_version", "model_kind", "config", "pipeline", "params", "seed", "trained_iterations"}
    if set(doc) != expected:
        raise CheckpointError(f"{path}: checkpoint fields {sorted(doc)} != {sorted(expected)}")
    kind = doc["model_kind"]
    if kind not in MODEL_KINDS:
        raise CheckpointError(f"{path}: unknown model_kind {kind!r}")
    model_cfg = ModelConfig(**doc["config"])
    pipe_cfg = PipelineConfig(**doc["pipeline"])
    params = {name: np.array(v, dtype=np.float64) for name, v in doc["params"].items()}
    init_fn = get_kind(kind)[0]
    ref = init_fn(model_cfg, np.random.default_rng(0))
    if list(ref) != list(params) or any(ref[k].shape != params[k].shape for k in ref):
        raise CheckpointError(f"{path}: parameter names/shapes do not match a {kind} model with this config")
    return Checkpoint(kind, params, model_cfg, pipe_cfg, int(doc["seed"]), int(doc["trained_iterations"]))

