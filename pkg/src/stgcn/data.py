"""Trace ingestion and the segmentation pipeline that turns mission traces
into labeled, fixed-length graph samples.

Trace files are newline-delimited JSON, one record per line, with exactly the
fields ``t, agent_id, role, x, y, heading, fov_victims, team_score``. A
manifest is a CSV file with a ``path,mission`` header; relative paths are
resolved against the manifest's directory.

Node features per window are ordered ``[fov_count, x, y, v, v_x, v_y]``.
``features="fov_only"`` keeps column 0, ``"traj_only"`` keeps columns 1-5.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import GraphSnapshot, adjacency, normalized_laplacian
from .numerics import make_rng

log = logging.getLogger(__name__)

TRACE_FIELDS = ("t", "agent_id", "role", "x", "y", "heading", "fov_victims", "team_score")
ROLES = ("medic", "searcher", "engineer")
NUM_AGENTS = 3
FEATURE_NAMES = ("fov_count", "x", "y", "v", "v_x", "v_y")
FEATURE_MODES = {"both": (0, 1, 2, 3, 4, 5), "fov_only": (0,), "traj_only": (1, 2, 3, 4, 5)}


class DataError(ValueError):
    """Base class for trace and dataset problems."""


class TraceParseError(DataError):
    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


class TraceSchemaError(DataError):
    pass


class TraceValidationError(DataError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    t: float
    agent_id: int
    role: str
    x: float
    y: float
    heading: float
    fov_victims: int
    team_score: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


@dataclass
class Trace:
    """Validated records of one mission run, sorted by agent then time."""

    records: list[TraceRecord]
    source: str = ""
    mission: str = ""

    def agent_ids(self) -> list[int]:
        return sorted({r.agent_id for r in self.records})

    def for_agent(self, agent_id: int) -> list[TraceRecord]:
        return [r for r in self.records if r.agent_id == agent_id]

    def agent_arrays(self, agent_id: int) -> dict[str, np.ndarray]:
        recs = self.for_agent(agent_id)
        return {
            "t": np.array([r.t for r in recs], dtype=np.float64),
            "x": np.array([r.x for r in recs], dtype=np.float64),
            "y": np.array([r.y for r in recs], dtype=np.float64),
            "fov": np.array([r.fov_victims for r in recs], dtype=np.float64),
            "score": np.array([r.team_score for r in recs], dtype=np.float64),
        }

    @property
    def t_first(self) -> float:
        return min(r.t for r in self.records)

    @property
    def t_last(self) -> float:
        return max(r.t for r in self.records)


def _parse_record(obj, line_no: int) -> TraceRecord:
    if not isinstance(obj, dict):
        raise TraceParseError(line_no, "record is not a JSON object")
    keys = set(obj)
    if keys != set(TRACE_FIELDS):
        missing = sorted(set(TRACE_FIELDS) - keys)
        extra = sorted(keys - set(TRACE_FIELDS))
        raise TraceParseError(line_no, f"bad fields (missing {missing}, unexpected {extra})")
    try:
        rec = TraceRecord(
            t=float(obj["t"]),
            agent_id=int(obj["agent_id"]),
            role=str(obj["role"]),
            x=float(obj["x"]),
            y=float(obj["y"]),
            heading=float(obj["heading"]),
            fov_victims=int(obj["fov_victims"]),
            team_score=float(obj["team_score"]),
        )
    except (TypeError, ValueError) as exc:
        raise TraceParseError(line_no, f"bad value: {exc}") from None
    if isinstance(obj["agent_id"], float) or isinstance(obj["fov_victims"], float):
        raise TraceParseError(line_no, "agent_id and fov_victims must be integers")
    for name in ("t", "x", "y", "heading", "team_score"):
        if not math.isfinite(getattr(rec, name)):
            raise TraceValidationError(f"line {line_no}: {name} is not finite")
    if rec.agent_id not in range(NUM_AGENTS):
        raise TraceValidationError(f"line {line_no}: agent_id {rec.agent_id} not in 0..{NUM_AGENTS - 1}")
    if rec.role not in ROLES:
        raise TraceValidationError(f"line {line_no}: unknown role {rec.role!r}")
    if rec.fov_victims < 0:
        raise TraceValidationError(f"line {line_no}: fov_victims must be >= 0, got {rec.fov_victims}")
    if rec.team_score < 0:
        raise TraceValidationError(f"line {line_no}: team_score must be >= 0")
    if not -math.pi <= rec.heading < math.pi:
        raise TraceValidationError(f"line {line_no}: heading {rec.heading} outside [-pi, pi)")
    return rec


def parse_trace(lines: Iterable[str], source: str = "", mission: str = "") -> Trace:
    """Parse and validate newline-delimited trace records (blank lines ignored)."""
    records = []
    last_t: dict[int, float] = {}
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceParseError(line_no, f"invalid JSON ({exc.msg})") from None
        rec = _parse_record(obj, line_no)
        prev = last_t.get(rec.agent_id)
        if prev is not None and rec.t <= prev:
            raise TraceValidationError(
                f"line {line_no}: time for agent {rec.agent_id} not increasing ({rec.t} after {prev})"
            )
        last_t[rec.agent_id] = rec.t
        records.append(rec)
    missing = sorted(set(range(NUM_AGENTS)) - set(last_t))
    if missing:
        raise TraceSchemaError(f"trace {source or '<stream>'}: missing agents {missing}")
    by_time = sorted(records, key=lambda r: r.t)
    for a, b in zip(by_time, by_time[1:]):
        if b.t > a.t and b.team_score < a.team_score:
            raise TraceValidationError(f"team_score decreases at t={b.t} ({a.team_score} -> {b.team_score})")
    records.sort(key=lambda r: (r.agent_id, r.t))
    return Trace(records, source=source, mission=mission)


def read_trace(path, mission: str = "") -> Trace:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh, source=str(path), mission=mission)


def write_trace(trace: Trace, path) -> None:
    recs = sorted(trace.records, key=lambda r: (r.t, r.agent_id))
    with open(path, "w", encoding="utf-8") as fh:
        for r in recs:
            fh.write(r.to_json())
            fh.write("\n")


def read_manifest(path) -> list[tuple[Path, str]]:
    path = Path(path)
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["path", "mission"]:
            raise TraceSchemaError(f"{path}: manifest header must be 'path,mission', got {reader.fieldnames}")
        for row in reader:
            if row["mission"] not in ("A", "B"):
                raise TraceSchemaError(f"{path}: mission tag must be A or B, got {row['mission']!r}")
            p = Path(row["path"])
            out.append((p if p.is_absolute() else path.parent / p, row["mission"]))
    return out


def write_manifest(entries: Sequence[tuple[str, str]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "mission"])
        for p, m in entries:
            w.writerow([p, m])


def compute_velocities(trace: Trace) -> dict[int, np.ndarray]:
    """Backward-difference velocities per agent as an array of ``(v_x, v_y, v)`` rows.

    The first record of every agent gets zero velocity.
    """
    out = {}
    for agent in trace.agent_ids():
        arr = trace.agent_arrays(agent)
        t = arr["t"]
        if len(t) < 2:
            raise TraceValidationError(f"agent {agent} needs at least 2 records for velocities")
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise TraceValidationError(f"agent {agent} has duplicate or decreasing timestamps")
        vel = np.zeros((len(t), 3))
        vel[1:, 0] = np.diff(arr["x"]) / dt
        vel[1:, 1] = np.diff(arr["y"]) / dt
        vel[:, 2] = np.hypot(vel[:, 0], vel[:, 1])
        out[agent] = vel
    return out


def label_segment(points_delta: float, threshold: float = 10) -> int:
    """1 (high performance) iff ``points_delta >= threshold``."""
    if points_delta < 0:
        raise ValueError(f"points_delta must be >= 0, got {points_delta}")
    return int(points_delta >= threshold)


@dataclass(frozen=True)
class PipelineConfig:
    segment_len_s: float = 30
    window_interval_s: float = 2
    threshold_points: float = 10
    features: str = "both"
    split_ratio: float = 0.8
    seed: int = 0
    distance_scale: float = 1.0
    degree_from: str = "self_loops"
    normalize_positions: bool = False

    def __post_init__(self):
        if self.window_interval_s <= 0 or self.segment_len_s <= 0:
            raise DataError("segment_len_s and window_interval_s must be positive")
        k = self.segment_len_s / self.window_interval_s
        if abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise DataError(
                f"segment_len_s ({self.segment_len_s}) must be an integer multiple of "
                f"window_interval_s ({self.window_interval_s})"
            )
        if self.features not in FEATURE_MODES:
            raise DataError(f"features must be one of {sorted(FEATURE_MODES)}, got {self.features!r}")
        if not 0 < self.split_ratio < 1:
            raise DataError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.degree_from not in ("self_loops", "adjacency"):
            raise DataError(f"degree_from must be 'self_loops' or 'adjacency', got {self.degree_from!r}")

    @property
    def num_windows(self) -> int:
        return int(round(self.segment_len_s / self.window_interval_s))

    @property
    def feature_dim(self) -> int:
        return len(FEATURE_MODES[self.features])


@dataclass
class Sample:
    """One segment: K windows of node features and graph matrices plus a label."""

    features: np.ndarray  # (K, N, F)
    adjacencies: np.ndarray | None  # (K, N, N); None when rebuilt from a Dataset
    laplacians: np.ndarray  # (K, N, N)
    label: int
    segment_start: float = 0.0
    source_trace: str = ""
    points_delta: float = 0.0
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        k = self.features.shape[0]
        if self.features.ndim != 3 or self.laplacians.shape[0] != k or (
            self.adjacencies is not None and self.adjacencies.shape[0] != k
        ):
            raise DataError("sample windows disagree on K")
        if not np.all(np.isfinite(self.features)):
            raise DataError("sample features must be finite")
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label}")

    @property
    def num_windows(self) -> int:
        return self.features.shape[0]

    @property
    def snapshots(self) -> list[GraphSnapshot]:
        ts = self.timestamps if self.timestamps is not None else np.zeros(self.num_windows)
        if self.adjacencies is None:
            raise DataError("sample carries no adjacency matrices")
        return [GraphSnapshot(a, lap, float(t)) for a, lap, t in zip(self.adjacencies, self.laplacians, ts)]


def _locf_index(t: np.ndarray, instant: float) -> int:
    """Index of the latest record with time <= instant, or -1."""
    return int(np.searchsorted(t, instant, side="right")) - 1


def segment_and_window(trace: Trace, cfg: PipelineConfig) -> list[Sample]:
    """Cut a trace into non-overlapping labeled segments.

    Segments start at the first timestamp and advance by ``segment_len_s``; a
    segment is emitted when its last sampling instant lies within the trace.
    At each instant every agent contributes its latest record at or before it.
    """
    agents = trace.agent_ids()
    arrays = {a: trace.agent_arrays(a) for a in agents}
    vels = compute_velocities(trace)
    k = cfg.num_windows
    dt = cfg.window_interval_s
    seg = cfg.segment_len_s
    t0, t_end = trace.t_first, trace.t_last
    cols = FEATURE_MODES[cfg.features]

    all_t = np.array(sorted(r.t for r in trace.records))
    all_score = np.maximum.accumulate(np.array([r.team_score for r in sorted(trace.records, key=lambda r: r.t)]))

    def score_at(instant: float) -> float:
        i = _locf_index(all_t, instant)
        return float(all_score[i]) if i >= 0 else 0.0

    if cfg.normalize_positions:
        xs = np.concatenate([arrays[a]["x"] for a in agents])
        ys = np.concatenate([arrays[a]["y"] for a in agents])
        x_lo, x_span = xs.min(), max(xs.max() - xs.min(), 1e-12)
        y_lo, y_span = ys.min(), max(ys.max() - ys.min(), 1e-12)

    samples: list[Sample] = []
    n_segments = 0
    start = t0
    while start + (k - 1) * dt <= t_end + 1e-9:
        n_segments += 1
        instants = start + dt * np.arange(k)
        feats = np.zeros((k, len(agents), len(FEATURE_NAMES)))
        skip = None
        for j, a in enumerate(agents):
            arr = arrays[a]
            for i, inst in enumerate(instants):
                idx = _locf_index(arr["t"], inst)
                if idx < 0 or inst - arr["t"][idx] > seg:
                    skip = f"agent {a} has no record within {seg}s before t={inst:g}"
                    break
                vx, vy, v = vels[a][idx]
                feats[i, j] = (arr["fov"][idx], arr["x"][idx], arr["y"][idx], v, vx, vy)
            if skip:
                break
        if skip:
            log.warning("%s: skipping segment at t=%g: %s", trace.source or "trace", start, skip)
            start += seg
            continue
        positions = feats[:, :, 1:3].copy()
        if cfg.normalize_positions:
            feats[:, :, 1] = (feats[:, :, 1] - x_lo) / x_span
            feats[:, :, 2] = (feats[:, :, 2] - y_lo) / y_span
        adj = np.stack([adjacency(p, cfg.distance_scale) for p in positions])
        lap = np.stack([normalized_laplacian(a, cfg.degree_from) for a in adj])
        delta = score_at(start + seg) - score_at(start)
        samples.append(
            Sample(
                features=feats[:, :, cols],
                adjacencies=adj,
                laplacians=lap,
                label=label_segment(delta, cfg.threshold_points),
                segment_start=float(start),
                source_trace=trace.source,
                points_delta=delta,
                timestamps=instants,
            )
        )
        start += seg
    if n_segments == 0:
        log.warning("%s: trace shorter than one %gs segment; no samples", trace.source or "trace", seg)
    return samples


@dataclass
class Dataset:
    """Stacked samples, ready for batched training."""

    features: np.ndarray  # (n, K, N, F)
    laplacians: np.ndarray  # (n, K, N, N)
    labels: np.ndarray  # (n,)
    segment_starts: np.ndarray = field(default=None)
    sources: np.ndarray = field(default=None)
    missions: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.labels)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.segment_starts is None:
            self.segment_starts = np.zeros(n)
        if self.sources is None:
            self.sources = np.array([""] * n)
        if self.missions is None:
            self.missions = np.array([""] * n)
        if not (len(self.features) == len(self.laplacians) == n == len(self.sources)):
            raise DataError("dataset arrays disagree on sample count")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], missions: Sequence[str] | None = None) -> "Dataset":
        if not samples:
            raise DataError("no samples")
        return cls(
            features=np.stack([s.features for s in samples]),
            laplacians=np.stack([s.laplacians for s in samples]),
            labels=np.array([s.label for s in samples]),
            segment_starts=np.array([s.segment_start for s in samples]),
            sources=np.array([s.source_trace for s in samples]),
            missions=np.array(list(missions) if missions is not None else [""] * len(samples)),
        )

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.laplacians[idx],
            self.labels[idx],
            self.segment_starts[idx],
            self.sources[idx],
            self.missions[idx],
        )

    def sample(self, i: int) -> Sample:
        return Sample(
            features=self.features[i],
            adjacencies=None,
            laplacians=self.laplacians[i],
            label=int(self.labels[i]),
            segment_start=float(self.segment_starts[i]),
            source_trace=str(self.sources[i]),
        )


def split_dataset(samples, ratio: float = 0.8, seed: int = 0):
    """Seeded shuffle, then the first ``ceil(ratio * n)`` items train and the rest test.

    Accepts a list of samples (returns two lists) or a :class:`Dataset`
    (returns two datasets).
    """
    n = len(samples)
    if n < 2:
        raise DataError(f"need at least 2 samples to split, got {n}")
    if not 0 < ratio < 1:
        raise DataError(f"ratio must be in (0, 1), got {ratio}")
    perm = make_rng(seed, "split").permutation(n)
    n_train = min(max(math.ceil(ratio * n - 1e-9), 1), n - 1)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    if isinstance(samples, Dataset):
        return samples.subset(tr), samples.subset(te)
    return [samples[i] for i in tr], [samples[i] for i in te]


def build_dataset(manifest_path, cfg: PipelineConfig) -> Dataset:
    """Parse every trace in a manifest and segment it."""
    samples: list[Sample] = []
    missions: list[str] = []
    for path, mission in read_manifest(manifest_path):
        segs = segment_and_window(read_trace(path, mission), cfg)
        samples.extend(segs)
        missions.extend([mission] * len(segs))
    return Dataset.from_samples(samples, missions)


def save_prepared(path, train: Dataset, test: Dataset, cfg: PipelineConfig) -> None:
    arrays = {}
    for prefix, ds in (("train", train), ("test", test)):
        arrays[f"{prefix}_features"] = ds.features
        arrays[f"{prefix}_laplacians"] = ds.laplacians
        arrays[f"{prefix}_labels"] = ds.labels
        arrays[f"{prefix}_segment_starts"] = ds.segment_starts
        arrays[f"{prefix}_sources"] = ds.sources.astype(str)
        arrays[f"{prefix}_missions"] = ds.missions.astype(str)
    arrays["pipeline"] = np.array(json.dumps(asdict(cfg), sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_prepared(path) -> tuple[Dataset, Dataset, PipelineConfig]:
    with np.load(path, allow_pickle=False) as z:
        parts = []
        for prefix in ("train", "test"):
            parts.append(
                Dataset(
                    z[f"{prefix}_features"],
                    z[f"{prefix}_laplacians"],
                    z[f"{prefix}_labels"],
                    z[f"{prefix}_segment_starts"],
                    z[f"{prefix}_sources"],
                    z[f"{prefix}_missions"],
                )
            )
        cfg = PipelineConfig(**json.loads(str(z["pipeline"])))
    return parts[0], parts[1], cfg


def trace_from_text(text: str) -> Trace:
    return parse_trace(io.StringIO(text))
