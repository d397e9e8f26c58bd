"""Synthetic three-agent search-and-rescue missions.

An open rectangular field holds normal victims (+10 points, one rescuer) and
critical victims (+50 points, two rescuers at once). Each tick every agent
either heads for its target victim (with probability equal to the team's
skill) or takes a random-walk step. A victim is rescued once enough agents
have stayed within ``rescue_radius`` of it for ``dwell_s`` consecutive
seconds. The result is written in the ordinary trace format.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import (
    ROLES,
    PipelineConfig,
    Trace,
    TraceRecord,
    segment_and_window,
    write_manifest,
    write_trace,
)
from .numerics import make_rng

log = logging.getLogger(__name__)

NORMAL_POINTS = 10
CRITICAL_POINTS = 50


class LayoutError(RuntimeError):
    pass


@dataclass
class MissionLayout:
    width: float = 50.0
    height: float = 50.0
    normal_victims: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    critical_victims: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    @property
    def victims(self) -> np.ndarray:
        return np.vstack([self.normal_victims, self.critical_victims])

    @property
    def is_critical(self) -> np.ndarray:
        return np.r_[np.zeros(len(self.normal_victims), bool), np.ones(len(self.critical_victims), bool)]


@dataclass
class TeamPolicy:
    skill: float = 0.5
    # searcher fastest; the radius exceeds every speed, so a single
    # random-walk step from a victim does not always break the dwell
    speeds: dict = field(default_factory=lambda: {"medic": 1.4, "searcher": 2.0, "engineer": 1.2})
    rescue_radius: float = 2.0
    critical_coop_required: int = 2
    dwell_s: float = 3.0
    fov_radius: float = 15.0
    fov_half_angle: float = math.pi / 3

    def __post_init__(self):
        if not 0.0 <= self.skill <= 1.0:
            raise ValueError(f"skill must be in [0, 1], got {self.skill}")
        if any(s <= 0 for s in self.speeds.values()):
            raise ValueError("speeds must be positive")


def generate_mission(
    seed: int,
    width: float = 50.0,
    height: float = 50.0,
    n_normal: int = 50,
    n_critical: int = 5,
    min_separation: float = 1.0,
    max_tries: int = 10_000,
) -> MissionLayout:
    """Uniform victim placement with a minimum pairwise separation (rejection sampling)."""
    rng = make_rng(seed, "layout")
    placed: list[np.ndarray] = []
    tries = 0
    while len(placed) < n_normal + n_critical:
        tries += 1
        if tries > max_tries:
            raise LayoutError(f"could not place {n_normal + n_critical} victims after {max_tries} draws")
        p = rng.uniform((0.0, 0.0), (width, height))
        if placed and np.min(np.hypot(*(np.asarray(placed) - p).T)) <= min_separation:
            continue
        placed.append(p)
    pts = np.asarray(placed).reshape(-1, 2)
    return MissionLayout(width, height, pts[:n_normal], pts[n_normal:])


def wrap_angle(a):
    """Map angles to [-pi, pi)."""
    return (np.asarray(a) + math.pi) % (2 * math.pi) - math.pi


def fov_count(pose, victims, radius_fov: float = 15.0, half_angle: float = math.pi / 3) -> int:
    """Number of ``victims`` inside the view cone at ``pose = (x, y, heading)``.

    Both the range and the angle bound are inclusive. ``victims`` should hold
    only unrescued victims.
    """
    if not 0 < half_angle <= math.pi:
        raise ValueError("half_angle must be in (0, pi]")
    v = np.asarray(victims, dtype=np.float64).reshape(-1, 2)
    if len(v) == 0:
        return 0
    x, y, heading = pose
    d = v - (x, y)
    dist = np.hypot(d[:, 0], d[:, 1])
    offset = np.abs(wrap_angle(np.arctan2(d[:, 1], d[:, 0]) - heading))
    # a victim at the agent's own position has no direction; treat it as seen
    in_cone = (offset <= half_angle + 1e-12) | (dist == 0)
    return int(np.count_nonzero((dist <= radius_fov) & in_cone))


def _assign_targets(pos: np.ndarray, victims: np.ndarray, alive: np.ndarray, critical: np.ndarray, coop: int):
    """Target victim index per agent (-1 when nothing is left)."""
    n_agents = len(pos)
    targets = np.full(n_agents, -1)
    idx = np.flatnonzero(alive)
    if len(idx) == 0:
        return targets
    d = np.hypot(*(pos[:, None, :] - victims[idx][None, :, :]).transpose(2, 0, 1))
    nearest = idx[np.argmin(d, axis=1)]
    assigned = np.zeros(n_agents, bool)
    for c in sorted({int(v) for v in nearest if critical[v]}):
        dc = np.hypot(*(pos - victims[c]).T)
        order = [a for a in np.argsort(dc, kind="stable") if not assigned[a]][:coop]
        targets[order] = c
        assigned[order] = True
    normal_idx = idx[~critical[idx]]
    for a in range(n_agents):
        if assigned[a]:
            continue
        if critical[nearest[a]]:
            # nearest victim is critical but two closer agents took it
            if len(normal_idx):
                dn = np.hypot(*(victims[normal_idx] - pos[a]).T)
                targets[a] = normal_idx[np.argmin(dn)]
            else:
                targets[a] = nearest[a]
        else:
            targets[a] = nearest[a]
    return targets


def simulate_team(
    layout: MissionLayout,
    policy: TeamPolicy,
    duration_s: float = 900,
    tick_s: float = 1.0,
    seed: int = 0,
    roles: tuple[str, ...] = ROLES,
) -> Trace:
    """Run one mission and return its trace (one record per agent per tick)."""
    rng = make_rng(seed, "simulate")
    n_ticks = int(round(duration_s / tick_s))
    victims = layout.victims
    critical = layout.is_critical
    alive = np.ones(len(victims), bool)
    dwell = np.zeros(len(victims))
    speeds = np.array([policy.speeds[r] for r in roles])
    bounds = np.array([layout.width, layout.height])

    start = np.array([layout.width / 2, 1.0])
    pos = np.clip(start + rng.uniform(-1.0, 1.0, size=(len(roles), 2)), 0, bounds)
    heading = np.full(len(roles), math.pi / 2)
    score = 0.0
    records: list[TraceRecord] = []

    def record(t):
        seen = victims[alive]
        for a, role in enumerate(roles):
            n_seen = fov_count((pos[a, 0], pos[a, 1], heading[a]), seen, policy.fov_radius, policy.fov_half_angle)
            records.append(
                TraceRecord(float(t), a, role, float(pos[a, 0]), float(pos[a, 1]), float(heading[a]), n_seen, score)
            )

    record(0.0)
    for tick in range(1, n_ticks):
        targets = _assign_targets(pos, victims, alive, critical, policy.critical_coop_required)
        directed = rng.random(len(roles)) < policy.skill
        walk_angle = rng.uniform(-math.pi, math.pi, size=len(roles))
        max_step = speeds * tick_s
        new_pos = pos.copy()
        for a in range(len(roles)):
            if directed[a] and targets[a] >= 0:
                delta = victims[targets[a]] - pos[a]
                dist = math.hypot(*delta)
                if dist > 0:
                    new_pos[a] = pos[a] + delta * min(1.0, max_step[a] / dist)
            else:
                new_pos[a] = pos[a] + max_step[a] * np.array([math.cos(walk_angle[a]), math.sin(walk_angle[a])])
        new_pos = np.clip(new_pos, 0.0, bounds)
        moved = new_pos - pos
        for a in range(len(roles)):
            if math.hypot(*moved[a]) > 1e-12:
                heading[a] = float(wrap_angle(math.atan2(moved[a, 1], moved[a, 0])))
        pos = new_pos

        near = np.hypot(*(pos[:, None, :] - victims[None, :, :]).transpose(2, 0, 1)) <= policy.rescue_radius
        n_near = near.sum(axis=0)
        need = np.where(critical, policy.critical_coop_required, 1)
        ok = alive & (n_near >= need)
        dwell = np.where(ok, dwell + tick_s, 0.0)
        done = ok & (dwell >= policy.dwell_s - 1e-9)
        if done.any():
            score += NORMAL_POINTS * int(np.count_nonzero(done & ~critical))
            score += CRITICAL_POINTS * int(np.count_nonzero(done & critical))
            alive &= ~done
            dwell[done] = 0.0
        record(tick * tick_s)
    return Trace(records=sorted(records, key=lambda r: (r.agent_id, r.t)))


def bimodal_skill(i: int, n_teams: int, rng: np.random.Generator) -> float:
    """Half the teams draw skill from U[0.1, 0.3], the other half from U[0.7, 0.9]."""
    if i % 2 == 0:
        return float(rng.uniform(0.1, 0.3))
    return float(rng.uniform(0.7, 0.9))


def generate_dataset(
    n_teams: int,
    out_dir,
    seed: int = 0,
    skill_sampler: Callable[[int, int, np.random.Generator], float] = bimodal_skill,
    duration_s: float = 900,
    tick_s: float = 1.0,
    check_cfg: PipelineConfig | None = PipelineConfig(),
    min_minority: float = 0.2,
    max_attempts: int = 5,
    policy_kwargs: dict | None = None,
) -> Path:
    """Simulate ``n_teams`` missions, write one trace per team plus ``manifest.csv``.

    Team ``i`` runs mission ``A`` when ``i`` is even, ``B`` otherwise. When
    ``check_cfg`` is given, the segmented labels must have a minority-class
    fraction of at least ``min_minority``; otherwise skills are redrawn.
    ``policy_kwargs`` overrides :class:`TeamPolicy` fields other than skill.
    Returns the manifest path.
    """
    if n_teams < 2:
        raise ValueError("n_teams must be >= 2")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for attempt in range(max_attempts):
        skill_rng = make_rng(seed, "skills", attempt)
        entries = []
        labels: list[int] = []
        for i in range(n_teams):
            layout = generate_mission(int(make_rng(seed, "team-layout", i).integers(2**63)))
            policy = TeamPolicy(skill=skill_sampler(i, n_teams, skill_rng), **(policy_kwargs or {}))
            trace = simulate_team(layout, policy, duration_s, tick_s, seed=int(make_rng(seed, "team-sim", i, attempt).integers(2**63)))
            mission = "A" if i % 2 == 0 else "B"
            name = f"team_{i:03d}.jsonl"
            trace.source, trace.mission = str(out / name), mission
            write_trace(trace, out / name)
            entries.append((name, mission))
            if check_cfg is not None:
                labels.extend(s.label for s in segment_and_window(trace, check_cfg))
        manifest = out / "manifest.csv"
        write_manifest(entries, manifest)
        if check_cfg is None or not labels:
            return manifest
        frac = float(np.mean(labels))
        if min(frac, 1 - frac) >= min_minority:
            return manifest
        log.warning("minority label fraction %.3f < %.2f; redrawing skills", min(frac, 1 - frac), min_minority)
    raise LayoutError(f"could not reach minority fraction {min_minority} in {max_attempts} attempts")
