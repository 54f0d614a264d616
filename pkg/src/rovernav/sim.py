"""Closed-loop scenario runner: sense, fuse, replan, pick an arc, drive."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .clustering import cluster_regions
from .features import FeatureConfig, grid_features, render_topdown
from .fusion import collect_cost_samples, init_global_costmap, update_global_costmap
from .global_planner import C_BASE, UnreachableError, plan_global
from .kinematics import RoverState, step_rover, world_to_body, wrap_angle
from .local_planner import arcs_to_csv, evaluate_arc, generate_arcs, lookahead_target, select_arc
from .sensor import CameraModel, sense
from .terrain import ScenarioSpec, TerrainModel, generate_terrain

__all__ = ["SimConfig", "RunMetrics", "CollisionReport", "RunResult", "step_rover",
           "check_collision", "run_scenario"]

log = logging.getLogger(__name__)

MODES = ("baseline", "replan")
CONTACT_TOL = 1e-9


@dataclass(frozen=True)
class SimConfig:
    # motion / arcs
    v: float = 3.5
    omega_max: float = 0.3
    n_arcs: int = 15
    n_samples: int = 20
    cycle_s: float = 5.0
    substep_s: float = 0.25
    arc_weights: tuple[float, float, float] = (1.0, 1.0, 0.1)
    c_unobs: float = 0.5
    lookahead_m: float = 15.0
    target_mode: str = "lookahead"  # or "goal"
    # sensing
    cam_height: float = 1.5
    cam_pitch_deg: float = -30.0
    cam_hfov_deg: float = 90.0
    image_h: int = 48
    image_w: int = 64
    d_thresh: float = 20.0
    cost_weights: tuple[float, float] = (1.0, 10.0)
    min_cell_points: int = 3
    # global map / fusion
    topdown_m_per_px: float = 0.5
    n_levels: int = 6
    min_region_px: int = 25
    prior_a: float = 0.5
    prior_b: float = 0.0
    n_rays: int = 16
    patch_size: float = 4.0
    ray_height: float = 50.0
    lam: float = 1e-3
    k_min: int = 5
    c_base: float = C_BASE
    # termination / collisions
    goal_radius: float = 10.0
    stuck_window_s: float = 30.0
    stuck_dist_m: float = 0.5
    timeout_s: float = 1000.0
    clearance: float = 0.15

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None) -> "SimConfig":
        d = dict(d or {})
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown sim config keys: {sorted(unknown)}")
        for k in ("arc_weights", "cost_weights"):
            if k in d:
                d[k] = tuple(float(x) for x in d[k])
        return cls(**d)

    def camera(self) -> CameraModel:
        return CameraModel(self.cam_height, math.radians(self.cam_pitch_deg),
                           math.radians(self.cam_hfov_deg), self.image_h, self.image_w,
                           self.d_thresh)

    def features(self) -> FeatureConfig:
        return FeatureConfig(self.n_rays, self.patch_size, self.ray_height)


@dataclass
class RunMetrics:
    total_path_cost: float = 0.0
    n_collisions: int = 0
    total_time: float = 0.0
    total_distance: float = 0.0
    outcome: str | None = None
    n_blocking: int = 0
    n_cycles: int = 0
    seed: int = 0
    mode: str = ""
    unreachable_cycles: int = 0

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class CollisionReport:
    contact: bool
    rocks: tuple[int, ...] = ()
    blocking: bool = False


@dataclass
class RunResult:
    metrics: RunMetrics
    trace: list[tuple] = field(default_factory=list)
    paths: list[np.ndarray] = field(default_factory=list)

    def trace_csv(self) -> str:
        lines = ["t,x,y,theta,cycle_id,step_cost,collision_flag"]
        for t, x, y, th, cyc, cost, flag in self.trace:
            lines.append(f"{t:.2f},{x:.6f},{y:.6f},{th:.6f},{cyc},{cost:.6f},{flag}")
        return "\n".join(lines) + "\n"

    def metrics_json(self) -> str:
        return json.dumps(self.metrics.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, trace_path, metrics_path) -> None:
        Path(trace_path).write_text(self.trace_csv())
        Path(metrics_path).write_text(self.metrics_json())


def _tall_rocks(t: TerrainModel, clearance: float) -> np.ndarray:
    return np.array([k for k, r in enumerate(t.rocks) if r.height > clearance], dtype=np.intp)


def check_collision(s: RoverState, t: TerrainModel, clearance: float = 0.15) -> CollisionReport:
    """Contact when the rover center lies within the radius of a rock taller than clearance."""
    if not t.rocks:
        return CollisionReport(False)
    d = np.hypot(t.rock_centers[:, 0] - s.x, t.rock_centers[:, 1] - s.y)
    tall = np.array([r.height > clearance for r in t.rocks])
    hit = np.nonzero(tall & (d <= t.rock_radii + CONTACT_TOL))[0]
    blocking = any(t.rocks[k].rock_class == "medium" for k in hit)
    return CollisionReport(bool(hit.size), tuple(int(k) for k in hit), blocking)


def segment_contacts(p0, p1, centers: np.ndarray, radii: np.ndarray):
    """Rocks touched by the segment p0->p1 and the fraction along it of first touch."""
    p0 = np.asarray(p0, float)
    d = np.asarray(p1, float) - p0
    rel = centers - p0
    dd = float(d @ d)
    if dd > 0:
        s = np.clip(rel @ d / dd, 0.0, 1.0)
    else:
        s = np.zeros(len(centers))
    closest = p0 + s[:, None] * d
    dist = np.hypot(*(centers - closest).T)
    hit = dist <= radii + CONTACT_TOL
    # entry fraction: smallest s with |p0 + s d - c| = r
    entry = np.ones(len(centers))
    if np.any(hit):
        r = radii[hit] + CONTACT_TOL
        rc = rel[hit]
        inside = np.hypot(*rc.T) <= r
        if dd > 0:
            b = rc @ d / dd
            disc = np.maximum(b * b - ((rc * rc).sum(1) - r * r) / dd, 0.0)
            e = np.clip(b - np.sqrt(disc), 0.0, 1.0)
        else:
            e = np.zeros(len(rc))
        entry[hit] = np.where(inside, 0.0, e)
    return hit, entry


def _stuck(history: list[tuple[float, float, float]], window: float, dist: float) -> bool:
    t_now, x_now, y_now = history[-1]
    if t_now < window - 1e-9:
        return False
    # history is sampled on a uniform substep grid starting at t=0
    for t, x, y in reversed(history):
        if t <= t_now - window + 1e-9:
            return math.hypot(x_now - x, y_now - y) < dist
    return False


def run_scenario(spec: ScenarioSpec, mode: str = "replan", cfg: SimConfig | None = None,
                 dump_dir: str | Path | None = None, terrain: TerrainModel | None = None) -> RunResult:
    """Run one closed-loop episode and return metrics plus the substep trace.

    Raises UnreachableError when no global path exists at t = 0.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    cfg = cfg or SimConfig.from_dict(spec.config)
    terrain = terrain or generate_terrain(spec)
    cam = cfg.camera()
    fcfg = cfg.features()
    width, height = terrain.extent
    grid_shape = (int(math.floor(height + 1e-9)), int(math.floor(width + 1e-9)))
    dump = Path(dump_dir) if dump_dir is not None else None
    if dump is not None:
        dump.mkdir(parents=True, exist_ok=True)

    img = render_topdown(terrain, cfg.topdown_m_per_px)
    clusters = cluster_regions(img, cfg.n_levels, cfg.min_region_px, out_shape=grid_shape)
    gmap = init_global_costmap(img, cfg.prior_a, cfg.prior_b, out_shape=grid_shape)
    cell_feats = grid_features(terrain, grid_shape, fcfg) if mode == "replan" else None
    path = plan_global(gmap, spec.start, spec.goal, cfg.c_base)

    arcs = generate_arcs(cfg.v, cfg.omega_max, cfg.n_arcs, cfg.cycle_s, cfg.n_samples)
    tall = _tall_rocks(terrain, cfg.clearance)
    tall_centers = terrain.rock_centers[tall] if tall.size else np.zeros((0, 2))
    tall_radii = terrain.rock_radii[tall] if tall.size else np.zeros(0)
    tall_medium = np.array([terrain.rocks[k].rock_class == "medium" for k in tall], dtype=bool)

    heading = math.atan2(spec.goal[1] - spec.start[1], spec.goal[0] - spec.start[0])
    state = RoverState(spec.start[0], spec.start[1], wrap_angle(heading), 0.0)
    m = RunMetrics(seed=spec.seed, mode=mode)
    result = RunResult(m, paths=[path.waypoints])
    history = [(0.0, state.x, state.y)]
    samples = []
    prev_contacts: set[int] = set()
    n_sub = int(round(cfg.cycle_s / cfg.substep_s))
    goal = np.asarray(spec.goal, float)

    def at_goal(s: RoverState) -> bool:
        return math.hypot(s.x - goal[0], s.y - goal[1]) <= cfg.goal_radius

    if at_goal(state):
        m.outcome = "reached"
    cycle = 0
    while m.outcome is None:
        lcm = sense(terrain, state, cam, cfg.cost_weights, cfg.min_cell_points)
        if mode == "replan":
            samples.extend(collect_cost_samples(lcm, terrain, fcfg, timestamp=state.t))
            gmap = update_global_costmap(gmap, clusters, samples, cfg.lam, cell_feats, cfg.k_min)
            try:
                path = plan_global(gmap, state.position, spec.goal, cfg.c_base)
            except UnreachableError:
                m.unreachable_cycles += 1
                log.warning("cycle %d: goal unreachable, keeping previous path", cycle)
            result.paths.append(path.waypoints)

        if cfg.target_mode == "goal":
            target_w = goal
        else:
            target_w = lookahead_target(path.waypoints, state.position, cfg.lookahead_m)
        target = world_to_body(state, target_w)[0]
        scored = [evaluate_arc(a, lcm, target, cfg.arc_weights, cfg.c_unobs) for a in arcs]
        best = select_arc(scored)
        report = check_collision(state, terrain, cfg.clearance)
        v = cfg.v if (best is not None and not report.blocking) else 0.0
        omega = best.omega if best is not None else 0.0

        if dump is not None:
            gmap.to_csv(dump / f"global_{cycle:04d}.csv")
            lcm.to_csv(dump / f"local_{cycle:04d}.csv")
            path.to_csv(dump / f"path_{cycle:04d}.csv")
            arcs_to_csv(scored, dump / "arcs.csv", cycle)

        for _ in range(n_sub):
            nxt, _ = step_rover(state, v, omega, cfg.substep_s, (width, height))
            flag = 0
            if v > 0 and tall.size:
                hit, entry = segment_contacts(state.position, nxt.position, tall_centers, tall_radii)
                if np.any(hit & tall_medium):
                    frac = float(entry[hit & tall_medium].min())
                    nxt = RoverState(state.x + frac * (nxt.x - state.x),
                                     state.y + frac * (nxt.y - state.y),
                                     wrap_angle(state.theta + frac * wrap_angle(nxt.theta - state.theta)),
                                     nxt.t)
                    hit = hit & (entry <= frac)
                    v = 0.0
                    m.n_blocking += 1
                contacts = set(tall[hit].tolist())
                new = contacts - prev_contacts
                m.n_collisions += len(new)
                prev_contacts = contacts
                flag = int(bool(contacts))
            else:
                prev_contacts = set(check_collision(nxt, terrain, cfg.clearance).rocks)
                flag = int(bool(prev_contacts))
            step = math.hypot(nxt.x - state.x, nxt.y - state.y)
            cost, obs, _ = lcm.lookup(world_to_body(lcm.pose, [nxt.position]))
            step_cost = float(cost[0]) if obs[0] else 0.0
            m.total_distance += step
            m.total_path_cost += step_cost
            state = nxt
            history.append((state.t, state.x, state.y))
            result.trace.append((state.t, state.x, state.y, state.theta, cycle, step_cost, flag))
            if at_goal(state):
                m.outcome = "reached"
                break
        cycle += 1
        if m.outcome is None:
            if _stuck(history, cfg.stuck_window_s, cfg.stuck_dist_m):
                m.outcome = "stuck"
            elif state.t >= cfg.timeout_s - 1e-9:
                m.outcome = "timeout"

    m.total_time = state.t
    m.n_cycles = cycle
    return result
