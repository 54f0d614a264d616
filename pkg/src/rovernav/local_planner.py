"""Constant-curvature arc candidates scored against the local costmap."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .kinematics import unicycle_offsets
from .sensor import LocalCostMap
from .terrain import C_MAX

DEFAULT_WEIGHTS = (1.0, 1.0, 0.1)  # steering, traversability, goal
C_UNOBS = 0.5


@dataclass(frozen=True, eq=False)
class Arc:
    v: float
    omega: float
    duration: float
    poses: np.ndarray  # (n_samples, 3) body-frame x, y, theta; last row is the endpoint
    steering: float | None = None
    traversability: float | None = None
    goal: float | None = None
    total: float | None = None
    feasible: bool = True

    @property
    def endpoint(self) -> np.ndarray:
        return self.poses[-1]


def generate_arcs(v: float = 3.5, omega_max: float = 0.3, n_arcs: int = 15, T: float = 5.0,
                  n_samples: int = 20) -> list[Arc]:
    if n_arcs < 3 or n_arcs % 2 == 0:
        raise ValueError("n_arcs must be odd and >= 3")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if v <= 0 or T <= 0 or omega_max < 0:
        raise ValueError("need v > 0, T > 0, omega_max >= 0")
    mid = n_arcs // 2
    times = T * np.arange(1, n_samples + 1) / n_samples
    arcs = []
    for k in range(n_arcs):
        # exact zero for the middle arc
        omega = 0.0 if k == mid else omega_max * (k - mid) / mid
        x, y, th = unicycle_offsets(v, omega, times)
        arcs.append(Arc(v, omega, T, np.stack([x, y, th], axis=1)))
    return arcs


def evaluate_arc(a: Arc, lcm: LocalCostMap, target, weights=DEFAULT_WEIGHTS,
                 c_unobs: float = C_UNOBS) -> Arc:
    """Score an arc: alpha*|omega| + beta*sum of sampled cell costs + gamma*endpoint distance.

    Samples on unobserved or out-of-map cells cost ``c_unobs``. An arc touching
    a cell at C_MAX is marked infeasible.
    """
    alpha, beta, gamma = weights
    cost, obs, _ = lcm.lookup(a.poses[:, :2])
    per_sample = np.where(obs, cost, c_unobs)
    trav = float(per_sample.sum())
    steer = abs(a.omega)
    goal = float(math.hypot(a.endpoint[0] - target[0], a.endpoint[1] - target[1]))
    total = alpha * steer + beta * trav + gamma * goal
    feasible = not bool(np.any(obs & (cost >= C_MAX)))
    return replace(a, steering=steer, traversability=trav, goal=goal, total=total,
                   feasible=feasible)


def select_arc(arcs) -> Arc | None:
    """Lowest-total feasible arc; ties go to smaller |omega|, then positive omega.

    Returns None when every arc is infeasible.
    """
    arcs = list(arcs)
    if not arcs:
        raise ValueError("no arcs to select from")
    feasible = [a for a in arcs if a.feasible]
    if not feasible:
        return None
    return min(feasible, key=lambda a: (a.total, abs(a.omega), -a.omega))


def lookahead_target(waypoints: np.ndarray, position, distance: float = 15.0) -> np.ndarray:
    """Waypoint whose along-path distance from the rover's nearest waypoint is closest to ``distance``."""
    wp = np.asarray(waypoints, dtype=float)
    if len(wp) == 1:
        return wp[0]
    d = np.hypot(wp[:, 0] - position[0], wp[:, 1] - position[1])
    k0 = int(np.argmin(d))
    seg = np.hypot(*np.diff(wp[k0:], axis=0).T)
    along = np.r_[0.0, np.cumsum(seg)]
    k = int(np.argmin(np.abs(along - distance)))
    return wp[k0 + k]


def arcs_to_csv(arcs, path, cycle: int | None = None) -> None:
    with open(path, "a" if cycle else "w") as f:
        if not cycle:
            f.write("cycle,omega,steering,traversability,goal,total,feasible\n")
        for a in arcs:
            f.write(f"{cycle or 0},{a.omega:.6f},{a.steering:.6g},{a.traversability:.6g},"
                    f"{a.goal:.6g},{a.total:.6g},{int(a.feasible)}\n")
