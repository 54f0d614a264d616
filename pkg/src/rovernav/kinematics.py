"""Rover state and exact unicycle integration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(theta):
    """Map angles to (-pi, pi]."""
    out = np.mod(-np.asarray(theta, dtype=float) + np.pi, 2 * np.pi)
    out = np.pi - out
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class RoverState:
    x: float
    y: float
    theta: float = 0.0
    t: float = 0.0

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


def unicycle_offsets(v: float, omega: float, t):
    """Displacement (dx, dy, dtheta) in the body frame after driving for time t.

    Straight line when omega == 0, otherwise a circular arc of radius v/omega.
    """
    t = np.asarray(t, dtype=float)
    if omega == 0.0:
        return v * t, np.zeros_like(t), np.zeros_like(t)
    a = omega * t
    # (v/omega) sin(a) and (v/omega)(1 - cos a), written to stay finite as omega -> 0
    return v * t * np.sinc(a / np.pi), v * t * np.sin(a / 2) * np.sinc(a / (2 * np.pi)), a


def step_rover(s: RoverState, v: float, omega: float, dt: float,
               extent: tuple[float, float] | None = None) -> tuple[RoverState, bool]:
    """Advance the rover by ``dt`` seconds along a constant (v, omega) arc.

    Returns the new state and a boundary-contact flag; with ``extent`` given,
    positions leaving ``[0, w] x [0, h]`` are clamped onto the boundary.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return s, False
    dx, dy, dth = unicycle_offsets(v, omega, dt)
    dx, dy, dth = float(dx), float(dy), float(dth)
    c, sn = math.cos(s.theta), math.sin(s.theta)
    x = s.x + c * dx - sn * dy
    y = s.y + sn * dx + c * dy
    hit = False
    if extent is not None:
        cx = min(max(x, 0.0), extent[0])
        cy = min(max(y, 0.0), extent[1])
        hit = (cx != x) or (cy != y)
        x, y = cx, cy
    return RoverState(x, y, wrap_angle(s.theta + dth), s.t + dt), hit


def body_to_world(pose: RoverState, pts) -> np.ndarray:
    """Rotate + translate (N, 2) body-frame points into the world frame."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    wx = pose.x + c * pts[:, 0] - s * pts[:, 1]
    wy = pose.y + s * pts[:, 0] + c * pts[:, 1]
    return np.stack([wx, wy], axis=1)


def world_to_body(pose: RoverState, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx = pts[:, 0] - pose.x
    dy = pts[:, 1] - pose.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)
