"""Planar pose algebra: angle wrapping, SE(2) composition, frame transforms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    return np.pi - (np.pi - angle) % TWO_PI


@dataclass
class Pose2D:
    """Pose in the world / RL frame. yaw is always kept in (-pi, pi]."""

    x: float
    y: float
    yaw: float

    def __post_init__(self):
        self.x = float(self.x)
        self.y = float(self.y)
        self.yaw = float(wrap_angle(self.yaw))

    def copy(self) -> "Pose2D":
        return Pose2D(self.x, self.y, self.yaw)

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def distance_to(self, other: "Pose2D") -> float:
        return float(np.hypot(self.x - other.x, self.y - other.y))


def compose(pose: Pose2D, delta: tuple[float, float, float]) -> Pose2D:
    """Apply a relative transform (dx, dy, dyaw), expressed in `pose`'s
    frame, on the right of `pose`."""
    dx, dy, dyaw = delta
    c, s = np.cos(pose.yaw), np.sin(pose.yaw)
    return Pose2D(
        pose.x + c * dx - s * dy,
        pose.y + s * dx + c * dy,
        pose.yaw + dyaw,
    )


def relative(a: Pose2D, b: Pose2D) -> tuple[float, float, float]:
    """Transform of `b` expressed in `a`'s frame, i.e. a^-1 * b."""
    c, s = np.cos(a.yaw), np.sin(a.yaw)
    dx = b.x - a.x
    dy = b.y - a.y
    return (c * dx + s * dy, -s * dx + c * dy, wrap_angle(b.yaw - a.yaw))


def transform_points(pose: Pose2D, points: np.ndarray) -> np.ndarray:
    """Map (N, 2) points from `pose`'s local frame into the world frame."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    c, s = np.cos(pose.yaw), np.sin(pose.yaw)
    rot = np.array([[c, -s], [s, c]])
    return pts @ rot.T + np.array([pose.x, pose.y])


def inverse_transform_points(pose: Pose2D, points: np.ndarray) -> np.ndarray:
    """Map (N, 2) world-frame points into `pose`'s local frame."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    c, s = np.cos(pose.yaw), np.sin(pose.yaw)
    rot = np.array([[c, s], [-s, c]])
    return (pts - np.array([pose.x, pose.y])) @ rot.T


def apply_delta(delta: tuple[float, float, float],
                points: np.ndarray) -> np.ndarray:
    """Apply a relative transform (dx, dy, dyaw) to (N, 2) points."""
    dx, dy, dyaw = delta
    c, s = np.cos(dyaw), np.sin(dyaw)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    out = np.empty_like(pts)
    out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + dx
    out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + dy
    return out


def compose_delta(outer: tuple[float, float, float],
                  inner: tuple[float, float, float]) -> tuple[float, float, float]:
    """SE(2) composition of two relative transforms: outer applied after inner."""
    ox, oy, oyaw = outer
    ix, iy, iyaw = inner
    c, s = np.cos(oyaw), np.sin(oyaw)
    return (
        ox + c * ix - s * iy,
        oy + s * ix + c * iy,
        wrap_angle(oyaw + iyaw),
    )
