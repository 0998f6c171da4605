"""Trajectory interpolation and low-level path tracking.

Waypoints from the policy are interpolated with a natural cubic spline
(chord-length parametrized, re-sampled to arc length), then tracked by a
Stanley controller driving a kinematic bicycle. The tracker exposes hook
points so the evaluation simulator can advance traffic, run perception,
and stop the episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DuplicateWaypoint, TrackingDiverged
from .geometry import Pose2D, wrap_angle
from .mdp import action_from_index, unroll_teleport

CONTROL_DT = 0.05          # 20 Hz bicycle integration
PERCEPTION_PERIOD = 0.5    # 2 Hz scan / odometry hooks
ARC_RESOLUTION = 0.1
DIVERGENCE_LIMIT = 5.0
DEFAULT_STANLEY_GAIN = 0.5
DEFAULT_UNROLL_DEPTH = 5


@dataclass
class VehicleState:
    """Kinematic bicycle, pose at the rear axle."""

    pose: Pose2D
    speed: float = 0.0
    wheelbase: float = 2.5
    max_steer: float = 0.6
    accel_limit: float = 3.0

    def advance(self, steer: float, target_speed: float,
                dt: float = CONTROL_DT) -> float:
        """Integrate one control tick; returns the applied (clamped) steer."""
        steer = float(np.clip(steer, -self.max_steer, self.max_steer))
        dv = np.clip(target_speed - self.speed,
                     -self.accel_limit * dt, self.accel_limit * dt)
        self.speed = max(0.0, self.speed + dv)
        p = self.pose
        self.pose = Pose2D(
            p.x + self.speed * np.cos(p.yaw) * dt,
            p.y + self.speed * np.sin(p.yaw) * dt,
            p.yaw + self.speed * np.tan(steer) / self.wheelbase * dt,
        )
        return steer


class SplinePath:
    """Piecewise-cubic path in arc length. Query yields position, heading
    and curvature; also provides nearest-point lookups for the tracker."""

    def __init__(self, waypoints: np.ndarray):
        pts = np.asarray(waypoints, dtype=float).reshape(-1, 2)
        if len(pts) < 2:
            raise ValueError("need at least 2 waypoints")
        chord = np.hypot(*np.diff(pts, axis=0).T)
        if np.any(chord < 1e-9):
            raise DuplicateWaypoint("consecutive waypoints coincide")
        t = np.concatenate([[0.0], np.cumsum(chord)])
        self._t = t
        if len(pts) >= 3:
            self._sx = CubicSpline(t, pts[:, 0], bc_type="natural")
            self._sy = CubicSpline(t, pts[:, 1], bc_type="natural")
        else:
            self._sx = CubicSpline(t, pts[:, 0], bc_type=((1, (pts[1, 0] - pts[0, 0]) / chord[0]),) * 2)
            self._sy = CubicSpline(t, pts[:, 1], bc_type=((1, (pts[1, 1] - pts[0, 1]) / chord[0]),) * 2)
        self.waypoints = pts

        # arc-length table at ARC_RESOLUTION via dense chord sampling
        dense_t = np.linspace(0.0, t[-1], max(int(t[-1] / 0.01), 32) + 1)
        dx = np.diff(self._sx(dense_t))
        dy = np.diff(self._sy(dense_t))
        s = np.concatenate([[0.0], np.cumsum(np.hypot(dx, dy))])
        self.length = float(s[-1])
        self._s_of_t = (dense_t, s)
        n_samples = max(int(self.length / ARC_RESOLUTION), 2) + 1
        self._s_grid = np.linspace(0.0, self.length, n_samples)
        t_grid = np.interp(self._s_grid, s, dense_t)
        self._samples = np.column_stack([self._sx(t_grid), self._sy(t_grid)])
        self._t_grid = t_grid

    def _t_at(self, s) -> np.ndarray:
        s = np.clip(s, 0.0, self.length)
        return np.interp(s, self._s_of_t[1], self._s_of_t[0])

    def query(self, s):
        """(x, y, heading, curvature) at arc length s (scalar or array)."""
        t = self._t_at(s)
        x, y = self._sx(t), self._sy(t)
        dx, dy = self._sx(t, 1), self._sy(t, 1)
        ddx, ddy = self._sx(t, 2), self._sy(t, 2)
        heading = np.arctan2(dy, dx)
        denom = np.maximum((dx * dx + dy * dy) ** 1.5, 1e-12)
        curvature = (dx * ddy - dy * ddx) / denom
        return x, y, heading, curvature

    def nearest(self, xy: np.ndarray) -> tuple[float, float, float]:
        """Nearest stored sample to a point: (arc length, distance, heading)."""
        d2 = np.sum((self._samples - xy) ** 2, axis=1)
        i = int(np.argmin(d2))
        t = self._t_grid[i]
        heading = float(np.arctan2(self._sy(t, 1), self._sx(t, 1)))
        return float(self._s_grid[i]), float(np.sqrt(d2[i])), heading

    def knot_params(self) -> np.ndarray:
        return self._t.copy()

    def position(self, t: float) -> np.ndarray:
        return np.array([float(self._sx(t)), float(self._sy(t))])

    def second_derivative(self, t: float) -> np.ndarray:
        return np.array([float(self._sx(t, 2)), float(self._sy(t, 2))])


def validate_waypoint_path(points: np.ndarray) -> np.ndarray:
    """A waypoint path is the ego position followed by the unrolled
    waypoints; x must be strictly increasing."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if np.any(np.diff(pts[:, 0]) <= 0.0):
        raise ValueError("waypoint path x-coordinates must strictly increase")
    return pts


def fit_spline(waypoints: np.ndarray) -> SplinePath:
    """Natural cubic spline through >= 3 distinct waypoints, chord-length
    parametrized and re-sampled to arc length."""
    pts = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    if len(pts) < 3:
        raise ValueError("need at least 3 waypoints to fit a spline")
    return SplinePath(pts)


def stanley_steer(vehicle: VehicleState, path: SplinePath,
                  gain: float = DEFAULT_STANLEY_GAIN,
                  pose: Pose2D | None = None) -> float:
    """Stanley law at the front axle: steer = heading error +
    arctan(gain * cross_track / speed), clamped to the steering limit.

    `pose` overrides the pose used for control (the tracker passes the
    odometry estimate); defaults to the vehicle's own pose.
    """
    p = pose or vehicle.pose
    front = np.array([p.x + vehicle.wheelbase * np.cos(p.yaw),
                      p.y + vehicle.wheelbase * np.sin(p.yaw)])
    _, dist, path_heading = path.nearest(front)
    sx, sy, _, _ = path.query(path.nearest(front)[0])
    # signed cross-track: positive when the front axle is right of the path
    normal_right = np.array([np.sin(path_heading), -np.cos(path_heading)])
    e = float(np.dot(front - np.array([sx, sy]), normal_right))
    theta_e = wrap_angle(path_heading - p.yaw)
    v = max(vehicle.speed, 0.1)
    steer = theta_e + np.arctan2(gain * e, v)
    return float(np.clip(steer, -vehicle.max_steer, vehicle.max_steer))


@dataclass
class TrackLogRow:
    t: float
    pose_gt: Pose2D
    pose_ctrl: Pose2D
    steer: float
    speed: float
    event: str = ""


@dataclass
class TrackResult:
    rows: list[TrackLogRow]
    reason: str                 # "path_end" | "stopped:<signal>"
    distance: float


class SimHooks:
    """Callbacks the evaluation simulator plugs into the tracker.

    control_pose(vehicle) -> Pose2D     pose the controller should use
    on_tick(dt, vehicle) -> str | None  after each bicycle step; a non-None
                                        string stops tracking
    on_perception(vehicle) -> str | None  every PERCEPTION_PERIOD seconds
    """

    def control_pose(self, vehicle: VehicleState) -> Pose2D:
        return vehicle.pose

    def on_tick(self, dt: float, vehicle: VehicleState):
        return None

    def on_perception(self, vehicle: VehicleState):
        return None


def track_path(vehicle: VehicleState, path: SplinePath, target_speed: float,
               hooks: SimHooks | None = None,
               gain: float = DEFAULT_STANLEY_GAIN,
               start_time: float = 0.0,
               max_time: float = 600.0) -> TrackResult:
    """Drive the bicycle along the path at 20 Hz until the path end (or a
    hook stops the run). Raises TrackingDiverged when the cross-track
    error exceeds DIVERGENCE_LIMIT."""
    hooks = hooks or SimHooks()
    rows: list[TrackLogRow] = []
    t = start_time
    next_perception = t
    end_s = path.length - max(ARC_RESOLUTION, 0.5 * target_speed * CONTROL_DT)
    if path.length <= ARC_RESOLUTION:
        return TrackResult(rows=rows, reason="path_end", distance=0.0)

    traveled = 0.0
    while t - start_time < max_time:
        if t >= next_perception - 1e-9:
            signal = hooks.on_perception(vehicle)
            next_perception += PERCEPTION_PERIOD
            if signal:
                return TrackResult(rows, f"stopped:{signal}", traveled)

        ctrl_pose = hooks.control_pose(vehicle)
        steer = stanley_steer(vehicle, path, gain, pose=ctrl_pose)
        front = np.array([ctrl_pose.x + vehicle.wheelbase * np.cos(ctrl_pose.yaw),
                          ctrl_pose.y + vehicle.wheelbase * np.sin(ctrl_pose.yaw)])
        s_near, dist, _ = path.nearest(front)
        if dist > DIVERGENCE_LIMIT:
            raise TrackingDiverged(f"cross-track error {dist:.2f} m")
        if s_near >= end_s:
            return TrackResult(rows, "path_end", traveled)

        prev = vehicle.pose.copy()
        applied = vehicle.advance(steer, target_speed)
        traveled += vehicle.pose.distance_to(prev)
        t += CONTROL_DT
        rows.append(TrackLogRow(t=t, pose_gt=vehicle.pose.copy(),
                                pose_ctrl=hooks.control_pose(vehicle),
                                steer=applied, speed=vehicle.speed))
        signal = hooks.on_tick(CONTROL_DT, vehicle)
        if signal:
            return TrackResult(rows, f"stopped:{signal}", traveled)
    return TrackResult(rows, "stopped:timeout", traveled)


@dataclass
class EpisodeResult:
    reason: str
    segments: int
    rows: list[TrackLogRow] = field(default_factory=list)


def plan_and_track(policy_step: Callable, env,
                   n: int = DEFAULT_UNROLL_DEPTH) -> EpisodeResult:
    """Closed-loop inference: rebuild the state from live odometry, unroll
    the policy n steps in the teleport model (greedy), spline-interpolate
    the waypoints, track the segment, and replan until the episode ends.

    `policy_step(state) -> action index`; `env` is an mdp.EvalEnv.
    n = 1 degenerates to single-waypoint pursuit on a linear segment.
    """
    if n < 1:
        raise ValueError("unroll depth must be >= 1")
    segments = 0
    rows: list[TrackLogRow] = []
    while not env.done:
        state = env.current_state()
        indices = []
        sim_state = state
        for _ in range(n):
            indices.append(policy_step(sim_state))
            sim_state = unroll_teleport(sim_state, [indices[-1]])[0]
        result = env.execute_segment(indices)
        rows.extend(result.rows)
        segments += 1
        if result.reason.startswith("stopped:"):
            break
    return EpisodeResult(reason=env.outcome, segments=segments, rows=rows)


def waypoints_from_actions(start_xy: np.ndarray,
                           indices: Sequence[int]) -> np.ndarray:
    """Unroll action offsets into an RL-frame waypoint path, ego first."""
    pts = [np.asarray(start_xy, dtype=float)]
    for index in indices:
        action = action_from_index(index)
        pts.append(pts[-1] + np.array([action.a_x, action.a_y]))
    return np.vstack(pts)


TRACK_CSV_HEADER = ["t", "x_gt", "y_gt", "yaw_gt", "x_est", "y_est",
                    "yaw_est", "steer", "speed", "event"]


def write_track_csv(rows: Sequence[TrackLogRow], path,
                    final_event: str = "") -> None:
    """Executed-trajectory log at the control rate; the last row carries
    the episode outcome in the event column."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACK_CSV_HEADER)
        for i, row in enumerate(rows):
            event = row.event
            if final_event and i == len(rows) - 1:
                event = final_event
            writer.writerow([repr(row.t),
                             repr(row.pose_gt.x), repr(row.pose_gt.y),
                             repr(row.pose_gt.yaw),
                             repr(row.pose_ctrl.x), repr(row.pose_ctrl.y),
                             repr(row.pose_ctrl.yaw),
                             repr(row.steer), repr(row.speed), event])


def read_track_csv(path) -> list[TrackLogRow]:
    import csv

    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACK_CSV_HEADER:
            raise ValueError(f"unexpected trajectory CSV header: {header}")
        for line_no, raw in enumerate(reader, start=2):
            if len(raw) != len(TRACK_CSV_HEADER):
                raise ValueError(
                    f"line {line_no}: expected {len(TRACK_CSV_HEADER)} fields, "
                    f"got {len(raw)}")
            try:
                rows.append(TrackLogRow(
                    t=float(raw[0]),
                    pose_gt=Pose2D(float(raw[1]), float(raw[2]), float(raw[3])),
                    pose_ctrl=Pose2D(float(raw[4]), float(raw[5]), float(raw[6])),
                    steer=float(raw[7]), speed=float(raw[8]), event=raw[9]))
            except ValueError as exc:
                raise ValueError(f"line {line_no}: {exc}") from exc
    return rows
