"""Full-loop driving simulator for evaluation.

Owns the true world state (ego kinematics, traffic, static feature points),
runs the LIDAR + scan-matching odometry at the perception rate, and gives
the controller a dead-reckoned version of the latest odometry fix, so
estimation error feeds back into the executed trajectory exactly as it
would on a real platform. Ground truth is used only to generate scans and
to judge outcomes (goal / collision / lane breach), never by estimation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scene as scene_mod
from .control import (PERCEPTION_PERIOD, SimHooks, SplinePath, TrackResult,
                      VehicleState, track_path, waypoints_from_actions)
from .errors import EmptyFeatures, StepAfterDone, TrackingDiverged
from .geometry import Pose2D, compose, relative
from .lidar import LidarConfig, cast_scan
from .mdp import (RewardBreakdown, RewardConfig, StateVector, action_from_index,
                  build_state, reward)
from .odometry import OdometryTracker, compute_feature_centroid_y
from .scene import Scenario


@dataclass
class PoseLogRow:
    step: int
    t: float
    est: Pose2D
    gt: Pose2D


class _Hooks(SimHooks):
    def __init__(self, sim: "DrivingSimulator"):
        self.sim = sim

    def control_pose(self, vehicle: VehicleState) -> Pose2D:
        return self.sim.control_pose()

    def on_tick(self, dt: float, vehicle: VehicleState):
        return self.sim.tick(dt)

    def on_perception(self, vehicle: VehicleState):
        self.sim.perception_if_due()
        return self.sim.stop_signal()


class DrivingSimulator:
    """One evaluation episode over a scenario.

    filtering: drop traffic-labeled returns before matching (+F arms).
    lidar_range overrides the scenario's range when given.
    """

    def __init__(self, scenario: Scenario, seed: int, filtering: bool,
                 lidar_range: float | None = None,
                 lidar_config: LidarConfig | None = None,
                 reward_config: RewardConfig | None = None,
                 n_max: int = 2):
        base = lidar_config or LidarConfig()
        self.lidar_config = LidarConfig(
            n_rays=base.n_rays,
            max_range=lidar_range or scenario.lidar_range,
            noise_sigma=base.noise_sigma)
        self.scenario = scenario
        self.seed = int(seed)
        self.reward_config = reward_config or RewardConfig()
        self.n_max = n_max
        self.static_points = scene_mod.rasterize_features(scenario)

        self.vehicle = VehicleState(pose=scenario.ego_start.copy())
        self.traffic = scenario.traffic
        self.tracker = OdometryTracker(filtering=filtering)
        self.time = 0.0
        self._next_perception = 0.0
        self._scan_index = 0
        self.y_c = scenario.road.center_y
        self.outcome = ""
        self.done = False
        self.pose_log: list[PoseLogRow] = []
        self.hooks = _Hooks(self)
        self._anchor_est = scenario.ego_start.copy()
        self._anchor_gt = scenario.ego_start.copy()

    # -- perception ---------------------------------------------------------

    def _scan_seed(self) -> int:
        return int(np.random.SeedSequence(
            entropy=(self.seed, self._scan_index)).generate_state(1)[0])

    def perception_if_due(self) -> None:
        if self.time < self._next_perception - 1e-9 or self.done:
            return
        pose_gt = self.vehicle.pose.copy()
        scan = cast_scan(self.static_points, self.traffic, pose_gt,
                         self.lidar_config, seed=self._scan_seed(),
                         step_index=self._scan_index)
        estimate = self.tracker.update(scan, pose_gt)
        try:
            features = self.tracker.extract_features(scan)
            self.y_c = compute_feature_centroid_y(features, estimate.pose_est)
        except EmptyFeatures:
            pass    # hold the last known centroid
        self._anchor_est = estimate.pose_est.copy()
        self._anchor_gt = pose_gt
        self.pose_log.append(PoseLogRow(step=self._scan_index, t=self.time,
                                        est=estimate.pose_est.copy(),
                                        gt=pose_gt.copy()))
        self._scan_index += 1
        self._next_perception += PERCEPTION_PERIOD

    def control_pose(self) -> Pose2D:
        """Latest odometry fix dead-reckoned forward by the true motion
        since the fix (exact kinematic odometry between scans)."""
        return compose(self._anchor_est,
                       relative(self._anchor_gt, self.vehicle.pose))

    # -- world dynamics -----------------------------------------------------

    def tick(self, dt: float):
        """Advance traffic, run due perception, and judge outcomes on the
        true pose. Returns a stop signal string when the episode ends."""
        if self.done:
            return self.outcome
        self.time += dt
        self.traffic = scene_mod.advance_traffic(self.traffic, dt,
                                                 self.scenario.road.length)
        self.perception_if_due()

        pose = self.vehicle.pose
        road = self.scenario.road
        for veh in self.traffic:
            if veh.present and pose.distance_to(veh.pose) < self.reward_config.collision_radius:
                return self._finish("collision")
        if not road.contains_y(pose.y):
            return self._finish("lane_breach")
        if pose.x >= road.length:
            return self._finish("goal")
        return None

    def _finish(self, outcome: str) -> str:
        self.outcome = outcome
        self.done = True
        return outcome

    def stop_signal(self):
        return self.outcome if self.done else None

    # -- state assembly -----------------------------------------------------

    def current_state(self) -> StateVector:
        est = self.control_pose()
        return build_state((est.x, est.y), self.y_c, self.scenario.road,
                           self.traffic, n_max=self.n_max)

    def est_gt_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        est = np.array([[r.est.x, r.est.y, r.est.yaw] for r in self.pose_log])
        gt = np.array([[r.gt.x, r.gt.y, r.gt.yaw] for r in self.pose_log])
        return est, gt


class EvalEnv:
    """MDP view of the full simulator: actions run through spline fitting
    and Stanley tracking, and the next state is rebuilt from live odometry."""

    def __init__(self, scenario: Scenario, seed: int, filtering: bool,
                 lidar_range: float | None = None,
                 reward_config: RewardConfig | None = None,
                 lidar_config: LidarConfig | None = None,
                 stanley_gain: float = 0.5, n_max: int = 2,
                 max_sim_time: float | None = None):
        self.sim = DrivingSimulator(scenario, seed, filtering,
                                    lidar_range=lidar_range,
                                    lidar_config=lidar_config,
                                    reward_config=reward_config, n_max=n_max)
        self.reward_config = self.sim.reward_config
        self.stanley_gain = stanley_gain
        self.max_sim_time = max_sim_time or (scenario.road.length / 1.5 + 90.0)
        self.track_rows = []
        self.sim.perception_if_due()    # anchor the estimate at the start pose

    @property
    def done(self) -> bool:
        return self.sim.done

    @property
    def outcome(self) -> str:
        return self.sim.outcome if self.sim.outcome else "timeout"

    def current_state(self) -> StateVector:
        return self.sim.current_state()

    def execute_segment(self, indices: list[int]) -> TrackResult:
        """Track one spline segment through the unrolled waypoints; the
        segment speed matches the commanded forward progress per step."""
        if self.sim.done:
            raise StepAfterDone("episode already ended")
        est = self.sim.control_pose()
        waypoints = waypoints_from_actions(np.array([est.x, est.y]), indices)
        path = SplinePath(waypoints)
        target_speed = float(np.mean(
            [action_from_index(i).a_x for i in indices]))
        try:
            result = track_path(self.sim.vehicle, path, target_speed,
                                hooks=self.sim.hooks, gain=self.stanley_gain,
                                start_time=self.sim.time,
                                max_time=self.max_sim_time - self.sim.time)
        except TrackingDiverged:
            self.sim._finish("diverged")
            return TrackResult(rows=[], reason="stopped:diverged", distance=0.0)
        if result.reason == "stopped:timeout" or self.sim.time >= self.max_sim_time:
            self.sim._finish("timeout")
        self.track_rows.extend(result.rows)
        return result

    def step(self, index: int) -> tuple[StateVector, RewardBreakdown, bool]:
        """Execute a single action through the full simulator."""
        state = self.current_state()
        action = action_from_index(index)
        self.execute_segment([index])
        next_state = self.current_state()
        breakdown = reward(state, action, next_state, self.reward_config)
        if self.sim.outcome in ("collision", "lane_breach", "diverged"):
            breakdown = RewardBreakdown(
                G=-self.reward_config.terminal_penalty, F=0.0, T=0.0,
                P=breakdown.P, p_flags=breakdown.p_flags,
                total=-self.reward_config.terminal_penalty,
                terminal_violation=True,
                collided=self.sim.outcome == "collision",
                lane_breach=self.sim.outcome == "lane_breach")
        return next_state, breakdown, self.sim.done
