import numpy as np
import pytest

from driftnav.control import (DEFAULT_STANLEY_GAIN, SplinePath, TrackLogRow,
                              VehicleState, fit_spline, read_track_csv,
                              stanley_steer, track_path,
                              validate_waypoint_path, waypoints_from_actions,
                              write_track_csv)
from driftnav.errors import DuplicateWaypoint, TrackingDiverged
from driftnav.geometry import Pose2D
from driftnav.mdp import action_index


def test_waypoint_path_requires_increasing_x():
    with pytest.raises(ValueError):
        validate_waypoint_path([[0, 0], [1, 1], [0.5, 2]])
    validate_waypoint_path([[0, 0], [1, 1], [2, 0]])


def test_waypoints_from_actions():
    pts = waypoints_from_actions(np.array([1.0, 0.5]),
                                 [action_index(5.0, 1.0),
                                  action_index(2.0, -2.0)])
    assert pts == pytest.approx(np.array([[1.0, 0.5], [6.0, 1.5], [8.0, -0.5]]))


# -- spline fitting ----------------------------------------------------------

def test_fit_spline_needs_three_points():
    with pytest.raises(ValueError):
        fit_spline([[0, 0], [1, 0]])


def test_fit_spline_rejects_duplicates():
    with pytest.raises(DuplicateWaypoint):
        fit_spline([[0, 0], [0, 0], [1, 1]])


def test_spline_reproduces_collinear_points():
    pts = np.array([[0.0, 1.0], [3.0, 2.5], [6.0, 4.0], [9.0, 5.5]])
    path = fit_spline(pts)
    s = np.linspace(0, path.length, 200)
    x, y, heading, curvature = path.query(s)
    # every sampled point on the line y = 1 + x/2
    assert np.max(np.abs(y - (1.0 + 0.5 * x))) < 1e-9
    assert np.max(np.abs(curvature)) < 1e-9


def test_spline_interpolates_waypoints():
    rng = np.random.default_rng(0)
    pts = np.column_stack([np.cumsum(rng.uniform(1, 4, 8)),
                           rng.uniform(-2, 2, 8)])
    path = fit_spline(pts)
    for t, p in zip(path.knot_params(), pts):
        assert np.allclose(path.position(t), p, atol=1e-9)


def test_spline_c2_at_interior_knots():
    """One-sided second derivatives agree at knots. Richardson-extrapolated
    second differences cancel the cubic's third-derivative term exactly."""
    rng = np.random.default_rng(1)
    pts = np.column_stack([np.cumsum(rng.uniform(1, 4, 7)),
                           rng.uniform(-3, 3, 7)])
    path = fit_spline(pts)

    def one_sided_dd(f, t, sign, h=3e-4):
        def estimate(hh):
            return (f(t + 2 * sign * hh) - 2 * f(t + sign * hh) + f(t)) / hh ** 2
        return 2.0 * estimate(h) - estimate(2 * h)

    for t in path.knot_params()[1:-1]:
        for f in (lambda u: path.position(u)[0], lambda u: path.position(u)[1]):
            jump = one_sided_dd(f, t, +1) - one_sided_dd(f, t, -1)
            assert abs(jump) < 1e-6


def test_spline_two_point_linear_fallback():
    path = SplinePath(np.array([[0.0, 0.0], [4.0, 3.0]]))
    assert path.length == pytest.approx(5.0, abs=1e-6)
    x, y, heading, _ = path.query(2.5)
    assert (x, y) == (pytest.approx(2.0, abs=1e-6), pytest.approx(1.5, abs=1e-6))


# -- stanley controller ------------------------------------------------------

def straight_path(length=60.0, y=0.0):
    xs = np.arange(0.0, length + 1e-9, 5.0)
    return SplinePath(np.column_stack([xs, np.full_like(xs, y)]))


def test_stanley_on_path_aligned_zero():
    path = straight_path()
    vehicle = VehicleState(pose=Pose2D(5.0, 0.0, 0.0), speed=3.0)
    assert stanley_steer(vehicle, path, gain=1.0) == pytest.approx(0.0, abs=1e-6)


def test_stanley_cross_track_term():
    # front axle 1 m right of the path, aligned, v = 1, k = 1 -> atan(1)
    path = straight_path()
    vehicle = VehicleState(pose=Pose2D(5.0, -1.0, 0.0), speed=1.0,
                           max_steer=1.5)
    assert stanley_steer(vehicle, path, gain=1.0) == pytest.approx(
        np.pi / 4, abs=1e-3)


def test_stanley_heading_term_only():
    path = straight_path()
    vehicle = VehicleState(pose=Pose2D(5.0, 0.0, 0.0), speed=1.0)
    # rear axle raised so the front axle lands exactly on the path:
    # pure heading error of +0.2, zero cross-track
    vehicle.pose = Pose2D(5.0, vehicle.wheelbase * np.sin(0.2), -0.2)
    steer = stanley_steer(vehicle, path, gain=1.0)
    assert steer == pytest.approx(0.2, abs=5e-3)


def test_stanley_clamps_to_max_steer():
    path = straight_path()
    vehicle = VehicleState(pose=Pose2D(5.0, -4.0, 0.0), speed=0.5,
                           max_steer=0.6)
    assert abs(stanley_steer(vehicle, path, gain=5.0)) <= 0.6


# -- tracking ----------------------------------------------------------------

def front_axle_error(row, wheelbase=2.5):
    # straight path along y = 0: cross-track error is the front-axle y
    return row.pose_gt.y + wheelbase * np.sin(row.pose_gt.yaw)


def test_track_path_offset_decay():
    """1 m initial offset: front-axle cross-track error below 5 cm within
    30 m of travel at v=5, k=0.5."""
    path = straight_path(80.0)
    vehicle = VehicleState(pose=Pose2D(0.0, 1.0, 0.0), speed=5.0)
    result = track_path(vehicle, path, target_speed=5.0, gain=0.5)
    crossed = [r for r in result.rows if r.pose_gt.x > 30.0]
    assert crossed
    assert all(abs(front_axle_error(r)) < 0.05 for r in crossed)
    # error magnitude decreases after the first second
    errs = [abs(front_axle_error(r)) for r in result.rows
            if r.t > 1.0 and r.pose_gt.x < 30.0]
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))


@pytest.mark.parametrize("offset,speed", [(0.5, 5.0), (2.0, 5.0), (1.0, 10.0)])
def test_stanley_error_decreasing_after_first_second(offset, speed):
    path = straight_path(120.0)
    vehicle = VehicleState(pose=Pose2D(0.0, offset, 0.0), speed=speed)
    result = track_path(vehicle, path, target_speed=speed, gain=0.5)
    errs = [abs(front_axle_error(r)) for r in result.rows if r.t > 1.0]
    assert errs
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))


def test_track_path_zero_length_returns_immediately():
    path = SplinePath(np.array([[0.0, 0.0], [0.05, 0.0]]))
    vehicle = VehicleState(pose=Pose2D(0.0, 0.0, 0.0), speed=1.0)
    result = track_path(vehicle, path, target_speed=1.0)
    assert result.reason == "path_end"
    assert result.rows == []


def test_track_path_divergence_raises():
    path = straight_path(40.0)
    vehicle = VehicleState(pose=Pose2D(0.0, 5.5, np.pi / 2), speed=5.0,
                           max_steer=0.05)
    with pytest.raises(TrackingDiverged):
        track_path(vehicle, path, target_speed=5.0, gain=0.01)


def test_track_path_steering_always_clamped():
    path = straight_path(50.0)
    vehicle = VehicleState(pose=Pose2D(0.0, 2.0, 0.3), speed=4.0)
    result = track_path(vehicle, path, target_speed=6.0, gain=1.0)
    assert all(abs(r.steer) <= vehicle.max_steer + 1e-12 for r in result.rows)


def test_track_path_speed_respects_accel_limit():
    path = straight_path(50.0)
    vehicle = VehicleState(pose=Pose2D(0.0, 0.0, 0.0), speed=0.0,
                           accel_limit=3.0)
    result = track_path(vehicle, path, target_speed=5.0)
    speeds = [r.speed for r in result.rows]
    diffs = np.diff([0.0] + speeds)
    assert np.max(np.abs(diffs)) <= 3.0 * 0.05 + 1e-12
    assert max(speeds) <= 5.0 + 1e-12


# -- trajectory log ----------------------------------------------------------

def test_track_csv_round_trip(tmp_path):
    rows = [TrackLogRow(t=0.05 * k, pose_gt=Pose2D(k * 0.2, 0.01 * k, 0.001 * k),
                        pose_ctrl=Pose2D(k * 0.2 + 0.01, 0.0, 0.0),
                        steer=0.02 * k, speed=3.0)
            for k in range(10)]
    path = tmp_path / "traj.csv"
    write_track_csv(rows, path, final_event="goal")
    back = read_track_csv(path)
    assert len(back) == 10
    assert back[-1].event == "goal"
    assert back[3].pose_gt.x == rows[3].pose_gt.x
    assert back[7].steer == rows[7].steer


def test_track_csv_rejects_truncated_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,x_gt,y_gt,yaw_gt,x_est,y_est,yaw_est,steer,speed,event\n"
                    "0.05,1.0,0.0\n")
    with pytest.raises(ValueError) as exc:
        read_track_csv(path)
    assert "line 2" in str(exc.value)
