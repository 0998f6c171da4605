import numpy as np
import pytest

from driftnav.errors import DegenerateScan, EmptyFeatures
from driftnav.geometry import Pose2D, relative
from driftnav.lidar import (LABEL_NONE, LABEL_STATIC, MISS, LidarConfig,
                            LidarScan, cast_scan, filter_dynamic)
from driftnav.odometry import (EdgeFeatureSet, OdometryTracker,
                               compute_feature_centroid_y,
                               extract_edge_features, match_scans,
                               read_pose_csv, write_pose_csv)
from driftnav.scene import TrafficVehicle

from conftest import room_world, wall_points


def synthetic_scan(hit_ranges: dict, n_rays=720, max_range=50.0):
    """Scan with hits at given {ray_index: range}; everything else MISS."""
    config = LidarConfig(n_rays=n_rays, max_range=max_range)
    ranges = np.full(n_rays, MISS)
    labels = np.full(n_rays, LABEL_NONE)
    for idx, rng in hit_ranges.items():
        ranges[idx] = rng
        labels[idx] = LABEL_STATIC
    return LidarScan(sensor_pose=Pose2D(0, 0, 0), bearings=config.bearings,
                     ranges=ranges, labels=labels, max_range=max_range)


# -- edge feature extraction -------------------------------------------------

def test_edge_scores_separate_wall_interior_from_ends(noiseless_config):
    wall = wall_points(10.0, -10.0, 10.0, 10.0, density=40.0)
    scan = cast_scan(wall, (), Pose2D(0, 0, 0), noiseless_config, 0)
    everything = extract_edge_features(scan, curvature_threshold=-1.0)
    scores = everything.scores
    end_scores = (scores[0], scores[-1])
    interior = np.median(scores[5:-5])
    assert min(end_scores) > 10 * interior
    # a threshold between the two populations keeps only the ends' vicinity
    edges = extract_edge_features(scan, curvature_threshold=0.01)
    assert 0 < len(edges) <= 12


def test_all_miss_scan_yields_empty_feature_set():
    scan = synthetic_scan({})
    feats = extract_edge_features(scan)
    assert len(feats) == 0


def test_isolated_hit_is_edge():
    scan = synthetic_scan({100: 7.0})
    feats = extract_edge_features(scan, curvature_threshold=0.15)
    assert len(feats) == 1
    assert np.isinf(feats.scores[0])


def test_depth_jump_is_edge(noiseless_config):
    near = wall_points(10.0, -8.0, 10.0, 0.0, density=40.0)
    far = wall_points(25.0, 0.5, 25.0, 20.0, density=40.0)
    scan = cast_scan(np.vstack([near, far]), (), Pose2D(0, 0, 0),
                     noiseless_config, 0)
    feats = extract_edge_features(scan, curvature_threshold=0.15)
    assert len(feats) > 0


# -- centroid ----------------------------------------------------------------

def test_centroid_constant_y():
    feats = EdgeFeatureSet(points=np.array([[1.0, 3.0], [6.0, 3.0]]),
                           scores=np.zeros(2))
    assert compute_feature_centroid_y(feats, Pose2D(0, 0, 0)) == pytest.approx(3.0)


def test_centroid_symmetry():
    feats = EdgeFeatureSet(points=np.array([[2.0, 3.0], [2.0, -3.0]]),
                           scores=np.zeros(2))
    assert compute_feature_centroid_y(feats, Pose2D(0, 0, 0)) == pytest.approx(0.0)


def test_centroid_mean():
    feats = EdgeFeatureSet(points=np.array([[0.0, 1.0], [0.0, 5.0]]),
                           scores=np.zeros(2))
    assert compute_feature_centroid_y(feats, Pose2D(0, 0, 0)) == pytest.approx(3.0)


def test_centroid_uses_pose_estimate():
    feats = EdgeFeatureSet(points=np.array([[4.0, 0.0]]), scores=np.zeros(1))
    assert compute_feature_centroid_y(feats, Pose2D(0, 2.5, 0)) == pytest.approx(2.5)
    assert compute_feature_centroid_y(
        feats, Pose2D(0, 0, np.pi / 2)) == pytest.approx(4.0)


def test_centroid_empty_raises():
    feats = EdgeFeatureSet(points=np.empty((0, 2)), scores=np.empty(0))
    with pytest.raises(EmptyFeatures):
        compute_feature_centroid_y(feats, Pose2D(0, 0, 0))


# -- scan matching -----------------------------------------------------------

def test_match_identical_scans_identity(rich_world, noiseless_config):
    scan = cast_scan(rich_world, (), Pose2D(0, 0, 0), noiseless_config, 5)
    result = match_scans(scan, scan)
    assert abs(result.dx) < 1e-9
    assert abs(result.dy) < 1e-9
    assert abs(result.dyaw) < 1e-9


def test_match_recovers_forward_motion(rich_world, noiseless_config):
    p0, p1 = Pose2D(0, 0, 0), Pose2D(0.5, 0, 0)
    s0 = cast_scan(rich_world, (), p0, noiseless_config, 0)
    s1 = cast_scan(rich_world, (), p1, noiseless_config, 1)
    result = match_scans(s0, s1)
    assert result.dx == pytest.approx(0.5, abs=1e-3)
    assert result.dy == pytest.approx(0.0, abs=1e-3)
    assert result.dyaw == pytest.approx(0.0, abs=1e-3)


def test_match_oracle_randomized(rich_world, noiseless_config):
    """Known relative poses recovered within 1e-3; per-solve error is
    non-increasing on its own association set."""
    rng = np.random.default_rng(0)
    failures = 0
    for trial in range(30):
        delta = (rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.1, 0.1))
        p0 = Pose2D(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-0.2, 0.2))
        p1 = Pose2D(p0.x + delta[0], p0.y + delta[1], p0.yaw + delta[2])
        s0 = cast_scan(rich_world, (), p0, noiseless_config, 2 * trial)
        s1 = cast_scan(rich_world, (), p1, noiseless_config, 2 * trial + 1)
        true = relative(p0, p1)
        result = match_scans(s0, s1)
        err = max(abs(result.dx - true[0]), abs(result.dy - true[1]),
                  abs(result.dyaw - true[2]))
        failures += err > 1e-3
        assert np.all(result.stepped_errors <= result.error_history * (1 + 1e-9))
        assert np.all(np.diff(result.error_history) <= 1e-5)
    assert failures == 0


def test_match_degenerate_scan_raises():
    sparse = synthetic_scan({10: 5.0, 200: 8.0})
    rich = synthetic_scan({i: 10.0 for i in range(0, 720, 6)})
    with pytest.raises(DegenerateScan):
        match_scans(sparse, rich)
    with pytest.raises(DegenerateScan):
        match_scans(rich, sparse)


def test_match_biased_by_unfiltered_traffic(rich_world, noiseless_config):
    """A traffic box that moved between frames drags the unfiltered
    estimate; filtering restores it. Same seeds both ways."""
    p0, p1 = Pose2D(0, 0, 0), Pose2D(0.5, 0.0, 0.0)
    veh0 = TrafficVehicle(id=0, pose=Pose2D(6.0, 2.0, 0.0), speed=0.0,
                          footprint_half_extent=1.6)
    veh1 = TrafficVehicle(id=0, pose=Pose2D(7.0, 2.0, 0.0), speed=0.0,
                          footprint_half_extent=1.6)
    s0 = cast_scan(rich_world, (veh0,), p0, noiseless_config, 0)
    s1 = cast_scan(rich_world, (veh1,), p1, noiseless_config, 1)
    true = relative(p0, p1)

    raw = match_scans(s0, s1)
    filt = match_scans(filter_dynamic(s0), filter_dynamic(s1))
    err_raw = np.hypot(raw.dx - true[0], raw.dy - true[1])
    err_filt = np.hypot(filt.dx - true[0], filt.dy - true[1])
    assert err_filt < err_raw


# -- odometry tracker --------------------------------------------------------

def drive_tracker(world, poses, config, filtering=False, traffic_frames=None):
    tracker = OdometryTracker(filtering=filtering)
    for k, pose in enumerate(poses):
        traffic = traffic_frames[k] if traffic_frames else ()
        scan = cast_scan(world, traffic, pose, config, seed=1000 + k)
        tracker.update(scan, pose)
    return tracker


def test_tracker_step0_anchors_at_ground_truth(rich_world, noiseless_config):
    tracker = drive_tracker(rich_world, [Pose2D(0.5, -0.25, 0.05)],
                            noiseless_config)
    est = tracker.history[0]
    assert est.pose_est.x == est.pose_gt.x
    assert est.pose_est.y == est.pose_gt.y
    assert not est.used_fallback


def test_tracker_low_drift_slow_motion(rich_world, noiseless_config):
    poses = [Pose2D(0.2 * k, 0.0, 0.0) for k in range(11)]
    tracker = drive_tracker(rich_world, poses, noiseless_config)
    final = tracker.history[-1]
    drift = final.pose_est.distance_to(final.pose_gt)
    assert drift < 0.05


def test_tracker_fallback_on_empty_world(noiseless_config):
    tracker = OdometryTracker(filtering=False)
    for k in range(3):
        scan = cast_scan(np.empty((0, 2)), (), Pose2D(k * 1.0, 0, 0),
                         noiseless_config, seed=k)
        est = tracker.update(scan, Pose2D(k * 1.0, 0, 0))
    assert est.used_fallback


def test_tracker_filtering_invariant_without_traffic(rich_world):
    config = LidarConfig(noise_sigma=0.02)
    poses = [Pose2D(0.5 * k, 0.0, 0.0) for k in range(8)]
    on = drive_tracker(rich_world, poses, config, filtering=True)
    off = drive_tracker(rich_world, poses, config, filtering=False)
    for a, b in zip(on.history, off.history):
        assert a.pose_est.x == b.pose_est.x
        assert a.pose_est.y == b.pose_est.y
        assert a.pose_est.yaw == b.pose_est.yaw


def test_ground_truth_never_influences_estimate(rich_world, noiseless_config):
    """Fuzzing pose_gt (evaluation metadata) must leave pose_est untouched."""
    poses = [Pose2D(0.5 * k, 0.0, 0.0) for k in range(6)]
    scans = [cast_scan(rich_world, (), p, noiseless_config, seed=k)
             for k, p in enumerate(poses)]

    t1 = OdometryTracker(filtering=False)
    for scan, pose in zip(scans, poses):
        t1.update(scan, pose)

    rng = np.random.default_rng(3)
    t2 = OdometryTracker(filtering=False)
    for k, (scan, pose) in enumerate(zip(scans, poses)):
        fuzz = (pose if k == 0 else
                Pose2D(rng.normal(scale=50), rng.normal(scale=50),
                       rng.uniform(-3, 3)))
        t2.update(scan, fuzz)

    for a, b in zip(t1.history, t2.history):
        assert a.pose_est.x == b.pose_est.x
        assert a.pose_est.y == b.pose_est.y
        assert a.pose_est.yaw == b.pose_est.yaw


def test_pose_csv_round_trip(tmp_path, rich_world, noiseless_config):
    poses = [Pose2D(0.5 * k, 0.1 * k, 0.01 * k) for k in range(5)]
    tracker = drive_tracker(rich_world, poses, noiseless_config)
    path = tmp_path / "poses.csv"
    write_pose_csv(tracker.history, path)
    est, gt = read_pose_csv(path)
    assert est.shape == (5, 3)
    assert gt[3, 0] == poses[3].x
    assert est[0, 0] == tracker.history[0].pose_est.x
