import math

import numpy as np
import pytest

from driftnav.geometry import Pose2D
from driftnav.lidar import (LABEL_NONE, LABEL_STATIC, LidarConfig, cast_scan,
                            filter_dynamic, read_scan_csv, write_scan_csv)
from driftnav.scene import TrafficVehicle

from conftest import wall_points


def subtending_wall(theta_deg, distance=30.0, density=60.0, bearing=0.0):
    """A straight wall perpendicular to `bearing` subtending theta at the
    origin, densely sampled so the disc chain is gapless."""
    half = distance * math.tan(math.radians(theta_deg) / 2.0)
    n = max(int(2 * half * density), 8)
    offsets = np.linspace(-half, half, n)
    pts = np.column_stack([np.full(n, distance), offsets])
    c, s = math.cos(bearing), math.sin(bearing)
    rot = np.array([[c, -s], [s, c]])
    return pts @ rot.T


def test_empty_world_all_miss(noiseless_config):
    scan = cast_scan(np.empty((0, 2)), (), Pose2D(0, 0, 0), noiseless_config, 0)
    assert not scan.hit_mask.any()
    assert (scan.labels == LABEL_NONE).all()


@pytest.mark.parametrize("theta", [10.0, 30.0, 60.0])
def test_hit_count_tracks_subtended_angle(theta, noiseless_config):
    wall = subtending_wall(theta, bearing=0.37)
    scan = cast_scan(wall, (), Pose2D(0, 0, 0), noiseless_config, 0)
    expected = noiseless_config.n_rays * theta / 360.0
    assert abs(int(scan.hit_mask.sum()) - expected) <= 1


def test_traffic_box_hit_range_and_label(noiseless_config):
    veh = TrafficVehicle(id=3, pose=Pose2D(5.0, 0.0, 0.0), speed=0.0,
                         footprint_half_extent=1.0)
    scan = cast_scan(np.empty((0, 2)), (veh,), Pose2D(0, 0, 0),
                     noiseless_config, 0)
    forward = np.argmin(np.abs(scan.bearings))
    assert scan.labels[forward] == 3
    assert scan.ranges[forward] == pytest.approx(4.0, abs=1e-9)


def test_occlusion_nearest_hit_wins(noiseless_config):
    wall = subtending_wall(40.0, distance=20.0)
    veh = TrafficVehicle(id=0, pose=Pose2D(6.0, 0.0, 0.0), speed=0.0,
                         footprint_half_extent=1.5)
    scan = cast_scan(wall, (veh,), Pose2D(0, 0, 0), noiseless_config, 0)
    forward = np.argmin(np.abs(scan.bearings))
    assert scan.labels[forward] == 0
    assert scan.ranges[forward] == pytest.approx(4.5, abs=1e-9)
    # wall still visible outside the box's angular shadow
    assert (scan.labels == LABEL_STATIC).sum() > 0


def test_monotone_proximity_hit_count(noiseless_config):
    """Closer sensor positions on the perpendicular bisector never see
    fewer returns from a fixed feature segment."""
    wall = wall_points(-8.0, 30.0, 8.0, 30.0, density=60.0)
    counts = []
    for offset in np.linspace(0.0, 22.0, 12):
        scan = cast_scan(wall, (), Pose2D(0.0, offset, 0.0),
                         noiseless_config, 0)
        counts.append(int(scan.hit_mask.sum()))
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    assert counts[-1] > counts[0]


def test_cast_scan_deterministic(rich_world):
    config = LidarConfig(noise_sigma=0.05)
    a = cast_scan(rich_world, (), Pose2D(0, 0, 0.3), config, seed=42)
    b = cast_scan(rich_world, (), Pose2D(0, 0, 0.3), config, seed=42)
    assert np.array_equal(a.ranges, b.ranges)
    assert np.array_equal(a.labels, b.labels)
    c = cast_scan(rich_world, (), Pose2D(0, 0, 0.3), config, seed=43)
    assert not np.array_equal(a.ranges, c.ranges)


def test_noise_only_on_hits(rich_world):
    clean = cast_scan(rich_world, (), Pose2D(0, 0, 0),
                      LidarConfig(noise_sigma=0.0), seed=1)
    noisy = cast_scan(rich_world, (), Pose2D(0, 0, 0),
                      LidarConfig(noise_sigma=0.05), seed=1)
    hits = clean.hit_mask
    assert np.array_equal(hits, noisy.hit_mask)
    assert not np.array_equal(clean.ranges[hits], noisy.ranges[hits])
    assert np.all(np.abs(clean.ranges[hits] - noisy.ranges[hits]) < 0.5)
    assert np.all(noisy.ranges[hits] <= noisy.max_range)


def _mixed_scan(noiseless_config):
    wall = subtending_wall(50.0, distance=15.0, bearing=1.2)
    veh = TrafficVehicle(id=1, pose=Pose2D(-6.0, 0.0, 0.0), speed=0.0,
                         footprint_half_extent=1.2)
    return cast_scan(wall, (veh,), Pose2D(0, 0, 0), noiseless_config, 0)


def test_filter_dynamic_counts(noiseless_config):
    scan = _mixed_scan(noiseless_config)
    n_static = int((scan.labels == LABEL_STATIC).sum())
    n_traffic = int((scan.labels >= 0).sum())
    assert n_static > 0 and n_traffic > 0
    filtered = filter_dynamic(scan)
    assert int((filtered.labels == LABEL_STATIC).sum()) == n_static
    assert int((filtered.labels >= 0).sum()) == 0
    assert len(filtered.ranges) == len(scan.ranges)


def test_filter_dynamic_identity_without_traffic(noiseless_config):
    wall = subtending_wall(50.0, distance=15.0)
    scan = cast_scan(wall, (), Pose2D(0, 0, 0), noiseless_config, 0)
    filtered = filter_dynamic(scan)
    assert np.array_equal(filtered.ranges, scan.ranges)
    assert np.array_equal(filtered.labels, scan.labels)


def test_filter_dynamic_all_traffic(noiseless_config):
    veh = TrafficVehicle(id=0, pose=Pose2D(4.0, 0.0, 0.0), speed=0.0,
                         footprint_half_extent=1.0)
    scan = cast_scan(np.empty((0, 2)), (veh,), Pose2D(0, 0, 0),
                     noiseless_config, 0)
    filtered = filter_dynamic(scan)
    assert not filtered.hit_mask.any()


def test_filter_dynamic_idempotent(noiseless_config):
    scan = _mixed_scan(noiseless_config)
    once = filter_dynamic(scan)
    twice = filter_dynamic(once)
    assert np.array_equal(once.ranges, twice.ranges)
    assert np.array_equal(once.labels, twice.labels)


def test_absent_vehicles_not_scanned(noiseless_config):
    veh = TrafficVehicle(id=0, pose=Pose2D(5.0, 0.0, 0.0), speed=0.0,
                         footprint_half_extent=1.0, present=False)
    scan = cast_scan(np.empty((0, 2)), (veh,), Pose2D(0, 0, 0),
                     noiseless_config, 0)
    assert not scan.hit_mask.any()


def test_scan_csv_round_trip(tmp_path, rich_world):
    config = LidarConfig(noise_sigma=0.02)
    scan = cast_scan(rich_world, (), Pose2D(1.0, -2.0, 0.1), config, seed=5)
    path = tmp_path / "scan.csv"
    write_scan_csv(scan, path)
    back = read_scan_csv(path, sensor_pose=scan.sensor_pose,
                         max_range=config.max_range)
    assert np.array_equal(scan.bearings, back.bearings)
    assert np.array_equal(scan.ranges, back.ranges)
    assert np.array_equal(scan.labels, back.labels)


def test_config_validation():
    with pytest.raises(ValueError):
        LidarConfig(n_rays=4)
    with pytest.raises(ValueError):
        LidarConfig(max_range=-1.0)
    with pytest.raises(ValueError):
        LidarConfig(noise_sigma=-0.1)
