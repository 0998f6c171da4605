"""Shared fixtures: synthetic worlds and scan helpers used across modules."""

import numpy as np
import pytest

from driftnav.geometry import Pose2D
from driftnav.lidar import LidarConfig, cast_scan
from driftnav.scene import FeatureRegion, RoadGeometry, Scenario


def wall_points(x0, y0, x1, y1, density=25.0):
    length = np.hypot(x1 - x0, y1 - y0)
    n = max(int(length * density), 2)
    s = (np.arange(n) + 0.5) / n
    return np.column_stack([x0 + s * (x1 - x0), y0 + s * (y1 - y0)])


def room_world():
    """Structure-rich closed-ish world: walls at several orientations so
    scan matching is well conditioned in every direction."""
    return np.vstack([
        wall_points(-10, 10, 10, 10),
        wall_points(12, 8, 20, 8),
        wall_points(20, 8, 20, 2),
        wall_points(-12, -9, 5, -9),
        wall_points(5, -9, 5, -13),
        wall_points(-15, -5, -15, 5),
        wall_points(8, 12, 8, 18),
    ])


def stub_row(x0, x1, y=10.0, flip=False, seed=0):
    """Aperiodic row of small L-shaped structures (fence posts, reveals);
    compact corners that resolve only at close range."""
    rng = np.random.default_rng(seed)
    regions = []
    x = x0
    sign = -1.0 if flip else 1.0
    while x < x1:
        w = rng.uniform(0.25, 0.6)
        d = rng.uniform(0.25, 0.7) * sign
        yy = y + rng.uniform(-0.5, 0.5) * sign
        regions.append(FeatureRegion(
            polyline=((x, yy), (x + w, yy), (x + w, yy + d)),
            point_density=30.0))
        x += rng.uniform(2.4, 4.2)
    return regions


@pytest.fixture(scope="session")
def rich_world():
    return room_world()


@pytest.fixture
def noiseless_config():
    return LidarConfig(n_rays=720, max_range=50.0, noise_sigma=0.0)


def scan_at(world, pose, config, seed=0, traffic=()):
    return cast_scan(world, traffic, pose, config, seed=seed)


def make_scenario(features, length=80.0, traffic=(), lidar_range=50.0,
                  name="test", ego_y=0.0):
    return Scenario(name=name,
                    road=RoadGeometry(length=length, edge_l=-6.0, edge_r=6.0),
                    features=tuple(features), traffic=tuple(traffic),
                    ego_start=Pose2D(0.0, ego_y, 0.0),
                    lidar_range=lidar_range, seed=0)
