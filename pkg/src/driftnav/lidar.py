"""Planar LIDAR simulator.

One revolution of uniformly spaced rays is cast against the static feature
points (small discs, so a finite ray set registers hits) and the traffic
footprint boxes. Nearest hit wins, so traffic occludes features behind it.
Every return carries a semantic label so dynamic points can be filtered
before scan matching.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Pose2D
from .scene import TrafficVehicle

# Feature points are modeled as discs of this radius; a pure point set would
# have measure-zero intersections with a finite ray fan.
FEATURE_POINT_RADIUS = 0.05

# Label codes in LidarScan.labels. Traffic hits carry the vehicle id (>= 0).
LABEL_NONE = -2   # MISS
LABEL_STATIC = -1

MISS = np.inf


@dataclass(frozen=True)
class LidarConfig:
    n_rays: int = 720
    max_range: float = 50.0
    noise_sigma: float = 0.02

    def __post_init__(self):
        if self.n_rays < 8:
            raise ValueError("n_rays must be >= 8")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be > 0")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def bearings(self) -> np.ndarray:
        """Ray bearings in the sensor frame, uniform over 360 degrees."""
        return -np.pi + 2.0 * np.pi * np.arange(self.n_rays) / self.n_rays


@dataclass(frozen=True)
class ScanPoint:
    bearing: float
    range: float        # MISS (inf) when no return
    label: int          # LABEL_NONE / LABEL_STATIC / traffic id

    @property
    def is_hit(self) -> bool:
        return np.isfinite(self.range)


@dataclass
class LidarScan:
    """One revolution. `sensor_pose` is simulator ground truth and must only
    be read by the simulator and the evaluation side, never by estimation."""

    sensor_pose: Pose2D
    bearings: np.ndarray
    ranges: np.ndarray
    labels: np.ndarray
    max_range: float
    step_index: int = 0

    @property
    def n_rays(self) -> int:
        return len(self.bearings)

    @property
    def hit_mask(self) -> np.ndarray:
        return np.isfinite(self.ranges)

    def hit_points(self) -> np.ndarray:
        """Sensor-frame (K, 2) cartesian coordinates of the hit returns."""
        m = self.hit_mask
        r = self.ranges[m]
        b = self.bearings[m]
        return np.column_stack([r * np.cos(b), r * np.sin(b)])

    def points(self) -> list[ScanPoint]:
        return [ScanPoint(float(b), float(r), int(l))
                for b, r, l in zip(self.bearings, self.ranges, self.labels)]


def _ray_disc_ranges(points: np.ndarray, sensor_xy: np.ndarray, yaw: float,
                     n_rays: int, max_range: float) -> np.ndarray:
    """Nearest-hit range per ray against a set of feature discs.

    Each disc only spans a narrow bearing window, so candidate (point, ray)
    pairs are enumerated per window instead of testing the full fan.
    """
    out = np.full(n_rays, MISS)
    if len(points) == 0:
        return out
    delta = points - sensor_xy
    d = np.hypot(delta[:, 0], delta[:, 1])
    reach = d <= max_range + FEATURE_POINT_RADIUS
    delta, d = delta[reach], d[reach]
    if len(d) == 0:
        return out

    spacing = 2.0 * np.pi / n_rays
    phi = np.arctan2(delta[:, 1], delta[:, 0]) - yaw       # sensor-frame bearing
    half = np.arcsin(np.minimum(1.0, FEATURE_POINT_RADIUS / np.maximum(d, 1e-12)))
    # discs containing the sensor return zero range on every ray
    inside = d <= FEATURE_POINT_RADIUS
    if np.any(inside):
        out[:] = 0.0
        return out

    # candidate ray indices per point: the bearing grid cells overlapped by
    # [phi - half, phi + half]
    base = -np.pi
    k_lo = np.ceil((phi - half - base) / spacing - 1e-12).astype(np.int64)
    k_hi = np.floor((phi + half - base) / spacing + 1e-12).astype(np.int64)
    counts = np.maximum(k_hi - k_lo + 1, 0)
    total = int(counts.sum())
    if total == 0:
        return out

    pt_idx = np.repeat(np.arange(len(d)), counts)
    offsets = np.arange(total) - np.repeat(
        np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    k = np.repeat(k_lo, counts) + offsets                  # unwrapped indices
    dbeta = base + k * spacing - phi[pt_idx]

    dd = d[pt_idx]
    perp = dd * np.sin(dbeta)
    under = FEATURE_POINT_RADIUS ** 2 - perp ** 2
    valid = (under >= 0.0) & (np.cos(dbeta) > 0.0)
    t_hit = dd[valid] * np.cos(dbeta[valid]) - np.sqrt(under[valid])
    t_hit = np.maximum(t_hit, 0.0)
    ray = np.mod(k[valid], n_rays)
    np.minimum.at(out, ray, t_hit)
    out[out > max_range] = MISS
    return out


def _ray_box_ranges(veh: TrafficVehicle, sensor_xy: np.ndarray, yaw: float,
                    bearings: np.ndarray, max_range: float) -> np.ndarray:
    """Slab-method intersection of the ray fan with one axis-aligned
    square footprint."""
    h = veh.footprint_half_extent
    lo = np.array([veh.pose.x - h, veh.pose.y - h])
    hi = np.array([veh.pose.x + h, veh.pose.y + h])
    ang = yaw + bearings
    dirs = np.column_stack([np.cos(ang), np.sin(ang)])

    t_near = np.full(len(bearings), -np.inf)
    t_far = np.full(len(bearings), np.inf)
    for axis in range(2):
        dir_a = dirs[:, axis]
        small = np.abs(dir_a) < 1e-12
        with np.errstate(divide="ignore"):
            t1 = (lo[axis] - sensor_xy[axis]) / dir_a
            t2 = (hi[axis] - sensor_xy[axis]) / dir_a
        lo_t = np.minimum(t1, t2)
        hi_t = np.maximum(t1, t2)
        in_slab = (lo[axis] <= sensor_xy[axis]) & (sensor_xy[axis] <= hi[axis])
        lo_t = np.where(small, np.where(in_slab, -np.inf, np.inf), lo_t)
        hi_t = np.where(small, np.where(in_slab, np.inf, -np.inf), hi_t)
        t_near = np.maximum(t_near, lo_t)
        t_far = np.minimum(t_far, hi_t)

    hit = (t_near <= t_far) & (t_far >= 0.0)
    ranges = np.where(hit, np.maximum(t_near, 0.0), MISS)
    ranges[ranges > max_range] = MISS
    return ranges


def cast_scan(static_points: np.ndarray, traffic: Sequence[TrafficVehicle],
              sensor_pose: Pose2D, config: LidarConfig, seed: int,
              step_index: int = 0) -> LidarScan:
    """Cast one revolution. Deterministic given the seed; range noise is
    Gaussian with std noise_sigma, applied to hit ranges only."""
    bearings = config.bearings
    sensor_xy = np.array([sensor_pose.x, sensor_pose.y])

    layers = [_ray_disc_ranges(np.asarray(static_points, dtype=float).reshape(-1, 2),
                               sensor_xy, sensor_pose.yaw,
                               config.n_rays, config.max_range)]
    layer_labels = [LABEL_STATIC]
    for veh in traffic:
        if not veh.present:
            continue
        layers.append(_ray_box_ranges(veh, sensor_xy, sensor_pose.yaw,
                                      bearings, config.max_range))
        layer_labels.append(veh.id)

    stack = np.vstack(layers)
    best = np.argmin(stack, axis=0)
    ranges = stack[best, np.arange(config.n_rays)]
    labels = np.where(np.isfinite(ranges),
                      np.array(layer_labels)[best], LABEL_NONE)

    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, config.noise_sigma, size=config.n_rays)
    hits = np.isfinite(ranges)
    if config.noise_sigma > 0.0:
        ranges = np.where(hits,
                          np.clip(ranges + noise, 0.0, config.max_range),
                          ranges)
    return LidarScan(sensor_pose=sensor_pose.copy(), bearings=bearings,
                     ranges=ranges, labels=labels,
                     max_range=config.max_range, step_index=step_index)


def filter_dynamic(scan: LidarScan) -> LidarScan:
    """Replace every traffic-labeled return with MISS. Static returns,
    ordering and length are untouched; idempotent."""
    dynamic = scan.labels >= 0
    ranges = np.where(dynamic, MISS, scan.ranges)
    labels = np.where(dynamic, LABEL_NONE, scan.labels)
    return LidarScan(sensor_pose=scan.sensor_pose.copy(),
                     bearings=scan.bearings.copy(), ranges=ranges,
                     labels=labels, max_range=scan.max_range,
                     step_index=scan.step_index)


SCAN_CSV_HEADER = ["ray_index", "bearing", "range", "label"]


def write_scan_csv(scan: LidarScan, path: str | Path) -> None:
    """Row-per-point scan log; MISS rays carry an empty range field."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCAN_CSV_HEADER)
        for i, (b, r, l) in enumerate(zip(scan.bearings, scan.ranges, scan.labels)):
            writer.writerow([i, repr(float(b)),
                             "" if not np.isfinite(r) else repr(float(r)),
                             int(l)])


def read_scan_csv(path: str | Path, sensor_pose: Pose2D | None = None,
                  max_range: float = 50.0) -> LidarScan:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SCAN_CSV_HEADER:
            raise ValueError(f"unexpected scan CSV header: {header}")
        bearings, ranges, labels = [], [], []
        for row in reader:
            bearings.append(float(row[1]))
            ranges.append(MISS if row[2] == "" else float(row[2]))
            labels.append(int(row[3]))
    return LidarScan(sensor_pose=sensor_pose or Pose2D(0, 0, 0),
                     bearings=np.array(bearings), ranges=np.array(ranges),
                     labels=np.array(labels), max_range=max_range)
