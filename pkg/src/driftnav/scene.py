"""World model and scenario ingestion.

A scenario is a straight road corridor in the RL frame (X along the road,
Y across it, goal line at x = length), a set of feature-rich regions
represented as dense point-sampled polylines, and constant-velocity
traffic vehicles. Scenario values are immutable after load; per-episode
kinematic state is carried in fresh TrafficVehicle tuples.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import ScenarioParseError, ScenarioValidationError
from .geometry import Pose2D

SCHEMA_VERSION = 1

# Bundled benchmark scenes, shipped as package data.
BUNDLED_SCENARIOS = ("scene1", "scene2", "scene3", "scene4", "scene5")


@dataclass(frozen=True)
class RoadGeometry:
    """Straight corridor: goal line at x = length, lateral limits edge_l < edge_r."""

    length: float
    edge_l: float
    edge_r: float

    @property
    def width(self) -> float:
        return self.edge_r - self.edge_l

    @property
    def center_y(self) -> float:
        return 0.5 * (self.edge_l + self.edge_r)

    def contains_y(self, y: float) -> bool:
        return self.edge_l <= y <= self.edge_r


@dataclass(frozen=True)
class FeatureRegion:
    """A texture-rich structure, sampled into points at `point_density` per meter."""

    polyline: tuple[tuple[float, float], ...]
    point_density: float


@dataclass(frozen=True)
class TrafficVehicle:
    """Constant-velocity traffic moving along +X. `present` flips to False
    once the vehicle passes the goal line and leaves the state/world."""

    id: int
    pose: Pose2D
    speed: float
    footprint_half_extent: float
    present: bool = True


@dataclass(frozen=True)
class Scenario:
    name: str
    road: RoadGeometry
    features: tuple[FeatureRegion, ...]
    traffic: tuple[TrafficVehicle, ...]
    ego_start: Pose2D
    lidar_range: float
    seed: int


def _polyline_arclength(polyline: np.ndarray) -> np.ndarray:
    segs = np.diff(polyline, axis=0)
    return np.concatenate([[0.0], np.cumsum(np.hypot(segs[:, 0], segs[:, 1]))])


def rasterize_features(scenario: Scenario) -> np.ndarray:
    """Sample every feature polyline into points, ceil(arclength * density)
    per region, placed at segment-midpoint offsets so the point set is
    invariant to polyline direction reversal.

    Returns an (N, 2) array of static world points.
    """
    chunks = []
    for region in scenario.features:
        poly = np.asarray(region.polyline, dtype=float)
        cum = _polyline_arclength(poly)
        total = cum[-1]
        if total <= 0.0:
            continue
        count = math.ceil(total * region.point_density)
        s = (np.arange(count) + 0.5) * (total / count)
        xs = np.interp(s, cum, poly[:, 0])
        ys = np.interp(s, cum, poly[:, 1])
        chunks.append(np.column_stack([xs, ys]))
    if not chunks:
        return np.empty((0, 2))
    return np.vstack(chunks)


def advance_traffic(traffic: Sequence[TrafficVehicle], dt: float,
                    road_length: float) -> tuple[TrafficVehicle, ...]:
    """Advance every vehicle by speed*dt along +X. Vehicles past the goal
    line are marked absent; positions keep integrating so the update
    composes exactly over split time intervals."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    out = []
    for veh in traffic:
        x = veh.pose.x + veh.speed * dt
        pose = Pose2D(x, veh.pose.y, veh.pose.yaw)
        out.append(dataclasses.replace(
            veh, pose=pose, present=veh.present and x <= road_length))
    return tuple(out)


# ---------------------------------------------------------------------------
# Scenario file schema (YAML, schema_version 1)
#
# schema_version: 1
# name: scene1
# seed: 1
# lidar_range: 50.0
# road: {length: 100.0, edge_l: -6.0, edge_r: 6.0}
# ego_start: {x: 0.0, y: 0.0, yaw: 0.0}
# features:
#   - polyline: [[x, y], [x, y], ...]
#     point_density: 20.0
# traffic:
#   - {id: 0, x: 30.0, y: 3.0, yaw: 0.0, speed: 4.0, footprint_half_extent: 1.6}
# ---------------------------------------------------------------------------

_TOP_LEVEL_KEYS = {"schema_version", "name", "seed", "lidar_range", "road",
                   "ego_start", "features", "traffic"}


def _require(mapping: dict, field: str, context: str = ""):
    name = f"{context}.{field}" if context else field
    if not isinstance(mapping, dict) or field not in mapping:
        raise ScenarioValidationError(name, "missing required field")
    return mapping[field]


def _number(mapping: dict, field: str, context: str = "") -> float:
    value = _require(mapping, field, context)
    name = f"{context}.{field}" if context else field
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioValidationError(name, f"expected a number, got {value!r}")
    return float(value)


def validate_scenario(scenario: Scenario) -> Scenario:
    """Check every Scenario invariant; raises ScenarioValidationError
    naming the offending field."""
    road = scenario.road
    if road.length <= 0.0:
        raise ScenarioValidationError("road.length", "must be > 0")
    if road.edge_l >= road.edge_r:
        raise ScenarioValidationError(
            "edge_l", f"must be < edge_r (got {road.edge_l} >= {road.edge_r})")
    if scenario.lidar_range <= 0.0:
        raise ScenarioValidationError("lidar_range", "must be > 0")
    if scenario.ego_start.x != 0.0:
        raise ScenarioValidationError("ego_start.x", "ego must start at x = 0")
    if not road.contains_y(scenario.ego_start.y):
        raise ScenarioValidationError("ego_start.y", "outside road limits")
    for i, region in enumerate(scenario.features):
        if len(region.polyline) < 2:
            raise ScenarioValidationError(
                f"features[{i}].polyline", "needs at least 2 points")
        if region.point_density <= 0.0:
            raise ScenarioValidationError(
                f"features[{i}].point_density", "must be > 0")
    for i, veh in enumerate(scenario.traffic):
        ctx = f"traffic[{i}]"
        if veh.speed < 0.0:
            raise ScenarioValidationError(f"{ctx}.speed", "must be >= 0")
        if veh.footprint_half_extent <= 0.0:
            raise ScenarioValidationError(
                f"{ctx}.footprint_half_extent", "must be > 0")
        if not (0.0 <= veh.pose.x <= road.length):
            raise ScenarioValidationError(f"{ctx}.x", "outside road at t=0")
        if not road.contains_y(veh.pose.y):
            raise ScenarioValidationError(f"{ctx}.y", "outside road at t=0")
    return scenario


def _scenario_from_mapping(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioParseError("scenario file must contain a mapping")
    unknown = set(doc) - _TOP_LEVEL_KEYS
    if unknown:
        raise ScenarioValidationError(sorted(unknown)[0], "unknown field")
    version = _require(doc, "schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioValidationError(
            "schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")

    road_doc = _require(doc, "road")
    road = RoadGeometry(
        length=_number(road_doc, "length", "road"),
        edge_l=_number(road_doc, "edge_l", "road"),
        edge_r=_number(road_doc, "edge_r", "road"),
    )
    ego_doc = _require(doc, "ego_start")
    ego = Pose2D(
        _number(ego_doc, "x", "ego_start"),
        _number(ego_doc, "y", "ego_start"),
        _number(ego_doc, "yaw", "ego_start"),
    )

    features = []
    for i, fdoc in enumerate(doc.get("features") or []):
        poly = _require(fdoc, "polyline", f"features[{i}]")
        try:
            polyline = tuple((float(p[0]), float(p[1])) for p in poly)
        except (TypeError, ValueError, IndexError):
            raise ScenarioValidationError(
                f"features[{i}].polyline", "expected a list of [x, y] pairs")
        features.append(FeatureRegion(
            polyline=polyline,
            point_density=_number(fdoc, "point_density", f"features[{i}]"),
        ))

    traffic = []
    for i, tdoc in enumerate(doc.get("traffic") or []):
        ctx = f"traffic[{i}]"
        traffic.append(TrafficVehicle(
            id=int(_number(tdoc, "id", ctx)),
            pose=Pose2D(_number(tdoc, "x", ctx), _number(tdoc, "y", ctx),
                        float(tdoc.get("yaw", 0.0))),
            speed=_number(tdoc, "speed", ctx),
            footprint_half_extent=_number(tdoc, "footprint_half_extent", ctx),
        ))

    scenario = Scenario(
        name=str(_require(doc, "name")),
        road=road,
        features=tuple(features),
        traffic=tuple(traffic),
        ego_start=ego,
        lidar_range=_number(doc, "lidar_range"),
        seed=int(_number(doc, "seed")),
    )
    return validate_scenario(scenario)


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario file. A bundled scene name
    (e.g. "scene2") is accepted in place of a path."""
    path = Path(path)
    if not path.exists() and path.name in BUNDLED_SCENARIOS:
        return load_bundled_scenario(path.name)
    if not path.exists():
        raise FileNotFoundError(f"scenario file not found: {path}")
    try:
        text = path.read_text()
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioParseError(f"{path}: {exc}") from exc
    return _scenario_from_mapping(doc)


def load_bundled_scenario(name: str) -> Scenario:
    if name not in BUNDLED_SCENARIOS:
        raise FileNotFoundError(
            f"unknown bundled scenario {name!r}; available: {BUNDLED_SCENARIOS}")
    ref = resources.files("driftnav").joinpath(f"scenarios/{name}.yaml")
    doc = yaml.safe_load(ref.read_text())
    return _scenario_from_mapping(doc)
