#!/usr/bin/env python3
"""Regenerate the bundled benchmark scenes.

Texture-rich structure is built from compact two-depth facade complexes
(a front face with a gap, a recessed face behind, one jamb) spaced tens
of meters apart along one side of the road. Compact complexes make
proximity pay: the subtended angle, and with it the number of returns,
falls off linearly as the ego moves away. Spacings and dimensions are
drawn aperiodically; uniform pitches alias with per-scan motion and let
the matcher lock in one pitch off.
"""

import sys
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "src" / "driftnav" / "scenarios"


def facade_complex(cx, y, side, rng):
    """Compact ~10 m wide facade at two depths; side=+1 opens away from the
    road on the right, -1 mirrors on the left."""
    w1 = round(float(rng.uniform(3.0, 4.5)), 2)
    w2 = round(float(rng.uniform(2.5, 4.0)), 2)
    gap = round(float(rng.uniform(1.2, 2.0)), 2)
    d = round(float(rng.uniform(2.0, 3.0)) * side, 2)
    jx = round(cx + w1 + float(rng.uniform(0.2, 0.8)), 2)
    x1 = round(cx + w1, 2)
    x2 = round(x1 + gap, 2)
    x3 = round(x2 + w2, 2)
    yd = round(y + d, 2)
    dens = 30.0
    return [
        {"point_density": dens, "polyline": [[round(cx, 2), y], [x1, y]]},
        {"point_density": dens, "polyline": [[x1, yd], [x3, yd]]},
        {"point_density": dens, "polyline": [[x2, y], [x3, y]]},
        {"point_density": dens, "polyline": [[jx, y], [jx, yd]]},
    ]


def cluster_row(x0, x1, y, side, seed, spacing=(26.0, 38.0)):
    rng = np.random.default_rng(seed)
    regions = []
    x = x0 + float(rng.uniform(0.0, 8.0))
    while x < x1:
        regions += facade_complex(x, y, side, rng)
        x += float(rng.uniform(*spacing))
    return regions


def scene(name, seed, length, features, traffic):
    return {
        "schema_version": 1,
        "name": name,
        "seed": seed,
        "lidar_range": 50.0,
        "road": {"length": float(length), "edge_l": -6.0, "edge_r": 6.0},
        "ego_start": {"x": 0.0, "y": 0.0, "yaw": 0.0},
        "features": features,
        "traffic": traffic,
    }


def van(vid, x, y, speed):
    return {"id": vid, "x": float(x), "y": float(y), "yaw": 0.0,
            "speed": float(speed), "footprint_half_extent": 1.6}


def build():
    scenes = {}

    # scene1: short static run, texture on the right only
    scenes["scene1"] = scene(
        "scene1", 1, 100.0, cluster_row(-12, 112, 11.0, +1, seed=101), [])

    # scene2: dynamic, two vans around the matched speed, texture right
    scenes["scene2"] = scene(
        "scene2", 2, 200.0, cluster_row(-12, 212, 11.0, +1, seed=102),
        [van(0, 25.0, -3.5, 3.0), van(1, 48.0, 3.5, 4.2)])

    # scene3: dynamic, texture switches sides mid-run, two vans
    scenes["scene3"] = scene(
        "scene3", 3, 300.0,
        cluster_row(-12, 160, 11.0, +1, seed=103)
        + cluster_row(142, 312, -11.0, -1, seed=104),
        [van(0, 15.0, 3.5, 3.2), van(1, 45.0, -3.5, 4.8)])

    # scene4: static, texture left
    scenes["scene4"] = scene(
        "scene4", 4, 150.0, cluster_row(-12, 162, -11.0, -1, seed=105), [])

    # scene5: long dynamic run, texture left, two vans
    scenes["scene5"] = scene(
        "scene5", 5, 500.0, cluster_row(-12, 512, -11.0, -1, seed=107),
        [van(0, 12.0, -3.5, 3.4), van(1, 32.0, 3.5, 5.0)])

    return scenes


def emit(doc, path):
    lines = ["# Bundled benchmark scene (regenerate with tools/gen_scenarios.py)"]
    lines.append(f"schema_version: {doc['schema_version']}")
    lines.append(f"name: {doc['name']}")
    lines.append(f"seed: {doc['seed']}")
    lines.append(f"lidar_range: {doc['lidar_range']}")
    road = doc["road"]
    lines.append(f"road: {{length: {road['length']}, edge_l: {road['edge_l']}, "
                 f"edge_r: {road['edge_r']}}}")
    ego = doc["ego_start"]
    lines.append(f"ego_start: {{x: {ego['x']}, y: {ego['y']}, yaw: {ego['yaw']}}}")
    lines.append("features:")
    for region in doc["features"]:
        poly = ", ".join(f"[{p[0]}, {p[1]}]" for p in region["polyline"])
        lines.append(f"  - point_density: {region['point_density']}")
        lines.append(f"    polyline: [{poly}]")
    if doc["traffic"]:
        lines.append("traffic:")
        for v in doc["traffic"]:
            lines.append(f"  - {{id: {v['id']}, x: {v['x']}, y: {v['y']}, "
                         f"yaw: {v['yaw']}, speed: {v['speed']}, "
                         f"footprint_half_extent: {v['footprint_half_extent']}}}")
    else:
        lines.append("traffic: []")
    path.write_text("\n".join(lines) + "\n")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, doc in build().items():
        emit(doc, OUT / f"{name}.yaml")
        print(f"wrote {OUT / (name + '.yaml')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
