"""Drift metrics and the benchmark harness.

Four method arms per cell: the learned policy (ladfn / ladfn_f) against
the perception-unaware centerline tracker (vanilla / vanilla_f); +F arms
filter traffic returns before scan matching. Static scenes skip the +F
arms (filtering is a no-op without traffic). All arms within a cell
consume identical seeds so comparisons are paired.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from .control import SplinePath, plan_and_track, track_path
from .errors import LengthMismatch, TrackingDiverged
from .geometry import wrap_angle
from .mdp import ACTIONS, RewardConfig, StateVector, TrafficSlot
from .ppo import PolicyCheckpoint, policy_logits
from .scene import Scenario
from .simulator import DrivingSimulator, EvalEnv

ARMS = ("vanilla", "vanilla_f", "ladfn", "ladfn_f")
ARM_LABELS = {
    "vanilla": "Vanilla Stanley",
    "vanilla_f": "Vanilla Stanley + F",
    "ladfn": "LADFN",
    "ladfn_f": "LADFN + F",
}
METRICS = ("average_drift", "final_drift", "rotational_offset")
DEFAULT_RANGES = (45.0, 50.0, 55.0)
DEFAULT_VANILLA_SPEED = 5.0
# runs that fail before this fraction of the course report no drift metrics
MIN_PROGRESS_FOR_METRICS = 0.1


@dataclass
class TrajectoryReport:
    average_drift: float
    final_drift: float
    rotational_offset: float
    collided: bool
    lane_breach: bool
    goal_reached: bool
    scenario: str
    arm: str
    lidar_range: float
    seed: int


def compute_report(est: np.ndarray, gt: np.ndarray) -> tuple[float, float, float]:
    """(average_drift, final_drift, rotational_offset) between time-aligned
    (N, 3) pose sequences of x, y, yaw."""
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if est.shape != gt.shape or est.ndim != 2 or est.shape[1] != 3:
        raise LengthMismatch(f"est {est.shape} vs gt {gt.shape}")
    if len(est) == 0:
        raise LengthMismatch("empty trajectories")
    err = np.hypot(est[:, 0] - gt[:, 0], est[:, 1] - gt[:, 1])
    rot = abs(wrap_angle(est[-1, 2] - gt[-1, 2]))
    return float(np.mean(err)), float(err[-1]), float(rot)


def _centerline_path(scenario: Scenario) -> SplinePath:
    road = scenario.road
    xs = np.arange(0.0, road.length + 20.0 + 1e-9, 10.0)
    ys = np.full_like(xs, road.center_y)
    ys[0] = scenario.ego_start.y
    return SplinePath(np.column_stack([xs, ys]))


def traffic_matched_speed(scenario: Scenario) -> float:
    speeds = [v.speed for v in scenario.traffic]
    return float(np.mean(speeds)) if speeds else DEFAULT_VANILLA_SPEED


def run_vanilla_episode(scenario: Scenario, seed: int, filtering: bool,
                        lidar_range: float | None = None,
                        reward_config: RewardConfig | None = None) -> DrivingSimulator:
    """Perception-unaware baseline: track the road centerline at a speed
    matched to the surrounding traffic."""
    sim = DrivingSimulator(scenario, seed=seed, filtering=filtering,
                           lidar_range=lidar_range, reward_config=reward_config)
    path = _centerline_path(scenario)
    max_time = scenario.road.length / 1.5 + 90.0
    try:
        track_path(sim.vehicle, path, traffic_matched_speed(scenario),
                   hooks=sim.hooks, max_time=max_time)
    except TrackingDiverged:
        sim._finish("diverged")
    if not sim.done:
        sim._finish("timeout")
    return sim


SAFETY_MARGIN = 1.0


def masked_greedy_step(params, reward_config: RewardConfig):
    """Greedy action selection with a predictive safety mask.

    The teleport model used for planning cannot represent the swept path
    between waypoints, so actions whose predicted next state comes within
    collision_radius + SAFETY_MARGIN of a predicted traffic position are
    masked out of the argmax; if every action is unsafe, the one
    maximizing predicted clearance is taken.
    """
    keep_out = reward_config.collision_radius + SAFETY_MARGIN

    def clearance(state: StateVector, action) -> float:
        nx = state.x_e + action.a_x
        ny = state.y_e + action.a_y
        dists = [np.hypot(nx - (sl.x_tr + sl.v_tr), ny - sl.y_tr)
                 for sl in state.traffic if sl.tr_p]
        return min(dists) if dists else np.inf

    def step(state: StateVector) -> int:
        logits = policy_logits(params, state)[0]
        order = np.argsort(-logits)
        best_fallback = None
        best_clear = -np.inf
        for index in order:
            clear = clearance(state, ACTIONS[index])
            if clear >= keep_out:
                return int(index)
            if clear > best_clear:
                best_clear = clear
                best_fallback = int(index)
        return best_fallback

    return step


def run_policy_episode(scenario: Scenario, seed: int, filtering: bool,
                       checkpoint: PolicyCheckpoint,
                       lidar_range: float | None = None,
                       unroll_depth: int = 5,
                       reward_config: RewardConfig | None = None) -> DrivingSimulator:
    env = EvalEnv(scenario, seed=seed, filtering=filtering,
                  lidar_range=lidar_range, reward_config=reward_config)
    policy_step = masked_greedy_step(checkpoint.params, env.reward_config)
    plan_and_track(policy_step, env, n=unroll_depth)
    if not env.sim.done:
        env.sim._finish("timeout")
    return env.sim


def run_episode(scenario: Scenario, arm: str, lidar_range: float, seed: int,
                checkpoint: PolicyCheckpoint | None = None,
                unroll_depth: int = 5) -> TrajectoryReport:
    filtering = arm.endswith("_f")
    if arm.startswith("vanilla"):
        sim = run_vanilla_episode(scenario, seed, filtering, lidar_range)
    elif arm.startswith("ladfn"):
        if checkpoint is None:
            raise ValueError("policy arms need a checkpoint")
        sim = run_policy_episode(scenario, seed, filtering, checkpoint,
                                 lidar_range, unroll_depth)
    else:
        raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")

    est, gt = sim.est_gt_arrays()
    failed = sim.outcome in ("collision", "lane_breach", "diverged")
    progress = float(gt[:, 0].max()) / scenario.road.length if len(gt) else 0.0
    if failed and progress < MIN_PROGRESS_FOR_METRICS:
        avg = final = rot = math.nan
    else:
        avg, final, rot = compute_report(est, gt)
    return TrajectoryReport(
        average_drift=avg, final_drift=final, rotational_offset=rot,
        collided=sim.outcome == "collision",
        lane_breach=sim.outcome in ("lane_breach", "diverged"),
        goal_reached=sim.outcome == "goal",
        scenario=scenario.name, arm=arm, lidar_range=float(lidar_range),
        seed=int(seed))


def arms_for_scenario(scenario: Scenario) -> tuple[str, ...]:
    if scenario.traffic:
        return ARMS
    return ("vanilla", "ladfn")    # filtering is a no-op without traffic


@dataclass
class BenchmarkTable:
    rows: list[TrajectoryReport]
    seeds: list[int]
    ranges: list[float]

    def cell_rows(self, scenario: str, arm: str,
                  lidar_range: float) -> list[TrajectoryReport]:
        return [r for r in self.rows
                if (r.scenario, r.arm, r.lidar_range) == (scenario, arm, lidar_range)]

    def aggregate(self) -> list[dict]:
        cells = sorted({(r.scenario, r.arm, r.lidar_range) for r in self.rows})
        out = []
        for scenario, arm, rng in cells:
            rows = self.cell_rows(scenario, arm, rng)
            entry = {
                "scenario": scenario, "arm": arm, "lidar_range": rng,
                "n_seeds": len(rows),
                "n_collided": sum(r.collided for r in rows),
                "n_lane_breach": sum(r.lane_breach for r in rows),
                "n_goal": sum(r.goal_reached for r in rows),
            }
            for metric in METRICS:
                vals = np.array([getattr(r, metric) for r in rows])
                vals = vals[np.isfinite(vals)]
                entry[f"{metric}_n"] = len(vals)
                entry[f"{metric}_mean"] = float(np.mean(vals)) if len(vals) else math.nan
                entry[f"{metric}_std"] = (float(np.std(vals, ddof=1))
                                          if len(vals) > 1 else math.nan)
            out.append(entry)
        return out

    def improvement_factors(self) -> list[dict]:
        """vanilla mean / ladfn mean per scenario, range, and metric, for
        both filtering variants."""
        agg = {(e["scenario"], e["arm"], e["lidar_range"]): e
               for e in self.aggregate()}
        out = []
        for (scenario, arm, rng), entry in sorted(agg.items()):
            if not arm.startswith("ladfn"):
                continue
            base = agg.get((scenario, arm.replace("ladfn", "vanilla"), rng))
            if base is None:
                continue
            rec = {"scenario": scenario, "lidar_range": rng,
                   "pair": f"{arm.replace('ladfn', 'vanilla')}/{arm}"}
            for metric in METRICS:
                num, den = base[f"{metric}_mean"], entry[f"{metric}_mean"]
                rec[metric] = num / den if den and np.isfinite(num) and np.isfinite(den) else math.nan
            out.append(rec)
        return out


def _run_cell_seed(args) -> TrajectoryReport:
    scenario, arm, rng, seed, checkpoint, unroll_depth = args
    return run_episode(scenario, arm, rng, seed, checkpoint, unroll_depth)


def run_benchmark(scenarios: list[Scenario], checkpoint: PolicyCheckpoint,
                  seeds: list[int], ranges=DEFAULT_RANGES, jobs: int = 1,
                  unroll_depth: int = 5, progress_fn=None) -> BenchmarkTable:
    """Run every (scenario x arm x lidar range x seed) episode. Per-run
    failures become collision/breach rows; nothing aborts the sweep."""
    tasks = []
    for scenario in scenarios:
        for rng in ranges:
            for arm in arms_for_scenario(scenario):
                for seed in seeds:
                    tasks.append((scenario, arm, float(rng), int(seed),
                                  checkpoint if arm.startswith("ladfn") else None,
                                  unroll_depth))
    rows = []
    if jobs > 1:
        with Pool(jobs) as pool:
            for i, row in enumerate(pool.imap(_run_cell_seed, tasks)):
                rows.append(row)
                if progress_fn:
                    progress_fn(i + 1, len(tasks), row)
    else:
        for i, task in enumerate(tasks):
            row = _run_cell_seed(task)
            rows.append(row)
            if progress_fn:
                progress_fn(i + 1, len(tasks), row)
    return BenchmarkTable(rows=rows, seeds=list(seeds),
                          ranges=[float(r) for r in ranges])


RUNS_CSV_HEADER = ["scenario", "arm", "lidar_range", "seed", "average_drift",
                   "final_drift", "rotational_offset", "collided",
                   "lane_breach", "goal_reached"]


def emit_report(table: BenchmarkTable, out_dir: str | Path,
                config_echo: dict | None = None) -> dict[str, Path]:
    """Write runs.csv (raw rows), report.csv (one row per cell per metric,
    collision counts as the distinguishing marker), and summary.json with
    improvement factors and the full config echo."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs_path = out_dir / "runs.csv"
    with open(runs_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUNS_CSV_HEADER)
        for r in table.rows:
            writer.writerow([r.scenario, r.arm, repr(r.lidar_range), r.seed,
                             repr(r.average_drift), repr(r.final_drift),
                             repr(r.rotational_offset), int(r.collided),
                             int(r.lane_breach), int(r.goal_reached)])

    report_path = out_dir / "report.csv"
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "arm", "lidar_range", "metric", "mean",
                         "std", "n_valid", "n_seeds", "n_collided",
                         "n_lane_breach", "n_goal"])
        for entry in table.aggregate():
            for metric in METRICS:
                writer.writerow([
                    entry["scenario"], entry["arm"], repr(entry["lidar_range"]),
                    metric, repr(entry[f"{metric}_mean"]),
                    repr(entry[f"{metric}_std"]), entry[f"{metric}_n"],
                    entry["n_seeds"], entry["n_collided"],
                    entry["n_lane_breach"], entry["n_goal"]])

    summary_path = out_dir / "summary.json"
    summary = {
        "seeds": table.seeds,
        "ranges": table.ranges,
        "arms": {arm: ARM_LABELS[arm] for arm in ARMS},
        "aggregate": table.aggregate(),
        "improvement_factors": table.improvement_factors(),
        "config": config_echo or {},
    }
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, default=float)
    return {"runs": runs_path, "report": report_path, "summary": summary_path}


def parse_runs_csv(path: str | Path) -> BenchmarkTable:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != RUNS_CSV_HEADER:
            raise ValueError(f"unexpected runs CSV header: {header}")
        for row in reader:
            rows.append(TrajectoryReport(
                scenario=row[0], arm=row[1], lidar_range=float(row[2]),
                seed=int(row[3]), average_drift=float(row[4]),
                final_drift=float(row[5]), rotational_offset=float(row[6]),
                collided=bool(int(row[7])), lane_breach=bool(int(row[8])),
                goal_reached=bool(int(row[9]))))
    seeds = sorted({r.seed for r in rows})
    ranges = sorted({r.lidar_range for r in rows})
    return BenchmarkTable(rows=rows, seeds=seeds, ranges=ranges)


def report_as_dict(report: TrajectoryReport) -> dict:
    return dataclasses.asdict(report)
