"""The waypoint-selection MDP.

State assembly in the RL frame, the 20-action discrete waypoint space,
the three-part reward (forward progress G, feature proximity F, traffic
separation T, composed as R = G + (1 - P) * F + T with P the traffic-
proximity gate), a fast teleport-dynamics environment for training, and
initial-state sampling over ego/traffic/feature configurations.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import StepAfterDone
from .scene import RoadGeometry

A_X_VALUES = (1.0, 2.0, 3.0, 5.0)
A_Y_VALUES = (-2.0, -1.0, 0.0, 1.0, 2.0)
N_ACTIONS = len(A_X_VALUES) * len(A_Y_VALUES)

EPISODE_LENGTH = 10
STEP_DT = 1.0


@dataclass(frozen=True)
class Action:
    index: int
    a_x: float
    a_y: float


ACTIONS: tuple[Action, ...] = tuple(
    Action(index=5 * ix + iy, a_x=ax, a_y=ay)
    for ix, ax in enumerate(A_X_VALUES)
    for iy, ay in enumerate(A_Y_VALUES)
)


def action_from_index(index: int) -> Action:
    if not 0 <= index < N_ACTIONS:
        raise ValueError(f"action index {index} outside 0..{N_ACTIONS - 1}")
    return ACTIONS[index]


def action_index(a_x: float, a_y: float) -> int:
    return 5 * A_X_VALUES.index(a_x) + A_Y_VALUES.index(a_y)


@dataclass(frozen=True)
class TrafficSlot:
    tr_p: float = 0.0
    x_tr: float = 0.0
    y_tr: float = 0.0
    v_tr: float = 0.0


EMPTY_SLOT = TrafficSlot()


@dataclass(frozen=True)
class StateVector:
    """RL-frame observation. Absent traffic slots are zero-filled with
    tr_p = 0; y_c_norm is the feature centroid clipped and scaled to
    [-1, 1] across the road width."""

    x_e: float
    y_e: float
    y_c_norm: float
    edge_l: float
    edge_r: float
    traffic: tuple[TrafficSlot, ...]

    def __post_init__(self):
        if not -1.0 <= self.y_c_norm <= 1.0:
            raise ValueError(f"y_c_norm {self.y_c_norm} outside [-1, 1]")
        for slot in self.traffic:
            if slot.tr_p == 0.0 and (slot.x_tr, slot.y_tr, slot.v_tr) != (0.0, 0.0, 0.0):
                raise ValueError("absent traffic slot must be zero-filled")

    @property
    def n_max(self) -> int:
        return len(self.traffic)

    def as_array(self) -> np.ndarray:
        vals = [self.x_e, self.y_e, self.y_c_norm, self.edge_l, self.edge_r]
        for slot in self.traffic:
            vals.extend([slot.tr_p, slot.x_tr, slot.y_tr, slot.v_tr])
        return np.array(vals)

    @staticmethod
    def from_array(arr: np.ndarray, n_max: int = 2) -> "StateVector":
        arr = np.asarray(arr, dtype=float)
        slots = tuple(
            TrafficSlot(*arr[5 + 4 * i: 9 + 4 * i]) for i in range(n_max))
        return StateVector(x_e=float(arr[0]), y_e=float(arr[1]),
                           y_c_norm=float(arr[2]), edge_l=float(arr[3]),
                           edge_r=float(arr[4]), traffic=slots)

    @staticmethod
    def width(n_max: int = 2) -> int:
        return 5 + 4 * n_max


def normalize_lateral(y: float, edge_l: float, edge_r: float) -> float:
    """Affine map of a lateral coordinate onto [-1, 1] across the road."""
    return 2.0 * (y - edge_l) / (edge_r - edge_l) - 1.0


def build_state(ego_xy: tuple[float, float], y_c: float, road: RoadGeometry,
                traffic: Sequence, n_max: int = 2) -> StateVector:
    """Assemble the observation from a simulation snapshot.

    `traffic` is a sequence of scene.TrafficVehicle; slots are filled in
    vehicle-id order (nearest n_max kept if there are more vehicles than
    slots) so a vehicle occupies the same slot across an episode.
    """
    y_c_norm = float(np.clip(normalize_lateral(y_c, road.edge_l, road.edge_r),
                             -1.0, 1.0))
    live = [v for v in traffic if v.present]
    if len(live) > n_max:
        d = [np.hypot(v.pose.x - ego_xy[0], v.pose.y - ego_xy[1]) for v in live]
        live = [v for _, v in sorted(zip(d, live), key=lambda t: t[0])][:n_max]
    live.sort(key=lambda v: v.id)
    slots = [TrafficSlot(1.0, v.pose.x, v.pose.y, v.speed) for v in live]
    slots.extend([EMPTY_SLOT] * (n_max - len(slots)))
    return StateVector(x_e=float(ego_xy[0]), y_e=float(ego_xy[1]),
                       y_c_norm=y_c_norm, edge_l=road.edge_l,
                       edge_r=road.edge_r, traffic=tuple(slots))


@dataclass(frozen=True)
class RewardConfig:
    k1: float = 1.0
    k2: float = 0.5
    k3: float = 1.0
    k4: float = 0.5
    odd_power: int = 3
    w_fwd: float = 0.2
    terminal_penalty: float = 10.0
    collision_radius: float = 3.0
    proximity_radius: float = 10.0

    def __post_init__(self):
        if self.odd_power < 1 or self.odd_power % 2 == 0:
            raise ValueError("odd_power must be an odd positive integer")
        if self.collision_radius >= self.proximity_radius:
            raise ValueError("collision_radius must be < proximity_radius")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class RewardBreakdown:
    G: float
    F: float
    T: float
    P: int
    p_flags: tuple[int, ...]
    total: float
    terminal_violation: bool = False
    collided: bool = False
    lane_breach: bool = False


def proximity_flags(state: StateVector, config: RewardConfig) -> tuple[int, ...]:
    flags = []
    for slot in state.traffic:
        if slot.tr_p == 0.0:
            flags.append(0)
            continue
        dist = np.hypot(state.x_e - slot.x_tr, state.y_e - slot.y_tr)
        flags.append(int(dist <= config.proximity_radius))
    return tuple(flags)


def feature_reward(state: StateVector, action: Action,
                   config: RewardConfig) -> float:
    """Perception shaping toward the feature-rich side of the road.

    The first term rewards ego and feature centroid sharing a side; the
    odd power gates it off when features flank both sides. The second term
    penalizes lateral motion exactly in that both-sides regime.
    """
    yc_o = state.y_c_norm ** config.odd_power
    y_e_hat = normalize_lateral(state.y_e, state.edge_l, state.edge_r)
    return (config.k1 * yc_o * y_e_hat
            - config.k2 * (1.0 - abs(yc_o)) * abs(action.a_y))


def traffic_reward(state: StateVector, action: Action, next_state: StateVector,
                   config: RewardConfig) -> tuple[float, tuple[int, ...]]:
    """Separation shaping: inside the proximity region, growing the
    per-axis distance to a traffic vehicle earns reward, shrinking it
    costs. Gated per vehicle by the proximity flag evaluated on `state`."""
    flags = proximity_flags(state, config)
    total = 0.0
    for slot, nslot, p in zip(state.traffic, next_state.traffic, flags):
        if not p:
            continue
        dx_now = abs(state.x_e - slot.x_tr)
        dy_now = abs(state.y_e - slot.y_tr)
        dx_next = abs(next_state.x_e - nslot.x_tr)
        dy_next = abs(next_state.y_e - nslot.y_tr)
        total += config.k3 * (dx_next - dx_now) + config.k4 * (dy_next - dy_now)
    return total, flags


def check_violation(next_state: StateVector,
                    config: RewardConfig) -> tuple[bool, bool]:
    """(collided, lane_breach) evaluated on the post-transition state."""
    collided = False
    for slot in next_state.traffic:
        if slot.tr_p == 0.0:
            continue
        if np.hypot(next_state.x_e - slot.x_tr,
                    next_state.y_e - slot.y_tr) < config.collision_radius:
            collided = True
    breach = not (next_state.edge_l <= next_state.y_e <= next_state.edge_r)
    return collided, breach


def reward(state: StateVector, action: Action, next_state: StateVector,
           config: RewardConfig) -> RewardBreakdown:
    """Total reward for one transition: R = G + (1 - P) * F + T.

    Colliding or leaving the road voids the shaping terms for that step:
    G = -terminal_penalty, F = T = 0, and the episode terminates.
    """
    collided, breach = check_violation(next_state, config)
    flags = proximity_flags(state, config)
    p_gate = int(any(flags))
    if collided or breach:
        return RewardBreakdown(G=-config.terminal_penalty, F=0.0, T=0.0,
                               P=p_gate, p_flags=flags,
                               total=-config.terminal_penalty,
                               terminal_violation=True,
                               collided=collided, lane_breach=breach)
    g = config.w_fwd * action.a_x
    f = feature_reward(state, action, config)
    t, flags = traffic_reward(state, action, next_state, config)
    total = g + (1 - p_gate) * f + t
    return RewardBreakdown(G=g, F=f, T=t, P=p_gate, p_flags=flags, total=total)


@dataclass
class SamplerBounds:
    """Ranges for synthetic initial-state generation."""

    road: RoadGeometry = field(
        default_factory=lambda: RoadGeometry(length=500.0, edge_l=-6.0, edge_r=6.0))
    x_range: tuple[float, float] = (0.0, 500.0)
    traffic_presence_prob: float = 0.5
    traffic_dx_range: tuple[float, float] = (-30.0, 30.0)
    speed_range: tuple[float, float] = (0.0, 8.0)
    n_max: int = 2
    y_c_norm_fixed: float | None = None    # curriculum override
    collision_radius: float = 3.0


def sample_initial_state(rng: np.random.Generator,
                         bounds: SamplerBounds) -> StateVector:
    """Uniform sampling over ego lateral position, traffic presence,
    positions and speeds, and the feature-centroid position. Traffic is
    rejection-sampled outside the collision radius of the ego."""
    road = bounds.road
    x_e = rng.uniform(*bounds.x_range)
    y_e = rng.uniform(road.edge_l, road.edge_r)
    if bounds.y_c_norm_fixed is not None:
        y_c_norm = float(bounds.y_c_norm_fixed)
    else:
        y_c_norm = rng.uniform(-1.0, 1.0)

    slots = []
    for _ in range(bounds.n_max):
        if rng.uniform() >= bounds.traffic_presence_prob:
            slots.append(EMPTY_SLOT)
            continue
        while True:
            x_tr = x_e + rng.uniform(*bounds.traffic_dx_range)
            y_tr = rng.uniform(road.edge_l, road.edge_r)
            if np.hypot(x_e - x_tr, y_e - y_tr) >= bounds.collision_radius:
                break
        slots.append(TrafficSlot(1.0, x_tr, y_tr, rng.uniform(*bounds.speed_range)))
    return StateVector(x_e=x_e, y_e=y_e, y_c_norm=y_c_norm,
                       edge_l=road.edge_l, edge_r=road.edge_r,
                       traffic=tuple(slots))


class TrainingEnv:
    """Teleport-dynamics environment for policy training.

    The ego jumps by the chosen waypoint offset each step, traffic advances
    at constant velocity for STEP_DT, and the feature-centroid observation
    is held constant for the whole (at most EPISODE_LENGTH-step) episode.
    """

    def __init__(self, bounds: SamplerBounds | None = None,
                 reward_config: RewardConfig | None = None,
                 seed: int = 0):
        self.bounds = bounds or SamplerBounds()
        self.reward_config = reward_config or RewardConfig()
        self.rng = np.random.default_rng(seed)
        self.state: StateVector | None = None
        self.steps = 0
        self.done = True

    def reset(self, state: StateVector | None = None) -> StateVector:
        self.state = state or sample_initial_state(self.rng, self.bounds)
        self.steps = 0
        self.done = False
        return self.state

    def step(self, index: int) -> tuple[StateVector, RewardBreakdown, bool]:
        if self.done:
            raise StepAfterDone("call reset() before stepping")
        action = action_from_index(index)
        s = self.state
        slots = tuple(
            TrafficSlot(slot.tr_p, slot.x_tr + slot.v_tr * STEP_DT,
                        slot.y_tr, slot.v_tr)
            if slot.tr_p else EMPTY_SLOT
            for slot in s.traffic)
        next_state = StateVector(x_e=s.x_e + action.a_x, y_e=s.y_e + action.a_y,
                                 y_c_norm=s.y_c_norm, edge_l=s.edge_l,
                                 edge_r=s.edge_r, traffic=slots)
        breakdown = reward(s, action, next_state, self.reward_config)
        self.steps += 1
        self.done = breakdown.terminal_violation or self.steps >= EPISODE_LENGTH
        self.state = next_state
        return next_state, breakdown, self.done


def unroll_teleport(state: StateVector, indices: Sequence[int]) -> list[StateVector]:
    """Predictive teleport rollout used at inference: same dynamics as
    TrainingEnv but without rewards or termination."""
    out = []
    s = state
    for index in indices:
        action = action_from_index(index)
        slots = tuple(
            TrafficSlot(slot.tr_p, slot.x_tr + slot.v_tr * STEP_DT,
                        slot.y_tr, slot.v_tr)
            if slot.tr_p else EMPTY_SLOT
            for slot in s.traffic)
        s = StateVector(x_e=s.x_e + action.a_x, y_e=s.y_e + action.a_y,
                        y_c_norm=s.y_c_norm, edge_l=s.edge_l,
                        edge_r=s.edge_r, traffic=slots)
        out.append(s)
    return out


TRANSITION_CSV_FIELDS = ["step", "action_index", "G", "F", "T", "P",
                         "total", "done"]


def write_transition_csv(rows: list[dict], config: RewardConfig,
                         path: str | Path) -> None:
    """Transition audit log; the reward constants are echoed in a comment
    header so every log is self-describing."""
    with open(path, "w", newline="") as fh:
        fh.write("# reward_config: " + repr(config.as_dict()) + "\n")
        writer = csv.DictWriter(fh, fieldnames=TRANSITION_CSV_FIELDS
                                + [f"s{i}" for i in range(len(rows[0]["state"]))])
        writer.writeheader()
        for row in rows:
            flat = {k: row[k] for k in TRANSITION_CSV_FIELDS}
            for i, v in enumerate(row["state"]):
                flat[f"s{i}"] = repr(float(v))
            writer.writerow(flat)
