"""Synthetic intersection scenarios with known multimodal ground truth.

Scenes are built around a junction (straight road, T, or 4-way). Focal
vehicles approach at constant speed so the history carries no hint of the
chosen maneuver; the future follows a discrete latent intent (left /
straight / right / stop). Per focal agent the metadata records the
endpoint each feasible intent would have produced from the same state,
which gives evaluation an exact multimodality oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, InputError
from .types import ROAD_TYPES, AgentTrack, MapPolyline, Pose, Scene, wrap_angle
from .transforms import to_world

INTENTS = ("left", "straight", "right", "stop")

_LANE = float(ROAD_TYPES.index("lane"))
_TURN = float(ROAD_TYPES.index("turn"))


@dataclass
class GeneratorConfig:
    topology: str = "four_way"            # straight | t_intersection | four_way
    num_agents: int = 4
    num_focal: int = 2
    dt: float = 0.1
    t_history: int = 11
    t_future: int = 20
    intent_probs: dict = field(default_factory=lambda: {
        "left": 1 / 3, "straight": 1 / 3, "right": 1 / 3, "stop": 0.0})
    speed_range: tuple = (5.0, 11.0)
    entry_distance_range: tuple = (3.0, 7.0)
    turn_speed: float = 7.0               # cornering cap, shed after t=0 only
    turn_decel: float = 4.0
    lane_offset: float = 1.75
    junction_half: float = 4.5
    arm_length: float = 30.0
    point_spacing: float = 3.0
    points_per_polyline: int = 10
    lateral_noise: float = 0.25
    arm_angle_noise: float = 0.015        # rad; breaks exact arm symmetry
    map_point_noise: float = 0.02         # m; keeps pairwise geometry generic
    world_shift: float = 50.0             # random SE(2) placement of the scene

    def validate(self):
        problems = []
        if self.topology not in ("straight", "t_intersection", "four_way"):
            problems.append(f"generator.topology: unknown {self.topology!r}")
        if self.num_agents < 1:
            problems.append("generator.num_agents: must be >= 1")
        if not (1 <= self.num_focal <= self.num_agents):
            problems.append("generator.num_focal: must be in [1, num_agents]")
        if self.dt <= 0:
            problems.append("generator.dt: must be > 0")
        if self.t_history < 1 or self.t_future < 1:
            problems.append("generator.t_history/t_future: must be >= 1")
        probs = self.intent_probs
        if set(probs) - set(INTENTS) or abs(sum(probs.values()) - 1.0) > 1e-9 \
                or any(p < 0 for p in probs.values()):
            problems.append("generator.intent_probs: must be a distribution over "
                            f"{INTENTS}")
        if self.topology == "straight":
            if probs.get("left", 0) > 0 or probs.get("right", 0) > 0:
                problems.append("generator.intent_probs: turns infeasible on a straight road")
        if problems:
            raise ConfigError(problems)
        return self


# ---------------------------------------------------------------------------
# geometry

def _resample(points, spacing):
    """Resample a polyline at ~uniform arc-length spacing."""
    points = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    n = max(2, int(round(total / spacing)) + 1)
    si = np.linspace(0.0, total, n)
    return np.column_stack([np.interp(si, s, points[:, 0]),
                            np.interp(si, s, points[:, 1])])


def _arc(center, radius, a0, a1, n=24):
    ang = np.linspace(a0, a1, n)
    return np.column_stack([center[0] + radius * np.cos(ang),
                            center[1] + radius * np.sin(ang)])


class _Junction:
    """Canonical junction geometry; approaches are rotations of "from south".

    In the canonical approach the vehicle drives north (heading pi/2) on
    the lane x = +lane_offset and enters the junction at y = -junction_half.
    Arm axes carry a small per-scene angular jitter so no two arms are
    exactly perpendicular or anti-parallel (exact symmetry would make
    nearest-neighbor ties and angle wraps ambiguous).
    """

    def __init__(self, cfg: GeneratorConfig, arm_jitter=None):
        self.cfg = cfg
        self.arms = {"four_way": (0, 1, 2, 3),
                     "t_intersection": (0, 1, 3),   # south, east, west
                     "straight": (1, 3)}[cfg.topology]
        self.arm_jitter = np.zeros(4) if arm_jitter is None else np.asarray(arm_jitter)

    def arm_angle(self, arm: int) -> float:
        # arm 0 extends south, 1 east, 2 north, 3 west; approach direction
        # from arm 0 is +y, i.e. rotation 0 of the canonical construction
        return arm * np.pi / 2.0 + float(self.arm_jitter[arm])

    def feasible(self, arm: int, intent: str) -> bool:
        exit_arm = {"left": (arm + 3) % 4, "straight": (arm + 2) % 4,
                    "right": (arm + 1) % 4}
        if intent == "stop":
            return self.cfg.topology != "straight"
        if self.cfg.topology == "straight" and intent != "straight":
            return False
        return exit_arm[intent] in self.arms

    def approach_arms(self, intent: str):
        return [a for a in self.arms if self.feasible(a, intent)]

    def _canonical_path(self, intent: str, lane: float):
        """Dense centerline for one maneuver in the canonical (south) frame."""
        cfg = self.cfg
        j, arm = cfg.junction_half, cfg.arm_length
        approach = np.array([[lane, -arm], [lane, -j]])
        if intent in ("straight", "stop"):
            rest = np.array([[lane, -j], [lane, arm]])
            pts = np.vstack([approach, rest[1:]])
        elif intent == "right":
            r = j - lane
            turn = _arc((lane + r, -j), r, np.pi, np.pi / 2)
            out = np.array([[j, -lane], [arm, -lane]])
            pts = np.vstack([approach, turn[1:], out[1:]])
        elif intent == "left":
            r = j + lane
            turn = _arc((lane - r, -j), r, 0.0, np.pi / 2)
            out = np.array([[-j, lane], [-arm, lane]])
            pts = np.vstack([approach, turn[1:], out[1:]])
        else:
            raise InputError(f"unknown intent {intent!r}")
        return _resample(pts, 0.25)

    def path(self, arm: int, intent: str, lane_offset: float):
        """Dense maneuver path rotated onto the requested approach arm."""
        pts = self._canonical_path(intent, lane_offset)
        a = self.arm_angle(arm)
        c, s = np.cos(a), np.sin(a)
        return pts @ np.array([[c, s], [-s, c]])

    def entry_arclength(self, arm: int, intent: str, lane_offset: float) -> float:
        return self.cfg.arm_length - self.cfg.junction_half

    def lane_polylines(self):
        """Map polylines: arm lanes, through-junction links, turn arcs."""
        cfg = self.cfg
        j, arm_len, lane = cfg.junction_half, cfg.arm_length, cfg.lane_offset
        polys = []

        def rotated(pts, arm, code):
            a = self.arm_angle(arm)
            c, s = np.cos(a), np.sin(a)
            xy = _resample(pts, cfg.point_spacing if code == _LANE else 1.2)
            xy = xy @ np.array([[c, s], [-s, c]])
            polys.append(np.column_stack([xy, np.full(len(xy), code)]))

        for arm in self.arms:
            # inbound lane (toward junction) and outbound lane (away)
            rotated(np.array([[lane, -arm_len], [lane, -j]]), arm, _LANE)
            rotated(np.array([[-lane, -j], [-lane, -arm_len]]), arm, _LANE)
            if self.feasible(arm, "straight"):
                rotated(np.array([[lane, -j], [lane, j]]), arm, _LANE)
            if self.feasible(arm, "right"):
                r = j - lane
                rotated(_arc((lane + r, -j), r, np.pi, np.pi / 2, 8), arm, _TURN)
            if self.feasible(arm, "left"):
                r = j + lane
                rotated(_arc((lane - r, -j), r, 0.0, np.pi / 2, 8), arm, _TURN)
        return polys


# ---------------------------------------------------------------------------
# kinematics

def _rollout(path, s0, speed, intent, cfg, stop_at=None):
    """States (x, y, heading, vx, vy) from s0 along ``path``.

    History (t <= 0) runs at constant approach speed so it carries no hint
    of the intent; turning futures shed speed to the cornering cap after
    t = 0, stop futures brake to the stop line (that braking does start in
    the history, which is what makes "stop" recognizable).
    """
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    s_grid = np.concatenate([[0.0], np.cumsum(seg)])
    total = s_grid[-1]
    turning = intent in ("left", "right")

    def v_at(s, t):
        if intent == "stop":
            d = max(0.0, stop_at - s)
            return min(speed, np.sqrt(2.0 * 3.0 * d))
        if turning and t > 0.0:
            return max(min(speed, cfg.turn_speed), speed - cfg.turn_decel * t)
        return speed

    n_hist, n_fut, dt = cfg.t_history, cfg.t_future, cfg.dt
    sub = 4
    s_t = np.empty(n_hist + n_fut)
    v_t = np.empty(n_hist + n_fut)
    s = s0
    s_t[n_hist - 1] = s
    v_t[n_hist - 1] = v_at(s, 0.0)
    for i in range(n_hist - 2, -1, -1):
        t = (i - (n_hist - 1)) * dt
        for _ in range(sub):
            s -= v_at(s, t) * dt / sub
        s_t[i] = s
        v_t[i] = v_at(s, t)
    s = s0
    for i in range(n_hist, n_hist + n_fut):
        t = (i - (n_hist - 1)) * dt
        for _ in range(sub):
            s += v_at(s, t) * dt / sub
        s_t[i] = s
        v_t[i] = v_at(s, t)

    s_t = np.clip(s_t, 0.0, total - 1e-9)
    x = np.interp(s_t, s_grid, path[:, 0])
    y = np.interp(s_t, s_grid, path[:, 1])
    seg_idx = np.clip(np.searchsorted(s_grid, s_t, side="right") - 1, 0, len(seg) - 1)
    tangents = np.diff(path, axis=0) / seg[:, None]
    heading = np.arctan2(tangents[seg_idx, 1], tangents[seg_idx, 0])
    vx = v_t * np.cos(heading)
    vy = v_t * np.sin(heading)
    return np.column_stack([x, y, heading, vx, vy])


def _make_track(agent_id, states, n_hist, n_fut, hidden_frames=0):
    hist = np.zeros((n_hist, 6))
    hist[:, 0:5] = states[:n_hist]
    hist[:, 5] = 1.0
    if hidden_frames:
        hist[:hidden_frames] = 0.0
    fut = np.zeros((n_fut, 5))
    fut[:, 0:2] = states[n_hist:, 0:2]
    fut[:, 2:4] = states[n_hist:, 3:5]
    fut[:, 4] = 1.0
    return AgentTrack(agent_id=agent_id, category="vehicle", states=hist, future=fut)


def generate_scene(cfg: GeneratorConfig, seed) -> Scene:
    """One deterministic scene; ``seed`` may be an int or sequence of ints."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    junction = _Junction(cfg, rng.normal(0.0, cfg.arm_angle_noise, 4))

    intents = list(cfg.intent_probs)
    probs = np.array([cfg.intent_probs[i] for i in intents])
    names = [f"a{i}" for i in range(cfg.num_agents)]
    focal_ids = names[: cfg.num_focal]

    # scene-level rigid placement exercises world-frame generality
    shift = Pose(rng.uniform(-cfg.world_shift, cfg.world_shift, 2),
                 rng.uniform(-np.pi, np.pi))

    arms_free = list(junction.arms)
    tracks = []
    meta_intents = {}
    alt_endpoints = {}
    n_hist, n_fut = cfg.t_history, cfg.t_future

    for idx, name in enumerate(names):
        focal = name in focal_ids
        if focal:
            intent = intents[int(rng.choice(len(intents), p=probs))]
            arms = [a for a in junction.approach_arms(intent) if a in arms_free] \
                or junction.approach_arms(intent)
        else:
            intent = "straight" if cfg.topology == "straight" else \
                intents[int(rng.choice(len(intents), p=probs))]
            if not junction.approach_arms(intent):
                intent = "straight"
            arms = junction.approach_arms(intent)
        arm = int(arms[int(rng.choice(len(arms)))])
        if arm in arms_free:
            arms_free.remove(arm)

        lane = cfg.lane_offset + rng.normal(0.0, cfg.lateral_noise)
        speed = rng.uniform(*cfg.speed_range)
        entry = junction.entry_arclength(arm, intent, lane)
        if focal:
            d_entry = rng.uniform(*cfg.entry_distance_range)
            s0 = entry - d_entry
        else:
            s0 = entry - rng.uniform(8.0, 16.0) - speed * n_hist * cfg.dt
        stop_s = entry - 0.5
        if intent == "stop":
            s0 = stop_s - rng.uniform(0.0, 0.2)

        path = junction.path(arm, intent, lane)
        states = _rollout(path, s0, speed, intent, cfg, stop_at=stop_s)
        if focal:
            alts = {}
            for alt in ("left", "straight", "right"):
                if not junction.feasible(arm, alt):
                    continue
                alt_path = junction.path(arm, alt, lane)
                alt_states = _rollout(alt_path, s0, speed, alt, cfg, stop_at=stop_s)
                alts[alt] = to_world(alt_states[-1, 0:2], shift).tolist()
            alt_endpoints[name] = alts
        hidden = 0
        if not focal and rng.random() < 0.2:
            hidden = int(rng.integers(1, max(2, n_hist // 2)))

        # place into the world frame
        world = states.copy()
        world[:, 0:2] = to_world(states[:, 0:2], shift)
        world[:, 2] = wrap_angle(states[:, 2] + shift.heading)
        c, s = np.cos(shift.heading), np.sin(shift.heading)
        world[:, 3:5] = states[:, 3:5] @ np.array([[c, s], [-s, c]])
        tracks.append(_make_track(name, world, n_hist, n_fut, hidden))
        meta_intents[name] = intent

    polys = []
    for xy_code in junction.lane_polylines():
        pts = xy_code.copy()
        pts[:, 0:2] += rng.normal(0.0, cfg.map_point_noise, (len(pts), 2))
        pts[:, 0:2] = to_world(pts[:, 0:2], shift)
        polys.append(MapPolyline(pts))

    seed_list = list(np.atleast_1d(np.asarray(seed, dtype=np.int64)))
    return Scene(
        scene_id="scene-" + "-".join(str(int(x)) for x in seed_list),
        agents=tracks,
        map_polylines=polys,
        focal_ids=focal_ids,
        dt=cfg.dt,
        metadata={
            "seed": [int(x) for x in seed_list],
            "topology": cfg.topology,
            "intents": meta_intents,
            "alt_endpoints": alt_endpoints,
        },
    )


def generate_dataset(cfg: GeneratorConfig, seed: int, num_scenes: int):
    """Deterministic corpus: scene i uses sub-seed [seed, i]."""
    if num_scenes < 1:
        raise InputError("num_scenes must be >= 1")
    return [generate_scene(cfg, [int(seed), i]) for i in range(num_scenes)]
