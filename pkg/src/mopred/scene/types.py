"""World-frame scene data model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError

AGENT_CATEGORIES = ("vehicle", "pedestrian", "cyclist", "other")
ROAD_TYPES = ("lane", "turn", "edge", "other")

AGENT_STATE_DIM = 6    # x, y, heading, vx, vy, valid
AGENT_FUTURE_DIM = 5   # x, y, vx, vy, valid


def wrap_angle(a):
    """Wrap radians into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=np.float64), 2.0 * np.pi)


@dataclass
class Pose:
    position: np.ndarray  # (2,)
    heading: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(2)
        self.heading = float(wrap_angle(self.heading))


@dataclass
class AgentTrack:
    agent_id: str
    category: str
    states: np.ndarray   # (T_h, 6): x, y, heading, vx, vy, valid
    future: np.ndarray   # (T_f, 5): x, y, vx, vy, valid

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.future = np.asarray(self.future, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[1] != AGENT_STATE_DIM:
            raise InputError(f"agent {self.agent_id}: states must be (T_h, {AGENT_STATE_DIM})")
        if self.future.ndim != 2 or self.future.shape[1] != AGENT_FUTURE_DIM:
            raise InputError(f"agent {self.agent_id}: future must be (T_f, {AGENT_FUTURE_DIM})")
        if self.category not in AGENT_CATEGORIES:
            raise InputError(f"agent {self.agent_id}: unknown category {self.category!r}")
        # absent frames are zero-filled with valid = 0
        self.states[self.states[:, 5] == 0.0] = 0.0
        self.future[self.future[:, 4] == 0.0] = 0.0
        self.states[:, 2] = np.where(
            self.states[:, 5] > 0, wrap_angle(self.states[:, 2]), 0.0)

    @property
    def valid_mask(self) -> np.ndarray:
        return self.states[:, 5] > 0

    def latest_valid_index(self) -> int:
        idx = np.nonzero(self.valid_mask)[0]
        if idx.size == 0:
            raise InputError(f"agent {self.agent_id} has no valid history frame")
        return int(idx[-1])

    def latest_pose(self) -> Pose:
        """Pose at the last valid frame; heading is the stored heading there
        (the moving direction even when the latest speed is ~0)."""
        i = self.latest_valid_index()
        return Pose(self.states[i, 0:2].copy(), self.states[i, 2])


@dataclass
class MapPolyline:
    points: np.ndarray          # (n, 3): x, y, road-type code
    center: np.ndarray = field(init=False)
    tangent_heading: float = field(init=False)
    degenerate: bool = field(init=False, default=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or self.points.shape[0] < 2:
            raise InputError("polyline needs >= 2 points of (x, y, road_type)")
        self.center = self.points[:, :2].mean(axis=0)
        span = self.points[-1, :2] - self.points[0, :2]
        if np.hypot(*span) < 1e-12:
            self.tangent_heading = 0.0
            self.degenerate = True
        else:
            self.tangent_heading = float(np.arctan2(span[1], span[0]))
            self.degenerate = False


@dataclass
class Scene:
    scene_id: str
    agents: list
    map_polylines: list
    focal_ids: list
    dt: float = 0.1
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.focal_ids:
            raise InputError(f"scene {self.scene_id}: focal_ids is empty")
        ids = {a.agent_id for a in self.agents}
        unknown = [f for f in self.focal_ids if f not in ids]
        if unknown:
            raise InputError(f"scene {self.scene_id}: unknown focal ids {unknown}")
        for fid in self.focal_ids:
            self.agent(fid).latest_valid_index()  # latest frame must be valid

    def agent(self, agent_id: str) -> AgentTrack:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise InputError(f"no agent {agent_id!r} in scene {self.scene_id}")

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    @property
    def num_polylines(self) -> int:
        return len(self.map_polylines)
