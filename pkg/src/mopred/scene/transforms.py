"""Coordinate transforms, vectorization, and neighborhood construction.

Two framings feed the encoders: focal-centric (everything rotated into one
focal agent's frame) and polyline-centric (each polyline in its own local
frame, token poses kept in the world frame so only relative poses matter).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from .types import AGENT_CATEGORIES, ROAD_TYPES, MapPolyline, Pose, Scene, wrap_angle

AGENT_CHANNELS = 7 + len(AGENT_CATEGORIES)   # x, y, cos h, sin h, vx, vy, valid, one-hot
MAP_CHANNELS = 2 + len(ROAD_TYPES)           # x, y, one-hot road type


def rotation(heading):
    """Rows-times-matrix convention: ``points @ rotation(h)`` expresses
    world offsets in the frame of a token heading ``h``."""
    c, s = np.cos(heading), np.sin(heading)
    return np.array([[c, -s], [s, c]])


def to_local(points, pose: Pose):
    """World points (..., 2) into the local frame of ``pose``."""
    return (np.asarray(points, dtype=np.float64) - pose.position) @ rotation(pose.heading)


def to_world(points, pose: Pose):
    """Inverse of ``to_local``."""
    c, s = np.cos(pose.heading), np.sin(pose.heading)
    return np.asarray(points, dtype=np.float64) @ np.array([[c, s], [-s, c]]) + pose.position


def rotate_only(vectors, heading):
    """Rotate direction vectors (velocities) into a frame at ``heading``."""
    return np.asarray(vectors, dtype=np.float64) @ rotation(heading)


def relative_pose(pose_i: Pose, pose_j: Pose):
    """(rel_pos, rel_ang) of j expressed in i's local frame."""
    rel = to_local(pose_j.position, pose_i)
    return rel, float(wrap_angle(pose_j.heading - pose_i.heading))


def relative_pose_pairs(pos_i, head_i, pos_j, head_j):
    """Vectorized relative pose: broadcastable (..., 2)/(...) inputs.

    Returns (rel_pos (..., 2), rel_ang (...)), angles wrapped to (-pi, pi].
    """
    pos_i = np.asarray(pos_i, dtype=np.float64)
    pos_j = np.asarray(pos_j, dtype=np.float64)
    head_i = np.asarray(head_i, dtype=np.float64)
    d = pos_j - pos_i
    c, s = np.cos(head_i), np.sin(head_i)
    rel = np.stack([d[..., 0] * c + d[..., 1] * s,
                    -d[..., 0] * s + d[..., 1] * c], axis=-1)
    return rel, wrap_angle(np.asarray(head_j, dtype=np.float64) - head_i)


def knn_neighborhoods(positions, k: int):
    """Indices of the k nearest tokens per token (self included).

    Ties break toward the lower index; with fewer than k tokens every
    token's list is the full index set.
    """
    if k < 1:
        raise InputError("k must be >= 1")
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    d = positions[:, None, :] - positions[None, :, :]
    dist = np.einsum("ijc,ijc->ij", d, d)
    order = np.argsort(dist, axis=1, kind="stable")
    return np.ascontiguousarray(order[:, : min(k, n)]).astype(np.int64)


def chunk_polylines(polylines, max_points: int):
    """Split map polylines into chunks of at most ``max_points`` points."""
    out = []
    for pl in polylines:
        pts = pl.points
        for start in range(0, len(pts), max_points):
            chunk = pts[start:start + max_points]
            if len(chunk) >= 2:
                out.append(MapPolyline(chunk.copy()))
            elif out and len(chunk) == 1:
                # a trailing orphan point joins the previous chunk
                prev = out.pop()
                out.append(MapPolyline(np.vstack([prev.points, chunk])))
    return out


@dataclass
class VectorizedScene:
    """Dense arrays feeding the polyline encoders plus token geometry.

    ``agent_feats``/``map_feats`` are per-point channel arrays in whatever
    frame the framing chose; token poses live in ``token_pos`` /
    ``token_heading`` (focal frame or world frame depending on framing).
    """

    agent_feats: np.ndarray    # (N_a, T_h, AGENT_CHANNELS)
    agent_valid: np.ndarray    # (N_a, T_h) bool
    map_feats: np.ndarray      # (N_m, P, MAP_CHANNELS)
    map_valid: np.ndarray      # (N_m, P) bool
    token_pos: np.ndarray      # (N_a + N_m, 2)
    token_heading: np.ndarray  # (N_a + N_m,)
    agent_ids: list
    frame: str                 # "focal" | "world"

    @property
    def num_agents(self) -> int:
        return self.agent_feats.shape[0]

    @property
    def num_map(self) -> int:
        return self.map_feats.shape[0]


def _agent_channels(track, origin_pose: Pose | None):
    """Per-frame channels for one agent, optionally re-expressed in a frame."""
    t_h = track.states.shape[0]
    feats = np.zeros((t_h, AGENT_CHANNELS))
    valid = track.valid_mask
    xy = track.states[:, 0:2]
    heading = track.states[:, 2]
    vel = track.states[:, 3:5]
    if origin_pose is not None:
        xy = to_local(xy, origin_pose)
        heading = wrap_angle(heading - origin_pose.heading)
        vel = rotate_only(vel, origin_pose.heading)
    feats[:, 0:2] = xy
    feats[:, 2] = np.cos(heading)
    feats[:, 3] = np.sin(heading)
    feats[:, 4:6] = vel
    feats[:, 6] = 1.0
    feats[:, 7 + AGENT_CATEGORIES.index(track.category)] = 1.0
    feats[~valid] = 0.0
    return feats, valid


def _map_channels(polylines, max_points: int, origin_poses=None):
    """Per-point channels for map polylines, padded to ``max_points``.

    ``origin_poses`` gives one frame per polyline (or a single shared one).
    """
    n_m = len(polylines)
    feats = np.zeros((n_m, max_points, MAP_CHANNELS))
    valid = np.zeros((n_m, max_points), dtype=bool)
    for i, pl in enumerate(polylines):
        pts = pl.points
        n = min(len(pts), max_points)
        xy = pts[:n, 0:2]
        if origin_poses is not None:
            pose = origin_poses if isinstance(origin_poses, Pose) else origin_poses[i]
            xy = to_local(xy, pose)
        feats[i, :n, 0:2] = xy
        codes = pts[:n, 2].astype(int).clip(0, len(ROAD_TYPES) - 1)
        feats[i, np.arange(n), 2 + codes] = 1.0
        valid[i, :n] = True
    return feats, valid


def vectorize_focal(scene: Scene, focal_id: str, max_points: int = 20) -> VectorizedScene:
    """Normalize the whole scene to the frame of one focal agent.

    The focal agent's latest position lands at the origin with heading
    along +x; agent token positions are their most recent valid positions
    and map token positions are polyline centers, all in that frame.
    """
    focal = scene.agent(focal_id)
    origin = focal.latest_pose()
    polylines = chunk_polylines(scene.map_polylines, max_points)

    agent_feats = []
    agent_valid = []
    tok_pos = []
    tok_head = []
    for track in scene.agents:
        feats, valid = _agent_channels(track, origin)
        agent_feats.append(feats)
        agent_valid.append(valid)
        pose = track.latest_pose()
        tok_pos.append(to_local(pose.position, origin))
        tok_head.append(wrap_angle(pose.heading - origin.heading))
    map_feats, map_valid = _map_channels(polylines, max_points, origin)
    for pl in polylines:
        tok_pos.append(to_local(pl.center, origin))
        tok_head.append(wrap_angle(pl.tangent_heading - origin.heading))

    return VectorizedScene(
        agent_feats=np.stack(agent_feats),
        agent_valid=np.stack(agent_valid),
        map_feats=map_feats,
        map_valid=map_valid,
        token_pos=np.array(tok_pos, dtype=np.float64).reshape(-1, 2),
        token_heading=np.array(tok_head, dtype=np.float64),
        agent_ids=[a.agent_id for a in scene.agents],
        frame="focal",
    )


def to_polyline_frames(scene: Scene, max_points: int = 20) -> VectorizedScene:
    """Express every polyline in its own local frame.

    Agents use their latest valid pose (position + moving direction), map
    polylines their geometry center + tangent direction. Feature arrays are
    then invariant to rigid transforms of the world frame; token poses stay
    in the world frame for relative-pose attention.
    """
    polylines = chunk_polylines(scene.map_polylines, max_points)

    agent_feats = []
    agent_valid = []
    tok_pos = []
    tok_head = []
    for track in scene.agents:
        pose = track.latest_pose()
        feats, valid = _agent_channels(track, pose)
        agent_feats.append(feats)
        agent_valid.append(valid)
        tok_pos.append(pose.position.copy())
        tok_head.append(pose.heading)
    poses = [Pose(pl.center, pl.tangent_heading) for pl in polylines]
    map_feats, map_valid = _map_channels(polylines, max_points, poses)
    for pl in polylines:
        tok_pos.append(pl.center.copy())
        tok_head.append(pl.tangent_heading)

    return VectorizedScene(
        agent_feats=np.stack(agent_feats),
        agent_valid=np.stack(agent_valid),
        map_feats=map_feats,
        map_valid=map_valid,
        token_pos=np.array(tok_pos, dtype=np.float64).reshape(-1, 2),
        token_heading=np.array(tok_head, dtype=np.float64),
        agent_ids=[a.agent_id for a in scene.agents],
        frame="world",
    )


def transform_scene(scene: Scene, pose: Pose) -> Scene:
    """Apply one rigid transform to every world-frame quantity of a scene.

    Positions map through ``to_world`` (the pose acts as local->world),
    headings shift by the pose heading, velocities rotate. Invalid frames
    stay zero-filled.
    """
    agents = []
    rot = np.array([[np.cos(pose.heading), np.sin(pose.heading)],
                    [-np.sin(pose.heading), np.cos(pose.heading)]])
    for a in scene.agents:
        states = a.states.copy()
        valid = states[:, 5] > 0
        states[valid, 0:2] = to_world(states[valid, 0:2], pose)
        states[valid, 2] = wrap_angle(states[valid, 2] + pose.heading)
        states[valid, 3:5] = states[valid, 3:5] @ rot
        future = a.future.copy()
        fv = future[:, 4] > 0
        future[fv, 0:2] = to_world(future[fv, 0:2], pose)
        future[fv, 2:4] = future[fv, 2:4] @ rot
        agents.append(type(a)(agent_id=a.agent_id, category=a.category,
                              states=states, future=future))
    polylines = []
    for pl in scene.map_polylines:
        pts = pl.points.copy()
        pts[:, 0:2] = to_world(pts[:, 0:2], pose)
        polylines.append(MapPolyline(pts))
    return Scene(scene_id=scene.scene_id, agents=agents, map_polylines=polylines,
                 focal_ids=list(scene.focal_ids), dt=scene.dt,
                 metadata=scene.metadata)


def future_in_frame(track, pose: Pose | None):
    """GT future (T_f, 5) re-expressed in ``pose``'s frame (None = world)."""
    fut = track.future.copy()
    valid = fut[:, 4] > 0
    if pose is not None:
        fut[:, 0:2] = to_local(fut[:, 0:2], pose)
        fut[:, 2:4] = rotate_only(fut[:, 2:4], pose.heading)
    fut[~valid] = 0.0
    return fut
