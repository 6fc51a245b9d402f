"""Scenario JSON-lines: one scene per line.

Schema (all lengths meters, angles radians, times seconds):

    {"scene_id": str, "dt": float, "focal_ids": [str, ...],
     "agents": [{"id": str, "category": str,
                 "states": [[x, y, heading, vx, vy, valid], ...],
                 "future": [[x, y, vx, vy, valid], ...]}, ...],
     "map": [{"road_type": str, "points": [[x, y], ...]}, ...],
     "metadata": {...}}   # generator seed, intents, alt endpoints
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import InputError
from .types import ROAD_TYPES, AgentTrack, MapPolyline, Scene


def scene_to_dict(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "dt": scene.dt,
        "focal_ids": list(scene.focal_ids),
        "agents": [
            {
                "id": a.agent_id,
                "category": a.category,
                "states": a.states.tolist(),
                "future": a.future.tolist(),
            }
            for a in scene.agents
        ],
        "map": [
            {
                "road_type": ROAD_TYPES[int(pl.points[0, 2])],
                "points": pl.points[:, 0:2].tolist(),
            }
            for pl in scene.map_polylines
        ],
        "metadata": scene.metadata,
    }


def scene_from_dict(doc: dict) -> Scene:
    try:
        agents = [
            AgentTrack(
                agent_id=a["id"],
                category=a["category"],
                states=np.array(a["states"], dtype=np.float64),
                future=np.array(a["future"], dtype=np.float64),
            )
            for a in doc["agents"]
        ]
        polylines = []
        for m in doc["map"]:
            code = ROAD_TYPES.index(m["road_type"])
            pts = np.array(m["points"], dtype=np.float64)
            polylines.append(
                MapPolyline(np.column_stack([pts, np.full(len(pts), float(code))])))
        return Scene(
            scene_id=doc["scene_id"],
            agents=agents,
            map_polylines=polylines,
            focal_ids=list(doc["focal_ids"]),
            dt=float(doc["dt"]),
            metadata=doc.get("metadata", {}),
        )
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed scene document: {exc}") from exc


def write_scenes(path, scenes):
    with open(path, "w") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene_to_dict(scene), sort_keys=True))
            fh.write("\n")


def read_scenes(path):
    scenes = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            scenes.append(scene_from_dict(doc))
    if not scenes:
        raise InputError(f"{path}: no scenes found")
    return scenes
