"""Scene data model, transforms, synthetic generation, and JSONL I/O."""

from .types import (
    AGENT_CATEGORIES, ROAD_TYPES, AgentTrack, MapPolyline, Pose, Scene, wrap_angle,
)
from .transforms import (
    AGENT_CHANNELS, MAP_CHANNELS, VectorizedScene,
    chunk_polylines, future_in_frame, knn_neighborhoods,
    relative_pose, relative_pose_pairs, rotate_only, rotation,
    to_local, to_polyline_frames, to_world, vectorize_focal,
)
from .generator import INTENTS, GeneratorConfig, generate_dataset, generate_scene
from .io import read_scenes, scene_from_dict, scene_to_dict, write_scenes

__all__ = [
    "AGENT_CATEGORIES", "ROAD_TYPES", "AgentTrack", "MapPolyline", "Pose",
    "Scene", "wrap_angle",
    "AGENT_CHANNELS", "MAP_CHANNELS", "VectorizedScene", "chunk_polylines",
    "future_in_frame", "knn_neighborhoods", "relative_pose",
    "relative_pose_pairs", "rotate_only", "rotation", "to_local",
    "to_polyline_frames", "to_world", "vectorize_focal",
    "INTENTS", "GeneratorConfig", "generate_dataset", "generate_scene",
    "read_scenes", "scene_from_dict", "scene_to_dict", "write_scenes",
]
