"""End-to-end model: batching, encoder+decoder composition, prediction.

Two operating modes share every component:

* ``mtr``  — focal-centric: one sample per (scene, focal agent), the whole
  scene re-vectorized and re-encoded in that agent's frame.
* ``mtr++`` — symmetric: one sample per scene, encoded once in polyline-
  local frames, all focal agents decoded jointly in their own frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import DecoderConfig, DecoderParams, IntentionPointSet, decode
from .encoder import EncodedScene, EncoderConfig, EncoderParams, encode_scene
from .errors import ConfigError, InputError
from .evaluation import nms_select
from .numerics import tensor as T
from .numerics.params import ParameterStore
from .scene.transforms import (
    future_in_frame, knn_neighborhoods, to_polyline_frames, to_world,
    vectorize_focal,
)
from .scene.types import AGENT_CATEGORIES, Pose, Scene

MODES = ("mtr", "mtr++")


@dataclass
class ModelConfig:
    mode: str = "mtr++"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    t_future: int = 80
    max_polyline_points: int = 20
    max_map_polylines: int = 768

    def validate(self):
        problems = []
        if self.mode not in MODES:
            problems.append(f"model.mode: must be one of {MODES}")
        if self.t_future < 1:
            problems.append("model.t_future: must be >= 1")
        for sub, prefix in ((self.encoder, "model.encoder"), (self.decoder, "model.decoder")):
            try:
                sub.validate(prefix)
            except ConfigError as exc:
                problems.extend(exc.problems)
        if self.decoder.num_heads and self.encoder.d_model % self.decoder.num_heads != 0:
            problems.append("model.decoder.num_heads: must divide model.d_model")
        if problems:
            raise ConfigError(problems)
        return self


@dataclass
class SceneBatch:
    """Stacked per-sample arrays; one sample is a scene (mtr++) or a
    (scene, focal agent) pair (mtr)."""

    agent_feats: np.ndarray       # (B, N_a, T_h, C_a)
    agent_valid: np.ndarray       # (B, N_a, T_h)
    map_feats: np.ndarray         # (B, N_m, P, C_m)
    map_valid: np.ndarray         # (B, N_m, P)
    token_pos: np.ndarray         # (B, N, 2)
    token_heading: np.ndarray     # (B, N)
    neighborhoods: np.ndarray     # (B, N, k)
    focal_idx: np.ndarray         # (B, N_o) rows into the agent axis
    focal_categories: np.ndarray  # (B, N_o) AGENT_CATEGORIES codes
    decoder_poses: np.ndarray     # (B, N_o, 3) focal pose in the token frame
    focal_world_poses: np.ndarray  # (B, N_o, 3) focal pose in the world frame
    gt_future_agents: np.ndarray  # (B, N_a, T_f, 5) dense targets, per-agent frame
    gt_future_focal: np.ndarray   # (B, N_o, T_f, 5) GMM targets, own frame
    scene_ids: list
    focal_ids: list               # per sample: list of focal agent ids

    @property
    def size(self) -> int:
        return self.agent_feats.shape[0]


@dataclass
class Sample:
    """One pre-vectorized sample, ready to stack into a SceneBatch."""

    vec: object
    focal_idx: np.ndarray
    focal_categories: np.ndarray
    decoder_poses: np.ndarray
    focal_world_poses: np.ndarray
    gt_future_agents: np.ndarray
    gt_future_focal: np.ndarray
    scene_id: str
    focal_ids: list


def _nearest_map_subset(scene: Scene, limit: int) -> Scene:
    """Keep the ``limit`` polylines nearest to the focal agents."""
    if scene.num_polylines <= limit:
        return scene
    anchor = np.mean([scene.agent(f).latest_pose().position for f in scene.focal_ids],
                     axis=0)
    d = [float(np.linalg.norm(pl.center - anchor)) for pl in scene.map_polylines]
    keep = np.argsort(np.asarray(d), kind="stable")[:limit]
    polys = [scene.map_polylines[i] for i in sorted(keep)]
    return Scene(scene_id=scene.scene_id, agents=scene.agents, map_polylines=polys,
                 focal_ids=scene.focal_ids, dt=scene.dt, metadata=scene.metadata)


def _pose_array(pose: Pose) -> np.ndarray:
    return np.array([pose.position[0], pose.position[1], pose.heading])


def build_samples(scenes, config: ModelConfig):
    """Vectorize scenes once; training batches are stacked from these."""
    t_f = config.t_future
    samples = []
    for scene in scenes:
        scene = _nearest_map_subset(scene, config.max_map_polylines)
        if config.mode == "mtr":
            for fid in scene.focal_ids:
                track = scene.agent(fid)
                origin = track.latest_pose()
                vec = vectorize_focal(scene, fid, config.max_polyline_points)
                fidx = np.array([vec.agent_ids.index(fid)], dtype=np.int64)
                dense = np.stack([
                    _clip_future(future_in_frame(a, origin), t_f) for a in scene.agents])
                samples.append(Sample(
                    vec=vec,
                    focal_idx=fidx,
                    focal_categories=np.array(
                        [AGENT_CATEGORIES.index(track.category)], dtype=np.int64),
                    decoder_poses=np.zeros((1, 3)),
                    focal_world_poses=_pose_array(origin)[None, :],
                    gt_future_agents=dense,
                    gt_future_focal=dense[fidx],
                    scene_id=scene.scene_id,
                    focal_ids=[fid],
                ))
        else:
            vec = to_polyline_frames(scene, config.max_polyline_points)
            fidx = np.array([vec.agent_ids.index(f) for f in scene.focal_ids],
                            dtype=np.int64)
            dense = np.stack([
                _clip_future(future_in_frame(a, a.latest_pose()), t_f)
                for a in scene.agents])
            poses = np.stack([_pose_array(scene.agent(f).latest_pose())
                              for f in scene.focal_ids])
            samples.append(Sample(
                vec=vec,
                focal_idx=fidx,
                focal_categories=np.array(
                    [AGENT_CATEGORIES.index(scene.agent(f).category)
                     for f in scene.focal_ids], dtype=np.int64),
                decoder_poses=poses,
                focal_world_poses=poses.copy(),
                gt_future_agents=dense,
                gt_future_focal=dense[fidx],
                scene_id=scene.scene_id,
                focal_ids=list(scene.focal_ids),
            ))
    return samples


def _clip_future(future: np.ndarray, t_f: int) -> np.ndarray:
    if future.shape[0] == t_f:
        return future
    if future.shape[0] > t_f:
        return future[:t_f]
    out = np.zeros((t_f, future.shape[1]))
    out[: future.shape[0]] = future
    return out


def stack_batch(samples, k_neighbors: int) -> SceneBatch:
    """Stack same-shape samples; k-NN neighborhoods are built here."""
    shapes = {(s.vec.agent_feats.shape, s.vec.map_feats.shape, len(s.focal_ids))
              for s in samples}
    if len(shapes) != 1:
        raise InputError("batch requires homogeneous scene shapes; "
                         "group scenes by generator config")
    token_pos = np.stack([s.vec.token_pos for s in samples])
    nbr = np.stack([knn_neighborhoods(p, k_neighbors) for p in token_pos])
    return SceneBatch(
        agent_feats=np.stack([s.vec.agent_feats for s in samples]),
        agent_valid=np.stack([s.vec.agent_valid for s in samples]),
        map_feats=np.stack([s.vec.map_feats for s in samples]),
        map_valid=np.stack([s.vec.map_valid for s in samples]),
        token_pos=token_pos,
        token_heading=np.stack([s.vec.token_heading for s in samples]),
        neighborhoods=nbr,
        focal_idx=np.stack([s.focal_idx for s in samples]),
        focal_categories=np.stack([s.focal_categories for s in samples]),
        decoder_poses=np.stack([s.decoder_poses for s in samples]),
        focal_world_poses=np.stack([s.focal_world_poses for s in samples]),
        gt_future_agents=np.stack([s.gt_future_agents for s in samples]),
        gt_future_focal=np.stack([s.gt_future_focal for s in samples]),
        scene_ids=[s.scene_id for s in samples],
        focal_ids=[s.focal_ids for s in samples],
    )


class MotionPredictor:
    """The full predictor: parameters, forward pass, world-frame outputs."""

    def __init__(self, config: ModelConfig, rng_seed: int = 0):
        from .scene.transforms import AGENT_CHANNELS, MAP_CHANNELS

        self.config = config.validate()
        self.store = ParameterStore(rng_seed)
        symmetric = config.mode == "mtr++"
        self.encoder_params = EncoderParams(
            self.store, config.encoder, AGENT_CHANNELS, MAP_CHANNELS,
            config.t_future, symmetric)
        self.decoder_params = DecoderParams(
            self.store, config.decoder, config.encoder.d_model,
            config.t_future, symmetric)
        self.intention: IntentionPointSet | None = None

    def set_intention_points(self, intention: IntentionPointSet):
        if self.config.decoder.head_type == "intention" \
                and intention.num_modes != self.config.decoder.num_modes:
            raise InputError(
                f"intention set has {intention.num_modes} modes, "
                f"config wants {self.config.decoder.num_modes}")
        self.intention = intention
        return self

    def samples(self, scenes):
        return build_samples(scenes, self.config)

    def batch(self, samples) -> SceneBatch:
        return stack_batch(samples, self.config.encoder.k_neighbors)

    def forward(self, batch: SceneBatch):
        """Returns (per-layer decoder outputs, EncodedScene)."""
        if self.config.decoder.head_type == "intention" and self.intention is None:
            raise InputError("intention points not set; call set_intention_points")
        encoded = encode_scene(batch, self.encoder_params)
        outputs = decode(encoded, batch, self.intention, self.decoder_params)
        return outputs, encoded

    def predict_batch(self, batch: SceneBatch, num_select: int, nms_threshold: float):
        """World-frame trajectories per focal agent after NMS selection.

        Returns one record per focal agent:
        {scene_id, agent_id, trajectories (M, T, 2), confidences (M,)}.
        """
        outputs, _ = self.forward(batch)
        final = outputs[-1]
        probs = final.probs.data
        means = final.means.data
        records = []
        for i in range(batch.size):
            for t, agent_id in enumerate(batch.focal_ids[i]):
                conf = probs[i, t]
                local = means[i, t]                      # (K, T, 2)
                keep = nms_select(local[:, -1, :], conf, num_select, nms_threshold)
                pose = Pose(batch.focal_world_poses[i, t, 0:2],
                            batch.focal_world_poses[i, t, 2])
                world = to_world(local[keep].reshape(-1, 2), pose).reshape(
                    len(keep), -1, 2)
                order = np.argsort(-conf[keep], kind="stable")
                records.append({
                    "scene_id": batch.scene_ids[i],
                    "agent_id": agent_id,
                    "trajectories": world[order],
                    "confidences": conf[keep][order],
                })
        return records

    def predict_scenes(self, scenes, num_select: int = 6, nms_threshold: float = 2.5,
                       batch_size: int = 64):
        samples = self.samples(scenes)
        records = []
        for start in range(0, len(samples), batch_size):
            chunk = self.batch(samples[start:start + batch_size])
            records.extend(self.predict_batch(chunk, num_select, nms_threshold))
        return records
