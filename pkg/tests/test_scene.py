"""Transforms, neighborhoods, scene I/O."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mopred.errors import InputError
from mopred.scene import (
    AgentTrack, GeneratorConfig, MapPolyline, Pose, Scene,
    chunk_polylines, generate_scene, knn_neighborhoods, read_scenes,
    relative_pose, relative_pose_pairs, scene_from_dict, scene_to_dict,
    to_local, to_polyline_frames, to_world, vectorize_focal, wrap_angle,
    write_scenes,
)
from mopred.scene.transforms import transform_scene

angles = st.floats(-10.0, 10.0, allow_nan=False)
coords = st.floats(-100.0, 100.0, allow_nan=False)


def test_wrap_angle_range_and_identity():
    a = np.linspace(-12, 12, 1001)
    w = wrap_angle(a)
    assert (w > -np.pi).all() and (w <= np.pi).all()
    assert np.allclose(np.sin(w), np.sin(a), atol=1e-12)
    assert wrap_angle(np.pi) == np.pi
    assert wrap_angle(-np.pi) == np.pi


class TestRelativePose:
    def test_self_pair_is_zero(self):
        p = Pose(np.array([3.0, -2.0]), 0.7)
        rel, ang = relative_pose(p, p)
        assert np.allclose(rel, 0.0) and ang == 0.0

    def test_rotation_matrix_oracle(self):
        rel, ang = relative_pose(Pose(np.array([1.0, 0.0]), np.pi / 2),
                                 Pose(np.array([1.0, 1.0]), np.pi))
        assert np.allclose(rel, [1.0, 0.0], atol=1e-12)
        assert np.isclose(ang, np.pi / 2)

    @settings(max_examples=60, deadline=None)
    @given(coords, coords, angles, coords, coords, angles)
    def test_roundtrip_recovers_world(self, xi, yi, hi, xj, yj, hj):
        pi = Pose(np.array([xi, yi]), hi)
        pj = Pose(np.array([xj, yj]), hj)
        rel, _ = relative_pose(pi, pj)
        back = to_world(rel, pi)
        assert np.allclose(back, pj.position, atol=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(coords, coords, angles, coords, coords, angles)
    def test_antisymmetry(self, xi, yi, hi, xj, yj, hj):
        pi = Pose(np.array([xi, yi]), hi)
        pj = Pose(np.array([xj, yj]), hj)
        rij, aij = relative_pose(pi, pj)
        rji, aji = relative_pose(pj, pi)
        assert np.isclose(np.linalg.norm(rij), np.linalg.norm(rji), atol=1e-9)
        assert np.isclose(wrap_angle(aij + aji), 0.0, atol=1e-9) \
            or np.isclose(abs(aij), np.pi, atol=1e-9)

    def test_vectorized_matches_scalar(self, rng):
        pos = rng.uniform(-50, 50, (10, 2))
        head = rng.uniform(-np.pi, np.pi, 10)
        rel, ang = relative_pose_pairs(pos[:, None], head[:, None],
                                       pos[None, :], head[None, :])
        for i in (0, 3, 7):
            for j in (1, 4, 9):
                r, a = relative_pose(Pose(pos[i], head[i]), Pose(pos[j], head[j]))
                assert np.allclose(rel[i, j], r, atol=1e-12)
                assert np.isclose(ang[i, j], a)


class TestKnn:
    def test_saturation_returns_all(self):
        pos = np.array([[0.0, 0], [1, 0], [2, 0]])
        nbr = knn_neighborhoods(pos, 10)
        assert nbr.shape == (3, 3)
        assert sorted(nbr[0].tolist()) == [0, 1, 2]

    def test_small_oracle(self):
        pos = np.array([[0.0, 0], [1, 0], [10, 0]])
        nbr = knn_neighborhoods(pos, 2)
        assert set(nbr[0]) == {0, 1}

    def test_tie_breaks_toward_lower_index(self):
        pos = np.array([[0.0, 0], [1, 0], [-1, 0], [5, 0]])
        nbr = knn_neighborhoods(pos, 2)
        assert nbr[0].tolist() == [0, 1]   # 1 and 2 tie at distance 1

    def test_invalid_k_rejected(self):
        with pytest.raises(InputError):
            knn_neighborhoods(np.zeros((3, 2)), 0)

    def test_matches_bruteforce_oracle(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 40))
            k = int(rng.integers(1, 8))
            pos = rng.uniform(-30, 30, (n, 2))
            nbr = knn_neighborhoods(pos, k)
            d = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
            for i in range(n):
                ref = sorted(range(n), key=lambda j: (d[i, j], j))[: min(k, n)]
                assert nbr[i].tolist() == ref


def _shifted(scene, dx=100.0, dy=-50.0, dh=np.radians(37)):
    return transform_scene(scene, Pose(np.array([dx, dy]), dh))


class TestVectorizeFocal:
    @pytest.fixture(scope="class")
    def scene(self):
        return generate_scene(GeneratorConfig(), [5, 3])

    def test_focal_lands_at_origin(self, scene):
        v = vectorize_focal(scene, scene.focal_ids[0], 10)
        fidx = v.agent_ids.index(scene.focal_ids[0])
        assert np.allclose(v.token_pos[fidx], 0.0, atol=1e-12)
        assert np.isclose(v.token_heading[fidx], 0.0, atol=1e-12)

    def test_identity_when_focal_at_origin(self):
        states = np.zeros((3, 6))
        states[:, 0] = [-2.0, -1.0, 0.0]
        states[:, 5] = 1.0
        fut = np.zeros((4, 5)); fut[:, 4] = 1.0; fut[:, 0] = [1, 2, 3, 4]
        a = AgentTrack("a0", "vehicle", states, fut)
        pl = MapPolyline(np.array([[1.0, 1, 0], [2, 1, 0], [3, 1, 0]]))
        sc = Scene("s", [a], [pl], ["a0"])
        v = vectorize_focal(sc, "a0", 10)
        assert np.allclose(v.agent_feats[0][:, 0], states[:, 0])
        assert np.allclose(v.map_feats[0][:3, 0:2], pl.points[:, 0:2])

    def test_known_rigid_transform(self):
        states = np.zeros((1, 6))
        states[0, 0:2] = [5.0, 5.0]
        states[0, 2] = np.pi / 2
        states[0, 5] = 1.0
        other = np.zeros((1, 6))
        other[0, 0:2] = [5.0, 6.0]
        other[0, 5] = 1.0
        fut = np.zeros((1, 5)); fut[0, 4] = 1.0
        sc = Scene("s", [AgentTrack("f", "vehicle", states, fut),
                         AgentTrack("o", "vehicle", other, fut)],
                   [MapPolyline(np.array([[0.0, 0, 0], [1, 0, 0]]))], ["f"])
        v = vectorize_focal(sc, "f", 10)
        assert np.allclose(v.token_pos[1], [1.0, 0.0], atol=1e-12)

    def test_isometry_pairwise_distances(self, scene):
        v = vectorize_focal(scene, scene.focal_ids[0], 10)
        w = vectorize_focal(_shifted(scene), scene.focal_ids[0], 10)
        d1 = np.linalg.norm(v.token_pos[:, None] - v.token_pos[None], axis=-1)
        d2 = np.linalg.norm(w.token_pos[:, None] - w.token_pos[None], axis=-1)
        assert np.abs(d1 - d2).max() < 1e-9

    def test_unknown_focal_rejected(self, scene):
        with pytest.raises(InputError):
            vectorize_focal(scene, "nope", 10)


class TestPolylineFrames:
    @pytest.fixture(scope="class")
    def scene(self):
        return generate_scene(GeneratorConfig(), [5, 4])

    def test_rigid_transform_invariance(self, scene):
        v = to_polyline_frames(scene, 10)
        w = to_polyline_frames(_shifted(scene), 10)
        assert np.abs(v.agent_feats - w.agent_feats).max() < 1e-9
        assert np.abs(v.map_feats - w.map_feats).max() < 1e-9

    def test_straight_lane_lies_along_x(self):
        pts = np.column_stack([np.zeros(3), [0.0, 2.0, 4.0], np.zeros(3)])
        pl = MapPolyline(pts)
        states = np.zeros((1, 6)); states[0, 5] = 1.0
        fut = np.zeros((1, 5)); fut[0, 4] = 1.0
        sc = Scene("s", [AgentTrack("a", "vehicle", states, fut)], [pl], ["a"])
        v = to_polyline_frames(sc, 10)
        assert np.allclose(v.map_feats[0][:3, 1], 0.0, atol=1e-12)  # zero lateral
        assert np.allclose(v.map_feats[0][:3, 0], [-2.0, 0.0, 2.0])

    def test_degenerate_polyline_flagged(self):
        pl = MapPolyline(np.array([[1.0, 1, 0], [1.0, 1, 0]]))
        assert pl.degenerate and pl.tangent_heading == 0.0


class TestChunking:
    def test_splits_every_max_points(self):
        pts = np.column_stack([np.arange(45.0), np.zeros(45), np.zeros(45)])
        chunks = chunk_polylines([MapPolyline(pts)], 20)
        assert [len(c.points) for c in chunks] == [20, 20, 5]

    def test_orphan_point_joins_previous(self):
        pts = np.column_stack([np.arange(21.0), np.zeros(21), np.zeros(21)])
        chunks = chunk_polylines([MapPolyline(pts)], 20)
        assert [len(c.points) for c in chunks] == [21]


class TestSceneIO:
    def test_roundtrip(self, tmp_path):
        scenes = [generate_scene(GeneratorConfig(), [1, i]) for i in range(3)]
        path = tmp_path / "scenes.jsonl"
        write_scenes(path, scenes)
        back = read_scenes(path)
        assert len(back) == 3
        for a, b in zip(scenes, back):
            assert a.scene_id == b.scene_id
            for ta, tb in zip(a.agents, b.agents):
                assert np.allclose(ta.states, tb.states)
                assert np.allclose(ta.future, tb.future)

    def test_byte_identical_writes(self, tmp_path):
        scenes = [generate_scene(GeneratorConfig(), [1, 0])]
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_scenes(p1, scenes)
        write_scenes(p2, scenes)
        assert p1.read_bytes() == p2.read_bytes()

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"scene_id": "x"}\n')
        with pytest.raises(InputError):
            read_scenes(path)
        path.write_text("not json\n")
        with pytest.raises(InputError):
            read_scenes(path)

    def test_invariants_enforced(self):
        states = np.zeros((2, 6))
        fut = np.zeros((1, 5))
        with pytest.raises(InputError):
            # focal agent with no valid latest frame
            Scene("s", [AgentTrack("a", "vehicle", states, fut)],
                  [MapPolyline(np.array([[0.0, 0, 0], [1, 0, 0]]))], ["a"])
        with pytest.raises(InputError):
            MapPolyline(np.array([[0.0, 0, 0]]))   # single point
