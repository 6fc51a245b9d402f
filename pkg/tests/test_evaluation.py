"""NMS, metrics, joint combination, prediction I/O."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mopred.errors import InputError
from mopred.evaluation import (
    combine_joint, compute_metrics, displacement_stats, nms_select,
    read_predictions, write_predictions,
)
from mopred.scene import GeneratorConfig, generate_scene


def nms_oracle(endpoints, confidences, m, threshold):
    """Literal restatement of the greedy rule, kept independent."""
    order = sorted(range(len(confidences)), key=lambda i: (-confidences[i], i))
    kept, suppressed = [], []
    for i in order:
        if len(kept) == m:
            break
        if any(np.linalg.norm(endpoints[i] - endpoints[j]) < threshold for j in kept):
            suppressed.append(i)
        else:
            kept.append(i)
    kept += suppressed[: max(0, m - len(kept))]
    return kept[:m]


class TestNMS:
    def test_no_suppression_top_m(self, rng):
        eps = np.array([[0.0, 0], [10, 0], [20, 0], [30, 0]])
        conf = np.array([0.1, 0.9, 0.5, 0.7])
        keep = nms_select(eps, conf, 2, 2.5)
        assert keep.tolist() == [1, 3]

    def test_hand_example(self):
        eps = np.array([[0.0, 0], [1, 0], [5, 0]])
        conf = np.array([0.9, 0.8, 0.5])
        keep = nms_select(eps, conf, 2, 2.5)
        assert keep.tolist() == [0, 2]

    def test_duplicates_single_survivor_then_backfill(self):
        eps = np.zeros((3, 2))
        conf = np.array([0.5, 0.9, 0.7])
        keep = nms_select(eps, conf, 2, 2.5)
        assert keep.tolist() == [1, 2]   # one survivor, then best suppressed

    def test_m_exceeding_candidates_returns_all(self):
        eps = np.array([[0.0, 0], [9, 9]])
        keep = nms_select(eps, np.array([0.2, 0.8]), 6, 2.5)
        assert sorted(keep.tolist()) == [0, 1]

    def test_invalid_threshold(self):
        with pytest.raises(InputError):
            nms_select(np.zeros((2, 2)), np.ones(2), 1, 0.0)

    @settings(max_examples=80, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 8), st.integers(0, 10_000))
    def test_matches_oracle(self, n, m, seed):
        rng = np.random.default_rng(seed)
        eps = rng.uniform(-6, 6, (n, 2))
        conf = rng.random(n)
        assert nms_select(eps, conf, m, 2.5).tolist() == nms_oracle(eps, conf, m, 2.5)


class TestCombineJoint:
    def test_product_ranking_example(self):
        a = {"trajectories": np.zeros((2, 3, 2)), "confidences": [0.6, 0.4]}
        b = {"trajectories": np.zeros((2, 3, 2)), "confidences": [0.7, 0.3]}
        out = combine_joint(a, b, 2)
        assert [round(o["confidence"], 9) for o in out] == [0.42, 0.28]
        assert [o["pair"] for o in out] == [(0, 0), (1, 0)]

    def test_singleton_factor_preserves_order(self, rng):
        confs = rng.random(5)
        a = {"trajectories": np.zeros((5, 2, 2)), "confidences": confs}
        b = {"trajectories": np.zeros((1, 2, 2)), "confidences": [0.5]}
        out = combine_joint(a, b, 5)
        assert [o["pair"][0] for o in out] == sorted(range(5), key=lambda i: (-confs[i], i))

    def test_full_enumeration_count(self):
        a = {"trajectories": np.zeros((6, 2, 2)), "confidences": np.linspace(1, 0.5, 6)}
        b = {"trajectories": np.zeros((6, 2, 2)), "confidences": np.linspace(1, 0.5, 6)}
        out = combine_joint(a, b, 36)
        assert len(out) == 36

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            combine_joint({"trajectories": np.zeros((0, 1, 2)), "confidences": []},
                          {"trajectories": np.zeros((1, 1, 2)), "confidences": [1.0]}, 1)

    def test_matches_exhaustive_for_small_k(self, rng):
        for _ in range(25):
            ka, kb = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            ca, cb = rng.random(ka), rng.random(kb)
            a = {"trajectories": np.zeros((ka, 1, 2)), "confidences": ca}
            b = {"trajectories": np.zeros((kb, 1, 2)), "confidences": cb}
            m = int(rng.integers(1, ka * kb + 1))
            out = combine_joint(a, b, m)
            ref = sorted(((ca[i] * cb[j], i, j) for i in range(ka) for j in range(kb)),
                         key=lambda t: (-t[0], t[1], t[2]))[:m]
            assert [o["pair"] for o in out] == [(i, j) for _, i, j in ref]


def make_gt_scene(scene_id="s0"):
    scene = generate_scene(GeneratorConfig(), [5, 0])
    scene.scene_id = scene_id
    return scene


class TestMetrics:
    def records_for(self, scene, offset=0.0, m=2):
        recs = []
        for fid in scene.focal_ids:
            fut = scene.agent(fid).future
            tr = np.repeat(fut[None, :, 0:2], m, axis=0)
            tr[0, :, 0] += offset
            if m > 1:
                tr[1, :, 0] += offset + 2.0
            recs.append({"scene_id": scene.scene_id, "agent_id": fid,
                         "trajectories": tr,
                         "confidences": np.linspace(0.9, 0.5, m)})
        return recs

    def test_perfect_prediction(self):
        scene = make_gt_scene()
        rep = compute_metrics(self.records_for(scene, 0.0, m=1), [scene])
        assert rep.min_ade == 0.0 and rep.min_fde == 0.0
        assert rep.miss_rate == 0.0
        assert rep.mean_ap == 1.0
        assert rep.sample_count == len(scene.focal_ids)

    def test_constant_offsets_hand_computed(self):
        scene = make_gt_scene()
        rep = compute_metrics(self.records_for(scene, 1.0), [scene])
        assert np.isclose(rep.min_ade, 1.0)
        assert np.isclose(rep.min_fde, 1.0)

    def test_single_prediction_hit_vs_miss_ap(self):
        scene = make_gt_scene()
        hit = compute_metrics(self.records_for(scene, 0.5, m=1), [scene])
        miss = compute_metrics(self.records_for(scene, 50.0, m=1), [scene])
        assert hit.mean_ap == 1.0 and hit.miss_rate == 0.0
        assert miss.mean_ap == 0.0 and miss.miss_rate == 1.0

    def test_min_metrics_monotone_in_candidate_set(self, rng):
        scene = make_gt_scene()
        fid = scene.focal_ids[0]
        fut = scene.agent(fid).future
        t = fut.shape[0]
        trajs = rng.normal(0, 5, (6, t, 2)) + fut[None, :, 0:2]
        def rec(m):
            return [{"scene_id": scene.scene_id, "agent_id": fid,
                     "trajectories": trajs[:m], "confidences": np.linspace(1, 0.5, m)}]
        ades = [compute_metrics(rec(m), [scene]).min_ade for m in (1, 3, 6)]
        fdes = [compute_metrics(rec(m), [scene]).min_fde for m in (1, 3, 6)]
        misses = [compute_metrics(rec(m), [scene]).miss_rate for m in (1, 3, 6)]
        assert ades[0] >= ades[1] >= ades[2]
        assert fdes[0] >= fdes[1] >= fdes[2]
        assert misses[0] >= misses[1] >= misses[2]

    def test_map_invariant_to_monotone_confidence_rescale(self, rng):
        scene = make_gt_scene()
        recs = self.records_for(scene, 0.5, m=4)
        rep1 = compute_metrics(recs, [scene])
        for r in recs:
            r["confidences"] = np.sqrt(r["confidences"]) * 0.37   # strictly monotone
        rep2 = compute_metrics(recs, [scene])
        assert np.isclose(rep1.mean_ap, rep2.mean_ap, atol=1e-12)

    def test_agent_without_gt_excluded_and_counted(self):
        scene = make_gt_scene()
        fid = scene.focal_ids[0]
        scene.agent(fid).future[:, 4] = 0.0
        recs = self.records_for(scene, 0.0, m=1)
        rep = compute_metrics(recs, [scene])
        assert rep.excluded_count == 1
        assert rep.sample_count == len(scene.focal_ids) - 1

    def test_unknown_agent_rejected(self):
        scene = make_gt_scene()
        recs = [{"scene_id": scene.scene_id, "agent_id": "ghost",
                 "trajectories": np.zeros((1, 3, 2)), "confidences": [1.0]}]
        with pytest.raises(InputError):
            compute_metrics(recs, [scene])

    def test_report_files(self, tmp_path):
        scene = make_gt_scene()
        rep = compute_metrics(self.records_for(scene, 0.1, m=1), [scene],
                              config_hash="abc", seed=5)
        rep.write_json(tmp_path / "m.json")
        rep.write_csv(tmp_path / "m.csv")
        import json
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["config_hash"] == "abc" and doc["seed"] == 5
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0].startswith("#")   # threshold note header
        assert "miss_threshold" in lines[1]


def test_prediction_io_roundtrip(tmp_path, rng):
    recs = [{"scene_id": "s", "agent_id": "a0",
             "trajectories": rng.standard_normal((2, 4, 2)),
             "confidences": np.array([0.7, 0.3])}]
    path = tmp_path / "preds.jsonl"
    write_predictions(path, recs, config_hash="ff", seed=1)
    back = read_predictions(path)
    assert np.allclose(back[0]["trajectories"], recs[0]["trajectories"])
    import json
    doc = json.loads(path.read_text().splitlines()[0])
    assert doc["config_hash"] == "ff" and doc["seed"] == 1


def test_displacement_stats_respects_validity(rng):
    fut = np.zeros((5, 5))
    fut[:, 0] = np.arange(5)
    fut[:, 4] = [1, 1, 0, 1, 0]
    trajs = np.zeros((2, 5, 2))
    trajs[:, :, 0] = fut[:, 0]
    trajs[1, :, 0] += 1.0
    ade, fde = displacement_stats(trajs, fut)
    assert np.isclose(ade[0], 0.0) and np.isclose(fde[0], 0.0)
    assert np.isclose(ade[1], 1.0) and np.isclose(fde[1], 1.0)  # last valid = idx 3
