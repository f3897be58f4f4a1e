import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from bcgnn.head import CandidateProposal
from bcgnn.postprocess import (
    ANET_THRESHOLDS,
    THUMOS_THRESHOLDS,
    ScoredProposal,
    ar_at_an,
    auc,
    fuse_scores,
    load_results,
    metrics_report,
    save_results,
    soft_nms,
    tiou,
    tiou_matrix,
)

interval = st.tuples(st.floats(0, 100), st.floats(0.1, 50)).map(lambda t: (t[0], t[0] + t[1]))


def _random_props(rng, n, span=50):
    s = rng.uniform(0, span, n)
    return [ScoredProposal(float(a), float(a + d), float(c)) for a, d, c in zip(s, rng.uniform(0.5, 20, n), rng.uniform(0, 1, n))]


class TestFuse:
    @pytest.mark.parametrize("p, want", [((0.5, 0.5, 0.5), 0.125), ((0.9, 0.0, 0.7), 0.0), ((1, 1, 1), 1.0)])
    def test_examples(self, p, want):
        assert fuse_scores(CandidateProposal(0, 3, *p)).score == pytest.approx(want)

    def test_keeps_boundaries(self):
        out = fuse_scores(CandidateProposal(2, 7, 0.3, 0.4, 0.5))
        assert (out.t_s, out.t_e) == (2.0, 7.0)
        assert out.score == pytest.approx(oracles.fuse(0.3, 0.4, 0.5))


class TestTiou:
    def test_examples(self):
        assert tiou((0, 2), (1, 3)) == pytest.approx(1 / 3)
        assert tiou((1, 4), (1, 4)) == 1.0
        assert tiou((0, 1), (2, 3)) == 0.0
        assert tiou((0, 1), (1, 2)) == 0.0

    @given(interval, interval)
    def test_symmetric_and_bounded(self, a, b):
        v = tiou(a, b)
        assert v == pytest.approx(tiou(b, a)) and 0 <= v <= 1
        assert v == pytest.approx(oracles.tiou(a, b), abs=1e-12)

    def test_matrix_matches_scalar(self, rng):
        segs = np.sort(rng.uniform(0, 10, (7, 2)), axis=1)
        refs = np.sort(rng.uniform(0, 10, (4, 2)), axis=1)
        m = tiou_matrix(segs, refs)
        for i in range(7):
            for j in range(4):
                assert m[i, j] == pytest.approx(tiou(segs[i], refs[j]), abs=1e-12)


class TestSoftNms:
    def test_hand_decay(self):
        # [0,3] and [1,4]: overlap 2, union 4
        out = soft_nms([ScoredProposal(0, 3, 0.9), ScoredProposal(1, 4, 0.8)], sigma=0.5)
        assert out[0].score == 0.9
        assert out[1].score == pytest.approx(0.8 * math.exp(-0.5), abs=1e-9)
        assert out[1].score == pytest.approx(0.485, abs=1e-3)

    def test_disjoint_unchanged(self):
        props = [ScoredProposal(0, 1, 0.3), ScoredProposal(2, 3, 0.9), ScoredProposal(5, 6, 0.6)]
        out = soft_nms(props)
        assert [p.score for p in out] == [0.9, 0.6, 0.3]

    def test_input_not_modified(self, rng):
        props = _random_props(rng, 20)
        copy = list(props)
        soft_nms(props)
        assert props == copy

    def test_floor_and_top_k(self, rng):
        props = _random_props(rng, 60, span=5)
        out = soft_nms(props, score_floor=0.2, top_k=10)
        assert len(out) <= 10
        assert all(p.score >= 0.2 for p in out[1:])

    def test_empty(self):
        assert soft_nms([]) == []

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            soft_nms([ScoredProposal(0, 1, 0.5)], sigma=0)

    def test_matches_reference(self, rng):
        for _ in range(100):
            props = _random_props(rng, int(rng.integers(1, 51)))
            sigma = float(rng.uniform(0.1, 1.0))
            got = soft_nms(props, sigma=sigma, score_floor=0.01, top_k=30)
            ref = oracles.soft_nms([(p.t_s, p.t_e, p.score) for p in props], sigma, 0.01, 30)
            assert len(got) == len(ref)
            for g, r in zip(got, ref):
                assert (g.t_s, g.t_e) == (r[0], r[1])
                assert g.score == pytest.approx(r[2], abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(interval, st.floats(0.01, 1)), min_size=1, max_size=30))
    def test_never_increases_and_keeps_boundaries(self, items):
        props = [ScoredProposal(a, b, s) for (a, b), s in items]
        original = {}
        for p in props:
            original.setdefault((p.t_s, p.t_e), []).append(p.score)
        out = soft_nms(props, top_k=100)
        for p in out:
            assert (p.t_s, p.t_e) in original
            assert p.score <= max(original[(p.t_s, p.t_e)]) + 1e-12
        scores = [p.score for p in out]
        assert scores == sorted(scores, reverse=True)


class TestAverageRecall:
    def test_hand_example(self):
        # one gt matched at tIoU 0.6, the other not at all
        per_video = {"v": ([ScoredProposal(0, 10, 0.9)], np.array([[0, 6], [50, 60]]))}
        curve = ar_at_an(per_video, thresholds=(0.5, 0.7), an_values=[1])
        assert curve[1] == pytest.approx(0.25)

    def test_perfect(self):
        gts = np.array([[1.0, 4.0], [6.0, 9.0]])
        props = [ScoredProposal(1, 4, 0.9), ScoredProposal(6, 9, 0.8)]
        curve = ar_at_an({"v": (props, gts)}, ANET_THRESHOLDS, range(1, 101))
        assert all(curve[a] == 1.0 for a in range(2, 101))

    def test_no_proposals(self):
        curve = ar_at_an({"v": ([], np.array([[1.0, 4.0]]))}, ANET_THRESHOLDS, [1, 100])
        assert curve == {1: 0.0, 100: 0.0}

    def test_videos_without_gt_skipped(self):
        a = {"v": ([ScoredProposal(1, 4, 0.9)], np.array([[1.0, 4.0]]))}
        b = dict(a, empty=([ScoredProposal(0, 1, 0.5)], np.zeros((0, 2))))
        assert ar_at_an(a, an_values=[1]) == ar_at_an(b, an_values=[1])

    def test_matches_reference_and_monotone(self, rng):
        for _ in range(20):
            per_video = {}
            for v in range(int(rng.integers(1, 5))):
                gts = np.sort(rng.uniform(0, 50, (int(rng.integers(0, 4)), 2)), axis=1)
                gts[:, 1] += 0.5
                per_video[f"v{v}"] = (_random_props(rng, int(rng.integers(0, 40))), gts)
            curve = ar_at_an(per_video, THUMOS_THRESHOLDS, range(1, 41))
            vals = [curve[a] for a in range(1, 41)]
            assert all(b >= a for a, b in zip(vals, vals[1:]))
            tuples = {k: ([(p.t_s, p.t_e, p.score) for p in ps], [tuple(g) for g in gts]) for k, (ps, gts) in per_video.items()}
            for an in (1, 5, 40):
                assert curve[an] == pytest.approx(oracles.average_recall(tuples, THUMOS_THRESHOLDS, an), abs=1e-12)

    def test_threshold_grids(self):
        assert len(ANET_THRESHOLDS) == 10 and ANET_THRESHOLDS[-1] == 0.95
        assert len(THUMOS_THRESHOLDS) == 11 and THUMOS_THRESHOLDS[-1] == 1.0


class TestAuc:
    def test_constant_one(self):
        assert auc({a: 1.0 for a in range(1, 101)}) == pytest.approx(99.0)

    def test_constant_zero(self):
        assert auc({a: 0.0 for a in range(1, 101)}) == 0.0

    def test_matches_fine_integration(self, rng):
        for _ in range(20):
            curve = dict(zip(range(1, 101), np.sort(rng.uniform(0, 1, 100))))
            assert abs(auc(curve) - oracles.auc_fine(curve)) <= 1e-6

    def test_non_contiguous_grid(self):
        with pytest.raises(ValueError):
            auc({1: 0.5, 3: 0.6})


class TestResultsIO:
    def test_round_trip(self, tmp_path):
        res = {"a": [ScoredProposal(1.0, 3.5, 0.25)], "b": []}
        save_results(tmp_path / "r.json", res, {"config_hash": "abc", "units": "snippets"})
        back, meta = load_results(tmp_path / "r.json")
        assert back == res and meta["config_hash"] == "abc"

    def test_report_fields(self):
        per_video = {"v": ([ScoredProposal(1, 4, 0.9)], np.array([[1.0, 4.0]]))}
        rep = metrics_report(per_video)
        for key in ("AR@10", "AR@50", "AR@100", "AUC", "curve"):
            assert key in rep
        assert rep["AUC"] == pytest.approx(auc({int(k): v for k, v in rep["curve"].items()}))
