import math

import pytest

from ordervqa import metrics
from ordervqa.core import TemporalSpan


class TestTiou:
    def test_identical(self):
        assert metrics.tiou(TemporalSpan(0, 10), TemporalSpan(0, 10)) == 1.0

    def test_partial_overlap(self):
        assert metrics.tiou(TemporalSpan(0, 10), TemporalSpan(5, 15)) == pytest.approx(5 / 15)

    def test_disjoint(self):
        assert metrics.tiou(TemporalSpan(0, 1), TemporalSpan(2, 3)) == 0.0

    def test_symmetry(self):
        a, b = TemporalSpan(1, 4), TemporalSpan(2, 9)
        assert metrics.tiou(a, b) == metrics.tiou(b, a)


class TestLevenshtein:
    def test_identical(self):
        assert metrics.levenshtein((0, 1, 2, 3, 4), (0, 1, 2, 3, 4)) == 0

    def test_adjacent_swap_costs_two(self):
        assert metrics.levenshtein((0, 1, 2, 3, 4), (1, 0, 2, 3, 4)) == 2

    def test_empty_vs_full(self):
        assert metrics.levenshtein((), (0, 1, 2, 3, 4)) == 5

    def test_strings(self):
        assert metrics.levenshtein("kitten", "sitting") == 3


class TestMultiChoiceAccuracy:
    def test_all_and_none_correct(self):
        key = {"a": 0, "b": 1}
        assert metrics.multi_choice_accuracy({"a": 0, "b": 1}, key) == 1.0
        assert metrics.multi_choice_accuracy({"a": 1, "b": 0}, key) == 0.0

    def test_missing_prediction(self):
        with pytest.raises(ValueError, match="missing prediction"):
            metrics.multi_choice_accuracy({"a": 0}, {"a": 0, "b": 1})

    def test_extra_prediction(self):
        with pytest.raises(ValueError, match="unknown qid"):
            metrics.multi_choice_accuracy({"a": 0, "z": 1}, {"a": 0})


class TestRecallRetrieval:
    def test_per_video_weighting(self):
        # one video answers its single query at rank 1, the other has 3 misses
        assert metrics.recall_at_k_retrieval({"v1": [1], "v2": [2, 3, 4]}, 1) == 0.5

    def test_k_covers_everything(self):
        assert metrics.recall_at_k_retrieval({"v1": [5, 3]}, 5) == 1.0

    def test_hand_count(self):
        ranks = {"v1": [1, 3, 2]}
        assert metrics.recall_at_k_retrieval(ranks, 2) == pytest.approx(2 / 3)

    def test_empty_video(self):
        with pytest.raises(ValueError, match="no queries"):
            metrics.recall_at_k_retrieval({"v1": []}, 1)


def _loc(*spans_scores):
    return [(TemporalSpan(s, e), p) for s, e, p in spans_scores]


class TestRecallTiou:
    def test_perfect(self):
        locs = {"q": _loc((0, 10, 0.9))}
        gts = {"q": TemporalSpan(0, 10)}
        for m in (0.1, 0.3, 0.5, 0.7):
            assert metrics.recall_at_k_tiou(locs, gts, 1, m) == 1.0

    def test_threshold(self):
        # top-1 tIoU = 4/10 = 0.4: counted at 0.3, not at 0.5
        locs = {"q": _loc((0, 4, 0.9), (0, 10, 0.1))}
        gts = {"q": TemporalSpan(0, 10)}
        assert metrics.recall_at_k_tiou(locs, gts, 1, 0.3) == 1.0
        assert metrics.recall_at_k_tiou(locs, gts, 1, 0.5) == 0.0
        assert metrics.recall_at_k_tiou(locs, gts, 2, 0.5) == 1.0

    def test_top_k_by_score_not_order(self):
        locs = {"q": _loc((50, 60, 0.2), (0, 10, 0.8))}
        gts = {"q": TemporalSpan(0, 10)}
        assert metrics.recall_at_k_tiou(locs, gts, 1, 0.5) == 1.0

    def test_k_exceeds_predictions(self):
        locs = {"q": _loc((0, 10, 1.0))}
        with pytest.raises(ValueError, match="exceeds"):
            metrics.recall_at_k_tiou(locs, {"q": TemporalSpan(0, 10)}, 5, 0.5)

    def test_missing_query(self):
        with pytest.raises(ValueError, match="no localization"):
            metrics.recall_at_k_tiou({}, {"q": TemporalSpan(0, 10)}, 1, 0.5)


class TestMeanIou:
    def test_perfect_and_disjoint(self):
        gts = {"q": TemporalSpan(0, 10)}
        assert metrics.mean_iou({"q": _loc((0, 10, 1.0))}, gts) == 1.0
        assert metrics.mean_iou({"q": _loc((20, 30, 1.0))}, gts) == 0.0

    def test_hand_value_uses_top_scoring(self):
        locs = {
            "q1": _loc((0, 5, 0.9), (0, 10, 0.99)),  # top-1 is the exact span
            "q2": _loc((0, 5, 0.9)),  # tIoU 0.5
        }
        gts = {"q1": TemporalSpan(0, 10), "q2": TemporalSpan(0, 10)}
        assert metrics.mean_iou(locs, gts) == pytest.approx(0.75)


class TestMakeReport:
    def test_display_and_raw(self):
        report = metrics.make_report("image_ordering", 100, 1 / 3, per_gap={1: 0.5})
        assert report["accuracy"] == 33.33
        assert report["raw"]["accuracy"] == pytest.approx(1 / 3)
        assert report["per_gap"] == {"1": 50.0}
        assert report["n"] == 100

    def test_recall_block(self):
        report = metrics.make_report("grounding", 5, 0.0, recall={"R@1,tIoU=0.5": 0.8})
        assert report["recall"]["R@1,tIoU=0.5"] == 80.0
        assert math.isclose(report["raw"]["recall"]["R@1,tIoU=0.5"], 0.8)
