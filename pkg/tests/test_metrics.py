import numpy as np
import pytest

import brute_eval
from scenes import oracle_inputs, random_scene
from zsdet.data import DataError, Detection, GroundTruth, GroundTruthInstance
from zsdet.embed import CategorySplit
from zsdet.masks import ellipse_grid
from zsdet.metrics import (RECALL_IOUS, average_precision, evaluate, greedy_match, harmonic_mean,
                           mask_iou, recall_at_k)

BOX = np.array([10.0, 10.0, 30.0, 30.0])


def det(img, score, box=BOX, cat="u", origin="unseen", mask=None):
    return Detection(img, cat, origin, score, np.asarray(box, dtype=float), mask)


def gt(img, box=BOX, cat="u", mask=None):
    return GroundTruthInstance(img, cat, box, mask)


class TestHarmonicMean:
    def test_values(self):
        assert harmonic_mean(47.3, 9.4) == pytest.approx(15.68, abs=0.01)
        assert harmonic_mean(0.0, 0.7) == 0.0
        assert harmonic_mean(0.0, 0.0) == 0.0
        assert harmonic_mean(0.4, 0.4) == pytest.approx(0.4)

    def test_negative(self):
        with pytest.raises(ValueError):
            harmonic_mean(-1, 1)


class TestAveragePrecision:
    def test_perfect(self):
        assert average_precision([det(0, 0.9)], [gt(0)]) == 1.0

    def test_no_detections(self):
        assert average_precision([], [gt(0)]) == 0.0

    def test_false_positive_first(self):
        # precision 0.5 at recall 1 for every sampled recall level
        dets = [det(0, 0.9, [50, 50, 60, 60]), det(0, 0.8)]
        assert average_precision(dets, [gt(0)]) == pytest.approx(0.5)

    def test_half_recall(self):
        # recall reaches 0.5 only: levels 0..0.5 score 1, the rest 0
        assert average_precision([det(0, 0.9)], [gt(0), gt(1)]) == pytest.approx(51 / 101)

    def test_duplicate_is_false_positive(self):
        assert average_precision([det(0, 0.9), det(0, 0.8)], [gt(0)]) == 1.0
        _, tp = greedy_match([0.9, 0.8], [0, 0], [0], np.array([[1.0], [1.0]]), 0.5)
        assert tp.tolist() == [True, False]

    def test_cross_image_never_matches(self):
        assert average_precision([det(1, 0.9)], [gt(0)]) == 0.0

    def test_greedy_prefers_highest_iou(self):
        ious = np.array([[0.6, 0.9], [0.0, 0.85]])
        _, tp = greedy_match([0.9, 0.8], [0, 0], [0, 0], ious, 0.5)
        # the first detection takes the 0.9 match, leaving nothing for the second
        assert tp.tolist() == [True, False]

    def test_threshold_inclusive(self):
        _, tp = greedy_match([1.0], [0], [0], np.array([[0.5]]), 0.5)
        assert tp.tolist() == [True]

    def test_undefined_without_ground_truth(self):
        with pytest.raises(ValueError):
            average_precision([det(0, 1.0)], [])


class TestRecall:
    def test_top_k_cutoff(self):
        dets = [det(0, 0.1), det(0, 0.9, [60, 60, 70, 70])]
        assert recall_at_k(dets, [gt(0)], 0.5, k=1) == 0.0
        assert recall_at_k(dets, [gt(0)], 0.5, k=2) == 1.0

    def test_iou_levels(self):
        shifted = det(0, 0.9, [14, 10, 34, 30])  # IoU = 16/24 = 0.667
        for thr, want in ((0.4, 1.0), (0.6, 1.0), (0.7, 0.0)):
            assert recall_at_k([shifted], [gt(0)], thr) == want


class TestMaskIoU:
    def test_values(self):
        a = np.zeros((4, 4), bool)
        a[:2] = True
        b = np.zeros((4, 4), bool)
        b[1:3] = True
        assert mask_iou(a, b) == pytest.approx(1 / 3)

    def test_empty(self):
        with pytest.raises(ValueError):
            mask_iou(np.zeros((2, 2)), np.zeros((2, 2)))

    def test_shape(self):
        with pytest.raises(ValueError):
            mask_iou(np.ones((2, 2)), np.ones((3, 2)))


class TestEvaluate:
    split = CategorySplit(("s",), ("u",))

    def truth(self, masks=False):
        m = ellipse_grid(14) if masks else None
        return GroundTruth({0: (64.0, 64.0), 1: (64.0, 64.0)}, ["s", "u"],
                           [gt(0, cat="u", mask=m), gt(1, [5, 5, 25, 40], cat="s", mask=m)])

    def oracle_dets(self, masks=False):
        m = ellipse_grid(14).astype(float) if masks else None
        return [det(0, 0.9, cat="u", mask=m),
                det(1, 0.8, [5, 5, 25, 40], cat="s", origin="seen", mask=m)]

    def test_perfect_gzsd(self):
        rep = evaluate(self.oracle_dets(), self.truth(), self.split, "gzsd")
        assert rep.map_seen == rep.map_unseen == rep.hm_map == 1.0
        assert all(v == 1.0 for v in rep.hm_recall.values())

    def test_zsd_ignores_seen(self):
        dets = self.oracle_dets() + [det(0, 0.99, [40, 40, 60, 60], cat="s", origin="seen")]
        rep = evaluate(dets, self.truth(), self.split, "zsd")
        assert set(rep.per_category) == {"u"}
        assert rep.map_unseen == 1.0 and rep.map_seen is None and rep.hm_map is None
        assert all(row[0] == "zsd" and row[3] == "" for row in rep.csv_rows())

    def test_perfect_masks(self):
        rep = evaluate(self.oracle_dets(True), self.truth(True), self.split, "gzsi")
        assert rep.map_seen == rep.map_unseen == 1.0

    def test_masks_need_threshold_crossing(self):
        dets = self.oracle_dets(True)
        for d in dets:
            d.mask = d.mask * 0.5  # never strictly above 0.5
        rep = evaluate(dets, self.truth(True), self.split, "gzsi")
        assert rep.map_seen == rep.map_unseen == 0.0

    def test_box_mode_ignores_masks(self):
        dets = self.oracle_dets()
        rep = evaluate(dets, self.truth(True), self.split, "gzsd")
        assert rep.hm_map == 1.0

    def test_unknown_category(self):
        with pytest.raises(DataError):
            evaluate([det(0, 0.5, cat="zebra")], self.truth(), self.split, "zsd")

    def test_unknown_image(self):
        with pytest.raises(DataError):
            evaluate([det(9, 0.5)], self.truth(), self.split, "zsd")

    def test_category_without_truth_is_skipped(self):
        split = CategorySplit(("s",), ("u", "v"))
        rep = evaluate(self.oracle_dets(), self.truth(), split, "zsd")
        assert rep.per_category["v"]["ap"] is None
        assert rep.map_unseen == 1.0

    def test_report_serialization(self):
        rep = evaluate(self.oracle_dets(), self.truth(), self.split, "gzsd")
        doc = rep.to_json()
        assert doc["hm_map"] == 100.0 and doc["mode"] == "gzsd"
        lines = rep.to_csv().splitlines()
        assert lines[0] == "mode,metric,iou,seen,unseen,hm"
        assert len(lines) == 2 + len(RECALL_IOUS)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2024)
        for _ in range(15):
            dets, truth, split = random_scene(rng, tie_scores=True)
            rep = evaluate(dets, truth, split, "gzsd", max_dets=8)
            d, g = oracle_inputs(dets, truth, split.seen + split.unseen)
            for origin, names in (("seen", split.seen), ("unseen", split.unseen)):
                if not any(g[c] for c in names):
                    continue
                want_map, want_recall = brute_eval.evaluate(d, g, 0.5, 8, names)
                assert getattr(rep, f"map_{origin}") == pytest.approx(want_map, abs=1e-12)
                assert getattr(rep, f"recall_{origin}")[0.5] == pytest.approx(want_recall,
                                                                              abs=1e-12)
