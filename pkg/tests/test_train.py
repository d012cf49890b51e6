import json

import numpy as np
import pytest

from zsdet.data import DataError, GroundTruth, GroundTruthInstance, ProposalSet
from zsdet.embed import CategorySplit, EmbeddingTable
from zsdet.heads import init_params
from zsdet.losses import LossKind
from zsdet.train import (TrainConfig, build_training_set, load_checkpoint, match_proposals,
                         save_checkpoint, train_heads)


def tiny_gt():
    return GroundTruth({0: (50.0, 50.0)}, ["a", "b"], [
        GroundTruthInstance(0, "a", [0, 0, 10, 10], np.ones((4, 4), int)),
        GroundTruthInstance(0, "b", [20, 20, 30, 30]),
    ])


class TestMatching:
    def test_assignment(self):
        props = ProposalSet([0, 0, 0, 1], [[0, 0, 10, 11], [20, 21, 30, 30], [40, 40, 45, 45],
                                           [0, 0, 10, 10]], np.zeros((4, 2)))
        out = match_proposals(props, tiny_gt().annotations, 0.5, mask_size=4)
        assert [m.category for m in out] == ["a", "b", None, None]
        np.testing.assert_allclose(out[0].delta, [0, 0, 0, -1 / 11])
        assert out[0].mask.shape == (4, 4) and out[1].mask is None

    def test_ties_go_to_first_annotation(self):
        anns = [GroundTruthInstance(0, "a", [0, 0, 10, 10]),
                GroundTruthInstance(0, "b", [0, 0, 10, 10])]
        props = ProposalSet([0], [[0, 0, 10, 10]], np.zeros((1, 2)))
        assert match_proposals(props, anns)[0].category == "a"

    def test_threshold_inclusive(self):
        anns = [GroundTruthInstance(0, "a", [0, 0, 10, 10])]
        props = ProposalSet([0], [[0, 0, 5, 10]], np.zeros((1, 2)))  # IoU exactly 0.5
        assert match_proposals(props, anns, 0.5)[0].category == "a"

    def test_unseen_annotation_rejected(self):
        props = ProposalSet([0], [[0, 0, 10, 10]], np.zeros((1, 2)))
        with pytest.raises(DataError, match="non-seen"):
            build_training_set(props, tiny_gt(), ["a"])


class TestConfig:
    @pytest.mark.parametrize("bad", [{"learning_rate": 0}, {"iterations": -1},
                                     {"iou_threshold": 1.0}, {"momentum": 1.0},
                                     {"loss": "hinge"}, {"loss": "max-margin"}])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_max_margin_with_random_start(self):
        assert TrainConfig(loss="max-margin", init_scale=0.01).loss is LossKind.MAX_MARGIN


class TestTraining:
    def fit(self, ds, **kw):
        history = []
        cfg = TrainConfig(**{"iterations": 150, "seed": 4, **kw})
        params = train_heads(ds.proposals_train, ds.gt_train, ds.embeddings, ds.split, cfg,
                             history=history)
        return params, history

    def test_zero_iterations_is_init(self, small_synth):
        params, history = self.fit(small_synth, iterations=0, init_scale=1.0)
        ds = small_synth
        want = init_params(16, 32, 8, "learned", ds.embeddings.subset(ds.split.seen).vectors,
                           np.random.default_rng(4), 1.0)
        assert params.digest() == want.digest() and history == []

    def test_deterministic(self, small_synth):
        a, _ = self.fit(small_synth)
        b, _ = self.fit(small_synth)
        assert a.digest() == b.digest()
        c, _ = self.fit(small_synth, seed=5)
        assert c.digest() != a.digest()

    def test_loss_decreases(self, small_synth):
        _, history = self.fit(small_synth, iterations=400)
        first = np.mean([h["cls"] for h in history[:20]])
        last = np.mean([h["cls"] for h in history[-20:]])
        # noiseless background features are all zero and always cost log(9),
        # so half of every batch sits at a fixed floor
        assert last < 0.75 * first
        assert all(np.isfinite(h["total"]) for h in history)

    @pytest.mark.parametrize("kind", ["max-margin", "l2-error"])
    def test_other_losses_train(self, small_synth, kind):
        _, history = self.fit(small_synth, loss=kind, init_scale=0.01, iterations=200)
        assert history[-1]["cls"] < history[0]["cls"]

    def test_only_learned_background_moves(self, small_synth):
        params, _ = self.fit(small_synth, background="mean", iterations=20)
        ds = small_synth
        np.testing.assert_array_equal(params.b,
                                      ds.embeddings.subset(ds.split.seen).vectors.mean(axis=0))
        learned, _ = self.fit(small_synth, iterations=20)
        assert not np.array_equal(learned.b, params.b)

    def test_divergence_is_reported(self, small_synth):
        with pytest.raises(FloatingPointError), np.errstate(all="ignore"):
            self.fit(small_synth, learning_rate=1e300, iterations=50)

    def test_empty_dataset(self):
        table = EmbeddingTable(("a", "b"), np.eye(2))
        empty = ProposalSet([], np.zeros((0, 4)), np.zeros((0, 3)))
        with pytest.raises(DataError):
            train_heads(empty, GroundTruth({}, ["a", "b"]), table, CategorySplit(("a",), ("b",)),
                        TrainConfig(iterations=1))

    def test_init_dims_checked(self, small_synth):
        ds = small_synth
        bad = init_params(16, 31, 8)
        with pytest.raises(DataError, match="dims"):
            train_heads(ds.proposals_train, ds.gt_train, ds.embeddings, ds.split,
                        TrainConfig(iterations=1), init=bad)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        params = init_params(3, 4, 2, rng=rng)
        save_checkpoint(params, tmp_path / "c.json")
        back = load_checkpoint(tmp_path / "c.json")
        assert back.digest() == params.digest()

    def test_tamper_detected(self, tmp_path, rng):
        save_checkpoint(init_params(3, 4, 2, rng=rng), tmp_path / "c.json")
        doc = json.loads((tmp_path / "c.json").read_text())
        doc["b"][0] += 1.0
        (tmp_path / "c.json").write_text(json.dumps(doc))
        with pytest.raises(DataError, match="checksum"):
            load_checkpoint(tmp_path / "c.json")

    def test_garbage(self, tmp_path):
        (tmp_path / "c.json").write_text("not json")
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "c.json")
