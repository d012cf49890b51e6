"""Seeded synthetic detection data with a planted linear feature model.

Object proposals of category c carry ``z = M_z e_c + J t + eps`` where
``e_c`` is the unit embedding, ``t`` the proposal-to-ground-truth corner
offsets and ``eps ~ N(0, sigma^2 I)``; background proposals carry ``eps``
only. Spatial features are ``M_m e_c + eps`` at grid cells inside the
object's (elliptical) mask and ``eps`` elsewhere. Because the map from
embeddings to features is linear, the embedding-aware heads can represent
the ideal classifier, regressor and segmentor exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .boxes import encode_box, iou_matrix
from .data import GroundTruth, GroundTruthInstance, ProposalSet, write_ground_truth, write_proposals
from .embed import CategorySplit, EmbeddingTable, save_embeddings, save_split
from .masks import crop_mask, ellipse_grid


@dataclass
class SynthConfig:
    seed: int = 1
    d: int = 16
    p: int = 32
    t: int = 8
    n: int = 7  # spatial grid of the proposal mask features
    image_size: tuple = (128, 128)
    n_seen: int = 8
    n_unseen: int = 4
    objects_per_image: int = 3
    images: int = 200
    train_fraction: float = 0.8
    unseen_test_fraction: float = 0.5  # share of test objects drawn from unseen categories
    box_size: tuple = (24.0, 56.0)
    max_object_iou: float = 0.3
    proposals_per_object: int = 3
    background_proposals: int = 3
    jitter: float = 0.35  # max corner shift, in box widths/heights
    sigma: float = 0.0
    hidden_scale: float = 2.0
    offset_scale: float = 4.0
    shared_embedding: float = 0.5  # common component of every category embedding
    embedding_rank: int | None = None  # intrinsic dimension of the category-specific part
    gt_mask_size: int = 28
    max_retries: int = 1000

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        self.box_size = tuple(self.box_size)
        for name in ("d", "p", "t", "n", "n_seen", "objects_per_image", "images",
                     "gt_mask_size", "max_retries"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_unseen < 0 or self.proposals_per_object < 1 or self.background_proposals < 0:
            raise ValueError("proposal and category counts must be non-negative")
        if self.sigma < 0 or self.jitter < 0:
            raise ValueError("sigma and jitter must be non-negative")
        if not 0 < self.train_fraction <= 1 or not 0 <= self.unseen_test_fraction <= 1:
            raise ValueError("fractions must lie in [0, 1]")
        if self.embedding_rank is not None and not 1 <= self.embedding_rank < self.d:
            raise ValueError("embedding_rank must lie in [1, d)")
        if not 0 <= self.shared_embedding < 1:
            raise ValueError("shared_embedding must lie in [0, 1)")
        lo, hi = self.box_size
        if not 0 < lo <= hi or hi >= min(self.image_size):
            raise ValueError("box_size must satisfy 0 < min <= max < image side")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["image_size"] = list(self.image_size)
        out["box_size"] = list(self.box_size)
        return out


@dataclass
class SynthDataset:
    config: SynthConfig
    embeddings: EmbeddingTable
    split: CategorySplit
    gt_train: GroundTruth
    gt_test: GroundTruth
    proposals_train: ProposalSet
    proposals_test: ProposalSet
    truth_train: list  # per proposal: category name or None (background)
    truth_test: list
    hidden: dict = field(default_factory=dict)  # M_z (p x d), M_m (t x d), J (p x 4)

    FILES = ("embeddings.txt", "split.txt", "gt_train.json", "gt_test.json",
             "proposals_train.jsonl", "proposals_test.jsonl", "truth.json", "hidden_maps.json")

    def write(self, out_dir) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_embeddings(self.embeddings, out / "embeddings.txt")
        save_split(self.split, out / "split.txt")
        write_ground_truth(self.gt_train, out / "gt_train.json")
        write_ground_truth(self.gt_test, out / "gt_test.json")
        write_proposals(self.proposals_train, out / "proposals_train.jsonl")
        write_proposals(self.proposals_test, out / "proposals_test.jsonl")
        (out / "truth.json").write_text(
            json.dumps({"train": self.truth_train, "test": self.truth_test}) + "\n",
            encoding="utf-8")
        (out / "hidden_maps.json").write_text(
            json.dumps({k: v.tolist() for k, v in self.hidden.items()}, sort_keys=True) + "\n",
            encoding="utf-8")
        return [out / name for name in self.FILES]


def _unit(rng, shape):
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _embeddings(rng, cfg: SynthConfig) -> np.ndarray:
    k = cfg.n_seen + cfg.n_unseen
    if cfg.d == 1:
        return np.where(rng.random((k, 1)) < 0.5, -1.0, 1.0)
    shared = _unit(rng, cfg.d)
    own = rng.standard_normal((k, cfg.d))
    if cfg.embedding_rank is not None:
        basis = rng.standard_normal((cfg.embedding_rank, cfg.d))
        own = rng.standard_normal((k, cfg.embedding_rank)) @ basis
    own -= np.outer(own @ shared, shared)
    own /= np.linalg.norm(own, axis=1, keepdims=True)
    kappa = cfg.shared_embedding
    return kappa * shared[None, :] + np.sqrt(1.0 - kappa**2) * own


def _isotropic_map(rng, p, d) -> np.ndarray:
    """Random p x d map with M^T M proportional to I (when p >= d).

    Column norms are sqrt(p/d), the same energy as an N(0, 1/d) matrix.
    With an isotropic map the score e_c^T M^T M e is a scaled cosine, so
    the reference classifier is exact on noiseless features.
    """
    g = rng.standard_normal((p, d))
    if p < d:
        return g / np.sqrt(d)
    q, r = np.linalg.qr(g)
    q *= np.where(np.diag(r) < 0, -1.0, 1.0)  # unique (Haar) orthonormal factor
    return q * np.sqrt(p / d)


def _place_boxes(rng, cfg: SynthConfig) -> np.ndarray:
    w_img, h_img = cfg.image_size
    lo, hi = cfg.box_size
    boxes = []
    for _ in range(cfg.objects_per_image):
        for _ in range(cfg.max_retries):
            bw, bh = rng.uniform(lo, hi, size=2)
            x1 = rng.uniform(0.0, w_img - bw)
            y1 = rng.uniform(0.0, h_img - bh)
            box = np.array([x1, y1, x1 + bw, y1 + bh])
            if not boxes or iou_matrix(box, np.stack(boxes)).max() <= cfg.max_object_iou:
                boxes.append(box)
                break
        else:
            raise RuntimeError("could not place non-overlapping objects; "
                               "reduce objects_per_image or box_size")
    return np.stack(boxes)


def _jitter(rng, box, cfg: SynthConfig) -> np.ndarray:
    w_img, h_img = cfg.image_size
    bw, bh = box[2] - box[0], box[3] - box[1]
    scale = np.array([bw, bh, bw, bh])
    for _ in range(cfg.max_retries):
        cand = box + rng.uniform(-cfg.jitter, cfg.jitter, size=4) * scale
        cand = np.clip(cand, 0.0, [w_img, h_img, w_img, h_img])
        if cand[2] - cand[0] >= 2.0 and cand[3] - cand[1] >= 2.0:
            return cand
    raise RuntimeError("could not draw a valid jittered proposal")


def _background_box(rng, gt_boxes, cfg: SynthConfig) -> np.ndarray:
    w_img, h_img = cfg.image_size
    lo, hi = cfg.box_size
    for _ in range(cfg.max_retries):
        bw, bh = rng.uniform(lo, hi, size=2)
        x1 = rng.uniform(0.0, w_img - bw)
        y1 = rng.uniform(0.0, h_img - bh)
        box = np.array([x1, y1, x1 + bw, y1 + bh])
        if iou_matrix(box, gt_boxes).max() < 0.3:
            return box
    raise RuntimeError("could not place a background proposal")


def generate(config: SynthConfig) -> SynthDataset:
    """Build the full dataset; a pure function of ``config``."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    names = tuple(f"cat{i:02d}" for i in range(cfg.n_seen + cfg.n_unseen))
    emb = _embeddings(rng, cfg)
    table = EmbeddingTable(names, emb)
    split = CategorySplit(names[:cfg.n_seen], names[cfg.n_seen:])
    hidden = {
        "M_z": _isotropic_map(rng, cfg.p, cfg.d) * cfg.hidden_scale,
        "M_m": rng.standard_normal((cfg.t, cfg.d)) * cfg.hidden_scale / np.sqrt(cfg.d),
        "J": rng.standard_normal((cfg.p, 4)) * cfg.offset_scale / np.sqrt(cfg.p),
    }
    if cfg.p > cfg.d + 4:
        # keep the offset code out of the category subspace of z
        q, _ = np.linalg.qr(hidden["M_z"])
        hidden["J"] -= q @ (q.T @ hidden["J"])
    ellipse = ellipse_grid(cfg.gt_mask_size)
    n_train = max(1, int(round(cfg.images * cfg.train_fraction)))
    if cfg.n_unseen == 0 and n_train < cfg.images and cfg.unseen_test_fraction > 0:
        raise ValueError("unseen test objects requested but n_unseen is 0")

    parts = {"train": ([], [], [], [], [], []), "test": ([], [], [], [], [], [])}
    images = {"train": {}, "test": {}}
    for img in range(cfg.images):
        part = "train" if img < n_train else "test"
        anns, ids, boxes, zs, zms, truth = parts[part]
        images[part][img] = tuple(float(v) for v in cfg.image_size)
        gt_boxes = _place_boxes(rng, cfg)
        for gbox in gt_boxes:
            if part == "test" and cfg.n_unseen and rng.random() < cfg.unseen_test_fraction:
                c = cfg.n_seen + int(rng.integers(cfg.n_unseen))
            else:
                c = int(rng.integers(cfg.n_seen))
            anns.append(GroundTruthInstance(img, names[c], gbox, ellipse))
            for _ in range(cfg.proposals_per_object):
                pbox = _jitter(rng, gbox, cfg)
                offsets = encode_box(pbox, gbox)
                z = hidden["M_z"] @ emb[c] + hidden["J"] @ offsets
                inside = crop_mask(ellipse, gbox, pbox, cfg.n).astype(bool)
                zm = np.where(inside[..., None], hidden["M_m"] @ emb[c], 0.0)
                ids.append(img)
                boxes.append(pbox)
                zs.append(z + cfg.sigma * rng.standard_normal(cfg.p))
                zms.append(zm + cfg.sigma * rng.standard_normal(zm.shape))
                truth.append(names[c])
        for _ in range(cfg.background_proposals):
            ids.append(img)
            boxes.append(_background_box(rng, gt_boxes, cfg))
            zs.append(cfg.sigma * rng.standard_normal(cfg.p))
            zms.append(cfg.sigma * rng.standard_normal((cfg.n, cfg.n, cfg.t)))
            truth.append(None)

    def props(part):
        _, ids, boxes, zs, zms, _ = parts[part]
        if not ids:
            return ProposalSet([], np.zeros((0, 4)), np.zeros((0, cfg.p)),
                               np.zeros((0, cfg.n, cfg.n, cfg.t)))
        return ProposalSet(ids, np.stack(boxes), np.stack(zs), np.stack(zms))

    cats = list(names)
    return SynthDataset(
        cfg, table, split,
        GroundTruth(images["train"], cats, parts["train"][0]),
        GroundTruth(images["test"], cats, parts["test"][0]),
        props("train"), props("test"), parts["train"][5], parts["test"][5], hidden)


def bayes_reference(dataset: SynthDataset, proposals: ProposalSet | None = None,
                    categories=None) -> list:
    """Label proposals by argmax_c e_c^T M_z^T z over ``categories``.

    Uses only the hidden feature map and the embeddings, never training
    labels. Defaults to the test proposals and all categories.
    """
    proposals = dataset.proposals_test if proposals is None else proposals
    categories = list(dataset.embeddings.names) if categories is None else list(categories)
    e = dataset.embeddings.subset(categories).vectors
    scores = proposals.z @ dataset.hidden["M_z"] @ e.T
    return [categories[i] for i in np.argmax(scores, axis=1)]
