"""From head outputs to ranked detections: box decoding, the seen-score
floor (beta), category-wise NMS and per-image top-k."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .boxes import decode_box, iou_matrix
from .data import Detection, ProposalSet
from .embed import CategorySplit, EmbeddingTable, normalize_rows
from .heads import (HeadParams, TransferVariant, class_probabilities, reg_deltas, seg_logits,
                    unseen_reg_by_variant, unseen_seg_by_variant)
from .masks import crop_mask

_MAX_SCORE = float(np.nextafter(1.0, 0.0))


class TaskMode(str, enum.Enum):
    ZSD = "zsd"
    GZSD = "gzsd"
    ZSI = "zsi"
    GZSI = "gzsi"

    @property
    def generalized(self) -> bool:
        return self in (TaskMode.GZSD, TaskMode.GZSI)

    @property
    def segmentation(self) -> bool:
        return self in (TaskMode.ZSI, TaskMode.GZSI)


@dataclass
class InferConfig:
    beta: float = 0.05
    nms_iou: float = 0.5
    max_detections: int = 100
    mask_threshold: float = 0.5
    mode: TaskMode = TaskMode.GZSD
    variant: TransferVariant = TransferVariant.LEARNED
    seg_variant: TransferVariant | None = None  # defaults to ``variant``
    beta_before_nms: bool = True

    def __post_init__(self):
        self.mode = TaskMode(self.mode)
        self.variant = TransferVariant(self.variant)
        self.seg_variant = self.variant if self.seg_variant is None else TransferVariant(self.seg_variant)
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not 0 <= self.nms_iou <= 1 or not 0 <= self.mask_threshold <= 1:
            raise ValueError("thresholds must lie in [0, 1]")
        if self.max_detections < 0:
            raise ValueError("max_detections must be non-negative")

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("mode", "variant", "seg_variant"):
            out[key] = getattr(self, key).value
        return out


def beta_filter(dets, beta: float) -> list:
    """Drop seen-category detections scoring strictly below ``beta``."""
    return [d for d in dets if not (d.origin == "seen" and d.score < beta)]


def nms_keep(boxes, scores, labels, iou_threshold: float) -> np.ndarray:
    """Indices kept by greedy category-wise NMS, in input order.

    Within a category, boxes are visited by descending score (ties by lower
    index) and dropped when their IoU with a kept box exceeds the threshold.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    keep = []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        idx = idx[np.lexsort((idx, -scores[idx]))]
        ious = iou_matrix(boxes[idx], boxes[idx])
        alive = np.ones(idx.size, dtype=bool)
        for a in range(idx.size):
            if not alive[a]:
                continue
            keep.append(idx[a])
            alive[a + 1:] &= ious[a, a + 1:] <= iou_threshold
    return np.sort(np.asarray(keep, dtype=np.int64))


def per_class_nms(dets, iou_threshold: float = 0.5) -> list:
    """Category-wise NMS applied per image; survivors keep their input order."""
    dets = list(dets)
    if not dets:
        return []
    keys = [(d.image_id, d.category) for d in dets]
    codes = {k: i for i, k in enumerate(dict.fromkeys(keys))}
    keep = nms_keep([d.box for d in dets], [d.score for d in dets],
                    [codes[k] for k in keys], iou_threshold)
    return [dets[i] for i in keep]


def top_k(dets, k: int = 100) -> list:
    """Per image, the ``k`` best detections by score (ties by input order).

    Images appear in first-appearance order; each image's detections are
    sorted by descending score.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    groups: dict = {}
    for i, d in enumerate(dets):
        groups.setdefault(d.image_id, []).append(i)
    out = []
    for rows in groups.values():
        rows.sort(key=lambda i: (-dets[i].score, i))
        out.extend(dets[i] for i in rows[:k])
    return out


def _category_rows(params: HeadParams, embeddings: EmbeddingTable, split: CategorySplit):
    seen_raw = embeddings.subset(split.seen).vectors
    return (params.seen_matrix(seen_raw), normalize_rows(seen_raw),
            normalize_rows(embeddings.subset(split.unseen).vectors))


def predict_image(proposals: ProposalSet, params: HeadParams, embeddings: EmbeddingTable,
                  split: CategorySplit, config: InferConfig, image_size=None) -> list:
    """Detections for the proposals of a single image.

    Every proposal yields one candidate per non-background category, scored
    by its joint softmax probability and boxed with that category's deltas.
    ZSD/ZSI modes drop seen candidates outright. Candidates then pass the
    beta floor, category-wise NMS and top-k (the beta step moves after NMS
    when ``config.beta_before_nms`` is false).
    """
    if len(proposals) == 0:
        return []
    image_id = proposals.image_ids[0]
    if any(img != image_id for img in proposals.image_ids):
        raise ValueError("predict_image expects proposals from one image")
    aug, seen_norm, unseen_norm = _category_rows(params, embeddings, split)
    n_seen, n_unseen = len(split.seen), len(split.unseen)
    probs = class_probabilities(proposals.z, params, aug, unseen_norm)
    scores = np.concatenate([probs[:, :n_seen], probs[:, n_seen + 1:]], axis=1)
    deltas = np.concatenate([
        reg_deltas(proposals.z, params, seen_norm),
        unseen_reg_by_variant(proposals.z, params, seen_norm, unseen_norm, config.variant),
    ], axis=1)  # N x (S + U) x 4
    names = list(split.seen) + list(split.unseen)
    origins = ["seen"] * n_seen + ["unseen"] * n_unseen

    cats = np.arange(n_seen + n_unseen)
    if not config.mode.generalized:
        cats = cats[n_seen:]
    prop_idx, cat_idx = np.meshgrid(np.arange(len(proposals)), cats, indexing="ij")
    prop_idx, cat_idx = prop_idx.ravel(), cat_idx.ravel()
    cand_scores = np.minimum(scores[prop_idx, cat_idx], _MAX_SCORE)
    ok = cand_scores > 0
    prop_idx, cat_idx, cand_scores = prop_idx[ok], cat_idx[ok], cand_scores[ok]
    boxes = decode_box(proposals.boxes[prop_idx], deltas[prop_idx, cat_idx], image_size)
    # zero-area boxes after clipping cannot be valid detections
    ok = (boxes[:, 0] < boxes[:, 2]) & (boxes[:, 1] < boxes[:, 3])
    prop_idx, cat_idx, cand_scores, boxes = prop_idx[ok], cat_idx[ok], cand_scores[ok], boxes[ok]

    is_seen = cat_idx < n_seen
    if config.beta_before_nms:
        ok = ~(is_seen & (cand_scores < config.beta))
        prop_idx, cat_idx, cand_scores, boxes = prop_idx[ok], cat_idx[ok], cand_scores[ok], boxes[ok]
    keep = nms_keep(boxes, cand_scores, cat_idx, config.nms_iou)
    prop_idx, cat_idx, cand_scores, boxes = prop_idx[keep], cat_idx[keep], cand_scores[keep], boxes[keep]
    if not config.beta_before_nms:
        ok = ~((cat_idx < n_seen) & (cand_scores < config.beta))
        prop_idx, cat_idx, cand_scores, boxes = prop_idx[ok], cat_idx[ok], cand_scores[ok], boxes[ok]
    order = np.lexsort((np.arange(cand_scores.size), -cand_scores))[:config.max_detections]

    masks = None
    if config.mode.segmentation:
        if proposals.zm is None:
            raise ValueError("segmentation modes need spatial proposal features")
        masks = _mask_probs(proposals, params, seen_norm, unseen_norm, config,
                            prop_idx[order], cat_idx[order], boxes[order])
    out = []
    for j, r in enumerate(order):
        c = cat_idx[r]
        out.append(Detection(image_id, names[c], origins[c], float(cand_scores[r]),
                             boxes[r], None if masks is None else masks[j]))
    return out


def _mask_probs(proposals, params, seen_norm, unseen_norm, config, prop_idx, cat_idx, boxes):
    n_seen = seen_norm.shape[0]
    n = proposals.zm.shape[1]
    out = []
    for p_i, c, box in zip(prop_idx, cat_idx, boxes):
        zm = proposals.zm[p_i]
        if c < n_seen:
            logits = seg_logits(zm, params, seen_norm[c:c + 1])[..., 0]
        else:
            logits = unseen_seg_by_variant(zm, params, seen_norm, unseen_norm[c - n_seen:c - n_seen + 1],
                                           config.seg_variant)[..., 0]
        # the spatial features cover the proposal box; re-register to the final box
        out.append(crop_mask(expit(logits), proposals.boxes[p_i], box, n))
    return out


def predict(proposals: ProposalSet, params: HeadParams, embeddings: EmbeddingTable,
            split: CategorySplit, config: InferConfig, image_sizes: dict | None = None) -> list:
    """Run :func:`predict_image` on every image, preserving image order."""
    out = []
    for image_id, rows in proposals.by_image().items():
        size = None if image_sizes is None else image_sizes.get(image_id)
        out.extend(predict_image(proposals.take(rows), params, embeddings, split, config, size))
    return out
