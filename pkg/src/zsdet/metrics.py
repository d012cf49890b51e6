"""COCO-style evaluation: AP at one IoU threshold, Recall@100, harmonic mean."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .boxes import box_iou, iou_matrix
from .data import DataError, GroundTruth
from .embed import CategorySplit
from .infer import TaskMode, top_k
from .masks import paste_mask

RECALL_IOUS = (0.4, 0.5, 0.6)
RECALL_GRID = np.linspace(0.0, 1.0, 101)

__all__ = ["box_iou", "mask_iou", "average_precision", "recall_at_k", "harmonic_mean",
           "classification_accuracy", "EvalReport", "evaluate", "RECALL_IOUS"]


def mask_iou(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask canvases differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        raise ValueError("IoU of two empty masks is undefined")
    return np.count_nonzero(a & b) / union


def _mask_iou_matrix(a, b) -> np.ndarray:
    """Pairwise mask IoU on flattened canvases; empty-vs-empty pairs score 0."""
    a = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    b = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
    inter = a @ b.T
    union = a.sum(1)[:, None] + b.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def greedy_match(scores, det_images, gt_images, ious, iou_threshold):
    """COCO greedy matching for one category.

    Detections are visited by descending score (ties by input order); each
    takes the unmatched ground truth of its image with the highest IoU at or
    above the threshold. ``ious`` is the detection x ground-truth IoU matrix
    (pairs from different images are ignored). Returns the visiting order and
    the true-positive flag of each visited detection.
    """
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(scores.size), -scores))
    gt_images = list(gt_images)
    taken = np.zeros(len(gt_images), dtype=bool)
    tp = np.zeros(scores.size, dtype=bool)
    for rank, i in enumerate(order):
        best, best_j = iou_threshold, -1
        for j, img in enumerate(gt_images):
            if taken[j] or img != det_images[i]:
                continue
            if ious[i, j] >= best:
                if best_j < 0 or ious[i, j] > best:
                    best, best_j = ious[i, j], j
        if best_j >= 0:
            taken[best_j] = True
            tp[rank] = True
    return order, tp


def _ap_from_tp(tp, n_gt) -> float:
    if n_gt == 0:
        raise ValueError("AP undefined without ground truth")
    if tp.size == 0:
        return 0.0
    tps = np.cumsum(tp)
    fps = np.cumsum(~tp)
    recall = tps / n_gt
    precision = tps / (tps + fps)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    sampled = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
    return float(sampled.mean())


def average_precision(dets, gts, iou_threshold: float = 0.5, ious=None) -> float:
    """101-point interpolated AP for a single category.

    ``dets`` and ``gts`` carry ``image_id`` plus ``box``/``bbox``; pass a
    precomputed ``ious`` matrix to score masks instead.
    """
    dets, gts = list(dets), list(gts)
    if ious is None:
        ious = _box_ious(dets, gts)
    _, tp = greedy_match([d.score for d in dets], [d.image_id for d in dets],
                         [g.image_id for g in gts], ious, iou_threshold)
    return _ap_from_tp(tp, len(gts))


def recall_at_k(dets, gts, iou_threshold: float = 0.5, k: int = 100, ious=None) -> float:
    """Fraction of ground truths matched by the top-``k`` detections per image."""
    dets, gts = list(dets), list(gts)
    if not gts:
        raise ValueError("recall undefined without ground truth")
    if ious is None:
        ious = _box_ious(dets, gts)
    keep = set(map(id, top_k(dets, k)))
    rows = [i for i, d in enumerate(dets) if id(d) in keep]
    _, tp = greedy_match([dets[i].score for i in rows], [dets[i].image_id for i in rows],
                         [g.image_id for g in gts], ious[rows], iou_threshold)
    return float(tp.sum() / len(gts))


def harmonic_mean(seen: float, unseen: float) -> float:
    if seen < 0 or unseen < 0:
        raise ValueError("harmonic mean needs non-negative inputs")
    total = seen + unseen
    return 0.0 if total == 0 else 2.0 * seen * unseen / total


def _box_ious(dets, gts):
    if not dets or not gts:
        return np.zeros((len(dets), len(gts)))
    return iou_matrix(np.stack([d.box for d in dets]), np.stack([g.bbox for g in gts]))


@dataclass
class EvalReport:
    """Per-category and aggregate metrics, all in [0, 1]."""

    mode: TaskMode
    per_category: dict = field(default_factory=dict)
    map_seen: float | None = None
    map_unseen: float | None = None
    recall_seen: dict | None = None  # IoU threshold -> recall
    recall_unseen: dict | None = None
    hm_map: float | None = None
    hm_recall: dict | None = None

    def to_json(self, scale: float = 100.0) -> dict:
        def sc(v):
            if v is None:
                return None
            if isinstance(v, dict):
                return {str(k): sc(x) for k, x in v.items()}
            return v * scale
        return {
            "mode": self.mode.value, "scale": scale,
            "per_category": {name: {"origin": row["origin"], "num_gt": row["num_gt"],
                                    "ap": sc(row["ap"]), "recall": sc(row["recall"])}
                             for name, row in self.per_category.items()},
            "map_seen": sc(self.map_seen), "map_unseen": sc(self.map_unseen),
            "recall_seen": sc(self.recall_seen), "recall_unseen": sc(self.recall_unseen),
            "hm_map": sc(self.hm_map), "hm_recall": sc(self.hm_recall),
        }

    def csv_rows(self, scale: float = 100.0) -> list:
        def sc(v):
            return "" if v is None else repr(v * scale)
        rows = [(self.mode.value, "mAP", "0.5", sc(self.map_seen), sc(self.map_unseen),
                 sc(self.hm_map))]
        for iou in RECALL_IOUS:
            rows.append((self.mode.value, "recall@100", str(iou),
                         sc(None if self.recall_seen is None else self.recall_seen[iou]),
                         sc(self.recall_unseen[iou]),
                         sc(None if self.hm_recall is None else self.hm_recall[iou])))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("mode", "metric", "iou", "seen", "unseen", "hm"))
        writer.writerows(self.csv_rows())
        return buf.getvalue()

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def _mask_canvases(items, sizes, grid_attr, box_attr, threshold=None):
    out = []
    for it in items:
        grid = getattr(it, grid_attr)
        if grid is None:
            raise DataError(f"segmentation evaluation needs masks on every {type(it).__name__}")
        w, h = sizes[it.image_id]
        canvas = paste_mask(grid, getattr(it, box_attr), w, h)
        out.append(canvas > threshold if threshold is not None else canvas.astype(bool))
    return out


def _category_ious(dets, gts, mode, sizes, mask_threshold):
    if not dets or not gts:
        return np.zeros((len(dets), len(gts)))
    if not mode.segmentation:
        return _box_ious(dets, gts)
    out = np.zeros((len(dets), len(gts)))
    images = {g.image_id for g in gts}
    for img in images:
        di = [i for i, d in enumerate(dets) if d.image_id == img]
        gi = [j for j, g in enumerate(gts) if g.image_id == img]
        if not di:
            continue
        dc = _mask_canvases([dets[i] for i in di], sizes, "mask", "box", mask_threshold)
        gc = _mask_canvases([gts[j] for j in gi], sizes, "mask", "bbox")
        out[np.ix_(di, gi)] = _mask_iou_matrix(dc, gc)
    return out


def evaluate(dets, gt: GroundTruth, split: CategorySplit, mode, max_dets: int = 100,
             ap_iou: float = 0.5, mask_threshold: float = 0.5) -> EvalReport:
    """Score detections against ground truth for one task mode.

    ZSD/ZSI drop seen detections and score unseen categories only; the
    generalized modes score both and add harmonic means. Segmentation modes
    match on rasterized masks (predicted grids binarized at
    ``prob > mask_threshold``). Categories without ground truth are left out
    of the means.
    """
    mode = TaskMode(mode)
    known = set(split.seen) | set(split.unseen)
    dets = list(dets)
    for d in dets:
        if d.category not in known:
            raise DataError(f"detection for unknown category {d.category!r}")
        if d.image_id not in gt.images:
            raise DataError(f"detection for unknown image {d.image_id!r}")
    if not mode.generalized:
        dets = [d for d in dets if d.category in split.unseen]
    dets = top_k(dets, max_dets)
    cats = (list(split.seen) if mode.generalized else []) + list(split.unseen)

    report = EvalReport(mode)
    for name in cats:
        cd = [d for d in dets if d.category == name]
        cg = [g for g in gt.annotations if g.category == name]
        row = {"origin": split.origin(name), "num_gt": len(cg), "ap": None,
               "recall": {iou: None for iou in RECALL_IOUS}}
        if cg:
            ious = _category_ious(cd, cg, mode, gt.images, mask_threshold)
            row["ap"] = average_precision(cd, cg, ap_iou, ious)
            for iou in RECALL_IOUS:
                row["recall"][iou] = recall_at_k(cd, cg, iou, max_dets, ious)
        report.per_category[name] = row

    def mean_of(origin, pick):
        vals = [pick(r) for r in report.per_category.values()
                if r["origin"] == origin and r["num_gt"] > 0]
        return float(np.mean(vals)) if vals else 0.0

    report.map_unseen = mean_of("unseen", lambda r: r["ap"])
    report.recall_unseen = {iou: mean_of("unseen", lambda r, i=iou: r["recall"][i])
                            for iou in RECALL_IOUS}
    if mode.generalized:
        report.map_seen = mean_of("seen", lambda r: r["ap"])
        report.recall_seen = {iou: mean_of("seen", lambda r, i=iou: r["recall"][i])
                              for iou in RECALL_IOUS}
        report.hm_map = harmonic_mean(report.map_seen, report.map_unseen)
        report.hm_recall = {iou: harmonic_mean(report.recall_seen[iou], report.recall_unseen[iou])
                            for iou in RECALL_IOUS}
    return report


def classification_accuracy(proposals, gt: GroundTruth, params, embeddings, categories,
                            iou_threshold: float = 0.5) -> float:
    """Top-1 accuracy among ``categories`` on object proposals of those categories.

    An object proposal is one whose best ground-truth match reaches
    ``iou_threshold`` (the training assignment rule); lower-overlap
    proposals count as background and are not scored.
    """
    from .embed import normalize_rows
    from .heads import cls_logits_unseen
    from .train import match_proposals

    categories = list(categories)
    rows, labels = [], []
    for m in match_proposals(proposals, gt.annotations, iou_threshold):
        if m.category in categories:
            rows.append(m.proposal_index)
            labels.append(categories.index(m.category))
    if not rows:
        raise ValueError("no object proposals of the requested categories")
    table = normalize_rows(embeddings.subset(categories).vectors)
    pred = np.argmax(cls_logits_unseen(proposals.z[rows], params, table), axis=1)
    return float(np.mean(pred == np.asarray(labels)))
