"""Proposal matching and second-stage fine-tuning of the heads.

Proposal features are frozen inputs; only W^cls, W^reg_1..4, W^seg and the
learned background vector are updated.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .boxes import encode_box, iou_matrix
from .data import DataError, GroundTruth, ProposalSet
from .embed import BackgroundMode, CategorySplit, EmbeddingTable
from .heads import HeadParams, init_params
from .losses import LossBatch, LossKind, head_loss_grad
from .masks import crop_mask

log = logging.getLogger(__name__)


@dataclass
class MatchedSample:
    proposal_index: int
    gt_index: int | None = None
    category: str | None = None
    delta: np.ndarray | None = None
    mask: np.ndarray | None = None
    iou: float = 0.0

    @property
    def is_background(self) -> bool:
        return self.category is None


def match_proposals(proposals: ProposalSet, annotations, iou_threshold: float = 0.5,
                    mask_size: int | None = None) -> list[MatchedSample]:
    """Assign each proposal to its max-IoU ground truth in the same image.

    IoU at or above ``iou_threshold`` makes a positive (ties go to the lowest
    annotation index); anything else is background. With ``mask_size`` set,
    positives whose ground truth has a mask get an n x n target grid over the
    proposal box.
    """
    annotations = list(annotations)
    by_image: dict = {}
    for j, ann in enumerate(annotations):
        by_image.setdefault(ann.image_id, []).append(j)
    out = []
    for i in range(len(proposals)):
        gt_rows = by_image.get(proposals.image_ids[i], [])
        if not gt_rows:
            out.append(MatchedSample(i))
            continue
        ious = iou_matrix(proposals.boxes[i], np.stack([annotations[j].bbox for j in gt_rows]))[0]
        best = int(np.argmax(ious))
        if ious[best] < iou_threshold:
            out.append(MatchedSample(i, iou=float(ious[best])))
            continue
        ann = annotations[gt_rows[best]]
        mask = None
        if mask_size is not None and ann.mask is not None:
            mask = crop_mask(ann.mask, ann.bbox, proposals.boxes[i], mask_size)
        out.append(MatchedSample(i, gt_rows[best], ann.category,
                                 encode_box(proposals.boxes[i], ann.bbox), mask, float(ious[best])))
    return out


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    momentum: float = 0.9
    iterations: int = 3000
    batch_size: int = 64
    seed: int = 0
    loss: LossKind = LossKind.CROSS_ENTROPY
    margin: float = 0.2
    background: BackgroundMode = BackgroundMode.LEARNED
    iou_threshold: float = 0.5
    # matrices start uniform in +-init_scale/sqrt(fan_in); 0 means zero init
    init_scale: float = 0.0

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        self.background = BackgroundMode(self.background)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0 < self.iou_threshold < 1:
            raise ValueError("iou_threshold must lie in (0, 1)")
        if self.init_scale < 0:
            raise ValueError("init_scale must be non-negative")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.loss is LossKind.MAX_MARGIN and self.init_scale == 0:
            # W = 0 is a stationary point of the cosine loss
            raise ValueError("max-margin loss needs init_scale > 0")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["loss"] = self.loss.value
        out["background"] = self.background.value
        return out


@dataclass
class TrainingSet:
    """Matched samples gathered into arrays for mini-batching."""

    z: np.ndarray
    zm: np.ndarray | None
    labels: np.ndarray  # seen index, or |C^s| for background
    positives: np.ndarray
    backgrounds: np.ndarray
    deltas: np.ndarray  # N x 4, zero on background rows
    masks: np.ndarray | None  # N x n x n
    has_mask: np.ndarray  # N bool


def build_training_set(proposals: ProposalSet, gt: GroundTruth, seen: list,
                       iou_threshold: float = 0.5) -> TrainingSet:
    unknown = sorted({a.category for a in gt.annotations} - set(seen))
    if unknown:
        raise DataError(f"training annotations use non-seen categories: {unknown}")
    mask_size = None if proposals.zm is None else proposals.zm.shape[1]
    matches = match_proposals(proposals, gt.annotations, iou_threshold, mask_size)
    n = len(proposals)
    labels = np.full(n, len(seen), dtype=np.int64)
    deltas = np.zeros((n, 4))
    has_mask = np.zeros(n, dtype=bool)
    masks = None if mask_size is None else np.zeros((n, mask_size, mask_size))
    for m in matches:
        if m.is_background:
            continue
        labels[m.proposal_index] = seen.index(m.category)
        deltas[m.proposal_index] = m.delta
        if m.mask is not None:
            masks[m.proposal_index] = m.mask
            has_mask[m.proposal_index] = True
    pos = np.flatnonzero(labels < len(seen))
    bg = np.flatnonzero(labels == len(seen))
    return TrainingSet(proposals.z, proposals.zm, labels, pos, bg, deltas, masks, has_mask)


def _batch(ts: TrainingSet, pos_rows, bg_rows) -> LossBatch:
    rows = np.concatenate([pos_rows, bg_rows])
    mrows = pos_rows[ts.has_mask[pos_rows]] if ts.zm is not None else pos_rows[:0]
    return LossBatch(
        z=ts.z[rows], labels=ts.labels[rows],
        reg_z=ts.z[pos_rows], reg_cats=ts.labels[pos_rows], reg_targets=ts.deltas[pos_rows],
        mask_zm=None if ts.zm is None else ts.zm[mrows],
        mask_cats=ts.labels[mrows],
        mask_targets=None if ts.masks is None else ts.masks[mrows],
    )


def train_heads(proposals: ProposalSet, gt: GroundTruth, embeddings: EmbeddingTable,
                split: CategorySplit, config: TrainConfig, init: HeadParams | None = None,
                history: list | None = None) -> HeadParams:
    """SGD with momentum on matched proposals; returns the trained heads.

    Each iteration draws ``batch_size`` positives from a seeded shuffled
    epoch order plus as many backgrounds. The classifier sees only seen and
    background logits; the regressor and segmentor train on positives only.
    When ``history`` is a list, one dict of loss components per iteration is
    appended to it (losses measured before the update).
    """
    split.validate(embeddings)
    seen_vectors = embeddings.subset(split.seen).vectors
    rng = np.random.default_rng(config.seed)
    d = embeddings.dim
    t = proposals.zm.shape[-1] if proposals.zm is not None else 1
    if init is None:
        params = init_params(d, proposals.p, t, config.background, seen_vectors, rng,
                             config.init_scale)
    else:
        params = init.copy()
        params.background = config.background
        if params.dims != (d, proposals.p, t):
            raise DataError(f"initial heads have dims {params.dims}, data needs {(d, proposals.p, t)}")
    if config.iterations == 0:
        return params
    if len(proposals) == 0:
        raise DataError("cannot train on an empty dataset")

    ts = build_training_set(proposals, gt, list(split.seen), config.iou_threshold)
    arrays = params.arrays()
    velocity = {k: np.zeros_like(v) for k, v in arrays.items()}
    order = np.empty(0, dtype=np.int64)
    cursor = 0
    for it in range(config.iterations):
        if ts.positives.size:
            if cursor + config.batch_size > order.size:
                order = rng.permutation(ts.positives)
                cursor = 0
            pos_rows = order[cursor:cursor + config.batch_size]
            cursor += pos_rows.size
        else:
            pos_rows = ts.positives
        n_bg = max(pos_rows.size, 1) if ts.backgrounds.size else 0
        bg_rows = ts.backgrounds[rng.integers(0, ts.backgrounds.size, size=n_bg)] \
            if n_bg else ts.backgrounds
        total, parts, grads = head_loss_grad(params, _batch(ts, pos_rows, bg_rows), seen_vectors,
                                             config.loss, config.margin)
        if not np.isfinite(total):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        if history is not None:
            history.append({"iteration": it, "total": total, **parts})
        for name, arr in arrays.items():
            velocity[name] *= config.momentum
            velocity[name] += grads[name]
            arr -= config.learning_rate * velocity[name]
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite {name} after iteration {it}")
        if it % 1000 == 0:
            log.debug("iteration %d loss %.6f", it, total)
    return params


CHECKPOINT_FORMAT = "zsdet-heads"
CHECKPOINT_VERSION = 1


def _payload_digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(params: HeadParams, path) -> None:
    """JSON checkpoint: format, version, d, p, t, background, w_cls (d x p),
    w_reg (4 x d x p), w_seg (d x t), b (d), sha256 of the other fields."""
    d, p, t = params.dims
    payload = {
        "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
        "d": d, "p": p, "t": t, "background": params.background.value,
        "w_cls": params.w_cls.tolist(), "w_reg": params.w_reg.tolist(),
        "w_seg": params.w_seg.tolist(), "b": params.b.tolist(),
    }
    payload["sha256"] = _payload_digest(payload)
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def load_checkpoint(path) -> HeadParams:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        digest = payload.pop("sha256")
    except (json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{path}: unreadable checkpoint ({exc})") from exc
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint format")
    if _payload_digest(payload) != digest:
        raise DataError(f"{path}: checkpoint checksum mismatch")
    params = HeadParams(payload["w_cls"], payload["w_reg"], payload["w_seg"],
                        payload["background"], payload["b"])
    if params.dims != (payload["d"], payload["p"], payload["t"]):
        raise DataError(f"{path}: checkpoint dims disagree with its matrices")
    return params
