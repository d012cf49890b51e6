"""Box geometry: IoU, corner-delta encoding and decoding.

Boxes are ``(x1, y1, x2, y2)`` in pixels with ``x1 < x2`` and ``y1 < y2``.
"""

from __future__ import annotations

import numpy as np


def check_box(box) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64)
    if box.shape != (4,) or not np.all(np.isfinite(box)):
        raise ValueError(f"box must be 4 finite numbers, got {box!r}")
    if not (box[0] < box[2] and box[1] < box[3]):
        raise ValueError(f"box corners out of order: {box.tolist()}")
    return box


def box_area(boxes) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    return (boxes[..., 2] - boxes[..., 0]) * (boxes[..., 3] - boxes[..., 1])


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between ``a`` (N x 4) and ``b`` (M x 4)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = box_area(a)[:, None] + box_area(b)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def box_iou(a, b) -> float:
    return float(iou_matrix(a, b)[0, 0])


def encode_box(proposal, target) -> np.ndarray:
    """Corner offsets of ``target`` relative to ``proposal``, in proposal widths/heights."""
    p = np.asarray(proposal, dtype=np.float64)
    g = np.asarray(target, dtype=np.float64)
    pw = p[..., 2] - p[..., 0]
    ph = p[..., 3] - p[..., 1]
    if np.any(pw <= 0) or np.any(ph <= 0):
        raise ValueError("cannot encode against a zero-area proposal")
    scale = np.stack([pw, ph, pw, ph], axis=-1)
    return (g - p) / scale


def decode_box(proposal, deltas, image_size=None) -> np.ndarray:
    """Apply corner deltas to ``proposal``; repair corner order and clip.

    ``image_size`` is ``(width, height)``; no clipping when omitted.
    """
    p = np.asarray(proposal, dtype=np.float64)
    t = np.asarray(deltas, dtype=np.float64)
    pw = p[..., 2] - p[..., 0]
    ph = p[..., 3] - p[..., 1]
    out = p + t * np.stack([pw, ph, pw, ph], axis=-1)
    x1 = np.minimum(out[..., 0], out[..., 2])
    x2 = np.maximum(out[..., 0], out[..., 2])
    y1 = np.minimum(out[..., 1], out[..., 3])
    y2 = np.maximum(out[..., 1], out[..., 3])
    out = np.stack([x1, y1, x2, y2], axis=-1)
    if image_size is not None:
        w, h = image_size
        out = np.clip(out, 0.0, np.array([w, h, w, h], dtype=np.float64))
    return out
