"""Losses with hand-derived gradients for the embedding-aware heads."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .embed import BackgroundMode, augmented_seen_matrix, normalize_rows
from .heads import HeadParams


class LossKind(str, enum.Enum):
    CROSS_ENTROPY = "cross-entropy"
    MAX_MARGIN = "max-margin"
    L2_ERROR = "l2-error"


def ce_loss_grad(logits, target):
    """Softmax cross-entropy. Batched logits (N x k) give the batch mean."""
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target)
    k = logits.shape[-1]
    if np.any(target < 0) or np.any(target >= k):
        raise IndexError(f"target out of range for {k} classes")
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, target[..., None], 1.0, axis=-1)
    logp = log_softmax(logits, axis=-1)
    if logits.ndim == 1:
        return float(-logp[target]), softmax(logits) - onehot
    n = logits.shape[0]
    loss = -np.take_along_axis(logp, target[:, None], axis=1).sum() / n
    return float(loss), (softmax(logits, axis=-1) - onehot) / n


def smooth_l1_grad(pred, target):
    """Summed smooth-L1 (threshold 1) and its gradient w.r.t. ``pred``."""
    x = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    ax = np.abs(x)
    small = ax < 1.0
    loss = np.where(small, 0.5 * x * x, ax - 0.5).sum()
    grad = np.where(small, x, np.sign(x))
    return float(loss), grad


def bce_mask_grad(logits, target):
    """Per-pixel binary cross-entropy averaged over all pixels."""
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    count = logits.size
    loss = (np.logaddexp(0.0, logits) - target * logits).sum() / count
    return float(loss), (expit(logits) - target) / count


def _backprop_rows(raw, grad_unit):
    """Gradient through row normalization u = a / |a|."""
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    unit = raw / norms
    return (grad_unit - unit * np.sum(unit * grad_unit, axis=-1, keepdims=True)) / norms


def classifier_loss_grad(z, targets, params: HeadParams, seen_vectors,
                         kind=LossKind.CROSS_ENTROPY, margin: float = 0.2):
    """Classifier loss over seen + background logits.

    ``targets`` index the augmented seen matrix (background = |C^s|).
    Returns ``(loss, {"w_cls": ..., "b": ...})``; batch losses are means.
    """
    kind = LossKind(kind)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n = z.shape[0]
    raw = augmented_seen_matrix(seen_vectors, params.background, params.b)
    rows = normalize_rows(raw)
    v = z @ params.w_cls.T
    if np.any(targets < 0) or np.any(targets >= rows.shape[0]):
        raise IndexError("classifier target out of range")

    if kind is LossKind.CROSS_ENTROPY:
        loss, d_logits = ce_loss_grad(v @ rows.T, targets)
        d_v = d_logits @ rows
        d_rows = d_logits.T @ v
    elif kind is LossKind.MAX_MARGIN:
        # a zero projection (e.g. an all-zero feature) has cosine 0 to every
        # row and contributes a constant loss with zero gradient
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        zero = norms == 0.0
        norms = np.where(zero, 1.0, norms)
        s = (v @ rows.T) / norms
        s_t = s[np.arange(n), targets][:, None]
        hinge = margin - s_t + s
        hinge[np.arange(n), targets] = 0.0
        active = (hinge > 0).astype(np.float64)
        loss = float(np.sum(hinge * active) / n)
        d_s = active.copy()
        d_s[np.arange(n), targets] = -active.sum(axis=1)
        d_s /= n
        d_s *= ~zero
        d_v = (d_s @ rows) / norms - v * (np.sum(d_s * s, axis=1, keepdims=True) / norms**2)
        d_rows = d_s.T @ (v / norms)
    else:
        diff = v - rows[targets]
        loss = float(np.sum(diff * diff) / n)
        d_v = 2.0 * diff / n
        d_rows = np.zeros_like(rows)
        np.add.at(d_rows, targets, -d_v)

    grads = {"w_cls": d_v.T @ z, "b": np.zeros_like(params.b)}
    if params.background is BackgroundMode.LEARNED:
        grads["b"] = _backprop_rows(raw[-1], d_rows[-1])
    return loss, grads


def maxmargin_loss_grad(z, params: HeadParams, seen_vectors, target, margin: float = 0.2):
    return classifier_loss_grad(z, target, params, seen_vectors, LossKind.MAX_MARGIN, margin)


def l2error_loss_grad(z, params: HeadParams, seen_vectors, target):
    return classifier_loss_grad(z, target, params, seen_vectors, LossKind.L2_ERROR)


def regression_loss_grad(z, categories, delta_targets, params: HeadParams, seen_norm):
    """Smooth-L1 on the target category's deltas, averaged over samples."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n = z.shape[0]
    if n == 0:
        return 0.0, {"w_reg": np.zeros_like(params.w_reg)}
    cats = np.asarray(categories, dtype=np.int64)
    e = np.asarray(seen_norm, dtype=np.float64)[cats]  # n x d
    proj = np.einsum("rdp,np->nrd", params.w_reg, z)
    pred = np.einsum("nrd,nd->nr", proj, e)
    loss, d_pred = smooth_l1_grad(pred, delta_targets)
    d_pred /= n
    return loss / n, {"w_reg": np.einsum("nr,nd,np->rdp", d_pred, e, z)}


def mask_loss_grad(zm, categories, mask_targets, params: HeadParams, seen_norm):
    """Pixel BCE on the target category channel, averaged over samples."""
    zm = np.asarray(zm, dtype=np.float64)
    if zm.shape[0] == 0:
        return 0.0, {"w_seg": np.zeros_like(params.w_seg)}
    cats = np.asarray(categories, dtype=np.int64)
    n = zm.shape[0]
    e = np.asarray(seen_norm, dtype=np.float64)[cats]  # n x d
    logits = np.einsum("nxyt,dt,nd->nxy", zm, params.w_seg, e)
    loss, d_logits = bce_mask_grad(logits, mask_targets)
    # bce_mask_grad averages over every pixel of the batch: that is the
    # per-sample pixel mean averaged over samples
    return loss, {"w_seg": np.einsum("nxy,nd,nxyt->dt", d_logits, e, zm)}


@dataclass
class LossBatch:
    """One mini-batch of matched samples, already gathered into arrays."""

    z: np.ndarray  # N x p, classifier samples
    labels: np.ndarray  # N, index into seen + background
    reg_z: np.ndarray  # P x p, positives
    reg_cats: np.ndarray  # P
    reg_targets: np.ndarray  # P x 4
    mask_zm: np.ndarray | None = None  # M x n x n x t
    mask_cats: np.ndarray | None = None
    mask_targets: np.ndarray | None = None


def head_loss_grad(params: HeadParams, batch: LossBatch, seen_vectors,
                   kind=LossKind.CROSS_ENTROPY, margin: float = 0.2):
    """Total loss, per-component losses, and gradients for every parameter."""
    seen_norm = normalize_rows(seen_vectors)
    cls_loss, g_cls = classifier_loss_grad(batch.z, batch.labels, params, seen_vectors,
                                           kind, margin)
    reg_loss, g_reg = regression_loss_grad(batch.reg_z, batch.reg_cats, batch.reg_targets,
                                           params, seen_norm)
    grads = {"w_cls": g_cls["w_cls"], "w_reg": g_reg["w_reg"],
             "w_seg": np.zeros_like(params.w_seg), "b": g_cls["b"]}
    mask_loss = 0.0
    if batch.mask_zm is not None and len(batch.mask_zm):
        mask_loss, g_mask = mask_loss_grad(batch.mask_zm, batch.mask_cats, batch.mask_targets,
                                           params, seen_norm)
        grads["w_seg"] = g_mask["w_seg"]
    parts = {"cls": cls_loss, "reg": reg_loss, "mask": mask_loss}
    return cls_loss + reg_loss + mask_loss, parts, grads
