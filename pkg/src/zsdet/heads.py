"""Embedding-aware classifier, regressor and segmentor heads.

Every head projects a proposal feature into the embedding space with a
learned matrix and scores each category by the inner product with its
unit-normalized embedding. Features may carry leading batch axes.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from .embed import BackgroundMode, augmented_seen_matrix, normalize_rows


class TransferVariant(str, enum.Enum):
    LEARNED = "learned"
    MOST_SIMILAR = "most-similar"
    LINEAR_COMBINATION = "linear-combination"
    NO_TRANSFER = "no-transfer"


@dataclass
class HeadParams:
    """Trainable state: projection matrices and the background vector."""

    w_cls: np.ndarray  # d x p
    w_reg: np.ndarray  # 4 x d x p, one matrix per box corner coordinate
    w_seg: np.ndarray  # d x t
    background: BackgroundMode = BackgroundMode.LEARNED
    b: np.ndarray = field(default=None)

    def __post_init__(self):
        self.w_cls = np.asarray(self.w_cls, dtype=np.float64)
        self.w_reg = np.asarray(self.w_reg, dtype=np.float64)
        self.w_seg = np.asarray(self.w_seg, dtype=np.float64)
        self.background = BackgroundMode(self.background)
        d, p = self.w_cls.shape
        if self.w_reg.shape != (4, d, p):
            raise ValueError(f"w_reg must be 4 x {d} x {p}, got {self.w_reg.shape}")
        if self.w_seg.ndim != 2 or self.w_seg.shape[0] != d:
            raise ValueError(f"w_seg must be {d} x t, got {self.w_seg.shape}")
        self.b = np.zeros(d) if self.b is None else np.asarray(self.b, dtype=np.float64)
        if self.b.shape != (d,):
            raise ValueError(f"b must have length {d}")
        for name in ("w_cls", "w_reg", "w_seg", "b"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(d, p, t)"""
        return self.w_cls.shape[0], self.w_cls.shape[1], self.w_seg.shape[1]

    def copy(self) -> "HeadParams":
        return HeadParams(self.w_cls.copy(), self.w_reg.copy(), self.w_seg.copy(),
                          self.background, self.b.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w_cls": self.w_cls, "w_reg": self.w_reg, "w_seg": self.w_seg, "b": self.b}

    def digest(self) -> str:
        h = hashlib.sha256(self.background.value.encode())
        for arr in self.arrays().values():
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def seen_matrix(self, seen_vectors) -> np.ndarray:
        """Unit-row seen matrix with the background row last."""
        return normalize_rows(augmented_seen_matrix(seen_vectors, self.background, self.b))


def init_params(d: int, p: int, t: int, background=BackgroundMode.LEARNED,
                seen_vectors=None, rng=None, scale: float = 1.0) -> HeadParams:
    """Matrices uniform in +-scale/sqrt(fan_in); b starts at the seen mean.

    ``scale=0`` gives zero matrices (the random draws are still consumed so
    the generator state does not depend on the scale).
    """
    rng = np.random.default_rng(rng)
    lim_p, lim_t = scale / np.sqrt(p), scale / np.sqrt(t)
    w_cls = rng.uniform(-lim_p, lim_p, size=(d, p))
    w_reg = rng.uniform(-lim_p, lim_p, size=(4, d, p))
    w_seg = rng.uniform(-lim_t, lim_t, size=(d, t))
    if seen_vectors is not None:
        b = np.asarray(seen_vectors, dtype=np.float64).mean(axis=0)
    else:
        b = np.zeros(d)
        b[0] = 1.0
    return HeadParams(w_cls, w_reg, w_seg, background, b)


def _check(z, width, what):
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1:] != (width,):
        raise ValueError(f"{what} has trailing dimension {z.shape[-1:]}, expected {width}")
    return z


def _check_rows(rows, d):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != d:
        raise ValueError(f"category rows must be k x {d}, got {rows.shape}")
    return rows


def project(z, params: HeadParams) -> np.ndarray:
    """W^cls z for each feature in ``z``."""
    z = _check(z, params.w_cls.shape[1], "z")
    return z @ params.w_cls.T


def cls_logits_seen(z, params: HeadParams, seen_norm) -> np.ndarray:
    """Seen + background logits; ``seen_norm`` has the background row last."""
    rows = _check_rows(seen_norm, params.w_cls.shape[0])
    return project(z, params) @ rows.T


def cls_logits_unseen(z, params: HeadParams, unseen_norm) -> np.ndarray:
    rows = _check_rows(unseen_norm, params.w_cls.shape[0])
    return project(z, params) @ rows.T


def class_probabilities(z, params: HeadParams, seen_norm, unseen_norm) -> np.ndarray:
    """Softmax over [seen..., background, unseen...]."""
    logits = np.concatenate([cls_logits_seen(z, params, seen_norm),
                             cls_logits_unseen(z, params, unseen_norm)], axis=-1)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite classifier logits")
    return softmax(logits, axis=-1)


def reg_deltas(z, params: HeadParams, cat_norm_rows) -> np.ndarray:
    """Corner deltas per category, shape (..., k, 4)."""
    d, p = params.w_cls.shape
    z = _check(z, p, "z")
    rows = _check_rows(cat_norm_rows, d)
    proj = np.einsum("rdp,...p->...rd", params.w_reg, z)
    return np.einsum("...rd,kd->...kr", proj, rows)


def seg_logits(zm, params: HeadParams, cat_norm_rows) -> np.ndarray:
    """Per-pixel category logits, shape (..., n, n, k)."""
    if zm is None:
        raise ValueError("proposal has no spatial mask features")
    d, t = params.w_seg.shape
    zm = _check(zm, t, "zm")
    rows = _check_rows(cat_norm_rows, d)
    return (zm @ params.w_seg.T) @ rows.T


def transfer_weights(seen_norm_no_bg, unseen_norm, variant) -> np.ndarray:
    """|C^u| x |C^s| mixing weights mapping seen head outputs to unseen ones.

    Most-similar picks the highest-cosine seen category (lowest index on
    ties). Linear-combination uses cosines clipped at zero and renormalized;
    rows with no positive cosine fall back to most-similar.
    """
    variant = TransferVariant(variant)
    seen = np.asarray(seen_norm_no_bg, dtype=np.float64)
    unseen = np.asarray(unseen_norm, dtype=np.float64)
    cos = unseen @ seen.T
    best = np.zeros_like(cos)
    best[np.arange(cos.shape[0]), np.argmax(cos, axis=1)] = 1.0
    if variant is TransferVariant.MOST_SIMILAR:
        return best
    if variant is TransferVariant.LINEAR_COMBINATION:
        clipped = np.maximum(cos, 0.0)
        total = clipped.sum(axis=1, keepdims=True)
        ok = total[:, 0] > 0
        weights = best.copy()
        weights[ok] = clipped[ok] / total[ok]
        return weights
    raise ValueError(f"{variant.value} transfer has no seen-category weights")


def unseen_reg_by_variant(z, params: HeadParams, seen_norm_no_bg, unseen_norm,
                          variant) -> np.ndarray:
    """Unseen corner deltas, shape (..., |C^u|, 4)."""
    variant = TransferVariant(variant)
    if variant is TransferVariant.LEARNED:
        return reg_deltas(z, params, unseen_norm)
    z = _check(z, params.w_cls.shape[1], "z")
    k = np.asarray(unseen_norm).shape[0]
    if variant is TransferVariant.NO_TRANSFER:
        return np.zeros(z.shape[:-1] + (k, 4))
    weights = transfer_weights(seen_norm_no_bg, unseen_norm, variant)
    seen = reg_deltas(z, params, seen_norm_no_bg)
    return np.einsum("us,...sr->...ur", weights, seen)


def unseen_seg_by_variant(zm, params: HeadParams, seen_norm_no_bg, unseen_norm,
                          variant) -> np.ndarray:
    """Unseen mask logits, shape (..., n, n, |C^u|).

    No-transfer yields -inf logits, i.e. an empty mask after the sigmoid.
    """
    variant = TransferVariant(variant)
    if variant is TransferVariant.LEARNED:
        return seg_logits(zm, params, unseen_norm)
    if zm is None:
        raise ValueError("proposal has no spatial mask features")
    zm = _check(zm, params.w_seg.shape[1], "zm")
    k = np.asarray(unseen_norm).shape[0]
    if variant is TransferVariant.NO_TRANSFER:
        return np.full(zm.shape[:-1] + (k,), -np.inf)
    weights = transfer_weights(seen_norm_no_bg, unseen_norm, variant)
    return seg_logits(zm, params, seen_norm_no_bg) @ weights.T
