"""Records and file formats shared by training, inference and evaluation.

Formats (all UTF-8):

* proposal features, JSON lines: ``{"image_id", "box": [x1, y1, x2, y2],
  "z": [p floats], "zm": {"n", "t", "values": [n*n*t floats, row-major]}}``
  (``zm`` optional)
* ground truth, JSON: ``{"images": [{"id", "width", "height"}],
  "categories": [names], "annotations": [{"image_id", "category",
  "bbox": [x1, y1, x2, y2], "mask": [[0/1, ...], ...]}]}`` (``mask``
  optional, a square grid registered to ``bbox``)
* detections, JSON lines: ``{"image_id", "category", "origin", "score",
  "box", "mask": {"n", "probs": [n*n floats]}}`` (``mask`` optional)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import check_box


class DataError(ValueError):
    pass


@dataclass
class ProposalSet:
    """Proposals stored column-wise; row i is one RPN proposal."""

    image_ids: list
    boxes: np.ndarray  # N x 4
    z: np.ndarray  # N x p
    zm: np.ndarray | None = None  # N x n x n x t

    def __post_init__(self):
        self.image_ids = list(self.image_ids)
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        n = len(self.image_ids)
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.ndim != 2:
            self.z = self.z.reshape(n, -1)
        if self.boxes.shape[0] != n or self.z.shape[0] != n:
            raise DataError("proposal columns have inconsistent lengths")
        if self.zm is not None:
            self.zm = np.asarray(self.zm, dtype=np.float64)
            if self.zm.ndim != 4 or self.zm.shape[0] != n or self.zm.shape[1] != self.zm.shape[2]:
                raise DataError(f"zm must be N x n x n x t, got {self.zm.shape}")
        if not np.all(np.isfinite(self.z)) or not np.all(np.isfinite(self.boxes)):
            raise DataError("non-finite proposal boxes or features")
        bad = ~((self.boxes[:, 0] < self.boxes[:, 2]) & (self.boxes[:, 1] < self.boxes[:, 3]))
        if np.any(bad) or np.any(self.boxes < 0):
            raise DataError(f"malformed proposal box at row {int(np.argmax(bad))}")

    def __len__(self):
        return len(self.image_ids)

    @property
    def p(self) -> int:
        return self.z.shape[1]

    def take(self, rows) -> "ProposalSet":
        rows = np.asarray(rows, dtype=np.int64)
        return ProposalSet([self.image_ids[i] for i in rows], self.boxes[rows], self.z[rows],
                           None if self.zm is None else self.zm[rows])

    def by_image(self) -> dict:
        """image_id -> row indices, in first-appearance order."""
        groups: dict = {}
        for i, img in enumerate(self.image_ids):
            groups.setdefault(img, []).append(i)
        return {k: np.asarray(v, dtype=np.int64) for k, v in groups.items()}


@dataclass
class GroundTruthInstance:
    image_id: object
    category: str
    bbox: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.bbox = check_box(self.bbox)
        if self.mask is not None:
            self.mask = np.asarray(self.mask)
            if self.mask.ndim != 2 or not np.isin(self.mask, (0, 1)).all():
                raise DataError("ground-truth mask must be a 2-D 0/1 grid")
            self.mask = self.mask.astype(np.uint8)


@dataclass
class GroundTruth:
    images: dict  # image_id -> (width, height)
    categories: list
    annotations: list = field(default_factory=list)

    def for_image(self, image_id) -> list:
        return [a for a in self.annotations if a.image_id == image_id]


@dataclass
class Detection:
    image_id: object
    category: str
    origin: str  # "seen" or "unseen"
    score: float
    box: np.ndarray
    mask: np.ndarray | None = None  # n x n probabilities registered to box

    def to_json(self) -> dict:
        out = {"image_id": self.image_id, "category": self.category, "origin": self.origin,
               "score": float(self.score), "box": [float(v) for v in self.box]}
        if self.mask is not None:
            out["mask"] = {"n": int(self.mask.shape[0]),
                           "probs": [float(v) for v in np.asarray(self.mask).reshape(-1)]}
        return out


def _dump_line(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def write_proposals(props: ProposalSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(props)):
            rec = {"image_id": props.image_ids[i],
                   "box": [float(v) for v in props.boxes[i]],
                   "z": [float(v) for v in props.z[i]]}
            if props.zm is not None:
                n, _, t = props.zm.shape[1:]
                rec["zm"] = {"n": n, "t": t,
                             "values": [float(v) for v in props.zm[i].reshape(-1)]}
            fh.write(_dump_line(rec) + "\n")


def read_proposals(path) -> ProposalSet:
    ids, boxes, zs, zms = [], [], [], []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                ids.append(rec["image_id"])
                boxes.append(rec["box"])
                zs.append(rec["z"])
                if "zm" in rec:
                    n, t = rec["zm"]["n"], rec["zm"]["t"]
                    zms.append(np.asarray(rec["zm"]["values"], dtype=np.float64).reshape(n, n, t))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed proposal record ({exc})") from exc
    if zms and len(zms) != len(ids):
        raise DataError(f"{path}: zm present on some proposals only")
    if len({len(z) for z in zs}) > 1:
        raise DataError(f"{path}: inconsistent feature dimension")
    p = len(zs[0]) if zs else 0
    return ProposalSet(ids, np.asarray(boxes, dtype=np.float64).reshape(-1, 4),
                       np.asarray(zs, dtype=np.float64).reshape(len(ids), p),
                       np.stack(zms) if zms else None)


def write_ground_truth(gt: GroundTruth, path) -> None:
    doc = {
        "images": [{"id": k, "width": w, "height": h} for k, (w, h) in gt.images.items()],
        "categories": list(gt.categories),
        "annotations": [],
    }
    for a in gt.annotations:
        rec = {"image_id": a.image_id, "category": a.category,
               "bbox": [float(v) for v in a.bbox]}
        if a.mask is not None:
            rec["mask"] = a.mask.astype(int).tolist()
        doc["annotations"].append(rec)
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def read_ground_truth(path) -> GroundTruth:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        images = {im["id"]: (float(im["width"]), float(im["height"])) for im in doc["images"]}
        cats = list(doc["categories"])
        anns = []
        for rec in doc["annotations"]:
            if rec["image_id"] not in images:
                raise DataError(f"annotation references unknown image {rec['image_id']!r}")
            if rec["category"] not in cats:
                raise DataError(f"annotation uses unlisted category {rec['category']!r}")
            anns.append(GroundTruthInstance(rec["image_id"], rec["category"], rec["bbox"],
                                            rec.get("mask")))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: malformed ground-truth file ({exc})") from exc
    return GroundTruth(images, cats, anns)


def write_detections(dets, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for det in dets:
            fh.write(_dump_line(det.to_json()) + "\n")


def read_detections(path) -> list:
    dets = []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                mask = None
                if "mask" in rec:
                    n = rec["mask"]["n"]
                    mask = np.asarray(rec["mask"]["probs"], dtype=np.float64).reshape(n, n)
                if rec["origin"] not in ("seen", "unseen"):
                    raise DataError(f"bad origin {rec['origin']!r}")
                dets.append(Detection(rec["image_id"], rec["category"], rec["origin"],
                                      float(rec["score"]), check_box(rec["box"]), mask))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: malformed detection record ({exc})") from exc
    return dets
