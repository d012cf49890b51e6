"""Category embedding tables, seen/unseen splits and background embeddings."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingTable:
    """Ordered category names with one d-dimensional vector per name."""

    names: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        names = tuple(self.names)
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(names):
            raise EmbeddingError(
                f"expected {len(names)} x d vectors, got shape {vectors.shape}")
        if vectors.shape[1] < 1:
            raise EmbeddingError("embedding dimension must be positive")
        seen = set()
        for name in names:
            if not isinstance(name, str) or not name or any(ch.isspace() for ch in name):
                raise EmbeddingError(f"invalid category name {name!r}")
            if name in seen:
                raise EmbeddingError(f"duplicate category name {name!r}")
            seen.add(name)
        if not np.all(np.isfinite(vectors)):
            raise EmbeddingError("embedding table contains non-finite entries")
        zero = np.flatnonzero(~np.any(vectors != 0.0, axis=1))
        if zero.size:
            raise EmbeddingError(f"zero embedding row for {names[zero[0]]!r}")
        vectors.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None

    def subset(self, names) -> "EmbeddingTable":
        """Rows for ``names`` in the given order."""
        rows = [self.index(n) for n in names]
        return EmbeddingTable(tuple(names), self.vectors[rows])


@dataclass(frozen=True)
class CategorySplit:
    seen: tuple[str, ...]
    unseen: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "seen", tuple(self.seen))
        object.__setattr__(self, "unseen", tuple(self.unseen))
        overlap = set(self.seen) & set(self.unseen)
        if overlap:
            raise EmbeddingError(f"seen and unseen overlap: {sorted(overlap)}")
        if len(set(self.seen)) != len(self.seen) or len(set(self.unseen)) != len(self.unseen):
            raise EmbeddingError("duplicate names in split")

    def validate(self, table: EmbeddingTable) -> None:
        missing = [n for n in self.seen + self.unseen if n not in table.names]
        if missing:
            raise EmbeddingError(f"split names missing from embedding table: {missing}")

    def origin(self, name: str) -> str:
        if name in self.seen:
            return "seen"
        if name in self.unseen:
            return "unseen"
        raise KeyError(name)

    def tables(self, table: EmbeddingTable) -> tuple[EmbeddingTable, EmbeddingTable]:
        self.validate(table)
        return table.subset(self.seen), table.subset(self.unseen)


class BackgroundMode(str, enum.Enum):
    FIXED = "fixed"
    MEAN = "mean"
    LEARNED = "learned"


def load_embeddings(path) -> EmbeddingTable:
    """Read a ``<count> <dim>`` headed text file of ``name v1 ... vd`` rows."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise EmbeddingError(f"{path}: empty embedding file")
    header = lines[0].split()
    try:
        count, dim = (int(tok) for tok in header)
    except ValueError:
        raise EmbeddingError(f"{path}: malformed header {lines[0]!r}") from None
    if count != len(lines) - 1:
        raise EmbeddingError(f"{path}: header announces {count} rows, found {len(lines) - 1}")
    names, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        name, *tokens = line.split()
        if len(tokens) != dim:
            raise EmbeddingError(
                f"{path}:{lineno}: expected {dim} values for {name!r}, got {len(tokens)}")
        try:
            rows.append([float(tok) for tok in tokens])
        except ValueError:
            raise EmbeddingError(f"{path}:{lineno}: non-numeric value in row {name!r}") from None
        names.append(name)
    return EmbeddingTable(tuple(names), np.array(rows, dtype=np.float64).reshape(count, dim))


def save_embeddings(table: EmbeddingTable, path) -> None:
    out = [f"{len(table)} {table.dim}"]
    for name, row in zip(table.names, table.vectors):
        out.append(" ".join([name] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_split(path) -> CategorySplit:
    fields = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        key = key.strip()
        if not sep or key not in ("seen", "unseen"):
            raise EmbeddingError(f"{path}: unexpected line {line!r}")
        fields[key] = tuple(n.strip() for n in value.split(",") if n.strip())
    if "seen" not in fields or "unseen" not in fields:
        raise EmbeddingError(f"{path}: split file needs both 'seen:' and 'unseen:' lines")
    return CategorySplit(fields["seen"], fields["unseen"])


def save_split(split: CategorySplit, path) -> None:
    Path(path).write_text(
        f"seen: {','.join(split.seen)}\nunseen: {','.join(split.unseen)}\n", encoding="utf-8")


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise EmbeddingError("cannot normalize a zero embedding row")
    return matrix / norms


def row_normalize(table: EmbeddingTable) -> EmbeddingTable:
    return EmbeddingTable(table.names, normalize_rows(table.vectors))


def background_vector(mode: BackgroundMode, seen_vectors, b=None) -> np.ndarray:
    """Background embedding for ``mode``.

    ``seen_vectors`` are the raw (unnormalized) seen rows; ``b`` is the
    trainable vector used when the mode is learned.
    """
    mode = BackgroundMode(mode)
    seen_vectors = np.asarray(seen_vectors, dtype=np.float64)
    if seen_vectors.ndim != 2 or seen_vectors.shape[0] == 0:
        raise EmbeddingError("background needs a nonempty seen table")
    d = seen_vectors.shape[1]
    if mode is BackgroundMode.FIXED:
        vec = np.zeros(d)
        vec[0] = 1.0
        return vec
    if mode is BackgroundMode.MEAN:
        return seen_vectors.mean(axis=0)
    if b is None:
        raise EmbeddingError("learned background requires a vector b")
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (d,) or not np.all(np.isfinite(b)):
        raise EmbeddingError(f"learned background must be a finite vector of length {d}")
    return b.copy()


def augmented_seen_matrix(seen_vectors, mode: BackgroundMode, b=None) -> np.ndarray:
    """Seen rows with the background row appended (unnormalized)."""
    seen_vectors = np.asarray(seen_vectors, dtype=np.float64)
    bg = background_vector(mode, seen_vectors, b)
    return np.vstack([seen_vectors, bg[None, :]])
