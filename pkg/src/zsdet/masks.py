"""Mask grids registered to boxes and their rasterization onto image canvases.

A grid of shape ``n x n`` registered to a box covers the box uniformly; cell
``[row, col]`` spans the ``row``-th vertical and ``col``-th horizontal slice.
Lookups use cell centers and nearest-cell sampling.
"""

from __future__ import annotations

import math

import numpy as np


def cell_centers(box, n: int):
    """x and y coordinates of the ``n`` cell centers along each axis of ``box``."""
    x1, y1, x2, y2 = (float(v) for v in box)
    frac = (np.arange(n) + 0.5) / n
    return x1 + frac * (x2 - x1), y1 + frac * (y2 - y1)


def sample_grid(grid, grid_box, xs, ys) -> np.ndarray:
    """Values of ``grid`` at the points ``ys x xs`` (outer product); 0 outside the box."""
    grid = np.asarray(grid)
    rows, cols = grid.shape
    x1, y1, x2, y2 = (float(v) for v in grid_box)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    ci = np.floor((xs - x1) / (x2 - x1) * cols).astype(np.int64)
    ri = np.floor((ys - y1) / (y2 - y1) * rows).astype(np.int64)
    cok = (xs >= x1) & (xs < x2) & (ci >= 0) & (ci < cols)
    rok = (ys >= y1) & (ys < y2) & (ri >= 0) & (ri < rows)
    out = grid[np.clip(ri, 0, rows - 1)[:, None], np.clip(ci, 0, cols - 1)[None, :]]
    return np.where(rok[:, None] & cok[None, :], out, np.zeros((), dtype=grid.dtype))


def crop_mask(mask, mask_box, target_box, n: int) -> np.ndarray:
    """Re-register ``mask`` (on ``mask_box``) onto an ``n x n`` grid over ``target_box``."""
    xs, ys = cell_centers(target_box, n)
    return sample_grid(mask, mask_box, xs, ys)


def paste_mask(grid, box, width, height) -> np.ndarray:
    """Rasterize ``grid`` (registered to ``box``) onto a height x width canvas."""
    w, h = int(math.ceil(width)), int(math.ceil(height))
    return sample_grid(grid, box, np.arange(w) + 0.5, np.arange(h) + 0.5)


def ellipse_grid(n: int) -> np.ndarray:
    """Binary n x n grid of the ellipse inscribed in the registering box."""
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    return ((c[:, None] ** 2 + c[None, :] ** 2) <= 1.0).astype(np.uint8)
