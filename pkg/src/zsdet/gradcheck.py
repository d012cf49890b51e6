"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

import numpy as np


def finite_diff_check(loss_fn, params: dict, epsilon: float = 1e-5, skip=(),
                      floor: float = 1e-6) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn(params) -> (loss, grads)`` where ``grads`` mirrors ``params``
    (a dict of float arrays). ``skip`` lists ``(name, flat_index)`` entries at
    known non-differentiable points. The relative error of one entry is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    skip = set(skip)
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    loss, grads = loss_fn(work)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss at the base point")
    worst = 0.0
    for name, arr in work.items():
        flat = arr.reshape(-1)
        analytic = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            if (name, i) in skip:
                continue
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = loss_fn(work)[0]
            flat[i] = orig - epsilon
            f_minus = loss_fn(work)[0]
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            denom = max(abs(analytic[i]), abs(numeric), floor)
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


SUITE_LOSSES = ("cross-entropy", "max-margin", "l2-error", "smooth-l1", "pixel-bce")


def _random_point(rng, d, p, t, k, n, grid):
    from .embed import BackgroundMode
    from .heads import HeadParams

    params = HeadParams(rng.normal(size=(d, p)), rng.normal(size=(4, d, p)),
                        rng.normal(size=(d, t)), BackgroundMode.LEARNED, rng.normal(size=d))
    seen = rng.normal(size=(k, d))
    return params, seen, {
        "z": rng.normal(size=(n, p)),
        "labels": rng.integers(0, k + 1, size=n),  # background included
        "cats": rng.integers(0, k, size=n),
        "deltas": rng.normal(scale=1.5, size=(n, 4)),  # both smooth-L1 branches
        "zm": rng.normal(size=(n, grid, grid, t)),
        "masks": (rng.random((n, grid, grid)) < 0.5).astype(np.float64),
    }


def _loss_closure(name, params, seen, sample, margin):
    from .embed import normalize_rows
    from .heads import HeadParams
    from .losses import classifier_loss_grad, mask_loss_grad, regression_loss_grad

    seen_norm = normalize_rows(seen)

    def fn(arrays):
        hp = HeadParams(arrays["w_cls"], arrays["w_reg"], arrays["w_seg"], params.background,
                        arrays["b"])
        full = {k: np.zeros_like(v) for k, v in arrays.items()}
        if name in ("cross-entropy", "max-margin", "l2-error"):
            loss, g = classifier_loss_grad(sample["z"], sample["labels"], hp, seen, name, margin)
        elif name == "smooth-l1":
            loss, g = regression_loss_grad(sample["z"], sample["cats"], sample["deltas"], hp,
                                           seen_norm)
        else:
            loss, g = mask_loss_grad(sample["zm"], sample["cats"], sample["masks"], hp, seen_norm)
        full.update(g)
        return loss, full
    return fn


def _near_kink(name, params, seen, sample, margin, eps, gap):
    """True when a finite-difference step could cross a non-smooth point."""
    from .embed import augmented_seen_matrix, normalize_rows
    from .heads import project

    if name == "max-margin":
        rows = normalize_rows(augmented_seen_matrix(seen, params.background, params.b))
        v = project(sample["z"], params)
        s = (v @ rows.T) / np.linalg.norm(v, axis=1, keepdims=True)
        n = len(v)
        hinge = margin - s[np.arange(n), sample["labels"]][:, None] + s
        hinge[np.arange(n), sample["labels"]] = np.inf
        return bool(np.min(np.abs(hinge)) < gap)
    if name == "smooth-l1":
        e = normalize_rows(seen)[sample["cats"]]
        pred = np.einsum("rdp,np,nd->nr", params.w_reg, sample["z"], e)
        return bool(np.min(np.abs(np.abs(pred - sample["deltas"]) - 1.0)) < gap)
    return False


def gradient_suite(points: int = 100, seed: int = 0, epsilon: float = 1e-5,
                   losses=SUITE_LOSSES, margin: float = 0.2, dims=(4, 5, 3, 3, 3, 2)) -> dict:
    """Worst relative gradient error per loss over ``points`` seeded draws.

    Every draw checks all of w_cls, w_reg, w_seg and b (entries a loss does
    not touch must have zero numeric gradient too). Points whose
    finite-difference stencil would straddle a kink are redrawn.
    """
    d, p, t, k, n, grid = dims
    rng = np.random.default_rng(seed)
    out = {}
    for name in losses:
        if name not in SUITE_LOSSES:
            raise ValueError(f"unknown loss {name!r}")
        worst, done = 0.0, 0
        while done < points:
            params, seen, sample = _random_point(rng, d, p, t, k, n, grid)
            if _near_kink(name, params, seen, sample, margin, epsilon, gap=1e-3):
                continue
            fn = _loss_closure(name, params, seen, sample, margin)
            worst = max(worst, finite_diff_check(fn, params.arrays(), epsilon))
            done += 1
        out[name] = float(worst)
    return out
