"""Ablation sweeps: vary one design element, keep everything else fixed."""

from __future__ import annotations

import dataclasses

import numpy as np

from .embed import BackgroundMode
from .heads import TransferVariant
from .infer import InferConfig, TaskMode, predict
from .losses import LossKind
from .metrics import evaluate
from .synthgen import SynthConfig, SynthDataset, generate
from .train import TrainConfig, train_heads

AXES = ("background", "regressor-transfer", "segmentor-transfer", "classifier-loss", "beta-sweep")
DEFAULT_BETAS = (0.0, 0.05, 0.1, 0.2, 0.3)
CLASSIFIER_AXIS_INIT = 0.01

_TRANSFER_ORDER = (TransferVariant.NO_TRANSFER, TransferVariant.MOST_SIMILAR,
                   TransferVariant.LINEAR_COMBINATION, TransferVariant.LEARNED)


def run_eval(ds: SynthDataset, params, infer: InferConfig):
    dets = predict(ds.proposals_test, params, ds.embeddings, ds.split, infer, ds.gt_test.images)
    report = evaluate(dets, ds.gt_test, ds.split, infer.mode, infer.max_detections,
                      mask_threshold=infer.mask_threshold)
    return dets, report


def _summary(ds, params, infer: InferConfig, segmentation: bool) -> dict:
    plain, generalized = (TaskMode.ZSI, TaskMode.GZSI) if segmentation else (TaskMode.ZSD, TaskMode.GZSD)
    _, zs = run_eval(ds, params, dataclasses.replace(infer, mode=plain))
    _, gz = run_eval(ds, params, dataclasses.replace(infer, mode=generalized))
    return {
        "zs_map": zs.map_unseen, "zs_recall": zs.recall_unseen[0.5],
        "gzs_map_seen": gz.map_seen, "gzs_map_unseen": gz.map_unseen, "gzs_map_hm": gz.hm_map,
        "gzs_recall_seen": gz.recall_seen[0.5], "gzs_recall_unseen": gz.recall_unseen[0.5],
        "gzs_recall_hm": gz.hm_recall[0.5],
    }


def _variants(axis):
    if axis == "background":
        return [(m.value, {"background": m}) for m in BackgroundMode]
    if axis == "classifier-loss":
        return [(k.value, {"loss": k}) for k in (LossKind.MAX_MARGIN, LossKind.L2_ERROR,
                                                  LossKind.CROSS_ENTROPY)]
    if axis == "regressor-transfer":
        return [(v.value, {"variant": v}) for v in _TRANSFER_ORDER]
    if axis == "segmentor-transfer":
        return [(v.value, {"seg_variant": v}) for v in _TRANSFER_ORDER]
    raise ValueError(f"unknown ablation axis {axis!r}")


def run_ablation(axis: str, synth: SynthConfig, train: TrainConfig, infer: InferConfig,
                 seeds=None, betas=DEFAULT_BETAS, datasets=None) -> list[dict]:
    """One row per variant (metrics averaged over ``seeds``).

    Each seed regenerates the synthetic data (unless ``datasets`` maps seeds
    to prepared datasets) and reseeds training, identically for every
    variant. Rows carry the effective configuration under ``"config"``.
    """
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {', '.join(AXES)}")
    seeds = [synth.seed] if seeds is None else list(seeds)
    per_seed = []
    for seed in seeds:
        ds = datasets[seed] if datasets is not None else generate(dataclasses.replace(synth, seed=seed))
        tcfg = dataclasses.replace(train, seed=seed)
        per_seed.append((seed, ds, tcfg))

    if axis == "beta-sweep":
        rows = []
        trained = [(ds, train_heads(ds.proposals_train, ds.gt_train, ds.embeddings, ds.split, t))
                   for _, ds, t in per_seed]
        for beta in betas:
            icfg = dataclasses.replace(infer, beta=float(beta), mode=TaskMode.GZSD)
            vals = []
            for ds, params in trained:
                dets, rep = run_eval(ds, params, icfg)
                vals.append({"seen_count": sum(d.origin == "seen" for d in dets),
                             "map_seen": rep.map_seen, "map_unseen": rep.map_unseen,
                             "recall_seen": rep.recall_seen[0.5],
                             "recall_unseen": rep.recall_unseen[0.5]})
            row = {"beta": float(beta)}
            row.update({k: float(np.mean([v[k] for v in vals])) for k in vals[0]})
            row["config"] = {"synth": synth.to_dict(), "train": train.to_dict(),
                             "infer": icfg.to_dict(), "seeds": seeds}
            rows.append(row)
        return rows

    if axis == "classifier-loss" and train.init_scale == 0:
        # the cosine loss cannot leave a zero start; give every row the same
        # small random init so they still differ only in the loss
        train = dataclasses.replace(train, init_scale=CLASSIFIER_AXIS_INIT)
        per_seed = [(s, ds, dataclasses.replace(t, init_scale=CLASSIFIER_AXIS_INIT))
                    for s, ds, t in per_seed]
    segmentation = axis == "segmentor-transfer"
    rows = []
    shared_params = None
    if axis in ("regressor-transfer", "segmentor-transfer"):
        # the transfer choice is inference-only: train once per seed
        shared_params = [train_heads(ds.proposals_train, ds.gt_train, ds.embeddings, ds.split, t)
                         for _, ds, t in per_seed]
    for name, change in _variants(axis):
        train_change = {k: v for k, v in change.items() if k in ("background", "loss")}
        infer_change = {k: v for k, v in change.items() if k in ("variant", "seg_variant")}
        tcfg_base = dataclasses.replace(train, **train_change)
        icfg = dataclasses.replace(infer, **infer_change)
        vals = []
        for i, (_, ds, tcfg) in enumerate(per_seed):
            if shared_params is not None:
                params = shared_params[i]
            else:
                params = train_heads(ds.proposals_train, ds.gt_train, ds.embeddings, ds.split,
                                     dataclasses.replace(tcfg, **train_change))
            vals.append(_summary(ds, params, icfg, segmentation))
        row = {"variant": name}
        row.update({k: float(np.mean([v[k] for v in vals])) for k in vals[0]})
        row["config"] = {"synth": synth.to_dict(), "train": tcfg_base.to_dict(),
                         "infer": icfg.to_dict(), "seeds": seeds}
        rows.append(row)
    return rows
