"""Command-line harness: ``zsdet {synth,train,eval,ablate,gradcheck}``.

Exit codes: 0 success, 1 usage or config error, 2 data or I/O error,
3 numerical failure (non-finite loss, failed gradient check).

The optional ``--config`` file is strict JSON with up to four sections,
each a mapping of field overrides::

    {"synth": {...}, "train": {...}, "infer": {...},
     "ablation": {"axis": "...", "seeds": [...], "betas": [...]}}

Every run writes ``manifest.json`` next to its outputs with the full
effective configuration, its sha256, and the sha256 of every input and
output file (by base name, so reruns into another directory match).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

from .ablation import AXES, DEFAULT_BETAS, run_ablation
from .data import DataError, read_ground_truth, read_proposals, write_detections
from .embed import EmbeddingError, load_embeddings, load_split
from .gradcheck import SUITE_LOSSES, gradient_suite
from .heads import TransferVariant
from .infer import InferConfig, TaskMode, predict
from .metrics import evaluate
from .synthgen import SynthConfig, generate
from .train import TrainConfig, load_checkpoint, save_checkpoint, train_heads

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-4
SECTIONS = ("synth", "train", "infer", "ablation")
ABLATION_KEYS = ("axis", "seeds", "betas")

log = logging.getLogger("zsdet")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _section(raw: dict, name: str, cls):
    values = raw.get(name, {})
    if not isinstance(values, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    extra = sorted(set(values) - known)
    if extra:
        raise ConfigError(f"unknown {name} keys: {', '.join(extra)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name} config: {exc}") from exc


def load_config(path=None) -> dict:
    """Parse and validate a config file into typed sections."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    extra = sorted(set(raw) - set(SECTIONS))
    if extra:
        raise ConfigError(f"unknown config sections: {', '.join(extra)}")
    abl = raw.get("ablation", {})
    if not isinstance(abl, dict) or set(abl) - set(ABLATION_KEYS):
        raise ConfigError(f"ablation section allows only {', '.join(ABLATION_KEYS)}")
    ablation = {"axis": abl.get("axis"), "seeds": abl.get("seeds"),
                "betas": list(abl.get("betas", DEFAULT_BETAS))}
    if ablation["axis"] is not None and ablation["axis"] not in AXES:
        raise ConfigError(f"unknown ablation axis {ablation['axis']!r}")
    if ablation["seeds"] is not None and (
            not isinstance(ablation["seeds"], list) or not ablation["seeds"]
            or not all(isinstance(s, int) for s in ablation["seeds"])):
        raise ConfigError("ablation seeds must be a non-empty list of integers")
    if not all(isinstance(b, (int, float)) and b >= 0 for b in ablation["betas"]):
        raise ConfigError("ablation betas must be non-negative numbers")
    return {"synth": _section(raw, "synth", SynthConfig),
            "train": _section(raw, "train", TrainConfig),
            "infer": _section(raw, "infer", InferConfig),
            "ablation": ablation}


def _apply_overrides(cfg: dict, args) -> dict:
    try:
        if args.seed is not None:
            cfg["synth"] = dataclasses.replace(cfg["synth"], seed=args.seed)
            cfg["train"] = dataclasses.replace(cfg["train"], seed=args.seed)
            cfg["ablation"]["seeds"] = [args.seed]
        infer = {}
        for key in ("beta", "mode", "variant"):
            if getattr(args, key, None) is not None:
                infer[key] = getattr(args, key)
        if infer:
            cfg["infer"] = dataclasses.replace(cfg["infer"], **infer)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if getattr(args, "axis", None) is not None:
        cfg["ablation"]["axis"] = args.axis
    return cfg


def config_dict(cfg: dict) -> dict:
    return {"synth": cfg["synth"].to_dict(), "train": cfg["train"].to_dict(),
            "infer": cfg["infer"].to_dict(), "ablation": dict(cfg["ablation"])}


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _check_writable(out) -> Path:
    out = Path(out)
    if out.exists() and not out.is_dir():
        raise OSError(f"output path {out} exists and is not a directory")
    probe = out
    while not probe.exists():
        probe = probe.parent
    if not probe.is_dir():
        raise OSError(f"cannot create {out}: {probe} is not a directory")
    if not os.access(probe, os.W_OK | os.X_OK):
        raise OSError(f"output directory {out} is not writable")
    return out


def _write_manifest(out: Path, command: str, cfg: dict, inputs, outputs) -> None:
    blob = json.dumps(config_dict(cfg), sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": command,
        "config": config_dict(cfg),
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "inputs": {Path(p).name: _sha256(p) for p in inputs},
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")


def _dataset_paths(data, part):
    data = Path(data)
    return {"embeddings": data / "embeddings.txt", "split": data / "split.txt",
            "gt": data / f"gt_{part}.json", "proposals": data / f"proposals_{part}.jsonl"}


def _load_dataset(data, part):
    paths = _dataset_paths(data, part)
    missing = [str(p) for p in paths.values() if not p.is_file()]
    if missing:
        raise DataError(f"missing dataset files: {', '.join(missing)}")
    emb = load_embeddings(paths["embeddings"])
    split = load_split(paths["split"])
    split.validate(emb)
    return paths, emb, split, read_ground_truth(paths["gt"]), read_proposals(paths["proposals"])


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_synth(args, cfg) -> int:
    out = _check_writable(args.out)
    ds = generate(cfg["synth"])
    files = ds.write(out)
    _write_manifest(out, "synth", cfg, [], files)
    print(f"wrote {len(files)} dataset files to {out}")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    out = _check_writable(args.out)
    paths, emb, split, gt, props = _load_dataset(args.data, "train")
    history = []
    params = train_heads(props, gt, emb, split, cfg["train"], history=history)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, loss_log = out / "checkpoint.json", out / "loss_log.csv"
    save_checkpoint(params, ckpt)
    loss_log.write_text(_csv_text(
        ("iteration", "total", "cls", "reg", "mask"),
        [(h["iteration"], repr(h["total"]), repr(h["cls"]), repr(h["reg"]), repr(h["mask"]))
         for h in history]), encoding="utf-8")
    _write_manifest(out, "train", cfg, paths.values(), [ckpt, loss_log])
    final = f"{history[-1]['total']:.6f}" if history else "n/a"
    print(f"trained {cfg['train'].iterations} iterations, final loss {final}; wrote {ckpt}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    out = _check_writable(args.out)
    paths, emb, split, gt, props = _load_dataset(args.data, args.split)
    if args.checkpoint is None:
        raise ConfigError("eval needs --checkpoint")
    params = load_checkpoint(args.checkpoint)
    infer = cfg["infer"]
    if params.dims[:2] != (emb.dim, props.p):
        raise DataError(f"checkpoint dims {params.dims} do not fit the dataset "
                        f"(d={emb.dim}, p={props.p})")
    dets = predict(props, params, emb, split, infer, gt.images)
    report = evaluate(dets, gt, split, infer.mode, infer.max_detections,
                      mask_threshold=infer.mask_threshold)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "detections.jsonl", out / "report.json", out / "report.csv"]
    write_detections(dets, files[0])
    files[1].write_text(report.dumps(), encoding="utf-8")
    files[2].write_text(report.to_csv(), encoding="utf-8")
    _write_manifest(out, "eval", cfg, [*paths.values(), args.checkpoint], files)
    print(f"{infer.mode.value}: {len(dets)} detections, unseen mAP "
          f"{100 * report.map_unseen:.1f}" +
          (f", HM mAP {100 * report.hm_map:.1f}" if report.hm_map is not None else ""))
    return EXIT_OK


def _flatten(row: dict) -> dict:
    return {k: v for k, v in row.items() if k != "config"}


def cmd_ablate(args, cfg) -> int:
    axis = cfg["ablation"]["axis"]
    if axis is None:
        raise ConfigError(f"ablate needs --axis ({', '.join(AXES)})")
    out = _check_writable(args.out)
    rows = run_ablation(axis, cfg["synth"], cfg["train"], cfg["infer"],
                        seeds=cfg["ablation"]["seeds"], betas=cfg["ablation"]["betas"])
    out.mkdir(parents=True, exist_ok=True)
    flat = [_flatten(r) for r in rows]
    header = list(flat[0])
    csv_path, json_path = out / f"ablation_{axis}.csv", out / f"ablation_{axis}.json"
    csv_path.write_text(_csv_text(header, [[r[k] if isinstance(r[k], str) else repr(r[k])
                                            for k in header] for r in flat]), encoding="utf-8")
    json_path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(out, "ablate", cfg, [], [csv_path, json_path])
    print(csv_path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_gradcheck(args, cfg) -> int:
    out = _check_writable(args.out)
    seed = cfg["train"].seed
    worst = gradient_suite(args.points, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "gradcheck.json"
    ok = all(v <= GRADCHECK_TOLERANCE for v in worst.values())
    path.write_text(json.dumps({"points": args.points, "seed": seed,
                                "tolerance": GRADCHECK_TOLERANCE, "passed": ok,
                                "max_relative_error": worst}, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    _write_manifest(out, "gradcheck", cfg, [], [path])
    for name in SUITE_LOSSES:
        print(f"{name:14s} {worst[name]:.3e} {'ok' if worst[name] <= GRADCHECK_TOLERANCE else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="zsdet", description="Zero-shot detection heads on proposal features.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override every seed in the config")

    def infer_flags(p):
        p.add_argument("--beta", type=float, help="seen-score floor")
        p.add_argument("--mode", choices=[m.value for m in TaskMode])
        p.add_argument("--variant", choices=[v.value for v in TransferVariant])

    common(sub.add_parser("synth", help="generate a synthetic dataset"))
    p = sub.add_parser("train", help="fit the heads on a dataset's training part")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p = sub.add_parser("eval", help="detect and score on a dataset")
    common(p)
    infer_flags(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--checkpoint", required=True, help="checkpoint.json from train")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p = sub.add_parser("ablate", help="vary one design element")
    common(p)
    infer_flags(p)
    p.add_argument("--axis", choices=AXES)
    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    common(p)
    p.add_argument("--points", type=int, default=100)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"zsdet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"zsdet: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EmbeddingError, OSError) as exc:
        print(f"zsdet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"zsdet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
