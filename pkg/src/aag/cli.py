"""Command-line entry point: synth, train, eval, ablate, inspect.

Every command that produces artifacts also writes a manifest holding
the fully resolved configuration, the seed, the version string, and
timestamps, next to those artifacts. Exit codes: 0 success, 1 partial
grid failure, 2 usage/config/data/format error, 3 numerical failure.
"""

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    AAGC_MAGIC,
    AAGF_MAGIC,
    SyntheticSpec,
    check_table_matches,
    generate_synthetic,
    load_class_table,
    read_aagf,
    save_class_table,
    write_aagf,
)
from .errors import (
    AAGError,
    ConfigError,
    DataError,
    FormatError,
    NumericsError,
    TrainingError,
    UsageError,
)
from .fileio import atomic_write_bytes, atomic_write_text
from .metrics import emit_report, evaluate_logits
from .model import (
    AAGM_MAGIC,
    AAGParameters,
    ModelConfig,
    check_meta_compatible,
    load_model,
    save_model,
)
from .training import TrainConfig, fit, predict_logits

VERSION_STRING = f"aag-{__version__}"

# Grid name -> (ModelConfig field, swept values). The visual grid covers
# the six true fusion strategies; rgb-only is the baseline, not a fusion.
GRIDS = {
    "visual": ("visual_fusion", ["concat", "sum", "soft_attention",
                                 "self_attention", "cross_q_rgb", "cross_q_depth"]),
    "multimodal": ("multimodal_fusion", ["concat", "sum", "self_attn_vis_text",
                                         "self_attn_three"]),
    "history_source": ("history_strategy", ["none", "concat", "transformer",
                                            "description"]),
    "history_len": ("history_len", [1, 3, 5, 7, 10]),
}


@dataclass
class RunManifest:
    """Reproducibility record written next to every produced artifact."""

    command: str
    config: dict
    seed: int
    version: str
    started_at: str
    finished_at: str
    outputs: list


def _utcnow():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_manifest(path, command, config, seed, started_at, outputs):
    manifest = RunManifest(
        command=command,
        config=config,
        seed=seed,
        version=VERSION_STRING,
        started_at=started_at,
        finished_at=_utcnow(),
        outputs=[str(p) for p in outputs],
    )
    atomic_write_text(path, json.dumps(asdict(manifest), indent=2) + "\n")


def _load_json(path, what):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{what} {path} is not valid JSON: {e}") from None


def _resolve_model_dict(obj, meta):
    """Fill dataset-determined dims into the user's model config dict."""
    model_dict = dict(obj)
    for key, value in (("d_ft", meta.d_ft), ("d_txt", meta.d_txt),
                       ("n_classes", meta.n_classes)):
        model_dict.setdefault(key, value)
    if meta.frames > 1:
        model_dict.setdefault("input", "video")
        model_dict.setdefault("window", meta.frames)
    return model_dict


def _load_run_config(config_path, meta):
    """Parse {"model": ..., "train": ...} and resolve against the dataset."""
    obj = _load_json(config_path, "config") if config_path else {}
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(obj) - {"model", "train"}
    if unknown:
        raise ConfigError(f"config: unknown top-level keys {sorted(unknown)}")
    model_obj = obj.get("model", {})
    train_obj = obj.get("train", {})
    if not isinstance(model_obj, dict):
        raise ConfigError("config: \"model\" must be a JSON object")
    model_dict = _resolve_model_dict(model_obj, meta)
    return model_dict, ModelConfig.from_dict(model_dict), TrainConfig.from_dict(train_obj)


def _check_split_pair(train_meta, val_meta):
    for name in ("d_ft", "d_txt", "n_classes", "frames"):
        a, b = getattr(train_meta, name), getattr(val_meta, name)
        if a != b:
            raise DataError(f"train/val mismatch: {name} is {a} vs {b}")


def _load_training_inputs(args):
    train_records, train_meta = read_aagf(args.train)
    val_records, val_meta = read_aagf(args.val)
    _check_split_pair(train_meta, val_meta)
    table = load_class_table(args.classes)
    check_table_matches(table, train_meta)
    check_table_matches(table, val_meta)
    return train_records, train_meta, val_records, val_meta, table


# --- commands ---------------------------------------------------------------


def cmd_synth(args):
    started = _utcnow()
    spec = SyntheticSpec.from_dict(_load_json(args.spec, "synthetic spec"))
    train, val, table, meta = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "train.aagf", out / "val.aagf", out / "classes.aagc"]
    write_aagf(outputs[0], train, meta)
    write_aagf(outputs[1], val, meta)
    save_class_table(outputs[2], table)
    _write_manifest(out / "manifest.json", "synth", {"spec": asdict(spec)},
                    spec.seed, started, outputs)
    print(f"wrote {len(train)} train / {len(val)} val samples, "
          f"{table.n_classes} classes -> {out}")
    return 0


def cmd_train(args):
    started = _utcnow()
    train_records, train_meta, val_records, _, table = _load_training_inputs(args)
    model_dict, model_cfg, train_cfg = _load_run_config(args.config, train_meta)
    check_meta_compatible(model_cfg, train_meta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out / "train_log.jsonl"
    result = fit(AAGParameters(model_cfg), table, train_records, val_records,
                 train_cfg, log_path=str(log_path))
    model_path = out / "model.aagm"
    metrics_path = out / "metrics.json"
    save_model(model_path, result.params)
    emit_report(result.val_report, "json", metrics_path)
    config = {
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "data": {"train": str(args.train), "val": str(args.val),
                 "classes": str(args.classes)},
    }
    _write_manifest(out / "manifest.json", "train", config, train_cfg.seed,
                    started, [model_path, metrics_path, log_path])
    print(f"best epoch {result.best_epoch}/{len(result.history)}: "
          f"val top-1 {result.val_report.top1:.4f}, "
          f"top-5 {result.val_report.top5:.4f} -> {model_path}")
    return 0


def _report_format(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".json":
        return "json"
    if suffix == ".csv":
        return "csv"
    raise UsageError(f"--out must end in .json or .csv, got {path!r}")


def cmd_eval(args):
    started = _utcnow()
    params = load_model(args.model)
    records, meta = read_aagf(args.data)
    table = load_class_table(args.classes)
    check_table_matches(table, meta)
    check_meta_compatible(params.config, meta)
    fmt = _report_format(args.out)
    logits = predict_logits(params, table, records)
    labels = np.array([r.label for r in records], dtype=np.int64)
    report = evaluate_logits(logits, labels, k_top=args.k)
    out = Path(args.out)
    emit_report(report, fmt, out)
    outputs = [out]
    if args.dump_logits:
        buf = io.BytesIO()
        np.savez(buf, logits=logits, labels=labels)
        atomic_write_bytes(args.dump_logits, buf.getvalue())
        outputs.append(Path(args.dump_logits))
    config = {
        "model": params.config.to_dict(),
        "data": {"model": str(args.model), "data": str(args.data),
                 "classes": str(args.classes)},
        "k": args.k,
    }
    _write_manifest(out.with_name(out.stem + ".manifest.json"), "eval", config,
                    params.config.seed, started, outputs)
    print(f"top-1 {report.top1:.4f}, top-{args.k} {report.top5:.4f}, "
          f"class-mean recall {report.class_mean_top5_recall:.4f} "
          f"({report.n_samples} samples) -> {out}")
    return 0


def cmd_ablate(args):
    started = _utcnow()
    train_records, train_meta, val_records, val_meta, table = _load_training_inputs(args)
    base_obj = _load_json(args.config, "config") if args.config else {}
    field, values = GRIDS[args.grid]
    model_obj = base_obj.get("model", {}) if isinstance(base_obj, dict) else {}
    _, _, train_cfg = _load_run_config(args.config, train_meta)
    base_dict = _resolve_model_dict(model_obj, train_meta)

    rows = []
    n_failed = 0
    for value in values:
        cell = dict(base_dict)
        cell[field] = value
        t0 = time.monotonic()
        try:
            model_cfg = ModelConfig.from_dict(cell)
            check_meta_compatible(model_cfg, train_meta)
            check_meta_compatible(model_cfg, val_meta)
            result = fit(AAGParameters(model_cfg), table, train_records,
                         val_records, train_cfg)
            report = result.val_report
            wall_ms = int((time.monotonic() - t0) * 1000)
            rows.append([str(value), repr(report.top1), repr(report.top5),
                         repr(report.class_mean_top5_recall),
                         str(len(result.history)), str(wall_ms), ""])
        except AAGError as e:
            wall_ms = int((time.monotonic() - t0) * 1000)
            n_failed += 1
            rows.append([str(value), "", "", "", "", str(wall_ms), str(e)])

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", "top1", "top5", "recall5", "epochs_run",
                     "wall_ms", "error"])
    writer.writerows(rows)
    out = Path(args.out)
    atomic_write_text(out, buf.getvalue())
    config = {
        "grid": args.grid,
        "model": base_dict,
        "train": train_cfg.to_dict(),
        "data": {"train": str(args.train), "val": str(args.val),
                 "classes": str(args.classes)},
    }
    _write_manifest(out.with_name(out.stem + ".manifest.json"), "ablate", config,
                    train_cfg.seed, started, [out])
    print(f"{args.grid} grid: {len(rows)} cells, {n_failed} failed -> {out}")
    return 1 if n_failed else 0


def cmd_inspect(args):
    with open(args.file, "rb") as f:
        magic = f.read(4)
    if magic == AAGF_MAGIC:
        records, meta = read_aagf(args.file)
        with_desc = records[0].desc_embedding is not None if records else False
        print(f"AAGF dataset: {args.file}")
        print(f"  n_samples:     {len(records)}")
        for name in ("d_ft", "d_txt", "n_classes", "history_len", "frames",
                     "delta_ms", "depth_source"):
            print(f"  {name + ':':14s} {getattr(meta, name)}")
        print(f"  descriptions:  {'yes' if with_desc else 'no'}")
    elif magic == AAGC_MAGIC:
        table = load_class_table(args.file)
        print(f"AAGC class table: {args.file}")
        print(f"  n_classes:     {table.n_classes}")
        print(f"  d_txt:         {table.d_txt}")
        preview = ", ".join(table.names[:5])
        more = "" if table.n_classes <= 5 else f", ... ({table.n_classes} total)"
        print(f"  names:         {preview}{more}")
    elif magic == AAGM_MAGIC:
        params = load_model(args.file)
        cfg = params.config
        print(f"AAGM checkpoint: {args.file}")
        print(f"  architecture:  d={cfg.d}, fusion {cfg.fusion_layers}x"
              f"{cfg.fusion_heads}h, {cfg.input} input, {cfg.mode}")
        print(f"  strategies:    visual={cfg.visual_fusion}, "
              f"history={cfg.history_strategy} (N={cfg.history_len}), "
              f"multimodal={cfg.multimodal_fusion}")
        print(f"  dims:          d_ft={cfg.d_ft}, d_txt={cfg.d_txt}, "
              f"n_classes={cfg.n_classes}")
        print(f"  tensors:       {len(params.registry)}")
        print(f"  parameters:    {params.n_parameters} total, "
              f"{params.n_parameters} trainable")
    else:
        raise FormatError(f"{args.file}: unknown magic {magic!r}")
    return 0


# --- argument parsing ---------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aag",
        description="Multimodal action anticipation on precomputed embeddings.",
    )
    parser.add_argument("--version", action="version", version=VERSION_STRING)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="SyntheticSpec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", required=True, help="training AAGF file")
    p.add_argument("--val", required=True, help="validation AAGF file")
    p.add_argument("--classes", required=True, help="AAGC class table")
    p.add_argument("--config", help="JSON file: {\"model\": ..., \"train\": ...}")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--log", help="epoch log path (default <out>/train_log.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--model", required=True, help="AAGM checkpoint")
    p.add_argument("--data", required=True, help="AAGF file to evaluate")
    p.add_argument("--classes", required=True, help="AAGC class table")
    p.add_argument("--out", required=True, help="report path (.json or .csv)")
    p.add_argument("--k", type=int, default=5, help="k for top-k accuracy")
    p.add_argument("--dump-logits", help="also dump logits+labels to this .npz")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train one model per grid cell")
    p.add_argument("--train", required=True, help="training AAGF file")
    p.add_argument("--val", required=True, help="validation AAGF file")
    p.add_argument("--classes", required=True, help="AAGC class table")
    p.add_argument("--config", help="base config JSON (grid field is overridden)")
    p.add_argument("--grid", required=True, choices=sorted(GRIDS))
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="describe an AAGF/AAGC/AAGM file")
    p.add_argument("--file", required=True, help="file to inspect")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return args.func(args)
    except (TrainingError, NumericsError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except AAGError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
