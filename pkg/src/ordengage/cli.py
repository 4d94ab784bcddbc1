"""Command-line entry point: synth | augment | train | eval | ablate | report.

Exit codes: 0 success, 1 configuration/contract error, 2 runtime/numeric
error.  Every subcommand writes its fully resolved config next to its
outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .augment import apply_policy
from .config import RunConfig, dump_resolved, parse_config
from .data import (
    Dataset,
    generate_synthetic,
    load_dataset,
    merge_datasets,
    partition_by_tags,
    split_dataset,
    save_dataset,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    IngestionError,
    NumericError,
    OrdengageError,
    ParameterError,
    ShapeError,
)
from .models import load_checkpoint, load_ensemble, save_checkpoint, save_ensemble
from .ordinal import OrdinalEnsemble
from .pipeline import RunReport, evaluate, run_ablation, train_pipeline

log = logging.getLogger(__name__)

MODEL_FILE = "model.ckpt"
ENSEMBLE_FILE = "ensemble.ckpt"


# ---------------------------------------------------------------------------
# data plumbing


def _load_full_dataset(rc: RunConfig) -> Dataset:
    data = rc.resolved["data"]
    spec = rc.synthetic_spec()
    if spec is not None:
        return generate_synthetic(spec)
    if not data["features_csv"]:
        raise ConfigError("data: needs either a synthetic spec or CSV paths")
    return load_dataset(
        data["features_csv"],
        data["labels_csv"],
        num_classes=data["num_classes"],
        frame_stride=data["frame_stride"],
    )


def _split(rc: RunConfig, full: Dataset):
    data = rc.resolved["data"]
    if full.split_tags:
        return partition_by_tags(full)
    return split_dataset(full, data["split_fractions"], seed=data["split_seed"])


def _split_tag_map(splits) -> dict[str, str]:
    tags = {}
    for ds in splits:
        for s in ds:
            tags[s.sample_id] = ds.split
    return tags


# ---------------------------------------------------------------------------
# report emission


def write_report(report: RunReport | list[RunReport], out_dir) -> list[Path]:
    """Write run artifacts: report.json + confusion.csv, and a grid CSV.

    Accepts a single report or a list (one grid row per report).  Returns the
    written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = report if isinstance(report, list) else [report]
    written = []
    if not isinstance(report, list):
        written.append(_write_report_json(reports[0], out / "report.json"))
        written.append(_write_confusion_csv(reports[0], out / "confusion.csv"))
    written.append(_write_grid_csv(reports, out / "grid.csv"))
    return written


def _write_report_json(report: RunReport, path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_confusion_csv(report: RunReport, path: Path) -> Path:
    c = report.confusion.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + [f"pred_{j}" for j in range(c)])
        for i in range(c):
            writer.writerow([f"true_{i}"] + [int(v) for v in report.confusion[i]])
    return path


def _write_grid_csv(reports: list[RunReport], path: Path) -> Path:
    c = reports[0].confusion.shape[0] if reports else 4
    header = (
        ["features", "model", "strategy", "total_acc"]
        + [f"prec_{i}" for i in range(c)]
        + [f"rec_{i}" for i in range(c)]
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in reports:
            writer.writerow(
                [r.features, r.encoder, r.strategy, f"{r.accuracy:.6f}"]
                + [f"{v:.6f}" for v in r.precision]
                + [f"{v:.6f}" for v in r.recall]
            )
    return path


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(rc: RunConfig) -> int:
    if rc.synthetic_spec() is None:
        raise ConfigError("synth requires a data.synthetic section")
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    full = _load_full_dataset(rc)
    splits = _split(rc, full)
    save_dataset(
        full,
        out / "features.csv",
        out / "labels.csv",
        split_tags=_split_tag_map(splits),
    )
    dump_resolved(rc, out / "resolved_config.yaml")
    print(f"wrote {len(full)} samples to {out / 'features.csv'}")
    return 0


def _cmd_augment(rc: RunConfig) -> int:
    policy = rc.augment_policy()
    if policy is None:
        raise ConfigError("augment requires an augment section")
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    full = _load_full_dataset(rc)
    train, validation, test = _split(rc, full)
    merged = merge_datasets(train, validation)
    augmented = apply_policy(merged, policy)
    save_dataset(augmented, out / "features_augmented.csv", out / "labels_augmented.csv")
    dump_resolved(rc, out / "resolved_config.yaml")
    print(
        f"augmented {len(merged)} -> {len(augmented)} samples "
        f"(class counts {augmented.class_counts.tolist()})"
    )
    return 0


def _cmd_train(rc: RunConfig) -> int:
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    full = _load_full_dataset(rc)
    train, validation, test = _split(rc, full)
    merged = merge_datasets(train, validation)
    cfg = rc.train_config()
    started = time.perf_counter()
    result = train_pipeline(cfg, merged)
    elapsed = time.perf_counter() - started

    if isinstance(result.model, OrdinalEnsemble):
        blob = save_ensemble(
            result.model.members,
            result.model.num_classes,
            result.model.clamp_policy,
            seed=rc.seed,
        )
        target = out / ENSEMBLE_FILE
    else:
        blob = save_checkpoint(result.model, seed=rc.seed)
        target = out / MODEL_FILE
    target.write_bytes(blob)

    with open(out / "training_log.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "strategy": cfg.strategy,
                "encoder": cfg.encoder,
                "wall_clock_s": elapsed,
                "train_samples": len(result.train_data),
                "class_counts": result.train_data.class_counts.tolist(),
                "encoder_checksums": result.encoder_checksums,
                "phase1_final_loss": {
                    k: (v[-1] if v else None) for k, v in result.phase1_losses.items()
                },
                "phase2_final_loss": {
                    k: (v[-1] if v else None) for k, v in result.phase2_losses.items()
                },
                "diagnostics": result.diagnostics,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    dump_resolved(rc, out / "resolved_config.yaml")
    print(f"trained strategy {cfg.strategy} ({cfg.encoder}) in {elapsed:.1f}s -> {target}")
    return 0


def _load_model_for_eval(rc: RunConfig):
    explicit = rc.resolved["eval"]["checkpoint"]
    out = Path(rc.out_dir)
    if explicit:
        path = Path(explicit)
    elif (out / ENSEMBLE_FILE).exists():
        path = out / ENSEMBLE_FILE
    elif (out / MODEL_FILE).exists():
        path = out / MODEL_FILE
    else:
        raise ConfigError(
            f"no checkpoint found in {out}; run train first or set eval.checkpoint"
        )
    blob = path.read_bytes()
    if blob[:8] == b"OENGENSB":
        members, num_classes, clamp_policy, _ = load_ensemble(blob)
        return OrdinalEnsemble(members, num_classes, clamp_policy)
    model, _ = load_checkpoint(blob)
    return model


def _cmd_eval(rc: RunConfig) -> int:
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    full = _load_full_dataset(rc)
    train, validation, test = _split(rc, full)
    model = _load_model_for_eval(rc)
    cfg = rc.train_config()
    report = evaluate(
        model,
        test,
        config_fingerprint=rc.fingerprint(),
        seed=rc.seed,
        features=cfg.features,
        encoder=cfg.encoder,
        strategy=cfg.strategy,
    )
    write_report(report, out)
    dump_resolved(rc, out / "resolved_config.yaml")
    print(f"accuracy {report.accuracy:.4f} on {len(test)} test samples")
    return 0


def _cmd_ablate(rc: RunConfig) -> int:
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    full = _load_full_dataset(rc)
    train, validation, test = _split(rc, full)
    merged = merge_datasets(train, validation)
    cells = run_ablation(rc.ablate_configs(), merged, test, seed=rc.seed)

    reports = []
    for cell in cells:
        cfg = cell["config"]
        cell_dir = out / "cells" / f"{cfg.features}-{cfg.encoder}-{cfg.strategy}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        if "report" in cell:
            reports.append(cell["report"])
            _write_report_json(cell["report"], cell_dir / "report.json")
            _write_confusion_csv(cell["report"], cell_dir / "confusion.csv")
        else:
            with open(cell_dir / "error.txt", "w", encoding="utf-8") as fh:
                fh.write(cell["error"] + "\n")
    _write_grid_csv(reports, out / "grid.csv")
    dump_resolved(rc, out / "resolved_config.yaml")
    failed = sum(1 for c in cells if "error" in c)
    print(f"ablation grid: {len(reports)} cells ok, {failed} failed -> {out / 'grid.csv'}")
    return 0 if failed == 0 else 2


def _cmd_report(rc: RunConfig) -> int:
    out = Path(rc.out_dir)
    found = sorted(out.rglob("report.json"))
    if not found:
        raise ContractError(f"no report.json files under {out}")
    reports = []
    for path in found:
        with open(path, encoding="utf-8") as fh:
            reports.append(RunReport.from_dict(json.load(fh)))
    _write_grid_csv(reports, out / "grid.csv")
    print(f"aggregated {len(reports)} report(s) -> {out / 'grid.csv'}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "augment": _cmd_augment,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "report": _cmd_report,
}

_CONFIG_ERRORS = (
    ConfigError,
    ContractError,
    ParameterError,
    IngestionError,
    ShapeError,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ordengage",
        description="Supervised contrastive ordinal classification of "
        "imbalanced multivariate time series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the YAML run config")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = parse_config(args.config, overrides={"seed": args.seed, "out_dir": args.out})
        return _COMMANDS[args.command](rc)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, CheckpointError, OrdengageError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
