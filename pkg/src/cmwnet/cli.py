"""Experiment orchestration CLI.

Subcommands: generate (datasets only), train, meta-test, compare, curves.
Every artifact under a run directory is reproducible from the resolved
config snapshot written there.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import biasgen, metaloop, metrics, models
from .config import (ConfigError, ExperimentConfig, build_test_dataset,
                     build_train_dataset, load_config, save_config)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

OUT_ROOT_ENV = "CMWNET_OUT_ROOT"


def _resolve_out(out: str) -> Path:
    root = os.environ.get(OUT_ROOT_ENV)
    p = Path(out)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def _dataset_fingerprint(cfg: ExperimentConfig) -> dict:
    dc = cfg.dataset
    return {"C": dc.C, "d": dc.d, "separation": dc.separation,
            "sigma": dc.sigma, "test_n_per_class": cfg.test.n_per_class,
            "test_seed": cfg.test.seed}


def run(config_path, out: str, seed: int | None = None) -> Path:
    """Execute one experiment: build data, train, persist all artifacts."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg.seed = seed
    cfg.validate()
    out_dir = _resolve_out(out)
    save_config(out_dir / "snapshot.yaml", cfg)

    train_ds = build_train_dataset(cfg)
    test_ds = build_test_dataset(cfg)
    biasgen.save_dataset(out_dir / "train.cmwd", train_ds)
    biasgen.save_dataset(out_dir / "test.cmwd", test_ds)

    variant = cfg.train.variant
    if variant == "meta-test":
        ckpt = models.load_checkpoint(cfg.train.checkpoint)
        if ckpt.weightnet is None:
            raise ConfigError(
                f"checkpoint {cfg.train.checkpoint} has no weighting net")
        state = metaloop.meta_test(ckpt.weightnet, train_ds, cfg,
                                   test_ds=test_ds, seed=cfg.seed)
    else:
        state = metaloop.meta_train(train_ds, cfg, test_ds=test_ds,
                                    seed=cfg.seed)

    state.logger.write_csv(out_dir / "metrics.csv")
    extra = {}
    if state.clf_opt.buffers is not None:
        extra.update(state.clf_opt.state_arrays())
    if state.theta_opt is not None:
        extra.update({f"theta_{k}": v
                      for k, v in state.theta_opt.state_arrays().items()})
    centers = state.fam.centers if state.fam is not None else None
    models.save_checkpoint(out_dir / "checkpoint.ckpt", state.clf,
                           state.wnet, centers, extra_arrays=extra,
                           meta={"variant": variant, "iterations": state.t})

    report = metrics.evaluate(state.clf, test_ds)
    metrics.write_confusion_csv(out_dir / "confusion.csv", report)
    if state.wnet is not None:
        grid = np.linspace(0.0, 10.0, 101)
        metrics.write_weight_curve_csv(out_dir / "weight_curve.csv",
                                       state.wnet, grid)
        metrics.write_histogram_csv(out_dir / "histogram.csv", train_ds,
                                    state.clf)
    summary = dict(state.final_report)
    summary.update({
        "variant": variant,
        "seed": cfg.seed,
        "accuracy": report.accuracy,
        "per_class_accuracy": [float(a) for a in report.per_class_accuracy],
        "test_fingerprint": _dataset_fingerprint(cfg),
    })
    with open(out_dir / "report.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def compare(dir_a, dir_b, out_path=None):
    """Paired accuracy deltas between two finished runs on the same test set."""
    reports = []
    for d in (dir_a, dir_b):
        path = Path(d) / "report.json"
        if not path.exists():
            raise FileNotFoundError(f"{path} missing; run not finished?")
        with open(path) as fh:
            reports.append(json.load(fh))
    a, b = reports
    if a["test_fingerprint"] != b["test_fingerprint"]:
        raise ConfigError("runs were evaluated on different test sets")
    C = len(a["per_class_accuracy"])
    header = ["accuracy_a", "accuracy_b"] + [f"delta_class_{c}" for c in range(C)]
    row = [a["accuracy"], b["accuracy"]] + [
        a["per_class_accuracy"][c] - b["per_class_accuracy"][c]
        for c in range(C)]
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerow([f"{v:.10g}" for v in row])
    return header, row


def _cmd_generate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out_dir = _resolve_out(args.out)
    save_config(out_dir / "snapshot.yaml", cfg)
    train_ds = build_train_dataset(cfg)
    test_ds = build_test_dataset(cfg)
    biasgen.save_dataset(out_dir / "train.cmwd", train_ds)
    biasgen.save_dataset(out_dir / "test.cmwd", test_ds)
    biasgen.export_csv(out_dir / "train.csv", train_ds)
    print(f"wrote datasets to {out_dir}")
    return EXIT_OK


def _cmd_train(args) -> int:
    out_dir = run(args.config, args.out, args.seed)
    with open(out_dir / "report.json") as fh:
        report = json.load(fh)
    print(f"{report['variant']}: test accuracy {report['accuracy']:.4f} "
          f"({out_dir})")
    return EXIT_OK


def _cmd_meta_test(args) -> int:
    cfg = load_config(args.config)
    cfg.train.variant = "meta-test"
    if args.checkpoint:
        cfg.train.checkpoint = args.checkpoint
    cfg.validate()
    out_dir = _resolve_out(args.out)
    tmp = out_dir / "resolved.yaml"
    save_config(tmp, cfg)
    run(tmp, str(out_dir), args.seed)
    with open(out_dir / "report.json") as fh:
        report = json.load(fh)
    print(f"meta-test: test accuracy {report['accuracy']:.4f} ({out_dir})")
    return EXIT_OK


def _cmd_compare(args) -> int:
    out_path = Path(args.out) / "compare.csv" if args.out else None
    if out_path is not None:
        _resolve_out(args.out)
    header, row = compare(args.run_a, args.run_b, out_path)
    print(",".join(header))
    print(",".join(f"{v:.6g}" for v in row))
    print(f"overall delta (a - b): {row[0] - row[1]:+.4f}")
    return EXIT_OK


def _cmd_curves(args) -> int:
    ckpt = models.load_checkpoint(args.checkpoint)
    out_dir = _resolve_out(args.out)
    if ckpt.weightnet is None:
        raise ConfigError(f"checkpoint {args.checkpoint} has no weighting net")
    grid = np.linspace(0.0, args.grid_max, args.grid_points)
    metrics.write_weight_curve_csv(out_dir / "weight_curve.csv",
                                   ckpt.weightnet, grid)
    if args.dataset:
        ds = biasgen.load_dataset(args.dataset)
        metrics.write_histogram_csv(out_dir / "histogram.csv", ds,
                                    ckpt.classifier)
    print(f"wrote curves to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmwnet",
        description="Class-aware meta-learned sample re-weighting experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    p = sub.add_parser("generate", help="build and save datasets only")
    add_common(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="run a training experiment")
    add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("meta-test", help="transfer a trained weighting net")
    add_common(p)
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint providing the frozen weighting net")
    p.set_defaults(func=_cmd_meta_test)

    p = sub.add_parser("compare", help="paired accuracy deltas of two runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--out", default=None, help="optional output directory")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("curves", help="emit weighting curves / histograms")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", default=None, help="dataset file for histograms")
    p.add_argument("--grid-max", type=float, default=10.0)
    p.add_argument("--grid-points", type=int, default=101)
    p.set_defaults(func=_cmd_curves)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, ZeroDivisionError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"I/O failure: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
