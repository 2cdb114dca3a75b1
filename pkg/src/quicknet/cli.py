"""Command-line front door.

Four subcommands: `train` runs the cascade (or the end-to-end baseline) and
writes checkpoint + manifest + per-epoch CSV into an output directory;
`eval` scores a finished run on a dataset; `sweep` traces the
accuracy/cost curve over exit thresholds; `report` turns manifests into the
per-block CSV tables (epochs, pool sizes, class composition, training cost
vs accuracy).

Failures map to one machine-parsable stderr line, `error: <category>:
<message>`, with exit codes 2 (data), 3 (config), 4 (contract), 1 (internal).

Everything written by `train` except timing.json is deterministic for a
given seed, config, and dataset; wall-clock facts live in timing.json so
the manifest and checkpoint can be compared byte for byte across runs.
"""

import argparse
import csv
import json
import math
import os
import sys
import time
import traceback
from dataclasses import asdict

import numpy as np

from . import checkpoint as ckpt
from . import costs
from .data import load_idx
from .errors import ConfigError, ContractError, DataError, ShapeError
from .exits import evaluate_policy, threshold_sweep
from .kernels import backend_name
from .model import QuickNet, arch_hash, load_arch
from .training import TrainConfig, backbone_logits, default_lr, train_end2end, train_quicknet

EPOCH_COLUMNS = ["block", "epoch", "lr", "loss", "pool_size", "cum_flops", "phase"]


class ManifestMismatchError(DataError):
    """Manifests given to one report describe different experiments."""


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        x = float(x)
    if isinstance(x, float) and math.isnan(x):
        return None
    return x


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path_or_stdout, columns, rows):
    def emit(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])

    if path_or_stdout is None:
        emit(sys.stdout)
    else:
        with open(path_or_stdout, "w") as fh:
            emit(fh)


def _load_pair(images_path, labels_path):
    try:
        return load_idx(images_path, labels_path)
    except OSError as exc:
        raise DataError(f"cannot read dataset: {exc}") from None


def _load_run(run_dir):
    """Manifest dict plus the checkpointed model it describes."""
    manifest_path = os.path.join(run_dir, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest {manifest_path}: {exc}") from None
    net = QuickNet(manifest["arch"], seed=manifest["config"]["seed"])
    ckpt.load_checkpoint(os.path.join(run_dir, manifest["checkpoint"]["file"]), net)
    return manifest, net


def _policy_metrics(net, dataset, threshold, n_blocks):
    x = dataset.inputs_for(net.input_shape)
    res = evaluate_policy(net, x, threshold, n_blocks=n_blocks)
    n = len(dataset)
    non_fallback = ~res["fallback"]
    histogram = {
        f"exit_{i}": float(((res["exit"] == i) & non_fallback).sum() / n)
        for i in range(n_blocks)
    }
    histogram["fallback"] = float(res["fallback"].mean())
    return {
        "accuracy": float((res["pred"] == dataset.labels).mean()),
        "mean_inference_flops": float(res["flops"].mean()),
        "exit_histogram": histogram,
        "fallback_frac": float(res["fallback"].mean()),
        "threshold": threshold,
        "n": n,
    }


def _backbone_metrics(net, dataset):
    preds = backbone_logits(net, dataset.inputs_for(net.input_shape)).argmax(axis=1)
    return {
        "accuracy": float((preds == dataset.labels).mean()),
        "mean_inference_flops": float(costs.backbone_forward_flops(net.arch)),
        "exit_histogram": {},
        "fallback_frac": None,
        "threshold": None,
        "n": len(dataset),
    }


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args):
    arch = load_arch(args.arch)
    train_ds = _load_pair(args.data_images, args.data_labels)
    if (args.test_images is None) != (args.test_labels is None):
        raise ConfigError("--test-images and --test-labels must be given together")
    test_ds = None
    if args.test_images is not None:
        test_ds = _load_pair(args.test_images, args.test_labels)

    cfg = TrainConfig(
        lr=args.lr if args.lr is not None else default_lr(arch),
        max_epochs=args.max_epochs,
        batch_size=args.batch_size,
        threshold=args.threshold,
        seed=args.seed,
        min_pool=args.min_pool,
        sampling=args.sampling,
    )
    net = QuickNet(arch, seed=cfg.seed)

    started = time.time()
    if args.mode == "quicknet":
        result = train_quicknet(net, train_ds, cfg, eval_dataset=test_ds)
    else:
        result = train_end2end(net, train_ds, cfg, eval_dataset=test_ds)
    finished = time.time()

    os.makedirs(args.out_dir, exist_ok=True)
    ckpt_path = os.path.join(args.out_dir, "checkpoint.qnet")
    ckpt.save_checkpoint(ckpt_path, net)

    _write_csv(
        os.path.join(args.out_dir, "epochs.csv"),
        EPOCH_COLUMNS,
        [[row[c] for c in EPOCH_COLUMNS] for row in result.epoch_rows],
    )

    final_ds = test_ds if test_ds is not None else train_ds
    if result.mode == "quicknet":
        final = _policy_metrics(net, final_ds, cfg.threshold, result.blocks_trained)
    else:
        final = _backbone_metrics(net, final_ds)
    final["split"] = "test" if test_ds is not None else "train"
    final["training_flops"] = result.total_flops

    manifest = {
        "format": 1,
        "command": "train",
        "mode": result.mode,
        "config": dict(asdict(cfg), min_pool_resolved=cfg.resolved_min_pool(train_ds.num_classes)),
        "arch": arch,
        "arch_hash": arch_hash(arch),
        "dataset": {
            "provenance": train_ds.provenance,
            "n": len(train_ds),
            "num_classes": train_ds.num_classes,
        },
        "test_dataset": None if test_ds is None else {
            "provenance": test_ds.provenance,
            "n": len(test_ds),
            "num_classes": test_ds.num_classes,
        },
        "blocks_trained": result.blocks_trained,
        "records": [asdict(r) for r in result.records],
        "flop_records": result.flop_records,
        "training_flops": result.total_flops,
        "final": final,
        "checkpoint": {"file": "checkpoint.qnet", "sha256": ckpt.file_digest(ckpt_path)},
        "kernel_backend": backend_name(),
    }
    _write_json(os.path.join(args.out_dir, "manifest.json"), manifest)
    _write_json(
        os.path.join(args.out_dir, "timing.json"),
        {"started_unix": started, "finished_unix": finished, "seconds": finished - started},
    )

    print(f"mode={result.mode} blocks_trained={result.blocks_trained} "
          f"training_flops={result.total_flops}")
    print(f"{final['split']} accuracy={final['accuracy']:.4f} "
          f"mean_inference_flops={final['mean_inference_flops']:.1f}")
    print(f"wrote {os.path.join(args.out_dir, 'manifest.json')}")
    return 0


def cmd_eval(args):
    manifest, net = _load_run(args.run)
    dataset = _load_pair(args.data_images, args.data_labels)
    if manifest["mode"] == "quicknet":
        threshold = args.threshold
        if threshold is None:
            threshold = manifest["config"]["threshold"]
        metrics = _policy_metrics(net, dataset, threshold, manifest["blocks_trained"])
    else:
        metrics = _backbone_metrics(net, dataset)
    metrics["mode"] = manifest["mode"]
    metrics["dataset"] = dataset.provenance

    if args.out is not None:
        _write_json(args.out, metrics)
    print(json.dumps(_jsonable(metrics), sort_keys=True, indent=2))
    return 0


def cmd_sweep(args):
    manifest, net = _load_run(args.run)
    if manifest["mode"] != "quicknet":
        raise ConfigError("threshold sweeps need a run trained in quicknet mode")
    dataset = _load_pair(args.data_images, args.data_labels)
    try:
        thresholds = [float(v) for v in args.thresholds.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --thresholds value: {exc}") from None
    if not thresholds:
        raise ConfigError("--thresholds needs at least one value")

    n_blocks = manifest["blocks_trained"]
    rows = threshold_sweep(
        net, dataset.inputs_for(net.input_shape), dataset.labels, thresholds,
        n_blocks=n_blocks,
    )
    columns = ["mode", "threshold", "accuracy", "mean_flops"]
    columns += [f"exit_{i}_frac" for i in range(n_blocks)] + ["fallback_frac"]
    _write_csv(args.out, columns, [[row[c] for c in columns] for row in rows])
    if args.out is not None:
        print(f"wrote {args.out}")
    return 0


def cmd_report(args):
    manifests = []
    for path in args.manifest:
        try:
            with open(path) as fh:
                manifests.append(json.load(fh))
        except OSError as exc:
            raise DataError(f"cannot read manifest: {exc}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed manifest {path}: {exc}") from None

    first = manifests[0]["dataset"]
    for m in manifests[1:]:
        if m["dataset"]["provenance"] != first["provenance"]:
            raise ManifestMismatchError(
                f"manifests mix datasets: {first['provenance']!r} vs "
                f"{m['dataset']['provenance']!r}"
            )

    names = []
    for m in manifests:
        base = f"{m['mode']}-seed{m['config']['seed']}"
        name = base
        k = 2
        while name in names:
            name = f"{base}#{k}"
            k += 1
        names.append(name)

    os.makedirs(args.out_dir, exist_ok=True)
    num_classes = first["num_classes"]

    epoch_rows, pool_rows, comp_rows, cost_rows = [], [], [], []
    for name, m in zip(names, manifests):
        cum = 0
        for rec in m["records"]:
            epoch_rows.append([name, rec["block"], rec["epochs"], rec["commit_epochs"]])
            pool_rows.append([name, rec["block"], rec["pool_size"]])
            comp_rows.append([name, rec["block"]] + list(rec["class_composition"]))
            cum += rec["flops"]
            cost_rows.append([name, rec["block"], cum, rec["test_accuracy"]])

    out = {
        "epochs_per_block.csv": (["series", "block", "epochs", "commitment_epochs"], epoch_rows),
        "pool_sizes.csv": (["series", "block", "pool_size"], pool_rows),
        "class_composition.csv": (
            ["series", "block"] + [f"class_{c}" for c in range(num_classes)],
            comp_rows,
        ),
        "cost_vs_accuracy.csv": (
            ["series", "block", "cum_training_flops", "test_accuracy"],
            cost_rows,
        ),
    }
    for fname, (columns, rows) in out.items():
        path = os.path.join(args.out_dir, fname)
        _write_csv(path, columns, rows)
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="quicknet",
        description="Train and evaluate block-cascaded early-exit networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a cascade or an end-to-end baseline")
    p.add_argument("--arch", required=True, help="architecture JSON file")
    p.add_argument("--data-images", required=True)
    p.add_argument("--data-labels", required=True)
    p.add_argument("--test-images", help="optional held-out images for per-block accuracy")
    p.add_argument("--test-labels")
    p.add_argument("--mode", choices=("quicknet", "end2end"), default="quicknet")
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=None,
                   help="initial learning rate (default depends on architecture)")
    p.add_argument("--sampling", choices=("balanced", "literal"), default="balanced")
    p.add_argument("--min-pool", type=int, default=None,
                   help="stop adding blocks when the pool shrinks below this (default 2x classes)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a finished run on a dataset")
    p.add_argument("--run", required=True, help="output directory of a train run")
    p.add_argument("--data-images", required=True)
    p.add_argument("--data-labels", required=True)
    p.add_argument("--threshold", type=float, default=None,
                   help="exit threshold (default: the one the run trained with)")
    p.add_argument("--out", help="also write the metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="accuracy/cost curve over exit thresholds")
    p.add_argument("--run", required=True)
    p.add_argument("--data-images", required=True)
    p.add_argument("--data-labels", required=True)
    p.add_argument("--thresholds", required=True, help="comma-separated list, e.g. 0.5,0.7,0.9")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="per-block CSV tables from run manifests")
    p.add_argument("--manifest", required=True, nargs="+", help="manifest.json paths")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 3
    except (ContractError, ShapeError) as exc:
        print(f"error: contract: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:
        traceback.print_exc()
        print(f"error: internal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
