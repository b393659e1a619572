"""Command-line entry point: ``snapens {prepare,train-base,run}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import snapshot_store
from .dataset import sample_negatives
from .exceptions import ConfigError, SnapensError
from .experiment import RunConfig, materialize_splits, prepare, run_experiment, train_base
from .utils import derive_seed

_log = logging.getLogger("snapens")


def _write_interactions(ds, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "item", "user_id", "item_id", "rating", "timestamp"])
        for u, i, r, t in zip(ds.users.tolist(), ds.items.tolist(),
                              ds.ratings.tolist(), ds.timestamps.tolist()):
            w.writerow([u, i, ds.user_ids[u], ds.item_ids[i], format(r, "g"), t])


def _write_negatives(negs, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "positive", "negatives"])
        for u, p, row in zip(negs.users.tolist(), negs.positives.tolist(), negs.items.tolist()):
            w.writerow([u, p, " ".join(map(str, row))])


def cmd_prepare(config: RunConfig, out: Path) -> dict:
    """Persist the split, fixed negatives and neighbor lists under ``out``."""
    data = prepare(config)
    out.mkdir(parents=True, exist_ok=True)
    split = data.split
    for name in ("train", "validation", "test"):
        _write_interactions(getattr(split, name), out / f"{name}.csv")
    n = config.test_negatives
    test_negs = data.test_negatives or sample_negatives(
        split, n, derive_seed(config.seed, "negatives"), "test")
    val_negs = data.validation_negatives or sample_negatives(
        split, n, derive_seed(config.seed, "validation-negatives"), "validation")
    _write_negatives(test_negs, out / "negatives_test.csv")
    _write_negatives(val_negs, out / "negatives_validation.csv")
    nb = data.neighbors
    neighbors = {"cap": nb.cap,
                 "by_item": [a.tolist() for a in nb.by_item],
                 "by_user": [a.tolist() for a in nb.by_user]}
    (out / "neighbors.json").write_text(json.dumps(neighbors, separators=(",", ":")) + "\n")
    summary = {
        "fingerprint": config.fingerprint(),
        "num_users": data.dataset.num_users,
        "num_items": data.dataset.num_items,
        "interactions": len(data.dataset),
        "train": len(split.train),
        "validation": len(split.validation),
        "test": len(split.test),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_train_base(config: RunConfig, out: Path) -> list[Path]:
    """Train the base model and write its snapshots over each split."""
    data = prepare(config)
    sets = materialize_splits(config, data, train_base(config, data))
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("train", "validation", "test"):
        path = out / f"snapshots_{name}.snapens"
        snapshot_store.save(getattr(sets, name), path)
        written.append(path)
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snapens", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("prepare", "split the dataset and build neighbor lists"),
                        ("train-base", "train the base model and save snapshot predictions"),
                        ("run", "run the full experiment and write reports")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="YAML experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--methods", help="comma-separated ensemble methods")
        p.add_argument("--task", choices=("rating", "ranking"))
        p.add_argument("--base", help="base algorithm (rsvd, fm, itemknn, userknn)")
        p.add_argument("--out", type=Path, help="output directory")
    return parser


def _config(args) -> RunConfig:
    overrides = {"seed": args.seed, "methods": args.methods, "task": args.task,
                 "base": args.base, "out": None if args.out is None else str(args.out)}
    if args.config is not None:
        return RunConfig.from_file(args.config, **overrides)
    return RunConfig.from_dict({}, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s: %(message)s")
    try:
        config = _config(args)
        out = Path(config.out)
        if args.command == "prepare":
            summary = cmd_prepare(config, out)
            print(f"wrote split ({summary['train']}/{summary['validation']}/{summary['test']}) to {out}")
        elif args.command == "train-base":
            for path in cmd_train_base(config, out):
                print(f"wrote {path}")
        else:
            run_experiment(config, out_dir=out, echo=True)
            print(f"reports written to {out / 'reports.csv'}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SnapensError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
