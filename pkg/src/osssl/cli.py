"""Command line interface.

Subcommands: generate-data, train, evaluate, ablate, report.
Exit codes: 0 success, 2 config error, 3 data error, 4 runtime error.
Set OSSSL_LOG=debug to write the pool event log next to the metrics.
"""
from __future__ import annotations

import argparse
import json
import signal
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, DataError, EngineError
from .synthdata import DatasetSpec, generate_open_set, load_csv, save_csv
from .trainer import ablate, evaluate, load_dataset, train


def _add_subcommands(parser: argparse.ArgumentParser) -> None:
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="generate a synthetic open-set benchmark CSV")
    p.add_argument("--spec", required=True, help="JSON file with DatasetSpec fields")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("train", help="train on a config")
    p.add_argument("--config", required=True, help="JSON TrainConfig")
    p.add_argument("--out-dir", required=True, help="run directory for logs and checkpoint")

    p = sub.add_parser("evaluate", help="recompute metrics from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="dataset CSV; omitted = regenerate from the config echo")

    p = sub.add_parser("ablate", help="run the ablation matrix")
    p.add_argument("--config", required=True, help="base JSON TrainConfig")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", default=None, help="comma-separated seed list, default: the config seed")

    p = sub.add_parser("report", help="emit CSV summaries, curves and figures for a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out-dir", default=None, help="default: the run directory itself")


def _cmd_generate_data(args) -> int:
    # a bare spec file uses the same object layout as TrainConfig's "dataset"
    with open(args.spec, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"spec is not valid JSON: {exc}") from exc
    import dataclasses

    allowed = {f.name for f in dataclasses.fields(DatasetSpec)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) in dataset spec: {sorted(unknown)}")
    spec = DatasetSpec(**raw)
    dataset = generate_open_set(spec)
    save_csv(dataset, args.out)
    print(
        f"wrote {args.out}: {len(dataset.labeled)} labeled, "
        f"{len(dataset.unlabeled)} unlabeled, {len(dataset.test)} test"
    )
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    stop = {"flag": False}

    def _handler(signum, frame):
        stop["flag"] = True
        print("interrupt received, finishing the current epoch and checkpointing", file=sys.stderr)

    old_int = signal.signal(signal.SIGINT, _handler)
    old_term = signal.signal(signal.SIGTERM, _handler)
    try:
        result = train(cfg, args.out_dir, stop_flag=lambda: stop["flag"])
    finally:
        signal.signal(signal.SIGINT, old_int)
        signal.signal(signal.SIGTERM, old_term)

    if result.interrupted:
        print(f"interrupted after {len(result.run_log.records)} epochs; checkpoint written to {args.out_dir}")
    else:
        last = result.run_log.records[-1]
        print(
            f"done: {len(result.run_log.records)} epochs, "
            f"final test_acc {result.final_accuracy():.4f} (last-10 mean), "
            f"last epoch acc {last['test_acc']:.4f}"
        )
    return 0


def _cmd_evaluate(args) -> int:
    from .checkpoint import load_checkpoint
    from .config import config_from_dict

    checkpoint = load_checkpoint(args.checkpoint)
    if args.data is not None:
        dataset = load_csv(args.data)
    else:
        cfg = config_from_dict(checkpoint["config"])
        dataset = load_dataset(cfg)
    metrics = evaluate(checkpoint, dataset)
    print(json.dumps(metrics, indent=2))
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    results = ablate(cfg, seeds=seeds, out_dir=args.out_dir)
    failed = [r for r in results if r["error"] is not None]
    with open(Path(args.out_dir) / "ablation.txt", encoding="utf-8") as fh:
        print(fh.read(), end="")
    if failed:
        for r in failed:
            print(f"row {r['row']} seed {r['seed']} failed: {r['error']}", file=sys.stderr)
        return 4
    return 0


def _cmd_report(args) -> int:
    from .report import report

    written = report(args.run_dir, args.out_dir)
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="osssl", description=__doc__)
    _add_subcommands(parser)
    args = parser.parse_args(argv)
    handlers = {
        "generate-data": _cmd_generate_data,
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "ablate": _cmd_ablate,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
