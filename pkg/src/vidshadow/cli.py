"""Command line entry point: ``python -m vidshadow <command> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import load_config


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="run configuration JSON")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. --set optimizer.lr=1e-4 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidshadow", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a dataset and write a checkpoint")
    _add_config(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write a JSON report")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--csv", type=Path, help="also write per-frame metrics as CSV")
    p.add_argument("--split", default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    for name, helptext in (("ablate-temporal", "compare tokenized, pixel and no temporal modelling"),
                           ("ablate-losses", "compare the mask, mask+edge and full loss stacks")):
        p = sub.add_parser(name, help=helptext)
        _add_config(p)

    p = sub.add_parser("preprocess-masks", help="write soft penumbra masks and edge masks")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--kernel", type=int, default=3)

    p = sub.add_parser("synth-data", help="generate a synthetic shadow video dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--videos", type=int, default=4)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--split", default="train")
    return parser


def run(args) -> dict:
    # deferred so that `--help` does not pay for importing torch
    from . import train as harness
    from .data import scan_dataset, synth_shadow_videos

    if args.command == "train":
        cfg = load_config(args.config, args.overrides)
        result = harness.train(cfg)
        return {"checkpoint": str(result.checkpoint), "steps": len(result.log),
                "final_loss": result.log[-1]["total"] if result.log else None,
                "parameter_counts": result.parameter_counts}
    if args.command == "eval":
        cfg = None
        if args.overrides:
            from .checkpoint import read_manifest
            from .config import apply_overrides, from_dict
            saved = read_manifest(args.ckpt)["extra"].get("run_config") or {}
            cfg = from_dict(apply_overrides(saved, args.overrides))
        report, _, _ = harness.evaluate_checkpoint(args.ckpt, args.data, cfg, args.split)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(report.to_dict(), indent=1))
        if args.csv:
            _write_csv(args.csv, report.per_frame)
        return {"report": str(args.out), **report.summary()}
    if args.command == "ablate-temporal":
        return harness.ablate_temporal(load_config(args.config, args.overrides))
    if args.command == "ablate-losses":
        return harness.ablate_losses(load_config(args.config, args.overrides))
    if args.command == "preprocess-masks":
        n = harness.preprocess_masks(scan_dataset(args.data, args.split), args.out, args.kernel)
        return {"masks": n, "out": str(args.out)}
    if args.command == "synth-data":
        index = synth_shadow_videos(args.out, args.videos, args.frames, args.size, args.size,
                                    seed=args.seed, split=args.split)
        return {"videos": len(index), "frames": index.n_frames, "out": str(args.out)}
    raise ValueError(f"unknown command {args.command!r}")


def _write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["video", "frame"])
        writer.writeheader()
        writer.writerows(rows)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run(args)
    except Exception as exc:  # reported as machine-readable JSON
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        step = getattr(exc, "step", None)
        if step is not None:
            err.update(step=step, breakdown=exc.breakdown)
        print(json.dumps(err), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
