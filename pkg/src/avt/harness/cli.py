"""Command line entry point: ``avt <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..audioseg import SegmentConfig, detect_segments, read_spectrogram
from ..complexity import parse_grid, report
from ..numerics import ConfigError
from .audit import AUDIT_LOSSES, audit_loss
from .checkpoint import load_checkpoint
from .config import VARIANTS, ExperimentConfig
from .data import Dataset
from .model import predict
from .train import accuracy, load_data, run_experiment


def _train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = Path(args.out) if args.out else Path(args.config).parent / "runs" / Path(args.config).stem
    summary = run_experiment(cfg, out, resume=not args.no_resume)
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


def _generate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    train, val = load_data(cfg)
    (val if args.split == "val" else train).save(args.out)
    print(f"wrote {args.split} split ({len(val if args.split == 'val' else train)} samples) to {args.out}")
    return 0


def _eval(args) -> int:
    params, meta, _ = load_checkpoint(args.checkpoint)
    cfg = ExperimentConfig.from_dict(meta["config"])
    variant = VARIANTS[meta["ablation"]]
    data = Dataset.load(args.data)
    probs = predict(params, cfg, variant, data.video, data.audio)
    result = {"ablation": variant.name, "step": meta.get("step"), "n": len(data), "accuracy": accuracy(probs, data.labels)}
    print(json.dumps(result, sort_keys=True))
    return 0


def _segment(args) -> int:
    spec = read_spectrogram(args.input)
    seg = detect_segments(spec, args.num_segments, SegmentConfig(args.window, args.order, args.window))
    text = json.dumps(seg.to_json())
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _complexity(args) -> int:
    sys.stdout.write(report(parse_grid(args.grid), dim=args.dim))
    return 0


def _gradcheck(args) -> int:
    ok = True
    for seed in range(args.seed, args.seed + args.seeds):
        res = audit_loss(args.loss, seed, tol=args.tol, max_coords=args.max_coords)
        ok &= res.passed
        print(f"{args.loss} seed={seed} {res.report} worst={res.worst_param}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avt", description="Audio-video bottleneck transformer toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train every configured ablation on synthetic XOR data")
    t.add_argument("--config", required=True, help="JSON config file")
    t.add_argument("--out", help="output directory (default: runs/<config name> next to the config)")
    t.add_argument("--no-resume", action="store_true", help="ignore existing checkpoints")
    t.set_defaults(fn=_train)

    g = sub.add_parser("generate", help="write the train or val split of the configured dataset as .npz")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--split", choices=("train", "val"), default="val")
    g.set_defaults(fn=_generate)

    e = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help=".npz written by `generate`")
    e.set_defaults(fn=_eval)

    s = sub.add_parser("segment", help="detect audio segments in a spectrogram file (.csv or binary)")
    s.add_argument("input")
    s.add_argument("--num-segments", type=int, default=50)
    s.add_argument("--window", type=int, default=5)
    s.add_argument("--order", type=int, default=2)
    s.add_argument("--out", help="write JSON here instead of stdout")
    s.set_defaults(fn=_segment)

    c = sub.add_parser("complexity", help="attention pair counts, merged vs bottleneck, as CSV")
    c.add_argument("--grid", required=True, help="e.g. M=16,100,N=8,100,L=4,K=1,4")
    c.add_argument("--dim", type=int, default=32)
    c.set_defaults(fn=_complexity)

    k = sub.add_parser("gradcheck", help="central-difference gradient audit of one loss")
    k.add_argument("--loss", required=True, choices=sorted(AUDIT_LOSSES))
    k.add_argument("--seeds", type=int, default=1)
    k.add_argument("--seed", type=int, default=0, help="first seed")
    k.add_argument("--tol", type=float, default=1e-4)
    k.add_argument("--max-coords", type=int, default=3, help="coordinates probed per parameter tensor")
    k.set_defaults(fn=_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    np.seterr(over="ignore", under="ignore")
    try:
        return args.fn(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
