"""Command-line entry point: ``lanejoint <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import commands
from .config import MODES, load_config
from .errors import LaneError
from .lanefile import atomic_write, dumps_frames, load_frames
from .synth import KINDS, synth_dataset, synth_predictions, synth_scene

log = logging.getLogger("lanejoint")


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(args, text: str) -> None:
    if args.output:
        atomic_write(args.output, text)
    else:
        sys.stdout.write(text)


def _frames(path, cfg):
    return load_frames(path, cfg.num_classes)


def run_fit(args, cfg):
    _emit(args, dump_json(commands.cmd_fit(cfg, _frames(args.input, cfg))))


def run_match(args, cfg):
    report = commands.cmd_match(cfg, _frames(args.input, cfg), _frames(args.pred, cfg))
    _emit(args, dump_json(report))


def run_transform(args, cfg):
    frames, summary = commands.cmd_transform(cfg, _frames(args.input, cfg),
                                             apply_range=not args.no_range_filter)
    text = dumps_frames(frames)
    if args.report:
        atomic_write(args.report, dump_json(summary))
    _emit(args, text)


def run_eval(args, cfg):
    report = commands.cmd_eval(cfg, _frames(args.input, cfg), _frames(args.pred, cfg))
    text = dump_json(report)
    if args.output:
        atomic_write(args.output, text)
        sys.stdout.write(commands.format_eval(report))
    else:
        sys.stdout.write(text)


def run_compare(args, cfg):
    report, curves_csv = commands.cmd_compare_models(cfg, _frames(args.input, cfg))
    text = dump_json(report)
    if args.plot_data:
        atomic_write(args.plot_data, curves_csv)
    _emit(args, text)


def run_synth(args, cfg):
    if args.kind == "mixed":
        frames = synth_dataset(args.count, args.seed, noise_sigma=args.noise)
    else:
        frames = [synth_scene(args.kind, args.noise, args.seed + i,
                              frame_id=f"{args.kind}-{args.seed + i}")
                  for i in range(args.count)]
    if args.predictions:
        frames = [synth_predictions(f, args.seed + i, num_classes=cfg.num_classes)
                  for i, f in enumerate(frames)]
    _emit(args, dumps_frames(frames))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (overrides the mode preset)")
    common.add_argument("--mode", choices=MODES, help="dataset preset (default: openlane)")
    common.add_argument("--output", help="output path (default: stdout)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lanejoint", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", parents=[common], help="key points + Bezier controls per lane")
    s.add_argument("--input", required=True)
    s.set_defaults(func=run_fit)

    s = sub.add_parser("match", parents=[common], help="optimal assignment and loss per frame")
    s.add_argument("--input", required=True, help="ground-truth lane file")
    s.add_argument("--pred", required=True, help="prediction lane file")
    s.set_defaults(func=run_match)

    s = sub.add_parser("transform", parents=[common], help="surround-view to front-view lanes")
    s.add_argument("--input", required=True)
    s.add_argument("--report", help="write a JSON summary here")
    s.add_argument("--no-range-filter", action="store_true",
                   help="skip cropping to the perception range")
    s.set_defaults(func=run_transform)

    s = sub.add_parser("eval", parents=[common], help="F-Score, AP and category accuracy")
    s.add_argument("--input", required=True, help="ground-truth lane file")
    s.add_argument("--pred", required=True, help="prediction lane file")
    s.set_defaults(func=run_eval)

    s = sub.add_parser("compare-models", parents=[common],
                       help="polynomial vs interpolation vs Bezier modeling error")
    s.add_argument("--input", required=True)
    s.add_argument("--plot-data", help="write model curves as CSV here")
    s.set_defaults(func=run_compare)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic lane frames")
    s.add_argument("--kind", choices=KINDS + ("mixed",), default="mixed")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--predictions", action="store_true",
                   help="emit noisy detections of the scenes instead of ground truth")
    s.set_defaults(func=run_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.mode)
        args.func(args, cfg)
    except LaneError as exc:
        print(f"lanejoint {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
