"""Command-line interface.

Subcommands: simulate, separate, evaluate, sweep, spectrogram.  Exit codes:
0 on success, 2 on configuration/input errors, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import NumericalFailureError, RetmSepError

logger = logging.getLogger("retmsep")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retmsep",
        description="Blind multichannel speaker separation via relative "
                    "transfer matrices, with room simulation and SIR/SDR "
                    "evaluation.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="increase log verbosity (-v: info, -vv: debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, seed=False, rcond=False, channel=False, jobs=False):
        p.add_argument("--config", required=True, type=Path,
                       help="experiment configuration JSON")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (overrides config out_dir)")
        if seed:
            p.add_argument("--seed", type=int, default=None,
                           help="override the config seed")
        if rcond:
            p.add_argument("--rcond", type=float, default=None,
                           help="pseudoinverse truncation threshold")
        if channel:
            p.add_argument("--channel", type=int, default=None,
                           help="group-A output/evaluation channel index")
        if jobs:
            p.add_argument("--jobs", type=int, default=1,
                           help="parallel worker count")

    p_sim = sub.add_parser("simulate", help="render the scene to WAV files")
    add_common(p_sim, seed=True, jobs=True)

    p_sep = sub.add_parser("separate", help="estimate and subtract per target")
    add_common(p_sep, rcond=True, channel=True)

    p_eval = sub.add_parser("evaluate", help="score outputs against references")
    add_common(p_eval, channel=True)

    p_sweep = sub.add_parser("sweep", help="run the configured SNR/Q_A grid")
    add_common(p_sweep, seed=True, rcond=True, channel=True, jobs=True)

    p_spec = sub.add_parser("spectrogram", help="export a spectrogram from a WAV")
    p_spec.add_argument("input", type=Path, help="input WAV file")
    p_spec.add_argument("--out", type=Path, required=True, help="output file path")
    p_spec.add_argument("--channel", type=int, default=0)
    p_spec.add_argument("--format", choices=("png", "csv"), default="png")
    p_spec.add_argument("--floor-db", type=float, default=-120.0)
    p_spec.add_argument("--window-len", type=int, default=8192)
    p_spec.add_argument("--hop", type=int, default=0)
    return parser


def _load(args):
    cfg = load_config(args.config)
    if args.out is not None:
        cfg.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "rcond", None) is not None:
        cfg.rcond = args.rcond
    if getattr(args, "channel", None) is not None:
        cfg.eval_channel = args.channel
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except NumericalFailureError as exc:
        logger.error("numerical failure: %s", exc)
        return 3
    except (RetmSepError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 2


def _dispatch(args) -> int:
    from . import experiment

    if args.command == "simulate":
        cfg = _load(args)
        manifest = experiment.run_simulate(cfg)
        print(f"wrote {manifest}")
    elif args.command == "separate":
        cfg = _load(args)
        for path in experiment.run_separate(cfg):
            print(f"wrote {path}")
    elif args.command == "evaluate":
        cfg = _load(args)
        report = experiment.run_evaluate(cfg)
        print(report.format_table())
        print(f"wrote {Path(cfg.out_dir) / 'report.json'}")
    elif args.command == "sweep":
        cfg = _load(args)
        summary = experiment.run_sweep(cfg, jobs=args.jobs)
        print(f"wrote {summary}")
    elif args.command == "spectrogram":
        _export_spectrogram(args)
    return 0


def _export_spectrogram(args) -> None:
    from .metrics import export_spectrogram
    from .signal_core import StftParams, stft
    from .wavio import read_wav

    buffer = read_wav(args.input)
    window = min(args.window_len, 1 << (buffer.num_samples.bit_length() - 1))
    params = StftParams(window_len=window, hop=args.hop if args.hop else 0)
    spec = stft(buffer, params)
    export_spectrogram(spec, args.channel, args.out, fmt=args.format,
                       floor_db=args.floor_db)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    sys.exit(main())
