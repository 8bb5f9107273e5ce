"""Command-line entry point: ``anchored-ood {train,eval,ablate,ntk,sweep,metrics}``.

Exit codes: 0 success, 2 configuration error, 3 runtime or numerical error.
Timestamps go to ``run.log`` in the output directory and nowhere else.
"""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import config as config_mod
from . import experiments
from .errors import AnchoredOODError, ConfigError

log = logging.getLogger("anchored_ood")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
VERBS = ("train", "eval", "ablate", "ntk", "sweep", "metrics")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchored-ood", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--out", type=Path, help="output directory (default: [output] dir)")
        if verb == "metrics":
            p.add_argument("--scores", type=Path, required=True, help="score CSV produced by eval")
            p.add_argument("--config", type=Path, help="unused; accepted for symmetry")
            continue
        p.add_argument("--config", type=Path, required=True)
        p.add_argument("--seed", type=int, help="override [run] seed")
        if verb == "eval":
            p.add_argument("--checkpoint", type=Path, help="default: <out>/model.ckpt")
    return parser


def _sidecar(out: Path, verb: str, argv) -> None:
    out.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    with open(out / "run.log", "a") as fh:
        fh.write(f"{stamp} {' '.join(argv)}\n")


def run(args, argv) -> int:
    if args.verb == "metrics":
        out = args.out or args.scores.parent
        paths = experiments.run_metrics(args.scores, out)
        sys.stdout.write(Path(paths["table"]).read_text())
        _sidecar(out, args.verb, argv)
        return EXIT_OK

    cfg = config_mod.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = args.out or Path(cfg["output"]["dir"])
    if args.verb == "train":
        paths = experiments.run_train(cfg, out)
    elif args.verb == "eval":
        ckpt = args.checkpoint or out / "model.ckpt"
        paths = experiments.run_eval(cfg, ckpt, out)
        sys.stdout.write(Path(paths["table"]).read_text())
    elif args.verb == "ablate":
        paths = experiments.run_ablate(cfg, out)
    elif args.verb == "ntk":
        paths = experiments.run_ntk(cfg, out)
    else:
        paths = experiments.run_sweep(cfg, out)
    for name, path in paths.items():
        log.info("wrote %s: %s", name, path)
    _sidecar(out, args.verb, argv)
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return run(args, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AnchoredOODError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
