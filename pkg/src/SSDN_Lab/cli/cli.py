# CLI Entry Point
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from yaspin import yaspin

import SSDN_Lab
from ..data import DEFAULT_CONFIG
from ..errors import SSDNError
from .config import KINDS, parse_config
from .runner import run

HELP = {
    "train": "train one model per seed and evaluate it on the clean test set",
    "eval": "train, then evaluate on the clean test set and every configured corruption",
    "sensitivity": "block-freeze fine-tuning sensitivity with CKA and a seed control band",
    "ablation": "train and evaluate the seven C0/G1/G2 bridge placements",
    "alphas": "project the signal-bridge coefficients of clean and shifted test data",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssdn-lab", description=f"SSDN Lab v{SSDN_Lab.__version__}: self-supervised dynamic networks"
    )
    commands = parser.add_subparsers(dest="command", metavar="{" + ",".join(KINDS) + "}")
    commands.required = True
    for kind in KINDS:
        sub = commands.add_parser(kind, help=HELP[kind])
        sub.add_argument("--config", type=Path, help="YAML experiment configuration (packaged defaults when omitted)")
        sub.add_argument("--out", type=Path, help="output directory; must not exist")
        sub.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        sub.add_argument("--quiet", action="store_true", help="no progress output")
    return parser


class _Silent:
    def ok(self, text: str) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def main(argv: Optional[List[str]] = None) -> int:
    """
    SSDN Lab Entry Point
    """
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        spinner = _Silent() if args.quiet else yaspin("Validating configuration...", color="yellow")
        with spinner as sp:
            if args.config is not None:
                text, base_dir = args.config.read_text(encoding="utf-8"), args.config.parent
            else:
                text, base_dir = DEFAULT_CONFIG.read_text(encoding="utf-8"), None
            config = parse_config(text, kind=args.command, base_dir=base_dir)
            if args.seed is not None:
                config = config.with_overrides(seeds=(args.seed,))
            sp.ok(f"✔ SSDN Lab v{SSDN_Lab.__version__}: {config.kind}, seeds {list(config.seeds)}")
    except (SSDNError, OSError) as e:
        print(f"ssdn-lab: error: {e}", file=sys.stderr)
        return 1
    return run(config, args.out, quiet=args.quiet)
