#!/usr/bin/env python3
"""Run the full pipeline end to end: data, pretraining, the three-mode
ablation, interpolation diagnostics, and the summary report.

Equivalent to chaining the CLI subcommands; handy for a one-shot
reproduction. Pass dotted overrides after the flags, e.g.:

    python3 scripts/run_experiment.py --output-dir out train.iterations=450
"""

import argparse
import os
import sys

from smile_lab import cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("-c", "--config", default=None,
                        help="YAML experiment config")
    parser.add_argument("--output-dir", default=None,
                        help="artifact directory (defaults to config value)")
    parser.add_argument("--skip-ablation", action="store_true",
                        help="train only the configured mode")
    parser.add_argument("overrides", nargs="*",
                        help="dotted overrides, e.g. train.mode=SMILE")
    args = parser.parse_args()

    if args.output_dir:
        os.environ[cli.ENV_OUTPUT_DIR] = args.output_dir

    steps = ["gen-data", "pretrain"]
    steps.append("train" if args.skip_ablation else "ablate")
    steps += ["train", "diagnose", "report"] if not args.skip_ablation \
        else ["diagnose", "report"]

    base = ["-c", args.config] if args.config else []
    for step in steps:
        print(f"==> {step}")
        code = cli.main(base + [step, *args.overrides])
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
