"""Full reference experiment: generate, pretrain, self-improve, evaluate, report.

Equivalent to `retroloop run-all --config configs/reference.json`, kept as a
script so the default output location and worker count live in one place.

Usage:
    python scripts/run_reference_experiment.py [--out runs/reference] [--workers N]
"""

import argparse
import sys
from pathlib import Path

from retroloop.cli import main as cli_main

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(ROOT / "configs" / "reference.json"))
    parser.add_argument("--out", default=str(ROOT / "runs" / "reference"))
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()
    return cli_main(
        [
            "run-all",
            "--config",
            args.config,
            "--out",
            args.out,
            "--workers",
            str(args.workers),
        ]
    )


if __name__ == "__main__":
    sys.exit(main())
