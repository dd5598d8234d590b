"""Housing epsilon sweep, loss sweep and baseline comparison from the shipped configs.

    python3 scripts/housing_experiments.py [--out DIR] [--events N]

Writes trajectory CSVs and manifest.json into DIR (default ./runs/housing) and
prints one line per run plus the comparison verdict.
"""

import argparse
from pathlib import Path

from nrconsensus import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/housing"))
    ap.add_argument("--events", type=int, default=None, help="override every config's event budget")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    extra = ["--out", str(args.out)] + (["--events", str(args.events)] if args.events else [])
    steps = [
        ["sweep-eps", str(CONFIGS / "housing_eps.ini"), "--workers", str(args.workers)],
        ["sweep-loss", str(CONFIGS / "housing_loss.ini"), "--workers", str(args.workers)],
        ["compare", str(CONFIGS / "housing_compare.ini")],
    ]
    for step in steps:
        print("$ nrconsensus", " ".join(step))
        code = cli.main(step + extra)
        if code:
            return code
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
