"""Linear-rate check on scalar quadratics: fit log mean error against events.

    python3 scripts/quadratic_tail.py [--events N] [--csv PATH]
"""

import argparse
from pathlib import Path

import numpy as np

from nrconsensus import cli, engine
from nrconsensus.oracle import newton_minimize

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=200_000)
    ap.add_argument("--csv", type=Path, default=None)
    args = ap.parse_args()
    cfg = cli.load_config(CONFIGS / "quadratic.ini").experiment.replace(events=args.events)
    problem = engine.build_problem(cfg)
    x_star = newton_minimize(problem.costs, np.zeros(problem.dim)).x_star
    rec = engine.run(cfg, x_star, problem)
    if args.csv:
        rec.write_csv(args.csv)
    e0 = rec.mean_err[0]
    for lo in (1e-9, 1e-10, 1e-11):
        slope, r2, npts = engine.log_linear_tail_fit(rec.mean_err, 1e-2 * e0, lo)
        print(f"window 1e-2*e0 .. {lo:g}: slope {slope:.3e} per event, R^2 {r2:.4f}, {npts} points")
    hit = np.flatnonzero(rec.max_err <= 1e-8)
    print(f"all nodes within 1e-8 from event {hit[0] if hit.size else None}; final max error {rec.max_err[-1]:.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
