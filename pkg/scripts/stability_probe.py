"""Which Housing settings raNRC survives: cost scale beta, activation order and loss model.

    python3 scripts/stability_probe.py [--events N] [--epsilon E]

Each row is one run from x0 = 0 and reports whether the run blew up, the event
at which the mean error first reached 1% of its initial value, and the final
mean error. The shipped Housing configs use the last block (beta = 10,
round-robin, at most 2 consecutive losses per edge).
"""

import argparse
import itertools

import numpy as np

from nrconsensus import engine
from nrconsensus.oracle import newton_minimize


def probe(cfg: engine.ExperimentConfig, cache: dict) -> str:
    key = (cfg.beta, cfg.gamma)
    if key not in cache:
        problem = engine.build_problem(cfg)
        cache[key] = (problem, newton_minimize(problem.costs, np.zeros(problem.dim)).x_star)
    problem, x_star = cache[key]
    rec = engine.run(cfg, x_star, problem)
    final = rec.mean_err[-1]
    blown = rec.diverged_at is not None or not np.isfinite(final) or final > rec.mean_err[0]
    return (
        f"beta={cfg.beta:<5g} {cfg.scheduler:<15} {cfg.loss:<9} p={cfg.loss_p:<4g} "
        f"{'UNSTABLE' if blown else 'ok':<9} to-1%={rec.events_to_threshold()} final={final:.2e}"
    )


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=50_000)
    ap.add_argument("--epsilon", type=float, default=1e-2)
    args = ap.parse_args()
    base = engine.ExperimentConfig(cost="housing", epsilon=args.epsilon, events=args.events, loss_L=2)
    cache: dict = {}
    grid = itertools.product(
        (1.0, 10.0),
        (("uniform_random", "bernoulli"), ("round_robin", "bernoulli"), ("round_robin", "bounded")),
        (0.0, 0.2, 0.4, 0.6),
    )
    for beta, (sched, loss), p in grid:
        print(probe(base.replace(beta=beta, scheduler=sched, loss=loss, loss_p=p), cache), flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
