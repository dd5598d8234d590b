"""Centralized reference solvers for the sum of the local costs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .costs import CostFunction, SmoothHuberRegressionCost


class OracleNotConverged(RuntimeError):
    def __init__(self, message: str, last_iterate: np.ndarray) -> None:
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class OracleResult:
    x_star: np.ndarray
    f_star: float
    newton_decrement_final: float
    iterations: int

    def to_text(self) -> str:
        return (
            f"x_star={','.join(f'{v:.17g}' for v in self.x_star)}\n"
            f"f_star={self.f_star:.17g}\n"
            f"newton_decrement={self.newton_decrement_final:.17g}\n"
            f"iterations={self.iterations}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "OracleResult":
        kv = dict(line.split("=", 1) for line in text.strip().splitlines())
        return cls(
            np.array([float(v) for v in kv["x_star"].split(",")]),
            float(kv["f_star"]),
            float(kv["newton_decrement"]),
            int(kv["iterations"]),
        )

    def write(self, path: str | Path) -> None:
        from .engine import atomic_write_text

        atomic_write_text(path, self.to_text())


def _sum(costs: Sequence[CostFunction], x: np.ndarray):
    f = 0.0
    g = np.zeros_like(x)
    h = np.zeros((x.size, x.size))
    for c in costs:
        f += c.value(x)
        gi, hi = c.derivatives(x)
        g += gi
        h += hi
    return f, g, h


def newton_minimize(
    costs: Sequence[CostFunction],
    x0=None,
    tol: float = 1e-9,
    armijo: float = 0.25,
    shrink: float = 0.5,
    max_iter: int = 200,
) -> OracleResult:
    """Damped Newton with backtracking; stops when g^T H^-1 g < tol."""
    if not costs:
        raise ValueError("need at least one cost")
    dim = costs[0].dim
    if any(c.dim != dim for c in costs):
        raise ValueError("costs disagree on dimension")
    x = np.zeros(dim) if x0 is None else np.array(x0, dtype=float).reshape(dim)
    for it in range(max_iter + 1):
        fx, g, h = _sum(costs, x)
        d = -np.linalg.solve(h, g)
        dec = float(-(g @ d))
        if dec < tol:
            return OracleResult(x, fx, dec, it)
        if it == max_iter:
            break
        s = 1.0
        slope = float(g @ d)
        while sum(c.value(x + s * d) for c in costs) > fx + armijo * s * slope:
            s *= shrink
            if s < 1e-20:
                raise OracleNotConverged("line search failed", x)
        x = x + s * d
    raise OracleNotConverged(f"Newton decrement still {dec:.3g} after {max_iter} iterations", x)


def hessian_upper_bound(costs: Sequence[CostFunction], dim: int) -> float:
    total = np.zeros((dim, dim))
    for c in costs:
        total += c.curvature_bound()
    return float(np.linalg.eigvalsh(total)[-1])


def merge_huber(costs: Sequence[CostFunction]) -> list[CostFunction]:
    """Collapse smooth-Huber costs sharing beta and ridge mode into one stacked cost with the same sum."""
    groups: dict[tuple[float, bool], list[SmoothHuberRegressionCost]] = {}
    out: list[CostFunction] = []
    for c in costs:
        if isinstance(c, SmoothHuberRegressionCost):
            groups.setdefault((c.beta, c.ridge_intercept), []).append(c)
        else:
            out.append(c)
    for (beta, ridge_intercept), grp in groups.items():
        out.append(
            SmoothHuberRegressionCost(
                np.vstack([c.features for c in grp]),
                np.concatenate([c.targets for c in grp]),
                beta,
                sum(c.gamma for c in grp),
                ridge_intercept,
            )
        )
    return out


@dataclass(frozen=True)
class DescentResult:
    x: np.ndarray
    iterations: int
    grad_norm: float


def gradient_descent_minimize(
    costs: Sequence[CostFunction],
    x0=None,
    grad_tol: float = 1e-9,
    step: float | None = None,
    accelerate: bool = True,
    patience: int = 5000,
    max_iter: int = 2_000_000,
) -> DescentResult:
    """Fixed-step first-order minimizer, independent of any second-order machinery.

    The step is ``1 / L`` with ``L`` a global bound on the largest Hessian
    eigenvalue of the summed cost. With ``accelerate`` it uses Nesterov
    momentum, restarted whenever the momentum direction stops descending.

    Stops at ``grad_tol``, or once the best gradient norm has not improved for
    ``patience`` steps (rounding floor); the caller judges ``grad_norm``.
    """
    costs = merge_huber(costs)
    dim = costs[0].dim
    x = np.zeros(dim) if x0 is None else np.array(x0, dtype=float).reshape(dim)
    if step is None:
        step = 1.0 / hessian_upper_bound(costs, dim)
    x_prev = x.copy()
    best, best_x, best_it = np.inf, x, 0
    k = 0
    for it in range(max_iter):
        v = x + (k / (k + 3)) * (x - x_prev) if accelerate else x
        g = sum(c.gradient(v) for c in costs)
        gn = float(np.linalg.norm(g))
        if gn < best:
            best, best_x, best_it = gn, v, it
        if gn <= grad_tol or it - best_it > patience:
            return DescentResult(best_x, it, best)
        x_prev, x = x, v - step * g
        k += 1
        if accelerate and g @ (x - x_prev) > 0:
            k = 0
    raise OracleNotConverged(f"gradient norm {best:.3g} after {max_iter} steps", best_x)


def expected_fixed_point_perturbation(
    costs: Sequence[CostFunction],
    graph,
    perturbations: Sequence[tuple],
    epsilon: float = 0.05,
    c: float = 1e-6,
    x0=None,
    seed: int = 0,
    loss_p: float = 0.0,
    check_every: int = 2000,
    max_events: int = 400_000,
    conv_tol: float = 1e-11,
) -> float:
    """Distance between x* and the point a perturbed-initialization raNRC run settles at.

    ``perturbations[i] = (dy, dz)`` is added to node i's initial ``y`` and
    ``z`` (``g_old``/``h_old`` are left alone). Raises ``OracleNotConverged``
    if the estimates have not agreed and stopped moving within ``max_events``.
    """
    from .engine import BernoulliLoss, RanrcNetwork, UniformRandomScheduler, _rng, simulate
    from .ranrc import RanrcParams

    dim = costs[0].dim
    # tight tolerance: the offsets being measured can be far below the default stopping point
    x_star = newton_minimize(costs, tol=1e-18).x_star
    net = RanrcNetwork(graph, costs, RanrcParams(epsilon, c), np.zeros(dim) if x0 is None else x0)
    for s, (dy, dz) in zip(net.states, perturbations):
        s.y = s.y + np.asarray(dy, dtype=float).reshape(dim)
        s.z = s.z + np.asarray(dz, dtype=float).reshape(dim, dim)
    sched = UniformRandomScheduler(graph.n, _rng(seed, "scheduler"))
    loss = BernoulliLoss(loss_p, _rng(seed, "loss"))
    prev = net.estimates()
    done = 0
    while done < max_events:
        simulate(net, sched, loss, check_every, x_star)
        done += check_every
        xs = net.estimates()
        spread = float(np.abs(xs - xs.mean(axis=0)).max())
        moved = float(np.abs(xs - prev).max())
        prev = xs
        if spread <= conv_tol and moved <= conv_tol:
            return float(np.linalg.norm(xs.mean(axis=0) - x_star))
    raise OracleNotConverged(f"no fixed point within {max_events} events", prev.mean(axis=0))
