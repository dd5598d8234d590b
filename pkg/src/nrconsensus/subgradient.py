"""Asynchronous distributed subgradient baseline with pairwise averaging and alpha/t steps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import CostFunction


@dataclass(frozen=True)
class SubgradientParams:
    alpha: float = 1e-3
    # variant that adds cost values (plus sign) instead of subtracting gradients
    add_cost_values: bool = False

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")


@dataclass
class SubgradientNodeState:
    x: np.ndarray
    t: int = 1
    node: int = 0


@dataclass(frozen=True)
class SubgradientMessage:
    sender: int
    x: np.ndarray
    payload: np.ndarray  # gradient at x, or the cost value with add_cost_values

    def to_flat(self) -> list[float]:
        return [float(self.sender), *self.x.tolist(), *self.payload.tolist()]


def sg_initialize(x0, node: int = 0) -> SubgradientNodeState:
    return SubgradientNodeState(np.array(x0, dtype=float).reshape(-1), 1, node)


def sg_broadcast(s: SubgradientNodeState, cost: CostFunction, p: SubgradientParams | None = None) -> SubgradientMessage:
    if p is not None and p.add_cost_values:
        return SubgradientMessage(s.node, s.x, np.array([cost.value(s.x)]))
    return SubgradientMessage(s.node, s.x, cost.gradient(s.x))


def sg_receive(s: SubgradientNodeState, cost: CostFunction, p: SubgradientParams, msg: SubgradientMessage) -> None:
    step = p.alpha / s.t
    if p.add_cost_values:
        s.x = 0.5 * (msg.x + s.x) + step * (msg.payload[0] + cost.value(s.x))
    else:
        s.x = 0.5 * (msg.x + s.x) - step * (msg.payload + cost.gradient(s.x))
    s.t += 1
