"""Robust asynchronous Newton-Raphson consensus: per-node state and updates.

Everything is stored in the multivariate form: ``y`` is a vector, ``z`` a
symmetric matrix and the scalar ratio ``y / [z]_c`` becomes a linear solve
against the eigenvalue-floored ``z``. With one-dimensional costs the updates
reduce exactly to the scalar protocol.

Arrays held by a ``NodeState`` are never modified in place, so a broadcast
message and the receivers' ledgers may share them safely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._kernels import floored_solve
from .costs import CostFunction


class UnknownSenderError(KeyError):
    pass


class AsymmetricMatrixError(ValueError):
    pass


@dataclass(frozen=True)
class RanrcParams:
    epsilon: float = 1e-2
    c: float = 1e-6

    def __post_init__(self) -> None:
        if not 0 <= self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not self.c > 0:
            raise ValueError(f"threshold c must be positive, got {self.c}")


@dataclass
class NodeState:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    g: np.ndarray
    h: np.ndarray
    g_old: np.ndarray
    h_old: np.ndarray
    b_y: np.ndarray
    b_z: np.ndarray
    r_y: dict[int, np.ndarray] = field(default_factory=dict)
    r_z: dict[int, np.ndarray] = field(default_factory=dict)
    node: int = 0

    def copy(self) -> "NodeState":
        return NodeState(
            self.x.copy(), self.y.copy(), self.z.copy(), self.g.copy(), self.h.copy(),
            self.g_old.copy(), self.h_old.copy(), self.b_y.copy(), self.b_z.copy(),
            {k: v.copy() for k, v in self.r_y.items()},
            {k: v.copy() for k, v in self.r_z.items()},
            self.node,
        )

    def equals(self, other: "NodeState") -> bool:
        """Bitwise equality of every variable, ledgers included."""
        names = ("x", "y", "z", "g", "h", "g_old", "h_old", "b_y", "b_z")
        if any(not np.array_equal(getattr(self, k), getattr(other, k)) for k in names):
            return False
        if self.r_y.keys() != other.r_y.keys() or self.r_z.keys() != other.r_z.keys():
            return False
        return all(np.array_equal(self.r_y[k], other.r_y[k]) for k in self.r_y) and all(
            np.array_equal(self.r_z[k], other.r_z[k]) for k in self.r_z
        )


@dataclass(frozen=True)
class BroadcastMessage:
    sender: int
    b_y: np.ndarray
    b_z: np.ndarray

    def to_flat(self) -> list[float]:
        """``[sender, *b_y, *upper triangle of b_z row-major]``."""
        iu = np.triu_indices(self.b_y.size)
        return [float(self.sender), *self.b_y.tolist(), *self.b_z[iu].tolist()]

    @classmethod
    def from_flat(cls, values: Sequence[float]) -> "BroadcastMessage":
        m = len(values) - 1
        # m = n + n(n+1)/2
        n = int(round((-3 + np.sqrt(9 + 8 * m)) / 2))
        if n + n * (n + 1) // 2 != m:
            raise ValueError(f"{len(values)} values do not form a message")
        b_y = np.asarray(values[1 : 1 + n], dtype=float)
        b_z = np.zeros((n, n))
        b_z[np.triu_indices(n)] = values[1 + n :]
        b_z = b_z + np.triu(b_z, 1).T
        return cls(int(values[0]), b_y, b_z)


def initialize(cost: CostFunction, x0, in_neighbors: Iterable[int], node: int = 0) -> NodeState:
    x0 = np.asarray(x0, dtype=float).reshape(cost.dim)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial estimate must be finite")
    g, h = cost.newton_terms(x0)
    n = x0.size
    ins = sorted(in_neighbors)
    return NodeState(
        x=x0.copy(), y=g.copy(), z=h.copy(), g=g, h=h, g_old=g.copy(), h_old=h.copy(),
        b_y=np.zeros(n), b_z=np.zeros((n, n)),
        r_y={j: np.zeros(n) for j in ins},
        r_z={j: np.zeros((n, n)) for j in ins},
        node=node,
    )


def threshold(z: np.ndarray, c: float) -> np.ndarray:
    """Floor the eigenvalues of symmetric ``z`` at ``c`` (scalar ``max(z, c)`` when 1x1)."""
    z = np.asarray(z, dtype=float)
    if z.shape == (1, 1):
        return np.maximum(z, c)
    scale = max(1.0, float(np.abs(z).max()))
    if np.abs(z - z.T).max() > 1e-12 * scale:
        raise AsymmetricMatrixError("threshold needs a symmetric matrix")
    try:
        np.linalg.cholesky(z - c * np.eye(z.shape[0]))
        return z
    except np.linalg.LinAlgError:
        pass
    lam, q = np.linalg.eigh(z)
    out = (q * np.maximum(lam, c)) @ q.T
    return 0.5 * (out + out.T)


def _ratio(y: np.ndarray, z: np.ndarray, c: float) -> np.ndarray:
    # threshold(z, c)^-1 y, computed from one eigendecomposition
    return floored_solve(z, y, c)


def _move(s: NodeState, cost: CostFunction, p: RanrcParams) -> None:
    s.g_old = s.g
    s.h_old = s.h
    if p.epsilon != 0:
        s.x = (1 - p.epsilon) * s.x + p.epsilon * _ratio(s.y, s.z, p.c)
        s.g, s.h = cost.newton_terms(s.x)
    # epsilon = 0 leaves x bitwise unchanged, so g and h would be recomputed to the same values


def wake_up(s: NodeState, cost: CostFunction, p: RanrcParams, out_degree: int) -> BroadcastMessage:
    """Local update before transmission; mutates ``s`` and returns the broadcast."""
    if out_degree < 1:
        raise ValueError("a broadcasting node needs at least one out-neighbor")
    k = out_degree + 1
    s.y = (s.y + s.g - s.g_old) / k
    s.z = (s.z + s.h - s.h_old) / k
    _move(s, cost, p)
    s.b_y = s.b_y + s.y
    s.b_z = s.b_z + s.z
    return BroadcastMessage(s.node, s.b_y, s.b_z)


def receive(s: NodeState, cost: CostFunction, p: RanrcParams, msg: BroadcastMessage) -> None:
    """Absorb a delivered broadcast into the receiver's own state."""
    j = msg.sender
    if j not in s.r_y:
        raise UnknownSenderError(f"node {j} is not an in-neighbor")
    s.y = msg.b_y - s.r_y[j] + s.y + s.g - s.g_old
    s.z = msg.b_z - s.r_z[j] + s.z + s.h - s.h_old
    _move(s, cost, p)
    s.r_y[j] = msg.b_y
    s.r_z[j] = msg.b_z


def phi(points: Sequence[tuple[np.ndarray, CostFunction]]) -> np.ndarray:
    """Network Newton target (sum H_i)^-1 sum (H_i x_i - grad_i) for frozen estimates."""
    if not points:
        raise ValueError("phi needs at least one node")
    num = None
    den = None
    for x, cost in points:
        g, h = cost.newton_terms(np.asarray(x, dtype=float))
        num = g if num is None else num + g
        den = h if den is None else den + h
    try:
        if np.linalg.cond(den) > 1e14:
            raise np.linalg.LinAlgError("singular")
        return np.linalg.solve(den, num)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("sum of Hessians is singular") from None
