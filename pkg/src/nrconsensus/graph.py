"""Fixed directed communication topologies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


class GraphError(ValueError):
    pass


class EndpointOutOfRange(GraphError):
    pass


class SelfLoopError(GraphError):
    pass


class DuplicateEdgeError(GraphError):
    pass


@dataclass(frozen=True)
class DirectedGraph:
    """Digraph on nodes ``0..n-1``; edge ``(i, j)`` means ``j`` receives from ``i``."""

    n: int
    edges: frozenset[tuple[int, int]]
    _out: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _in: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        out: list[list[int]] = [[] for _ in range(self.n)]
        inn: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            out[i].append(j)
            inn[j].append(i)
        object.__setattr__(self, "_out", tuple(tuple(sorted(o)) for o in out))
        object.__setattr__(self, "_in", tuple(tuple(sorted(o)) for o in inn))

    def out_neighbors(self, i: int) -> tuple[int, ...]:
        return self._out[i]

    def in_neighbors(self, i: int) -> tuple[int, ...]:
        return self._in[i]

    def out_degree(self, i: int) -> int:
        return len(self._out[i])

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def is_symmetric(self) -> bool:
        return all((j, i) in self.edges for i, j in self.edges)


def from_edge_list(n: int, edges: Iterable[tuple[int, int]]) -> DirectedGraph:
    if n < 1:
        raise GraphError(f"node count must be positive, got {n}")
    seen: set[tuple[int, int]] = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n):
            raise EndpointOutOfRange(f"edge ({i}, {j}) has an endpoint outside 0..{n - 1}")
        if i == j:
            raise SelfLoopError(f"self-loop at node {i}")
        if (i, j) in seen:
            raise DuplicateEdgeError(f"duplicate edge ({i}, {j})")
        seen.add((i, j))
    return DirectedGraph(n, frozenset(seen))


def _reachable(g: DirectedGraph, start: int, reverse: bool = False) -> set[int]:
    nbrs = g.in_neighbors if reverse else g.out_neighbors
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in nbrs(u):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def is_strongly_connected(g: DirectedGraph) -> bool:
    # node 0 reaches everyone and everyone reaches node 0
    if g.n == 1:
        return True
    return len(_reachable(g, 0)) == g.n and len(_reachable(g, 0, reverse=True)) == g.n


def random_geometric_digraph(n: int, radius: float, rng: np.random.Generator) -> DirectedGraph:
    """Uniform points in the unit square, both directed edges between points within ``radius``."""
    if not 0 < radius <= math.sqrt(2) + 1e-12:
        raise GraphError(f"radius must lie in (0, sqrt(2)], got {radius}")
    pts = rng.random((n, 2))
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    edges = [(i, j) for i in range(n) for j in range(n) if i != j and dist[i, j] <= radius]
    return DirectedGraph(n, frozenset(edges))


def connected_geometric_digraph(
    n: int, radius: float, seed: int, max_tries: int = 10_000
) -> tuple[DirectedGraph, int]:
    """Rejection-sample geometric graphs with seeds ``seed, seed+1, ...`` until strongly connected.

    Returns the graph and the seed that produced it.
    """
    for k in range(max_tries):
        g = random_geometric_digraph(n, radius, np.random.default_rng(seed + k))
        if is_strongly_connected(g):
            return g, seed + k
    raise GraphError(f"no strongly connected sample in {max_tries} tries (n={n}, radius={radius})")


def save_edge_list(g: DirectedGraph, path: str | Path) -> None:
    lines = [f"n={g.n}"] + [f"{i} {j}" for i, j in g.sorted_edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_edge_list(path: str | Path) -> DirectedGraph:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("n="):
        raise GraphError(f"{path}: first line must be 'n=<N>'")
    n = int(lines[0][2:])
    edges = []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 2:
            raise GraphError(f"{path}:{lineno}: expected 'i j', got {ln!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return from_edge_list(n, edges)
