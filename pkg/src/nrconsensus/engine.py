"""Deterministic broadcast-event simulator.

Simulated time is the global event counter. At event ``t`` the scheduler
picks one node, that node runs its wake-up update and broadcasts, and the
loss model decides per out-neighbor (ascending id) whether the packet
arrives. Delivered packets are processed immediately, inside the same event.

Every random stream is seeded from the master seed through ``derive_seed``
so that a run is a pure function of its configuration.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import costs as costs_mod
from .costs import CostFunction
from .graph import (
    DirectedGraph,
    connected_geometric_digraph,
    from_edge_list,
    is_strongly_connected,
    load_edge_list,
)
from .ranrc import NodeState, RanrcParams, initialize, receive, wake_up
from .subgradient import SubgradientParams, sg_broadcast, sg_initialize, sg_receive

_CHUNK = 4096


class ConfigError(ValueError):
    pass


class NotStronglyConnected(RuntimeError):
    pass


def derive_seed(master: int, tag: str, index: int = 0) -> int:
    """First 8 bytes (big endian) of sha256("<master>:<tag>:<index>")."""
    digest = hashlib.sha256(f"{master}:{tag}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _rng(master: int, tag: str, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, tag, index)))


# ---------------------------------------------------------------- schedulers


class RoundRobinScheduler:
    """Node ``t mod N`` fires at event ``t``; every node fires once per window of N events."""

    kind = "round_robin"

    def __init__(self, n: int) -> None:
        self.n = n
        self.t = 0

    def next(self) -> int:
        self.t += 1
        return self.t % self.n


class UniformRandomScheduler:
    kind = "uniform_random"

    def __init__(self, n: int, rng: np.random.Generator) -> None:
        self.n = n
        self._rng = rng
        self._buf: list[int] = []
        self._pos = 0

    def next(self) -> int:
        if self._pos == len(self._buf):
            self._buf = self._rng.integers(self.n, size=_CHUNK).tolist()
            self._pos = 0
        i = self._buf[self._pos]
        self._pos += 1
        return i


# ---------------------------------------------------------------- loss models


class NoLoss:
    kind = "none"

    def delivered(self, sender: int, receiver: int) -> bool:
        return True


class BernoulliLoss:
    """Each (broadcast, receiver) delivery fails independently with probability ``p``."""

    kind = "bernoulli"

    def __init__(self, p: float, rng: np.random.Generator) -> None:
        if not 0 <= p < 1:
            raise ConfigError(f"loss probability must lie in [0, 1), got {p}")
        self.p = p
        self._rng = rng
        self._buf: list[float] = []
        self._pos = 0

    def delivered(self, sender: int, receiver: int) -> bool:
        if self._pos == len(self._buf):
            self._buf = self._rng.random(_CHUNK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u >= self.p


def _max_cyclic_run(pattern: Sequence[bool]) -> int:
    if all(pattern):
        return math.inf  # type: ignore[return-value]
    doubled = list(pattern) * 2
    best = run = 0
    for fail in doubled:
        run = run + 1 if fail else 0
        best = max(best, run)
    return best


class BoundedLoss:
    """At most ``L`` consecutive failures on any directed edge.

    With a ``pattern`` (True = lost) each edge cycles through it, starting at
    an offset equal to the edge's rank in sorted order. Without one, losses are
    Bernoulli(``p``) except that a packet is forced through after ``L``
    consecutive failures on its edge.
    """

    kind = "bounded"

    def __init__(
        self,
        L: int,
        rng: np.random.Generator,
        p: float = 0.5,
        pattern: Sequence[bool] | None = None,
        edges: Sequence[tuple[int, int]] = (),
    ) -> None:
        if L < 0:
            raise ConfigError("L must be nonnegative")
        if pattern is not None:
            pattern = [bool(v) for v in pattern]
            if not pattern or _max_cyclic_run(pattern) > L:
                raise ConfigError(f"pattern has more than {L} consecutive losses")
        self.L = L
        self.pattern = pattern
        self._bern = BernoulliLoss(p, rng)
        self._offset = {e: k for k, e in enumerate(sorted(edges))}
        self._attempts: dict[tuple[int, int], int] = {}
        self._run: dict[tuple[int, int], int] = {}

    def delivered(self, sender: int, receiver: int) -> bool:
        e = (sender, receiver)
        if self.pattern is not None:
            k = self._attempts.get(e, 0)
            self._attempts[e] = k + 1
            fail = self.pattern[(k + self._offset.get(e, 0)) % len(self.pattern)]
        else:
            fail = not self._bern.delivered(sender, receiver)
            if self._run.get(e, 0) >= self.L:
                fail = False
        self._run[e] = self._run.get(e, 0) + 1 if fail else 0
        return not fail


class ScriptedLoss:
    """Losses listed explicitly as ``(event, sender, receiver)`` triples; used for scripted scenarios."""

    kind = "scripted"

    def __init__(self, drops: set[tuple[int, int, int]]) -> None:
        self.drops = set(drops)
        self.event = 0

    def delivered(self, sender: int, receiver: int) -> bool:
        return (self.event, sender, receiver) not in self.drops


class ScriptedScheduler:
    kind = "scripted"

    def __init__(self, order: Sequence[int]) -> None:
        self.order = list(order)
        self.t = 0

    def next(self) -> int:
        i = self.order[self.t % len(self.order)]
        self.t += 1
        return i


# ---------------------------------------------------------------- networks


class RanrcNetwork:
    """All node states of one raNRC run plus the broadcast/deliver primitives."""

    def __init__(self, graph: DirectedGraph, costs: Sequence[CostFunction], params: RanrcParams, x0) -> None:
        if len(costs) != graph.n:
            raise ConfigError(f"{len(costs)} costs for {graph.n} nodes")
        self.graph = graph
        self.costs = list(costs)
        self.params = params
        self.states: list[NodeState] = [
            initialize(c, x0, graph.in_neighbors(i), node=i) for i, c in enumerate(self.costs)
        ]
        self._deg = [graph.out_degree(i) for i in range(graph.n)]

    def broadcast(self, i: int):
        return wake_up(self.states[i], self.costs[i], self.params, self._deg[i])

    def deliver(self, j: int, msg) -> None:
        receive(self.states[j], self.costs[j], self.params, msg)

    def estimate(self, i: int) -> np.ndarray:
        return self.states[i].x

    def estimates(self) -> np.ndarray:
        return np.array([s.x for s in self.states])


class SubgradientNetwork:
    def __init__(self, graph: DirectedGraph, costs: Sequence[CostFunction], params: SubgradientParams, x0) -> None:
        if len(costs) != graph.n:
            raise ConfigError(f"{len(costs)} costs for {graph.n} nodes")
        self.graph = graph
        self.costs = list(costs)
        self.params = params
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), (costs[0].dim,))
        self.states = [sg_initialize(x0, node=i) for i in range(graph.n)]

    def broadcast(self, i: int):
        return sg_broadcast(self.states[i], self.costs[i], self.params)

    def deliver(self, j: int, msg) -> None:
        sg_receive(self.states[j], self.costs[j], self.params, msg)

    def estimate(self, i: int) -> np.ndarray:
        return self.states[i].x

    def estimates(self) -> np.ndarray:
        return np.array([s.x for s in self.states])


def mass_audit(states: Sequence[NodeState], graph: DirectedGraph) -> tuple[float, float]:
    """Relative conservation residuals of the y and z masses.

    Returns ``max |sum y + in-flight - sum g_old|`` and its z analogue, each
    divided by ``max(|sum g_old|, max_i |g_old_i|)`` (infinity norms) so that
    a near-zero total does not inflate the ratio.
    """
    edges = graph.sorted_edges()
    res = []
    for v, b, r, ref in (("y", "b_y", "r_y", "g_old"), ("z", "b_z", "r_z", "h_old")):
        held = np.sum([getattr(s, v) for s in states], axis=0)
        inflight = np.sum([getattr(states[i], b) - getattr(states[j], r)[i] for i, j in edges], axis=0)
        olds = np.array([getattr(s, ref) for s in states])
        total = olds.sum(axis=0)
        scale = max(float(np.abs(total).max()), float(np.abs(olds).max()))
        resid = float(np.abs(held + inflight - total).max())
        res.append(resid / scale if scale > 0 else resid)
    return res[0], res[1]


# ---------------------------------------------------------------- records


@dataclass
class TrajectoryRecord:
    """Metrics after each event; row ``t`` is the state after event ``t`` (row 0 is the initial state)."""

    sigma: np.ndarray
    mean_err: np.ndarray
    max_err: np.ndarray
    node_err: np.ndarray | None = None
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    final_x: np.ndarray | None = None
    diverged_at: int | None = None
    max_consecutive_failures: int = 0
    label: str = ""

    @property
    def events(self) -> int:
        return len(self.sigma) - 1

    def events_to_threshold(self, fraction: float = 1e-2) -> int | None:
        """First event index with mean error at most ``fraction`` times the initial one."""
        hit = np.flatnonzero(self.mean_err <= fraction * self.mean_err[0])
        return int(hit[0]) if hit.size else None

    def to_csv_text(self) -> str:
        cols = [np.arange(len(self.sigma)), self.sigma, self.mean_err, self.max_err]
        header = ["t", "sigma", "mean_err", "max_err"]
        if self.node_err is not None:
            header += [f"err_{k}" for k in range(self.node_err.shape[1])]
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        for row in range(len(self.sigma)):
            cells = [str(int(cols[0][row])), str(int(cols[1][row])), f"{cols[2][row]:.17g}", f"{cols[3][row]:.17g}"]
            if self.node_err is not None:
                cells += [f"{v:.17g}" for v in self.node_err[row]]
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> Path:
        return atomic_write_text(path, self.to_csv_text())

    @classmethod
    def read_csv(cls, path: str | Path) -> "TrajectoryRecord":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        header, body = rows[0], rows[1:]
        data = np.array([[float(c) for c in r] for r in body]) if body else np.zeros((0, len(header)))
        node_err = data[:, 4:] if len(header) > 4 else None
        return cls(data[:, 1].astype(int), data[:, 2], data[:, 3], node_err)


def atomic_write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def log_linear_tail_fit(mean_err: np.ndarray, start: float, stop: float) -> tuple[float, float, int]:
    """Least-squares line through log(mean_err) between the first events where it drops below ``start`` and ``stop``.

    Returns ``(slope per event, R^2, number of points)``.
    """
    below_start = np.flatnonzero(mean_err <= start)
    if below_start.size == 0:
        raise ValueError("error never reaches the start of the tail window")
    lo = int(below_start[0])
    below_stop = np.flatnonzero(mean_err[lo:] <= stop)
    hi = lo + int(below_stop[0]) if below_stop.size else len(mean_err) - 1
    t = np.arange(lo, hi + 1, dtype=float)
    y = np.log(mean_err[lo : hi + 1])
    slope, icpt = np.polyfit(t, y, 1)
    fit = slope * t + icpt
    ss_res = float(((y - fit) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return float(slope), 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0, t.size


# ---------------------------------------------------------------- configuration


@dataclass
class ExperimentConfig:
    """One simulation. Sections mirror the config-file layout (graph/cost/algorithm/loss/scheduler/run)."""

    # graph
    graph: str = "geometric"  # geometric | ring | complete | edges
    nodes: int = 15
    radius: float = 0.35
    edges_path: str = ""
    # cost
    cost: str = "quadratic"  # quadratic | housing | huber_synthetic
    dim: int = 1
    w_low: float = 0.5
    w_high: float = 2.0
    a_low: float = -5.0
    a_high: float = 5.0
    beta: float = 1.0
    gamma: float = 1.0
    ridge_intercept: bool = False
    data_path: str = ""
    data_rows: int = 500
    synthetic_rows: int = 6
    # algorithm
    algorithm: str = "ranrc"  # ranrc | subgradient
    epsilon: float = 1e-2
    c: float = 1e-6
    alpha: float = 1e-3
    add_cost_values: bool = False
    # loss
    loss: str = "bernoulli"  # none | bernoulli | bounded
    loss_p: float = 0.1
    loss_L: int = 3
    loss_pattern: str = ""  # e.g. "1101" for lose, lose, deliver, lose
    # scheduler
    scheduler: str = "uniform_random"  # uniform_random | round_robin
    # run
    events: int = 10_000
    seed: int = 0
    x0: float = 0.0
    record_nodes: bool = False
    snapshot_stride: int = 0

    def validate(self) -> None:
        choices = {
            "graph": ("geometric", "ring", "complete", "edges"),
            "cost": ("quadratic", "housing", "huber_synthetic"),
            "algorithm": ("ranrc", "subgradient"),
            "loss": ("none", "bernoulli", "bounded"),
            "scheduler": ("uniform_random", "round_robin"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key}: {getattr(self, key)!r} not in {allowed}")
        if self.nodes < 2:
            raise ConfigError("nodes: need at least 2")
        if self.events < 0:
            raise ConfigError("events: must be nonnegative")
        if self.graph == "edges" and not self.edges_path:
            raise ConfigError("edges_path: required when graph = edges")
        if not 0 <= self.loss_p < 1:
            raise ConfigError("loss_p: must lie in [0, 1)")
        if self.loss_pattern.strip("01"):
            raise ConfigError("loss_pattern: only 0/1 characters allowed")
        try:
            RanrcParams(self.epsilon, self.c)
            SubgradientParams(self.alpha)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Problem:
    graph: DirectedGraph
    costs: list[CostFunction]
    graph_seed: int | None = None

    @property
    def dim(self) -> int:
        return self.costs[0].dim


def build_graph(cfg: ExperimentConfig) -> tuple[DirectedGraph, int | None]:
    n = cfg.nodes
    if cfg.graph == "geometric":
        base = derive_seed(cfg.seed, "graph") % (2**32)
        return connected_geometric_digraph(n, cfg.radius, base)
    if cfg.graph == "ring":
        return from_edge_list(n, [(i, (i + 1) % n) for i in range(n)]), None
    if cfg.graph == "complete":
        return from_edge_list(n, [(i, j) for i in range(n) for j in range(n) if i != j]), None
    g = load_edge_list(cfg.edges_path)
    if g.n != n:
        raise ConfigError(f"nodes: config says {n} but {cfg.edges_path} has {g.n}")
    return g, None


def build_costs(cfg: ExperimentConfig) -> list[CostFunction]:
    n = cfg.nodes
    if cfg.cost == "quadratic":
        return costs_mod.random_quadratics(
            n, _rng(cfg.seed, "costs"), cfg.dim, (cfg.w_low, cfg.w_high), (cfg.a_low, cfg.a_high)
        )
    if cfg.cost == "housing":
        data = costs_mod.load_housing(cfg.data_rows, cfg.data_path or None)
        parts = costs_mod.partition_dataset(data, n, _rng(cfg.seed, "partition"))
        return costs_mod.huber_costs(parts, cfg.beta, cfg.gamma, cfg.ridge_intercept)
    # small synthetic regression: dim-1 features plus intercept
    rng = _rng(cfg.seed, "costs")
    nf = max(cfg.dim - 1, 1) if cfg.dim > 1 else 0
    out: list[CostFunction] = []
    for _ in range(n):
        feats = rng.normal(size=(cfg.synthetic_rows, nf))
        targets = feats @ rng.normal(size=nf) + rng.normal(scale=2.0, size=cfg.synthetic_rows) + 1.0
        out.append(costs_mod.SmoothHuberRegressionCost(feats, targets, cfg.beta, cfg.gamma, cfg.ridge_intercept))
    return out


def build_problem(cfg: ExperimentConfig) -> Problem:
    cfg.validate()
    graph, gseed = build_graph(cfg)
    return Problem(graph, build_costs(cfg), gseed)


def build_network(problem: Problem, cfg: ExperimentConfig):
    x0 = np.full(problem.dim, cfg.x0)
    if cfg.algorithm == "ranrc":
        return RanrcNetwork(problem.graph, problem.costs, RanrcParams(cfg.epsilon, cfg.c), x0)
    return SubgradientNetwork(
        problem.graph, problem.costs, SubgradientParams(cfg.alpha, cfg.add_cost_values), x0
    )


def build_scheduler(cfg: ExperimentConfig, n: int):
    if cfg.scheduler == "round_robin":
        return RoundRobinScheduler(n)
    return UniformRandomScheduler(n, _rng(cfg.seed, "scheduler"))


def build_loss(cfg: ExperimentConfig, graph: DirectedGraph):
    if cfg.loss == "none":
        return NoLoss()
    if cfg.loss == "bernoulli":
        return BernoulliLoss(cfg.loss_p, _rng(cfg.seed, "loss"))
    pattern = [ch == "1" for ch in cfg.loss_pattern] if cfg.loss_pattern else None
    return BoundedLoss(cfg.loss_L, _rng(cfg.seed, "loss"), cfg.loss_p, pattern, graph.sorted_edges())


# ---------------------------------------------------------------- simulation


def simulate(
    network,
    scheduler,
    loss,
    events: int,
    x_star: np.ndarray,
    *,
    record_nodes: bool = False,
    snapshot_stride: int = 0,
    max_failures: int | None = None,
    on_event: Callable[[int, object], None] | None = None,
) -> TrajectoryRecord:
    """Run ``events`` broadcast events on an already-initialized network.

    ``on_event(t, network)`` is called after each event completes. A
    numerical blow-up (overflow, NaN, singular solve) stops the run; the
    remaining rows are NaN and ``diverged_at`` is set.
    """
    graph = network.graph
    n = graph.n
    x_star = np.asarray(x_star, dtype=float)
    outs = [graph.out_neighbors(i) for i in range(n)]
    err = np.array([np.linalg.norm(network.estimate(i) - x_star) for i in range(n)])
    sigma = np.full(events + 1, -1, dtype=np.int64)
    mean_err = np.full(events + 1, np.nan)
    max_err = np.full(events + 1, np.nan)
    node_err = np.full((events + 1, n), np.nan) if record_nodes else None
    snapshots: dict[int, np.ndarray] = {}
    mean_err[0], max_err[0] = err.mean(), err.max()
    if node_err is not None:
        node_err[0] = err
    if snapshot_stride:
        snapshots[0] = network.estimates()
    run: dict[tuple[int, int], int] = {}
    worst_run = 0
    diverged_at = None
    scripted = hasattr(loss, "event")
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        for t in range(1, events + 1):
            i = scheduler.next()
            sigma[t] = i
            if scripted:
                loss.event = t
            try:
                msg = network.broadcast(i)
                err[i] = np.linalg.norm(network.estimate(i) - x_star)
                for j in outs[i]:
                    if loss.delivered(i, j):
                        run[(i, j)] = 0
                        network.deliver(j, msg)
                        err[j] = np.linalg.norm(network.estimate(j) - x_star)
                    else:
                        k = run.get((i, j), 0) + 1
                        run[(i, j)] = k
                        if k > worst_run:
                            worst_run = k
                            if max_failures is not None and k > max_failures:
                                raise AssertionError(f"edge ({i}, {j}) lost {k} consecutive packets")
            except (FloatingPointError, np.linalg.LinAlgError):
                diverged_at = t
                sigma[t:] = -1
                break
            if not np.isfinite(err).all():
                diverged_at = t
                break
            mean_err[t] = err.mean()
            max_err[t] = err.max()
            if node_err is not None:
                node_err[t] = err
            if snapshot_stride and t % snapshot_stride == 0:
                snapshots[t] = network.estimates()
            if on_event is not None:
                on_event(t, network)
    return TrajectoryRecord(
        sigma, mean_err, max_err, node_err, snapshots, network.estimates(), diverged_at, worst_run
    )


def run(cfg: ExperimentConfig, oracle_optimum, problem: Problem | None = None, on_event=None) -> TrajectoryRecord:
    problem = problem or build_problem(cfg)
    if not is_strongly_connected(problem.graph):
        raise NotStronglyConnected("communication graph is not strongly connected")
    network = build_network(problem, cfg)
    loss = build_loss(cfg, problem.graph)
    rec = simulate(
        network,
        build_scheduler(cfg, problem.graph.n),
        loss,
        cfg.events,
        oracle_optimum,
        record_nodes=cfg.record_nodes,
        snapshot_stride=cfg.snapshot_stride,
        max_failures=cfg.loss_L if cfg.loss == "bounded" else None,
        on_event=on_event,
    )
    rec.label = cfg.digest()
    return rec


SWEEPABLE = {"epsilon", "loss_p", "alpha"}


def _run_one(args):
    cfg, x_star = args
    return run(cfg, x_star)


def sweep(
    cfg: ExperimentConfig,
    parameter: str,
    values: Sequence[float],
    oracle_optimum=None,
    workers: int = 1,
) -> list[TrajectoryRecord]:
    """One run per value of ``parameter``; everything else, seeds included, is shared."""
    if parameter not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {parameter!r}; choose from {sorted(SWEEPABLE)}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    if oracle_optimum is None:
        from .oracle import newton_minimize

        problem = build_problem(cfg)
        oracle_optimum = newton_minimize(problem.costs, np.zeros(problem.dim)).x_star
    jobs = [(cfg.replace(**{parameter: v}), oracle_optimum) for v in values]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]
