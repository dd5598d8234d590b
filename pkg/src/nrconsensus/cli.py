"""Command-line front end.

    nrconsensus run CONFIG          one simulation, trajectory CSV + manifest entry
    nrconsensus sweep-eps CONFIG    one run per epsilon
    nrconsensus sweep-loss CONFIG   one run per loss probability
    nrconsensus compare CONFIG      grid raNRC over epsilon and the subgradient baseline over alpha
    nrconsensus oracle CONFIG       centralized optimum only
    nrconsensus audit CONFIG        raNRC run with the mass audit checked after every event

Exit status: 0 on success, 1 on a runtime failure, 2 on a bad command line or config.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import engine
from .engine import ConfigError, ExperimentConfig, TrajectoryRecord, atomic_write_text
from .oracle import newton_minimize

OUT_ENV = "NRCONSENSUS_OUT"
AUDIT_TOL = 1e-9

EPSILON_GRID = tuple(10 ** (-4 + k / 2) for k in range(7))  # 1e-4 .. 1e-1 by half decades
ALPHA_GRID = tuple(float(v) for v in np.logspace(-4, 1, 16))
EPS_SWEEP = (1e-4, 1e-3, 1e-2, 1e-1)
LOSS_SWEEP = (0.0, 0.2, 0.4, 0.6)

# ini section -> {ini key: ExperimentConfig field}
LAYOUT: dict[str, dict[str, str]] = {
    "graph": {"kind": "graph", "nodes": "nodes", "radius": "radius", "edges_path": "edges_path"},
    "cost": {
        "kind": "cost",
        "dim": "dim",
        "w_low": "w_low",
        "w_high": "w_high",
        "a_low": "a_low",
        "a_high": "a_high",
        "beta": "beta",
        "gamma": "gamma",
        "ridge_intercept": "ridge_intercept",
        "data_path": "data_path",
        "data_rows": "data_rows",
        "synthetic_rows": "synthetic_rows",
    },
    "algorithm": {
        "kind": "algorithm",
        "epsilon": "epsilon",
        "c": "c",
        "alpha": "alpha",
        "add_cost_values": "add_cost_values",
    },
    "loss": {"kind": "loss", "p": "loss_p", "L": "loss_L", "pattern": "loss_pattern"},
    "scheduler": {"kind": "scheduler"},
    "run": {
        "events": "events",
        "seed": "seed",
        "x0": "x0",
        "record_nodes": "record_nodes",
        "snapshot_stride": "snapshot_stride",
    },
}
GRID_KEYS = {"epsilon_grid", "alpha_grid"}  # extra [algorithm] keys used by compare

_DEFAULTS = ExperimentConfig()
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigFileError(ValueError):
    """Unreadable or invalid configuration file (exit status 2)."""


@dataclass(frozen=True)
class CliConfig:
    experiment: ExperimentConfig
    epsilon_grid: tuple[float, ...] = EPSILON_GRID
    alpha_grid: tuple[float, ...] = ALPHA_GRID


def _convert(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigFileError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _grid(key: str, raw: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigFileError(f"{key}: expected a list of numbers, got {raw!r}") from None
    if not vals:
        raise ConfigFileError(f"{key}: empty grid")
    return vals


def parse_config_text(text: str, source: str = "<string>") -> CliConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str  # keep "L" distinct
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigFileError(f"{source}: {exc}") from None
    values: dict[str, object] = {}
    grids: dict[str, tuple[float, ...]] = {}
    for section in cp.sections():
        if section not in LAYOUT:
            raise ConfigFileError(f"[{section}]: unknown section (expected one of {', '.join(LAYOUT)})")
        for key, raw in cp.items(section):
            name = f"{section}.{key}"
            if section == "algorithm" and key in GRID_KEYS:
                grids[key] = _grid(name, raw)
                continue
            if key not in LAYOUT[section]:
                raise ConfigFileError(f"{name}: unknown key")
            attr = LAYOUT[section][key]
            values[attr] = _convert(name, raw, getattr(_DEFAULTS, attr))
    cfg = ExperimentConfig(**values)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigFileError(str(exc)) from None
    return CliConfig(cfg, grids.get("epsilon_grid", EPSILON_GRID), grids.get("alpha_grid", ALPHA_GRID))


def load_config(path: str | Path) -> CliConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"{path}: {exc.strerror or exc}") from None
    return parse_config_text(text, str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_to_text(cc: CliConfig) -> str:
    """Serialize every field, so that parsing the output reproduces ``cc`` exactly."""
    cfg = cc.experiment
    lines: list[str] = []
    for section, keys in LAYOUT.items():
        lines.append(f"[{section}]")
        for key, attr in keys.items():
            lines.append(f"{key} = {_fmt(getattr(cfg, attr))}")
        if section == "algorithm":
            lines.append("epsilon_grid = " + ", ".join(repr(v) for v in cc.epsilon_grid))
            lines.append("alpha_grid = " + ", ".join(repr(v) for v in cc.alpha_grid))
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------- outputs


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def csv_name(cfg: ExperimentConfig) -> str:
    return f"{cfg.digest()}.csv"


def _summary(rec: TrajectoryRecord) -> dict:
    final = float(rec.mean_err[-1])
    return {
        "events": rec.events,
        "initial_mean_err": float(rec.mean_err[0]),
        "final_mean_err": final if math.isfinite(final) else None,
        "events_to_threshold": rec.events_to_threshold(),
        "diverged_at": rec.diverged_at,
    }


def update_manifest(out_dir: Path, entries: dict[str, dict]) -> Path:
    path = out_dir / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest.update(entries)
    return atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_runs(out_dir: Path, command: str, pairs: Sequence[tuple[ExperimentConfig, TrajectoryRecord]]) -> None:
    entries = {}
    for cfg, rec in pairs:
        rec.write_csv(out_dir / csv_name(cfg))
        entries[cfg.digest()] = {
            "command": command,
            "csv": csv_name(cfg),
            "config": cfg.as_dict(),
            "summary": _summary(rec),
        }
    update_manifest(out_dir, entries)


def final_error(rec: TrajectoryRecord) -> float:
    v = float(rec.mean_err[-1])
    return v if math.isfinite(v) and rec.diverged_at is None else math.inf


def _e(v) -> str:
    return "-" if v is None else (f"{v:.3e}" if isinstance(v, float) else str(v))


# ---------------------------------------------------------------- commands


def _oracle(cfg: ExperimentConfig):
    problem = engine.build_problem(cfg)
    return problem, newton_minimize(problem.costs, np.zeros(problem.dim))


def cmd_run(cc: CliConfig, out_dir: Path, args) -> int:
    cfg = cc.experiment
    problem, orc = _oracle(cfg)
    rec = engine.run(cfg, orc.x_star, problem)
    write_runs(out_dir, "run", [(cfg, rec)])
    s = _summary(rec)
    print(
        f"{cfg.algorithm} {cfg.digest()}: events={rec.events} initial={_e(s['initial_mean_err'])} "
        f"final={_e(s['final_mean_err'])} to_1%={_e(s['events_to_threshold'])} diverged_at={_e(rec.diverged_at)}"
    )
    return 0


def _cmd_sweep(cc: CliConfig, out_dir: Path, args, parameter: str, defaults) -> int:
    cfg = cc.experiment
    values = tuple(args.values) if args.values else defaults
    problem, orc = _oracle(cfg)
    if args.workers > 1:
        recs = engine.sweep(cfg, parameter, values, orc.x_star, workers=args.workers)
    else:
        recs = [engine.run(cfg.replace(**{parameter: v}), orc.x_star, problem) for v in values]
    pairs = [(cfg.replace(**{parameter: v}), r) for v, r in zip(values, recs)]
    write_runs(out_dir, f"sweep-{parameter}", pairs)
    print(f"{parameter:>8} {'to_1%':>8} {'final':>10} {'diverged':>8}  csv")
    for (c, r), v in zip(pairs, values):
        print(f"{v:8.3g} {_e(r.events_to_threshold()):>8} {_e(_summary(r)['final_mean_err']):>10} "
              f"{_e(r.diverged_at):>8}  {csv_name(c)}")
    return 0


def cmd_sweep_eps(cc, out_dir, args) -> int:
    return _cmd_sweep(cc, out_dir, args, "epsilon", EPS_SWEEP)


def cmd_sweep_loss(cc, out_dir, args) -> int:
    return _cmd_sweep(cc, out_dir, args, "loss_p", LOSS_SWEEP)


@dataclass
class CompareResult:
    ranrc: list[tuple[ExperimentConfig, TrajectoryRecord]] = field(default_factory=list)
    subgradient: list[tuple[ExperimentConfig, TrajectoryRecord]] = field(default_factory=list)

    @staticmethod
    def _best(pairs):
        # ties keep the first grid point
        return min(pairs, key=lambda p: final_error(p[1]))

    @property
    def best_ranrc(self):
        return self._best(self.ranrc)

    @property
    def best_subgradient(self):
        return self._best(self.subgradient)

    def winner(self, rtol: float = 1e-9) -> str:
        fn, fs = final_error(self.best_ranrc[1]), final_error(self.best_subgradient[1])
        if fn == fs or (math.isfinite(fn) and math.isfinite(fs) and abs(fn - fs) <= rtol * max(fn, fs)):
            return "tie"
        return "ranrc" if fn < fs else "subgradient"


def compare(cc: CliConfig, x_star=None, problem=None) -> CompareResult:
    base = cc.experiment
    if x_star is None:
        problem, orc = _oracle(base)
        x_star = orc.x_star
    res = CompareResult()
    for eps in cc.epsilon_grid:
        cfg = base.replace(algorithm="ranrc", epsilon=eps)
        res.ranrc.append((cfg, engine.run(cfg, x_star, problem)))
    for alpha in cc.alpha_grid:
        cfg = base.replace(algorithm="subgradient", alpha=alpha)
        res.subgradient.append((cfg, engine.run(cfg, x_star, problem)))
    return res


def cmd_compare(cc: CliConfig, out_dir: Path, args) -> int:
    res = compare(cc)
    write_runs(out_dir, "compare", res.ranrc + res.subgradient)
    (nc, nr), (sc, sr) = res.best_ranrc, res.best_subgradient
    rows = ["algorithm,parameter,value,final_mean_err,csv"]
    rows += [f"ranrc,epsilon,{c.epsilon!r},{final_error(r)!r},{csv_name(c)}" for c, r in res.ranrc]
    rows += [f"subgradient,alpha,{c.alpha!r},{final_error(r)!r},{csv_name(c)}" for c, r in res.subgradient]
    atomic_write_text(out_dir / f"compare_{nc.replace(epsilon=0.0).digest()}.csv", "\n".join(rows) + "\n")
    fn, fs = final_error(nr), final_error(sr)
    winner = res.winner()
    print(
        f"best ranrc epsilon={nc.epsilon:.3g} final={fn:.3e} ({csv_name(nc)}); "
        f"best subgradient alpha={sc.alpha:.3g} final={fs:.3e} ({csv_name(sc)}); winner={winner}"
    )
    return 0


def cmd_oracle(cc: CliConfig, out_dir: Path, args) -> int:
    _, orc = _oracle(cc.experiment)
    path = out_dir / f"oracle_{cc.experiment.digest()}.txt"
    orc.write(path)
    print(orc.to_text(), end="")
    return 0


def cmd_audit(cc: CliConfig, out_dir: Path, args) -> int:
    cfg = cc.experiment.replace(algorithm="ranrc")
    problem, orc = _oracle(cfg)
    worst = [0.0, 0.0, 0]

    def check(t, net):
        ry, rz = engine.mass_audit(net.states, net.graph)
        if max(ry, rz) > max(worst[0], worst[1]):
            worst[2] = t
        worst[0], worst[1] = max(worst[0], ry), max(worst[1], rz)

    rec = engine.run(cfg, orc.x_star, problem, on_event=check)
    write_runs(out_dir, "audit", [(cfg, rec)])
    ok = max(worst[0], worst[1]) <= AUDIT_TOL
    print(f"audit over {rec.events} events: y residual {worst[0]:.3e}, z residual {worst[1]:.3e} "
          f"(worst at event {worst[2]}) -> {'ok' if ok else 'VIOLATED'}")
    return 0 if ok else 1


COMMANDS = {
    "run": cmd_run,
    "sweep-eps": cmd_sweep_eps,
    "sweep-loss": cmd_sweep_loss,
    "compare": cmd_compare,
    "oracle": cmd_oracle,
    "audit": cmd_audit,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nrconsensus", description="raNRC and subgradient consensus simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="ini file with [graph] [cost] [algorithm] [loss] [scheduler] [run] sections")
        p.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUT_ENV} or ./runs)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--events", type=int, default=None, help="override the event budget")
        if name.startswith("sweep"):
            p.add_argument("--values", type=float, nargs="+", default=None)
            p.add_argument("--workers", type=int, default=1)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cc = load_config(args.config)
        overrides = {k: getattr(args, k) for k in ("seed", "events") if getattr(args, k) is not None}
        if overrides:
            cfg = cc.experiment.replace(**overrides)
            cfg.validate()
            cc = dataclasses.replace(cc, experiment=cfg)
    except (ConfigFileError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out or default_out_dir()
    try:
        return COMMANDS[args.command](cc, out_dir, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
