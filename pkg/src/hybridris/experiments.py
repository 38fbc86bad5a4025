"""Monte-Carlo campaigns: parameter sweeps, convergence traces, CSV summaries and the CLI.

Seeding: every trial index owns one network realisation (user drop + channels),
shared by all swept values and all modes so that comparisons are paired.  The
initialisation RNG is keyed by (master seed, value index, mode index, trial).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .driver import (BaselineMode, InfeasibleTrial, OptimizeResult, all_ap_scenario,
                     dinkelbach_residual, optimize)
from .channel import synthesize_channels
from .scenario import PROFILES, ConfigError, SystemConfig, dbm2watt, load_config, place_nodes, validate_config
from .solver import SubproblemInfeasible

log = logging.getLogger(__name__)

SWEEP_PARAMS = ("ap_power_dbm", "ris_elements")
ALL_MODES = tuple(m.value for m in BaselineMode)
SWEEP_COLUMNS = ["sweep_param", "value", "mode", "trial", "seed", "status", "iters", "eta",
                 "sum_rate", "p_ap_total", "p_ris_total", "p_circuit"]
TRACE_COLUMNS = ["mode", "trial", "seed", "iteration", "eta", "sum_rate", "p_total",
                 "f1", "max_violation", "converged"]


# --------------------------------------------------------------------------
# seeds and configs
# --------------------------------------------------------------------------

def network_seed(master: int, trial: int) -> int:
    """Seed of the user drop and channel realisation of one trial."""
    ss = np.random.SeedSequence(master, spawn_key=(0, trial))
    return int(ss.generate_state(1, np.uint64)[0])


def algorithm_rng(master: int, value_idx: int, mode_idx: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(1, value_idx, mode_idx, trial)))


def resolve_config(profile: str = "ci", path: str | Path | None = None) -> SystemConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r} (choose from {', '.join(PROFILES)})")
    cfg = PROFILES[profile]()
    if path is not None:
        cfg = load_config(path, base=cfg)
    report = validate_config(cfg)
    if not report.ok:
        raise ConfigError("; ".join(report.violations))
    return cfg


def apply_sweep_value(cfg: SystemConfig, param: str, value: float) -> SystemConfig:
    if param == "ap_power_dbm":
        cfg = cfg.replace(P_max_A=dbm2watt(float(value)))
    elif param == "ris_elements":
        if float(value) != int(value):
            raise ConfigError(f"ris_elements must be an integer, got {value}")
        cfg = cfg.replace(N_s=int(value))
    else:
        raise ConfigError(f"unknown sweep parameter {param!r}")
    report = validate_config(cfg)
    if not report.ok:
        raise ConfigError(f"{param}={value}: " + "; ".join(report.violations))
    return cfg


@dataclass
class SweepSpec:
    param: str
    values: Sequence[float]
    modes: Sequence[str] = ALL_MODES
    trials: int = 20
    base_config: str | Path | None = None
    out: str | Path | None = None
    master_seed: int = 0
    profile: str = "ci"
    workers: int = 1
    config: SystemConfig | None = field(default=None, repr=False)  # overrides profile/base_config

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"unknown sweep parameter {self.param!r} (choose from {', '.join(SWEEP_PARAMS)})")
        if len(self.values) == 0:
            raise ConfigError("sweep needs at least one value")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.modes:
            raise ConfigError("sweep needs at least one mode")
        try:
            self.modes = tuple(BaselineMode.parse(m).value for m in self.modes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def resolved_config(self) -> SystemConfig:
        return self.config if self.config is not None else resolve_config(self.profile, self.base_config)


# --------------------------------------------------------------------------
# single trial
# --------------------------------------------------------------------------

def run_trial(cfg: SystemConfig, mode: BaselineMode | str, seed: int,
              rng: np.random.Generator | None = None) -> OptimizeResult:
    """One network realisation from ``seed`` optimised in ``mode``; may raise :class:`InfeasibleTrial`."""
    mode = BaselineMode.parse(mode) if isinstance(mode, str) else mode
    net_rng = np.random.default_rng(seed)
    geo = place_nodes(cfg, net_rng)
    if mode is BaselineMode.ALL_AP:
        cfg, _, ch = all_ap_scenario(cfg, geo, net_rng)
    else:
        ch = synthesize_channels(cfg, geo, net_rng)
    return optimize(ch, cfg, mode, rng if rng is not None else np.random.default_rng(seed))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    return str(x)


def _sweep_task(task) -> list:
    cfg, param, value, vi, mode, mi, trial, master = task
    seed = network_seed(master, trial)
    head = [param, value, mode, trial, seed]
    try:
        res = run_trial(cfg, mode, seed, algorithm_rng(master, vi, mi, trial))
    except InfeasibleTrial as exc:
        log.info("%s=%s mode=%s trial=%d infeasible: %s", param, value, mode, trial, exc)
        return head + ["infeasible", 0] + [None] * (5 + cfg.K)
    rec = res.trace.records[-1]
    status = "converged" if res.trace.converged else "max_iters"
    return head + [status, res.trace.iterations, rec.eta, rec.sum_rate, float(rec.power.ap_tx.sum()),
                   float(rec.power.ris_tx.sum()), rec.power.circuit] + list(rec.rates)


def _map(fn, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


def _write_csv(rows: list[list], header: list[str], out) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    text = buf.getvalue()
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    return text


# --------------------------------------------------------------------------
# campaigns
# --------------------------------------------------------------------------

def run_sweep(spec: SweepSpec) -> str:
    """Run every (value, mode, trial) combination; returns the CSV text and writes ``spec.out`` if set."""
    base = spec.resolved_config()
    tasks = []
    for vi, value in enumerate(spec.values):
        value = int(value) if spec.param == "ris_elements" else float(value)
        cfg = apply_sweep_value(base, spec.param, value)
        for mi, mode in enumerate(spec.modes):
            for trial in range(spec.trials):
                tasks.append((cfg, spec.param, value, vi, mode, mi, trial, spec.master_seed))
    rows = _map(_sweep_task, tasks, spec.workers)
    header = SWEEP_COLUMNS + [f"rate_{k}" for k in range(base.K)]
    return _write_csv(rows, header, spec.out)


def _trace_task(task) -> list:
    cfg, mode, mi, trial, master = task
    seed = network_seed(master, trial)
    try:
        res = run_trial(cfg, mode, seed, algorithm_rng(master, 0, mi, trial))
    except InfeasibleTrial:
        return []
    return [[mode, trial, seed, r.iteration, r.eta, r.sum_rate, r.power.total, r.f1,
             r.max_violation, res.trace.converged] for r in res.trace.records]


def run_convergence(config: SystemConfig, modes: Iterable[str] = ("proposed",), trials: int = 20,
                    master_seed: int = 0, out: str | Path | None = None, workers: int = 1) -> str:
    """Per-iteration eta traces, one row per (mode, trial, iteration); infeasible trials are omitted."""
    modes = [BaselineMode.parse(m).value for m in modes]
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    tasks = [(config, m, mi, t, master_seed) for mi, m in enumerate(modes) for t in range(trials)]
    rows = [row for block in _map(_trace_task, tasks, workers) for row in block]
    return _write_csv(rows, TRACE_COLUMNS, out)


# --------------------------------------------------------------------------
# summaries
# --------------------------------------------------------------------------

def read_rows(source: str | Path) -> list[dict]:
    """Rows of a sweep CSV given as a path or as CSV text."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
    return list(csv.DictReader(io.StringIO(text)))


def _mean_se(x: list[float]) -> tuple[float, float]:
    a = np.asarray(x, dtype=float)
    if a.size == 0:
        return float("nan"), float("nan")
    se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return float(a.mean()), se


def summarize(source) -> list[dict]:
    """Per (value, mode): trial count, infeasible count, mean and standard error of eta and sum rate."""
    rows = read_rows(source) if not isinstance(source, list) else source
    if not rows:
        raise ValueError("no data rows to summarise")
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["sweep_param"], row["value"], row["mode"]), []).append(row)
    out = []
    for (param, value, mode), grp in groups.items():
        ok = [r for r in grp if r["status"] != "infeasible"]
        eta_m, eta_se = _mean_se([float(r["eta"]) for r in ok])
        sr_m, sr_se = _mean_se([float(r["sum_rate"]) for r in ok])
        out.append({"sweep_param": param, "value": value, "mode": mode, "n": len(ok),
                    "n_infeasible": len(grp) - len(ok), "eta_mean": eta_m, "eta_stderr": eta_se,
                    "sum_rate_mean": sr_m, "sum_rate_stderr": sr_se})
    return out


def mode_ratios(summary: list[dict], num: str, den: str, metric: str = "eta") -> dict[str, float]:
    """``mean(metric | num) / mean(metric | den)`` per swept value."""
    by = {(s["value"], s["mode"]): s[f"{metric}_mean"] for s in summary}
    return {v: by[(v, num)] / by[(v, den)] for (v, m) in by if m == num and (v, den) in by}


def paired_difference(rows: list[dict], metric: str, mode_a: str, mode_b: str) -> dict[str, tuple]:
    """Per value: mean and standard error of ``metric(a) - metric(b)`` over trials feasible in both."""
    idx = {(r["value"], r["mode"], r["trial"]): r for r in rows if r["status"] != "infeasible"}
    out = {}
    for value in dict.fromkeys(r["value"] for r in rows):
        diffs = [float(idx[(value, mode_a, t)][metric]) - float(idx[(value, mode_b, t)][metric])
                 for (v, m, t) in idx if v == value and m == mode_a and (value, mode_b, t) in idx]
        out[value] = (*_mean_se(diffs), len(diffs))
    return out


def format_summary(summary: list[dict]) -> str:
    cols = ["sweep_param", "value", "mode", "n", "n_infeasible", "eta_mean", "eta_stderr",
            "sum_rate_mean", "sum_rate_stderr"]
    return _write_csv([[s[c] for c in cols] for s in summary], cols, None)


# --------------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, modes_default, multi_mode=True):
    p.add_argument("--profile", choices=sorted(PROFILES), default="ci")
    p.add_argument("--config", help="flat YAML file overriding the profile")
    p.add_argument("--seed", type=int, default=0, help="master seed (unsigned 64-bit)")
    if multi_mode:
        p.add_argument("--mode", nargs="+", default=list(modes_default), help=f"any of {', '.join(ALL_MODES)}")
    else:
        p.add_argument("--mode", default=modes_default)
    p.add_argument("--out", help="output CSV path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridris", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="optimise one realisation and print its iteration trace")
    _add_common(p, "proposed", multi_mode=False)
    p.add_argument("--trial", type=int, default=0)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep over AP power or RIS size")
    _add_common(p, ALL_MODES)
    p.add_argument("--param", choices=SWEEP_PARAMS, default="ap_power_dbm")
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("convergence", help="per-iteration eta traces")
    _add_common(p, ["proposed"])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("summarize", help="mean / standard error per (value, mode) of a sweep CSV")
    p.add_argument("csv")
    p.add_argument("--out")
    return parser


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "summarize":
            text = format_summary(summarize(args.csv))
            if args.out:
                Path(args.out).write_text(text)
            _emit(text, args.out)
            return 0
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = resolve_config(args.profile, args.config)
        if args.command == "run":
            seed = network_seed(args.seed, args.trial)
            mode = BaselineMode.parse(args.mode)
            try:
                res = run_trial(cfg, mode, seed, algorithm_rng(args.seed, 0, 0, args.trial))
            except InfeasibleTrial as exc:
                print(f"infeasible: {exc}")
                return 0
            rows = [[mode.value, args.trial, seed, r.iteration, r.eta, r.sum_rate, r.power.total,
                     r.f1, r.max_violation, res.trace.converged] for r in res.trace.records]
            text = _write_csv(rows, TRACE_COLUMNS, args.out)
            _emit(text, args.out)
            print(f"# eta={res.eta:.6g} iterations={res.trace.iterations} converged={res.trace.converged} "
                  f"dinkelbach_residual={dinkelbach_residual(res.trace):.3g}", file=sys.stderr)
            return 0
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if args.command == "sweep":
            spec = SweepSpec(args.param, args.values, args.mode, args.trials, args.config, args.out,
                             args.seed, args.profile, args.workers, config=cfg)
            _emit(run_sweep(spec), args.out)
            return 0
        if args.command == "convergence":
            _emit(run_convergence(cfg, args.mode, args.trials, args.seed, args.out, args.workers), args.out)
            return 0
    except (ConfigError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SubproblemInfeasible, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    return 1
