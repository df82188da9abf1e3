"""Experiment driver: scripts x seeds x out-degrees, JSONL records, CSV summaries."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Sequence

from .model import ScriptError, generate_script, load_script
from .monitor import check_stabilization
from .policies import PolicyConfig
from .protocol import ExecutionOrder, MessageKind, ProtocolTimers
from .sim import NetworkModel, SimConfig, Simulation

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    max_out_degrees: list[int] = field(default_factory=lambda: [3, 5, 6])
    problems: int = 5
    master_seed: int = 0
    add_events: int = 100
    change_events: int = 10
    remove_events: int = 10
    inter_event_delay: float = 5.0
    final_window: float = 40.0
    algorithm: str = "topdown"
    baseline_restart: bool = False
    fault_containment: bool = True
    refine: bool = True
    connect_period: float = 1.0
    announce_wait: float = 0.2
    state_timeout: float = 2.0
    connect_backoff_max: float = 60.0
    keep_alive_period: float = 0.5
    inspect_period: float = 1.5
    settle_delay: float = 0.3
    min_delay: float = 0.01
    max_delay: float = 0.1
    output_path: str = "results"
    events_script: Optional[str] = None
    workers: int = 1

    def validate(self) -> None:
        if min(self.add_events, self.change_events, self.remove_events) < 0:
            raise ConfigError("event counts must be non-negative")
        if self.remove_events > self.add_events:
            raise ConfigError("remove_events may not exceed add_events")
        if not self.seeds:
            raise ConfigError("seeds: need at least one seed")
        if not self.max_out_degrees or min(self.max_out_degrees) < 1:
            raise ConfigError("max_out_degrees: each must be >= 1")
        if self.problems < 1:
            raise ConfigError("problems must be >= 1")
        if self.algorithm not in {o.value for o in ExecutionOrder}:
            raise ConfigError(f"algorithm: unknown value {self.algorithm!r}")
        if self.keep_alive_period >= self.inspect_period:
            raise ConfigError("keep_alive_period must be shorter than inspect_period")
        if not 0 <= self.min_delay <= self.max_delay:
            raise ConfigError("need 0 <= min_delay <= max_delay")
        if self.announce_wait < 2 * self.max_delay:
            raise ConfigError("announce_wait must be at least 2 * max_delay")
        if self.keep_alive_period + self.max_delay >= self.inspect_period:
            raise ConfigError("keep_alive_period + max_delay must be shorter than inspect_period")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def sim_config(self, degree: int, problem_seed: int, run_seed: int) -> SimConfig:
        return SimConfig(
            policy=PolicyConfig(max_out_degree=degree),
            timers=ProtocolTimers(self.connect_period, self.announce_wait, self.state_timeout, self.connect_backoff_max),
            keep_alive_period=self.keep_alive_period,
            inspect_period=self.inspect_period,
            settle_delay=self.settle_delay,
            network=NetworkModel(self.min_delay, self.max_delay),
            algorithm=ExecutionOrder(self.algorithm),
            refine=self.refine,
            fault_containment=self.fault_containment,
            baseline_restart=self.baseline_restart,
            inter_event_delay=self.inter_event_delay,
            final_window=self.final_window,
            problem_seed=problem_seed,
            run_seed=run_seed,
            track_hierarchy=True,
        )


FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="digca", description="Run dynamic DCOP experiments over a self-organizing agent hierarchy.")
    p.add_argument("--config", metavar="PATH", help="JSON file with ExperimentConfig keys")
    p.add_argument("--seed", type=int, action="append", dest="seeds", metavar="N", help="run seed (repeatable)")
    p.add_argument("--max-out-degree", type=int, action="append", dest="max_out_degrees", metavar="N", help="repeatable")
    p.add_argument("--algorithm", choices=[o.value for o in ExecutionOrder])
    p.add_argument("--baseline-restart", action="store_true", default=None, help="rebuild the hierarchy after every event")
    p.add_argument("--no-fault-containment", action="store_false", dest="fault_containment", default=None)
    p.add_argument("--problems", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--add-events", type=int)
    p.add_argument("--change-events", type=int)
    p.add_argument("--remove-events", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", dest="output_path", metavar="DIR")
    p.add_argument("--events-script", metavar="PATH", help="use this script instead of generated ones")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_config(args: Sequence[str]) -> ExperimentConfig:
    """Defaults, overridden by the config file, overridden by flags."""
    ns = build_parser().parse_args(list(args))
    values: dict[str, Any] = {}
    if ns.config:
        try:
            raw = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(raw) - FIELD_NAMES)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        values.update(raw)
    for name in FIELD_NAMES:
        v = getattr(ns, name, None)
        if v is not None:
            values[name] = v
    try:
        cfg = ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    for name in ("seeds", "max_out_degrees"):
        if not isinstance(getattr(cfg, name), list):
            raise ConfigError(f"{name}: expected a list")
    cfg.validate()
    return cfg


def derive_seed(*parts: Any) -> int:
    digest = hashlib.sha256(":".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:4], "big")


@dataclass
class RunPlan:
    degree: int
    problem: int
    problem_seed: int
    seed: int

    @property
    def name(self) -> str:
        return f"d{self.degree}_p{self.problem}_s{self.seed}"


def run_one(cfg: ExperimentConfig, plan: RunPlan) -> dict[str, Any]:
    sim = Simulation(cfg.sim_config(plan.degree, plan.problem_seed, plan.seed))
    if cfg.events_script:
        script = load_script(cfg.events_script)
    else:
        script = generate_script(plan.problem_seed, cfg.add_events, cfg.change_events, cfg.remove_events, cfg.inter_event_delay)
    records = sim.run_script(script)
    ok, t_stab = check_stabilization(sim.hierarchy_log, sim.last_event_at, sim.end_at)
    last = records[-1]
    final = sim.hierarchy()
    return {
        "plan": asdict(plan),
        "lines": [r.to_json() for r in records],
        "total_messages": last.total_messages,
        "keepalive_messages": last.messages_by_kind.get(MessageKind.KEEP_ALIVE.value, 0),
        "final_cost": last.global_cost,
        "violations": sum(len(r.violations) for r in records),
        "stabilized": ok,
        "stabilized_at": t_stab,
        "last_event_at": sim.last_event_at,
        "roots": final.roots(),
        "live": sorted(final.live_agents),
    }


def _mean_std(xs: list[float]) -> tuple[float, float]:
    if not xs:
        return 0.0, 0.0
    return statistics.fmean(xs), (statistics.stdev(xs) if len(xs) > 1 else 0.0)


def summarize(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    out = []
    for degree in sorted({r["max_out_degree"] for r in rows}):
        sel = [r for r in rows if r["max_out_degree"] == degree]
        m_mean, m_std = _mean_std([float(r["total_messages"]) for r in sel])
        c_mean, c_std = _mean_std([float(r["final_cost"]) for r in sel])
        out.append(
            {
                "algorithm": sel[0]["algorithm"],
                "mode": sel[0]["mode"],
                "max_out_degree": degree,
                "runs": len(sel),
                "messages_mean": m_mean,
                "messages_std": m_std,
                "cost_mean": c_mean,
                "cost_std": c_std,
            }
        )
    return out


def _write_csv(path: Path, rows: list[dict[str, Any]]) -> None:
    with path.open("w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def run_experiment(cfg: ExperimentConfig) -> dict[str, Any]:
    cfg.validate()
    out = Path(cfg.output_path)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    mode = "restart" if cfg.baseline_restart else "digca"
    plans = [
        RunPlan(d, p, derive_seed(cfg.master_seed, "problem", p), s)
        for d in cfg.max_out_degrees
        for p in range(cfg.problems)
        for s in cfg.seeds
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(run_one, [cfg] * len(plans), plans))
    else:
        results = [run_one(cfg, s) for s in plans]
    rows = []
    for plan, res in zip(plans, results):
        (out / "runs" / f"{cfg.algorithm}_{mode}_{plan.name}.jsonl").write_text("\n".join(res["lines"]) + "\n")
        rows.append(
            {
                "algorithm": cfg.algorithm,
                "mode": mode,
                "max_out_degree": plan.degree,
                "problem": plan.problem,
                "seed": plan.seed,
                "total_messages": res["total_messages"],
                "keepalive_messages": res["keepalive_messages"],
                "final_cost": res["final_cost"],
                "violations": res["violations"],
                "stabilized": res["stabilized"],
            }
        )
    summary = summarize(rows)
    _write_csv(out / f"runs_{cfg.algorithm}_{mode}.csv", rows)
    _write_csv(out / f"summary_{cfg.algorithm}_{mode}.csv", summary)
    return {"rows": rows, "summary": summary, "violations": sum(r["violations"] for r in rows)}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"digca: config error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if "-v" in argv or "--verbose" in argv else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run_experiment(cfg)
    except ScriptError as exc:
        print(f"digca: script error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"digca: I/O error: {exc}", file=sys.stderr)
        return 1
    for row in result["summary"]:
        logger.info(
            "degree %d: messages %.1f (%.1f), cost %.1f (%.1f) over %d runs",
            row["max_out_degree"], row["messages_mean"], row["messages_std"], row["cost_mean"], row["cost_std"], row["runs"],
        )
    if result["violations"]:
        logger.error("%d hierarchy violations detected", result["violations"])
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
