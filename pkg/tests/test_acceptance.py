"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or directly with ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import itertools
import random
import tempfile
import time
from functools import lru_cache
from pathlib import Path

import pytest

from digca.cli import ExperimentConfig, RunPlan, parse_config, run_experiment, run_one
from digca.model import COEFFICIENT_RANGE, ConstraintEdge, EnvironmentEvent, generate_script, global_cost, sample_domain
from digca.monitor import validate_hierarchy
from digca.policies import PolicyConfig
from digca.protocol import ActivityState, ExecutionOrder, ProtocolTimers
from digca.sim import EventType, NetworkModel, SimConfig, Simulation
from digca.solvers import IncidentTerm, local_cost, top_down_assign

DEGREES = (3, 5, 6)
SEEDS = tuple(range(10))
RUN_BUDGET_S = 60.0
STABILIZE_WITHIN_S = 30.0
FUZZ_RUNS = 10_000
ORACLE_TREES = 100
LOCAL_STEPS = 10_000
MIN_BASELINE_RATIO = 5.0
TOL = 1e-9

RESULTS: dict[int, tuple[bool, str]] = {}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS[n] = (ok, line)
    print(line)
    assert ok, line


@lru_cache(maxsize=None)
def workload_run(degree: int, seed: int) -> tuple[dict, float]:
    cfg = ExperimentConfig()
    t0 = time.perf_counter()
    res = run_one(cfg, RunPlan(degree, 0, seed, seed))
    return res, time.perf_counter() - t0


def all_workload_runs():
    return {(d, s): workload_run(d, s) for d in DEGREES for s in SEEDS}


def test_criterion_1_hierarchy_validity():
    runs = all_workload_runs()
    violations = sum(r["violations"] for r, _ in runs.values())
    slowest = max(t for _, t in runs.values())
    ok = violations == 0 and slowest < RUN_BUDGET_S
    report(1, ok, f"{len(runs)} full runs, {violations} violations, slowest run {slowest:.1f}s (budget {RUN_BUDGET_S:.0f}s)")


def test_criterion_2_stabilization():
    runs = all_workload_runs()
    late, forests = [], []
    worst = 0.0
    for key, (r, _) in runs.items():
        if not r["stabilized"]:
            late.append(key)
            continue
        lag = max(0.0, r["stabilized_at"] - r["last_event_at"])
        worst = max(worst, lag)
        if lag > STABILIZE_WITHIN_S:
            late.append(key)
        if r["roots"] != [min(r["live"])]:
            forests.append(key)
    ok = not late and not forests
    report(2, ok, f"worst stabilization {worst:.2f}s after last event (limit {STABILIZE_WITHIN_S:.0f}s), "
                  f"late={late}, not single min-rooted tree={forests}")


ORDERS = (ExecutionOrder.NONE, ExecutionOrder.TOP_DOWN, ExecutionOrder.BOTTOM_UP)


def fuzz_once(k: int) -> list[str]:
    rng = random.Random(f"fuzz:{k}")
    n = rng.randint(2, 8)
    lo = rng.uniform(0.0, 0.05)
    hi = rng.uniform(lo, 0.4)
    cfg = SimConfig(
        policy=PolicyConfig(max_out_degree=rng.randint(1, 3)),
        timers=ProtocolTimers(announce_wait=max(0.2, 2 * hi)),
        network=NetworkModel(lo, hi),
        algorithm=ORDERS[k % len(ORDERS)],
        problem_seed=k,
        run_seed=k,
        track_hierarchy=False,
    )
    sim = Simulation(cfg)
    # adds land within 2 s of each other, so connects overlap
    events = [(rng.uniform(0.0, 2.0), EnvironmentEvent.add(a)) for a in range(n)]
    for a in rng.sample(range(n), rng.randint(0, n // 2)):
        events.append((events[a][0] + rng.uniform(0.0, 1.5), EnvironmentEvent.remove(a)))
    events.sort(key=lambda p: p[0])
    for idx, (t, ev) in enumerate(events):
        sim.schedule(t, EventType.ENV, -1, (idx, ev))

    limit = cfg.timers.state_timeout + cfg.timers.connect_period + TOL
    active_since: dict[int, float] = {}
    problems: list[str] = []

    def watch(s: Simulation) -> None:
        for a, ag in s.agents.items():
            if ag.registers.state is ActivityState.ACTIVE:
                active_since.setdefault(a, s.now)
            elif a in active_since:
                span = s.now - active_since.pop(a)
                if span > limit:
                    problems.append(f"agent {a} ACTIVE for {span:.3f}s")

    sim.on_step = watch
    sim.run_until(events[-1][0] + 30.0)
    problems += sim.step_violations
    problems += validate_hierarchy(sim.hierarchy(), cfg.policy, quiescent=True)
    problems += [f"agent {a} stuck ACTIVE" for a, ag in sim.agents.items() if ag.registers.state is ActivityState.ACTIVE]
    return problems


def test_criterion_3_interleaving_fuzz():
    failed = {}
    for k in range(FUZZ_RUNS):
        p = fuzz_once(k)
        if p:
            failed[k] = p
    first = next(iter(failed.items()), None)
    report(3, not failed, f"{FUZZ_RUNS} fuzz runs, {len(failed)} failing" + (f", first {first}" if first else ""))


def oracle_min(sim: Simulation) -> float:
    live = sorted(sim.agents)
    edges = list(sim.env.edges.values())
    best = float("inf")
    for combo in itertools.product(*(sim.agents[a].domain.samples for a in live)):
        best = min(best, global_cost(edges, dict(zip(live, combo))))
    return best


def test_criterion_4_solver_oracle():
    worst = 0.0
    bad = []
    for k in range(ORACLE_TREES):
        rng = random.Random(f"oracle:{k}")
        n = rng.randint(2, 5)
        sim = Simulation(SimConfig(
            policy=PolicyConfig(max_out_degree=rng.randint(1, 3)),
            algorithm=ExecutionOrder.BOTTOM_UP,
            refine=False,
            problem_seed=k,
            run_seed=k,
        ))
        for a in range(n):
            sim.run_until(sim.now + rng.uniform(0.0, 3.0))
            sim.apply(EnvironmentEvent.add(a))
        if rng.random() < 0.5 and sim.env.edges:
            sim.run_until(sim.now + 5.0)
            sim.apply(EnvironmentEvent.change())
        sim.run_until(sim.now + 40.0)
        got = global_cost(sim.env.edges.values(), sim.assignment())
        gap = abs(got - oracle_min(sim))
        worst = max(worst, gap)
        if gap > TOL:
            bad.append(k)
    report(4, not bad, f"{ORACLE_TREES} trees of 2-5 agents, max |solver - exhaustive| = {worst:.3g} (tol {TOL:g}), failing {bad}")


def test_criterion_5_baseline_message_ratio():
    digca, _ = workload_run(3, 0)
    cfg = ExperimentConfig(baseline_restart=True)
    restart = run_one(cfg, RunPlan(3, 0, 0, 0))
    ratio = restart["total_messages"] / digca["total_messages"]
    report(5, ratio >= MIN_BASELINE_RATIO,
           f"restart {restart['total_messages']} vs paired {digca['total_messages']} messages, ratio {ratio:.1f} (need >= {MIN_BASELINE_RATIO:.0f})")


def test_criterion_6_fault_containment():
    out = {}
    for fc in (True, False):
        sim = Simulation(SimConfig(algorithm=ExecutionOrder.BOTTOM_UP, fault_containment=fc))
        rec = sim.run_script(generate_script(0))[-1]
        out[fc] = (sim.sent["UTIL"] + sim.sent["VALUE"], rec.global_cost, sim.assignment())
    (on_msgs, on_cost, on_vals), (off_msgs, off_cost, off_vals) = out[True], out[False]
    same_vals = on_vals.keys() == off_vals.keys() and all(abs(on_vals[a] - off_vals[a]) <= TOL for a in on_vals)
    ok = on_msgs < off_msgs and abs(on_cost - off_cost) <= TOL and same_vals
    report(6, ok, f"solver messages {on_msgs} with containment vs {off_msgs} without, "
                  f"cost gap {abs(on_cost - off_cost):.3g}, identical assignments={same_vals}")


def test_criterion_7_determinism():
    args = ["--seed", "0", "--max-out-degree", "3", "--problems", "1"]
    with tempfile.TemporaryDirectory() as tmp:
        for name in ("a", "b"):
            run_experiment(parse_config(args + ["--out", str(Path(tmp) / name)]))
        a = sorted((Path(tmp) / "a" / "runs").glob("*.jsonl"))
        b = [Path(tmp) / "b" / "runs" / p.name for p in a]
        same = bool(a) and all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))
        size = sum(p.stat().st_size for p in a)
    report(7, same, f"{len(a)} JSONL file(s), {size} bytes, byte-identical={same}")


def random_local_step(rng: random.Random):
    samples = sample_domain(rng).samples
    terms = []
    for j in range(rng.randint(1, 4)):
        coeffs = [rng.uniform(*COEFFICIENT_RANGE) for _ in range(3)]
        edge = ConstraintEdge((0, j + 1), *coeffs)
        terms.append(IncidentTerm(edge, rng.random() < 0.5, rng.uniform(-50.0, 50.0)))
    return samples, terms


def test_criterion_8_refinement_monotone():
    rng = random.Random("refine")
    worse = 0
    improved = 0
    for _ in range(LOCAL_STEPS):
        samples, terms = random_local_step(rng)
        with_ref = local_cost(terms, top_down_assign(samples, terms, refine=True))
        without = local_cost(terms, top_down_assign(samples, terms, refine=False))
        if with_ref > without:
            worse += 1
        elif with_ref < without:
            improved += 1
    report(8, worse == 0, f"{LOCAL_STEPS} local steps, refinement worse in {worse}, strictly better in {improved}")


if __name__ == "__main__":
    for name, fn in sorted((n, f) for n, f in globals().items() if n.startswith("test_criterion_")):
        try:
            fn()
        except AssertionError:
            pass
    raise SystemExit(0 if all(ok for ok, _ in RESULTS.values()) else 1)
