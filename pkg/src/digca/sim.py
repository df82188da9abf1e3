"""Deterministic discrete-event kernel hosting the agents.

One heap orders every event by ``(at, seq)``. Agents are driven only by
message deliveries and their own timers, and handlers run to completion
one at a time, so a run is a pure function of script, config and seeds.
"""
from __future__ import annotations

import heapq
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Callable, Iterable, NamedTuple, Optional

from . import liveness, protocol
from .liveness import KeepAliveRegister
from .model import Environment, EnvironmentEvent, EventKind, ScriptError, apply_event
from .monitor import HierarchySnapshot, MetricsRecord, snapshot_metrics
from .policies import PolicyConfig
from .protocol import (
    ActivityState,
    AgentId,
    AgentRegisters,
    Effects,
    ExecutionOrder,
    Message,
    MessageKind,
    ProtocolTimers,
    TriggerReason,
)
from .solvers import Solver, make_solver

logger = logging.getLogger(__name__)

Visibility = Callable[[AgentId, frozenset[AgentId]], Iterable[AgentId]]


class EventType(IntEnum):
    DELIVER = 0
    TIMER = 1
    ENV = 2
    SNAPSHOT = 3


class TimerKind(IntEnum):
    CONNECT = 0
    CONNECT_FINISH = 1
    KEEP_ALIVE = 2
    INSPECT = 3
    SOLVER = 4


class SimEvent(NamedTuple):
    at: float
    seq: int
    type: EventType
    target: int
    data: Any


@dataclass(frozen=True)
class NetworkModel:
    min_delay: float = 0.01
    max_delay: float = 0.1

    def __post_init__(self) -> None:
        if not 0 <= self.min_delay <= self.max_delay:
            raise ValueError("need 0 <= min_delay <= max_delay")

    def draw(self, rng: random.Random) -> float:
        return rng.uniform(self.min_delay, self.max_delay)


@dataclass(frozen=True)
class SimConfig:
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    timers: ProtocolTimers = field(default_factory=ProtocolTimers)
    keep_alive_period: float = 0.5
    inspect_period: float = 1.5
    settle_delay: float = 0.3
    network: NetworkModel = field(default_factory=NetworkModel)
    algorithm: ExecutionOrder = ExecutionOrder.TOP_DOWN
    refine: bool = True
    fault_containment: bool = True
    baseline_restart: bool = False
    inter_event_delay: float = 5.0
    final_window: float = 40.0
    problem_seed: int = 0
    run_seed: int = 0
    sample_count: int = 3
    track_hierarchy: bool = True

    def __post_init__(self) -> None:
        if self.keep_alive_period >= self.inspect_period:
            raise ValueError("keep_alive_period must be shorter than inspect_period")
        # slower networks make responses miss the window or keep-alives miss the inspection
        if self.timers.announce_wait < 2 * self.network.max_delay:
            raise ValueError("announce_wait must cover a round trip (2 * max_delay)")
        if self.keep_alive_period + self.network.max_delay >= self.inspect_period:
            raise ValueError("keep_alive_period + max_delay must be shorter than inspect_period")


class Agent:
    """Registers, keep-alive list and solver of one live agent."""

    def __init__(self, sim: "Simulation", agent_id: AgentId) -> None:
        self.sim = sim
        self.id = agent_id
        self.env = sim.env
        self.domain = sim.env.domains[agent_id]
        cfg = sim.config
        self.registers: AgentRegisters = protocol.init_agent(agent_id, cfg.algorithm)
        self.keepalive = KeepAliveRegister()
        self.solver: Solver = make_solver(cfg.algorithm, agent_id, self.domain, cfg.refine, cfg.fault_containment)
        self.connect_gen = 0
        self.solver_gen = 0

    def send_solver(self, to: AgentId, payload: tuple[Any, ...]) -> None:
        self.sim.send(self.id, to, Message(MessageKind.SOLVER, self.id, payload))

    def warn(self, name: str) -> None:
        self.sim.warnings[name] += 1


class Simulation:
    def __init__(self, config: SimConfig = SimConfig(), visibility: Optional[Visibility] = None) -> None:
        self.config = config
        self.visibility = visibility
        self.env = Environment(problem_seed=config.problem_seed, sample_count=config.sample_count)
        self.agents: dict[AgentId, Agent] = {}
        self.now = 0.0
        self._queue: list[SimEvent] = []
        self._seq = 0
        self.sent: Counter[str] = Counter()
        self.delivered = 0
        self.dropped = 0
        self.warnings: Counter[str] = Counter()
        self.triggers: Counter[str] = Counter()
        self.step_violations: list[str] = []
        self.hierarchy_log: list[HierarchySnapshot] = []
        self.last_structure_change = 0.0
        self.records: list[MetricsRecord] = []
        self.last_event_at = 0.0
        self.end_at: Optional[float] = None
        self.values: dict[AgentId, float] = {}
        self.on_step: Optional[Callable[["Simulation"], None]] = None
        self._rng_protocol = random.Random(f"{config.run_seed}:net:protocol")
        self._rng_solver = random.Random(f"{config.run_seed}:net:solver")
        self._rng_phase = random.Random(f"{config.run_seed}:phases")
        self._rng_events = random.Random(f"{config.problem_seed}:events")
        self._reported_steps = 0

    # -- queue -----------------------------------------------------------
    def schedule(self, at: float, type_: EventType, target: int = -1, data: Any = None) -> None:
        self._seq += 1
        heapq.heappush(self._queue, SimEvent(at, self._seq, type_, target, data))

    def _timer(self, agent: Agent, kind: TimerKind, delay: float, gen: int = 0) -> None:
        self.schedule(self.now + delay, EventType.TIMER, agent.id, (kind, gen))

    @property
    def in_flight(self) -> int:
        return sum(1 for ev in self._queue if ev.type is EventType.DELIVER)

    @property
    def enqueued(self) -> int:
        return sum(self.sent.values())

    # -- transport -------------------------------------------------------
    def send(self, frm: AgentId, to: AgentId, msg: Message) -> None:
        rng = self._rng_solver if msg.kind is MessageKind.SOLVER else self._rng_protocol
        self.sent[msg.label] += 1
        self.schedule(self.now + self.config.network.draw(rng), EventType.DELIVER, to, msg)

    def broadcast(self, frm: AgentId, msg: Message) -> int:
        live = frozenset(self.agents)
        targets = live if self.visibility is None else frozenset(self.visibility(frm, live)) & live
        n = 0
        for to in sorted(targets - {frm}):
            self.send(frm, to, msg)
            n += 1
        return n

    def _apply(self, agent: Agent, fx: Effects) -> None:
        if fx.broadcast is not None:
            self.broadcast(agent.id, fx.broadcast)
        for to, msg in fx.sends:
            self.send(agent.id, to, msg)
        if fx.edge_to is not None:
            self.env.connect(agent.id, fx.edge_to)
        if fx.finish_at is not None:
            self.schedule(fx.finish_at, EventType.TIMER, agent.id, (TimerKind.CONNECT_FINISH, 0))
        if fx.warning is not None:
            self.warnings[fx.warning] += 1
        if fx.wake:
            agent.connect_gen += 1
            self._timer(agent, TimerKind.CONNECT, self.config.timers.connect_period, agent.connect_gen)
        if fx.trigger is not None:
            self.trigger(agent, fx.trigger)

    def trigger(self, agent: Agent, reason: TriggerReason) -> None:
        """Debounced solver start: a newer trigger supersedes a pending one."""
        if self.config.algorithm is ExecutionOrder.NONE:
            return
        self.triggers[reason.value] += 1
        agent.solver_gen += 1
        self._timer(agent, TimerKind.SOLVER, self.config.settle_delay, agent.solver_gen)

    # -- agent lifecycle -------------------------------------------------
    def spawn(self, agent_id: AgentId) -> Agent:
        if agent_id in self.agents:
            raise ScriptError(f"agent {agent_id} already present")
        if agent_id not in self.env.domains:
            self.env.spawn(agent_id)
        agent = Agent(self, agent_id)
        self.agents[agent_id] = agent
        self.values[agent_id] = agent.solver.value
        self._start_timers(agent)
        return agent

    def _start_timers(self, agent: Agent) -> None:
        cfg = self.config
        rng = self._rng_phase
        agent.connect_gen += 1
        self._timer(agent, TimerKind.CONNECT, rng.uniform(0, cfg.timers.connect_period), agent.connect_gen)
        self._timer(agent, TimerKind.KEEP_ALIVE, rng.uniform(0, cfg.keep_alive_period))
        self._timer(agent, TimerKind.INSPECT, rng.uniform(0, cfg.inspect_period))

    def restart_all(self) -> None:
        """Classical restart: tear the hierarchy down and rebuild it from scratch."""
        for aid in sorted(self.agents):
            agent = self.agents[aid]
            protocol.reset_registers(agent.registers)
            agent.keepalive.heard_from.clear()
            agent.solver.reset()
            agent.connect_gen += 1
            agent.solver_gen += 1  # cancel pending solver runs
            self._timer(agent, TimerKind.CONNECT, self._rng_phase.uniform(0, self.config.timers.connect_period), agent.connect_gen)
        self.env.edges.clear()
        self._structure_changed()

    # -- event handling --------------------------------------------------
    def _deliver(self, agent: Agent, msg: Message) -> None:
        reg = agent.registers
        cfg = self.config
        j = msg.sender
        kind = msg.kind
        if kind is MessageKind.KEEP_ALIVE:
            liveness.receive_keep_alive(agent.keepalive, j)
        elif kind is MessageKind.ANNOUNCE:
            self._apply(agent, protocol.receive_announce(reg, j, cfg.policy))
        elif kind is MessageKind.ANNOUNCE_RESPONSE:
            protocol.receive_announce_response(reg, j, msg.payload)
        elif kind is MessageKind.ADD_ME:
            payload = agent.domain.samples if cfg.algorithm is ExecutionOrder.BOTTOM_UP else None
            self._apply(agent, protocol.receive_add_me(reg, j, cfg.policy, payload))
        elif kind is MessageKind.CHILD_ADDED:
            fx = protocol.receive_child_added(reg, j)
            if fx.warning is None:
                agent.solver.on_parent(j, msg.payload)
            self._apply(agent, fx)
        elif kind is MessageKind.ALREADY_ACTIVE:
            protocol.receive_already_active(reg, j)
        elif kind is MessageKind.PARENT_ASSIGNED:
            self._apply(agent, protocol.receive_parent_assigned(reg, j))
        elif kind is MessageKind.SOLVER:
            agent.solver.receive(agent, j, msg.payload)
        else:  # pragma: no cover - exhaustive
            raise ValueError(f"unknown message kind {kind}")

    def _fire(self, agent: Agent, kind: TimerKind, gen: int) -> None:
        cfg = self.config
        reg = agent.registers
        if kind is TimerKind.CONNECT:
            if gen != agent.connect_gen:
                return
            self._apply(agent, protocol.connect(reg, self.now, cfg.timers))
            self._timer(agent, kind, cfg.timers.connect_interval(reg.empty_attempts), gen)
        elif kind is TimerKind.CONNECT_FINISH:
            if reg.wait_deadline is not None and self.now >= reg.wait_deadline:
                backed_off = reg.empty_attempts > 0
                self._apply(agent, protocol.connect_finish(reg, self.now, cfg.policy, cfg.timers))
                if backed_off and reg.state is ActivityState.ACTIVE:
                    # the state timeout must be checked at the base period
                    agent.connect_gen += 1
                    self._timer(agent, TimerKind.CONNECT, cfg.timers.connect_period, agent.connect_gen)
        elif kind is TimerKind.KEEP_ALIVE:
            for to, msg in liveness.send_keep_alive(reg):
                self.send(agent.id, to, msg)
            self._timer(agent, kind, cfg.keep_alive_period)
        elif kind is TimerKind.INSPECT:
            res = liveness.inspect_neighbors(reg, agent.keepalive)
            for j in res.removed:
                self.env.disconnect(agent.id, j)
                agent.solver.forget(j)
            if res.trigger is not None:
                self.trigger(agent, res.trigger)
            self._timer(agent, kind, cfg.inspect_period)
        elif kind is TimerKind.SOLVER:
            if gen == agent.solver_gen:
                agent.solver.run(agent)

    def _check_agent(self, agent: Agent) -> None:
        reg = agent.registers
        if reg.parent is not None and not reg.parent < reg.id:
            self.step_violations.append(f"t={self.now:.6f} ordering: agent {reg.id} has parent {reg.parent}")
        if len(reg.children) > self.config.policy.max_out_degree:
            self.step_violations.append(f"t={self.now:.6f} degree: agent {reg.id} has {len(reg.children)} children")
        if reg.parent is not None and reg.parent in reg.children:
            self.step_violations.append(f"t={self.now:.6f} parent-child: agent {reg.id}")

    def _structure_changed(self) -> None:
        self.last_structure_change = self.now
        if self.config.track_hierarchy:
            self.hierarchy_log.append(self.hierarchy())

    def step(self) -> bool:
        if not self._queue:
            return False
        ev = heapq.heappop(self._queue)
        self.now = ev.at
        if ev.type is EventType.DELIVER or ev.type is EventType.TIMER:
            agent = self.agents.get(ev.target)
            if agent is None:
                if ev.type is EventType.DELIVER:
                    self.dropped += 1
                return True
            reg = agent.registers
            before = (reg.parent, len(reg.children))
            if ev.type is EventType.DELIVER:
                self.delivered += 1
                self._deliver(agent, ev.data)
            else:
                self._fire(agent, *ev.data)
            self.values[agent.id] = agent.solver.value
            if (reg.parent, len(reg.children)) != before:
                self._check_agent(agent)
                self._structure_changed()
        elif ev.type is EventType.ENV:
            self._env_event(*ev.data)
        elif ev.type is EventType.SNAPSHOT:
            self._snapshot(*ev.data)
        if self.on_step is not None:
            self.on_step(self)
        return True

    def run_until(self, t: float) -> None:
        while self._queue and self._queue[0].at <= t:
            self.step()
        self.now = max(self.now, t)

    def drain(self) -> None:
        """Deliver every in-flight message, discarding timers."""
        self._queue = [ev for ev in self._queue if ev.type is EventType.DELIVER]
        heapq.heapify(self._queue)
        while self._queue:
            self.step()
            self._queue = [ev for ev in self._queue if ev.type is EventType.DELIVER]
            heapq.heapify(self._queue)

    # -- environment -----------------------------------------------------
    def apply(self, ev: EnvironmentEvent) -> None:
        """Inject one environment event at the current instant."""
        out = apply_event(self.env, ev, self._rng_events)
        self.last_event_at = self.now
        if out.kind is EventKind.ADD_AGENT:
            self.spawn(out.agent)
        elif out.kind is EventKind.REMOVE_AGENT:
            del self.agents[out.agent]
            self._structure_changed()
        elif out.kind is EventKind.CHANGE_CONSTRAINT and not self.config.baseline_restart:
            for aid in out.edge:
                if aid in self.agents:
                    self.trigger(self.agents[aid], TriggerReason.CONSTRAINT_CHANGED)
        if self.config.baseline_restart:
            self.restart_all()

    def _env_event(self, index: int, ev: EnvironmentEvent) -> None:
        logger.debug("t=%.3f event %d: %s", self.now, index, ev)
        self.apply(ev)

    # -- observation -----------------------------------------------------
    def hierarchy(self) -> HierarchySnapshot:
        return HierarchySnapshot(
            at=self.now,
            parent_of={a: ag.registers.parent for a, ag in self.agents.items()},
            children_of={a: frozenset(ag.registers.children) for a, ag in self.agents.items()},
            live_agents=frozenset(self.agents),
        )

    def assignment(self) -> dict[AgentId, float]:
        return {a: ag.solver.value for a, ag in sorted(self.agents.items())}

    def _snapshot(self, index: int, event: str, final: bool) -> None:
        # departed agents keep their last value until their edges are reaped
        rec = snapshot_metrics(
            event_index=index,
            at=self.now,
            event=event,
            edges=self.env.edges.values(),
            values=self.values,
            messages_by_kind=self.sent,
            hierarchy=self.hierarchy(),
            cfg=self.config.policy,
            warnings=self.warnings,
            quiescent=final,
            extra_violations=self.step_violations[self._reported_steps:],
        )
        self._reported_steps = len(self.step_violations)
        self.records.append(rec)

    def run_script(self, script: Iterable[EnvironmentEvent]) -> list[MetricsRecord]:
        """Inject events spaced in simulated time and snapshot before each next one."""
        events = list(script)
        delay = self.config.inter_event_delay
        times = []
        for k, ev in enumerate(events):
            times.append(ev.at if ev.at is not None else k * delay)
        if any(b < a for a, b in zip(times, times[1:])):
            raise ScriptError("event times must be non-decreasing")
        base = self.now
        for k, ev in enumerate(events):
            self.schedule(base + times[k], EventType.ENV, -1, (k, ev))
            last = k == len(events) - 1
            snap_at = base + (times[k] + max(delay, self.config.final_window) if last else times[k + 1])
            self.schedule(snap_at, EventType.SNAPSHOT, -1, (k, ev.kind.value, last))
        if not events:
            self.schedule(base + self.config.final_window, EventType.SNAPSHOT, -1, (0, "none", True))
            end = base + self.config.final_window
        else:
            end = base + times[-1] + max(delay, self.config.final_window)
        self.end_at = end
        self.run_until(end)
        return self.records


def restart_baseline_solve(sim: Simulation, window: float = 30.0) -> tuple[dict[AgentId, float], int]:
    """Rebuild the whole hierarchy from scratch and let the solver rerun on it.

    Returns the assignment after ``window`` simulated seconds and the number
    of messages exchanged meanwhile.
    """
    before = sim.enqueued
    sim.restart_all()
    sim.run_until(sim.now + window)
    return sim.assignment(), sim.enqueued - before
