"""DCOP data model: domains, quadratic binary constraints, objective, events."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

AgentId = int
Pair = tuple[AgentId, AgentId]

DOMAIN_BOUNDS = (-50.0, 50.0)
COEFFICIENT_RANGE = (-5.0, 5.0)


class ScriptError(ValueError):
    """An event script is malformed or names something that does not exist."""


class IncompleteAssignmentError(KeyError):
    pass


@dataclass(frozen=True)
class Domain:
    lower: float
    upper: float
    samples: tuple[float, ...]

    def __post_init__(self) -> None:
        for s in self.samples:
            if not self.lower <= s <= self.upper:
                raise ValueError(f"sample {s} outside [{self.lower}, {self.upper}]")

    def clamp(self, v: float) -> float:
        return min(max(v, self.lower), self.upper)


def sample_domain(
    rng: random.Random, sample_count: int = 3, bounds: tuple[float, float] = DOMAIN_BOUNDS
) -> Domain:
    lo, hi = bounds
    return Domain(lo, hi, tuple(rng.uniform(lo, hi) for _ in range(sample_count)))


def edge_key(i: AgentId, j: AgentId) -> Pair:
    if i == j:
        raise ValueError(f"a constraint needs two distinct agents, got {i} twice")
    return (i, j) if i < j else (j, i)


@dataclass
class ConstraintEdge:
    """f(x, y) = a*x^2 + b*x*y + c*y^2, x owned by the lower-indexed endpoint."""

    endpoints: Pair
    a: float
    b: float
    c: float

    def __post_init__(self) -> None:
        self.endpoints = edge_key(*self.endpoints)

    @property
    def coefficients(self) -> tuple[float, float, float]:
        return (self.a, self.b, self.c)

    def cost_for(self, values: Mapping[AgentId, float]) -> float:
        lo, hi = self.endpoints
        try:
            return eval_constraint(self, values[lo], values[hi])
        except KeyError as exc:
            raise IncompleteAssignmentError(f"no value for agent {exc.args[0]}") from None


def eval_constraint(e: ConstraintEdge, x: float, y: float) -> float:
    return e.a * x * x + e.b * x * y + e.c * y * y


def global_cost(edges: Iterable[ConstraintEdge], sigma: Mapping[AgentId, float]) -> float:
    # fixed summation order keeps the result bitwise stable
    return sum((e.cost_for(sigma) for e in sorted(edges, key=lambda e: e.endpoints)), 0.0)


def sample_coefficients(rng: random.Random, lo: float = COEFFICIENT_RANGE[0], hi: float = COEFFICIENT_RANGE[1]) -> tuple[float, float, float]:
    return (rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi))


class EventKind(str, Enum):
    ADD_AGENT = "add"
    REMOVE_AGENT = "remove"
    CHANGE_CONSTRAINT = "change"


@dataclass(frozen=True)
class EnvironmentEvent:
    kind: EventKind
    agent: Optional[AgentId] = None
    # None on a change event means "pick an existing edge at random"
    edge: Optional[Pair] = None
    coefficients: Optional[tuple[float, float, float]] = None
    at: Optional[float] = None

    @classmethod
    def add(cls, agent: AgentId, at: Optional[float] = None) -> "EnvironmentEvent":
        return cls(EventKind.ADD_AGENT, agent=agent, at=at)

    @classmethod
    def remove(cls, agent: AgentId, at: Optional[float] = None) -> "EnvironmentEvent":
        return cls(EventKind.REMOVE_AGENT, agent=agent, at=at)

    @classmethod
    def change(
        cls,
        edge: Optional[Pair] = None,
        coefficients: Optional[tuple[float, float, float]] = None,
        at: Optional[float] = None,
    ) -> "EnvironmentEvent":
        return cls(EventKind.CHANGE_CONSTRAINT, edge=None if edge is None else edge_key(*edge), coefficients=coefficients, at=at)


@dataclass
class EventOutcome:
    kind: EventKind
    agent: Optional[AgentId] = None
    edge: Optional[Pair] = None


@dataclass
class Environment:
    """Ground truth the simulator owns: who is present, domains, constraints.

    Domains and initial coefficients come from per-agent and per-pair
    RNG streams derived from ``problem_seed``, so the same pair of agents
    gets the same constraint no matter when or how often it is connected.
    """

    problem_seed: int = 0
    sample_count: int = 3
    bounds: tuple[float, float] = DOMAIN_BOUNDS
    coefficient_range: tuple[float, float] = COEFFICIENT_RANGE
    live: set[AgentId] = field(default_factory=set)
    ever: set[AgentId] = field(default_factory=set)
    domains: dict[AgentId, Domain] = field(default_factory=dict)
    edges: dict[Pair, ConstraintEdge] = field(default_factory=dict)
    changed: dict[Pair, tuple[float, float, float]] = field(default_factory=dict)

    def spawn(self, agent: AgentId) -> Domain:
        if agent in self.ever:
            raise ScriptError(f"agent id {agent} already used")
        self.ever.add(agent)
        self.live.add(agent)
        dom = sample_domain(random.Random(f"{self.problem_seed}:domain:{agent}"), self.sample_count, self.bounds)
        self.domains[agent] = dom
        return dom

    def coefficients_for(self, pair: Pair) -> tuple[float, float, float]:
        if pair in self.changed:
            return self.changed[pair]
        return sample_coefficients(random.Random(f"{self.problem_seed}:coef:{pair[0]}:{pair[1]}"), *self.coefficient_range)

    def connect(self, i: AgentId, j: AgentId) -> ConstraintEdge:
        key = edge_key(i, j)
        e = self.edges.get(key)
        if e is None:
            e = ConstraintEdge(key, *self.coefficients_for(key))
            self.edges[key] = e
        return e

    def disconnect(self, i: AgentId, j: AgentId) -> None:
        self.edges.pop(edge_key(i, j), None)

    def edges_of(self, agent: AgentId) -> list[ConstraintEdge]:
        return [e for k, e in self.edges.items() if agent in k]

    def edge(self, i: AgentId, j: AgentId) -> Optional[ConstraintEdge]:
        return self.edges.get(edge_key(i, j))


def apply_event(env: Environment, ev: EnvironmentEvent, rng: random.Random) -> EventOutcome:
    """Mutate the ground truth; the simulator handles the agent-side effects."""
    if ev.kind is EventKind.ADD_AGENT:
        if ev.agent is None:
            raise ScriptError("add event without an agent id")
        env.spawn(ev.agent)
        return EventOutcome(ev.kind, agent=ev.agent)
    if ev.kind is EventKind.REMOVE_AGENT:
        if ev.agent not in env.live:
            raise ScriptError(f"remove names absent agent {ev.agent}")
        env.live.discard(ev.agent)
        return EventOutcome(ev.kind, agent=ev.agent)
    if ev.kind is EventKind.CHANGE_CONSTRAINT:
        if ev.edge is None:
            if not env.edges:
                raise ScriptError("change event with no constraints in the environment")
            key = rng.choice(sorted(env.edges))
        else:
            key = ev.edge
            if key not in env.edges:
                raise ScriptError(f"change names missing constraint {key}")
        coef = ev.coefficients if ev.coefficients is not None else sample_coefficients(rng, *env.coefficient_range)
        lo, hi = env.coefficient_range
        if not all(lo <= c <= hi for c in coef):
            raise ScriptError(f"coefficients {coef} outside [{lo}, {hi}]")
        env.changed[key] = tuple(coef)
        e = env.edges[key]
        e.a, e.b, e.c = coef
        return EventOutcome(ev.kind, edge=key)
    raise ScriptError(f"unknown event kind {ev.kind!r}")


def generate_script(
    problem_seed: int,
    add_events: int = 100,
    change_events: int = 10,
    remove_events: int = 10,
    inter_event_delay: float = 5.0,
) -> list[EnvironmentEvent]:
    """Adds first, then constraint changes, then removals of random agents."""
    if min(add_events, change_events, remove_events) < 0:
        raise ValueError("event counts must be non-negative")
    if remove_events > add_events:
        raise ValueError("cannot remove more agents than are added")
    rng = random.Random(f"{problem_seed}:script")
    events: list[EnvironmentEvent] = []
    t = 0.0
    for agent in range(add_events):
        events.append(EnvironmentEvent.add(agent, at=t))
        t += inter_event_delay
    for _ in range(change_events):
        events.append(EnvironmentEvent.change(at=t))
        t += inter_event_delay
    for victim in rng.sample(range(add_events), remove_events):
        events.append(EnvironmentEvent.remove(victim, at=t))
        t += inter_event_delay
    return events


def format_script(events: Iterable[EnvironmentEvent]) -> str:
    lines = []
    for ev in events:
        at = "" if ev.at is None else repr(float(ev.at))
        if ev.kind is EventKind.CHANGE_CONSTRAINT:
            payload = "random" if ev.edge is None else f"{ev.edge[0]} {ev.edge[1]}"
            if ev.coefficients is not None:
                payload += " " + " ".join(repr(float(c)) for c in ev.coefficients)
        else:
            payload = str(ev.agent)
        lines.append(f"{at} {ev.kind.value} {payload}".strip())
    return "\n".join(lines) + ("\n" if lines else "")


def _parse_line(tokens: list[str], lineno: int) -> EnvironmentEvent:
    at: Optional[float] = None
    try:
        at = float(tokens[0])
        tokens = tokens[1:]
    except ValueError:
        pass
    if not tokens:
        raise ScriptError(f"line {lineno}: missing event kind")
    try:
        kind = EventKind(tokens[0])
    except ValueError:
        raise ScriptError(f"line {lineno}: unknown event kind {tokens[0]!r}") from None
    args = tokens[1:]
    try:
        if kind is EventKind.CHANGE_CONSTRAINT:
            if args == ["random"]:
                return EnvironmentEvent.change(at=at)
            if len(args) not in (2, 5):
                raise ScriptError(f"line {lineno}: change takes 'random', 'i j' or 'i j a b c'")
            coef = tuple(float(x) for x in args[2:]) or None
            return EnvironmentEvent.change((int(args[0]), int(args[1])), coef, at=at)
        if len(args) != 1:
            raise ScriptError(f"line {lineno}: {kind.value} takes exactly one agent id")
        agent = int(args[0])
    except ValueError as exc:
        raise ScriptError(f"line {lineno}: {exc}") from None
    if agent < 0:
        raise ScriptError(f"line {lineno}: negative agent id")
    return EnvironmentEvent(kind, agent=agent, at=at)


def parse_script(text: str) -> list[EnvironmentEvent]:
    events = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            events.append(_parse_line(line.split(), lineno))
    return events


def load_script(path: Union[str, Path]) -> list[EnvironmentEvent]:
    return parse_script(Path(path).read_text())
