"""Hierarchy-driven DCOP solvers.

Two representative algorithms ride on the hierarchy:

* a top-down greedy solver: a parent fixes its value, children pick the
  best response among their domain samples plus the stationary point of
  their local quadratic, and so on down the tree;
* a bottom-up utility-propagation solver: cost tables flow up to the
  root, chosen values flow down, and unchanged tables are not re-sent
  (fault containment).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Protocol, Sequence

from .model import DOMAIN_BOUNDS, ConstraintEdge, Domain, Environment, eval_constraint
from .protocol import AgentId, AgentRegisters, ExecutionOrder, TriggerReason

UTIL = "UTIL"
VALUE = "VALUE"


@dataclass(frozen=True)
class SolverTrigger:
    reason: TriggerReason
    at: float


@dataclass(frozen=True)
class IncidentTerm:
    """One constraint seen from an endpoint whose neighbor's value is fixed."""

    edge: ConstraintEdge
    self_is_x: bool
    neighbor_value: float

    @property
    def alpha(self) -> float:
        return self.edge.a if self.self_is_x else self.edge.c

    @property
    def beta(self) -> float:
        return self.edge.b * self.neighbor_value

    def cost(self, v: float) -> float:
        if self.self_is_x:
            return eval_constraint(self.edge, v, self.neighbor_value)
        return eval_constraint(self.edge, self.neighbor_value, v)


def local_cost(terms: Iterable[IncidentTerm], v: float) -> float:
    return sum((t.cost(v) for t in terms), 0.0)


def analytic_refine(
    terms: Sequence[IncidentTerm], bounds: tuple[float, float] = DOMAIN_BOUNDS
) -> Optional[float]:
    """Minimizer of sum(alpha*v^2 + beta*v), clamped; None unless convex."""
    alpha = sum(t.alpha for t in terms)
    if alpha <= 0:
        return None
    v = -sum(t.beta for t in terms) / (2.0 * alpha)
    return min(max(v, bounds[0]), bounds[1])


def candidate_values(
    samples: Sequence[float],
    terms: Sequence[IncidentTerm],
    refine: bool = True,
    bounds: tuple[float, float] = DOMAIN_BOUNDS,
) -> list[float]:
    out = list(samples)
    if refine and terms:
        v = analytic_refine(terms, bounds)
        # a concave (or flat) local cost attains its minimum at a bound
        out.extend([v] if v is not None else [bounds[0], bounds[1]])
    return out


def _argmin(values: Iterable[float], cost: Callable[[float], float]) -> float:
    best_v, best_c = None, math.inf
    for v in values:
        c = cost(v)
        if best_v is None or c < best_c:
            best_v, best_c = v, c
    assert best_v is not None
    return best_v


def top_down_assign(
    samples: Sequence[float],
    terms: Sequence[IncidentTerm],
    own_alphas: Sequence[float] = (),
    refine: bool = True,
    bounds: tuple[float, float] = DOMAIN_BOUNDS,
) -> float:
    """Best response to the already-assigned neighbors in ``terms``.

    With nothing assigned yet, fall back to the sample minimizing the
    squared terms of the agent's own incident constraints (``own_alphas``
    holds the coefficient multiplying the agent's own value squared).
    """
    if not terms:
        if not own_alphas:
            return samples[0]
        total = sum(own_alphas)
        return _argmin(samples, lambda v: total * v * v)
    return _argmin(candidate_values(samples, terms, refine, bounds), lambda v: local_cost(terms, v))


@dataclass(frozen=True)
class UtilTable:
    """Minimal subtree cost (and the own value reaching it) per parent sample."""

    keys: tuple[float, ...]
    costs: tuple[float, ...]
    best_own: tuple[float, ...]

    def index_of(self, parent_value: float) -> tuple[int, bool]:
        """Index for ``parent_value``; falls back to the nearest key (flag True)."""
        for i, k in enumerate(self.keys):
            if k == parent_value:
                return i, False
        i = min(range(len(self.keys)), key=lambda n: (abs(self.keys[n] - parent_value), n))
        return i, True

    def cost_at(self, parent_value: float) -> float:
        return self.costs[self.index_of(parent_value)[0]]

    def as_dict(self) -> dict[float, float]:
        return dict(zip(self.keys, self.costs))


def _child_cost(table: UtilTable, own_samples: Sequence[float], idx: int) -> float:
    if table.keys == tuple(own_samples):
        return table.costs[idx]
    return table.cost_at(own_samples[idx])


def build_util_table(
    own_samples: Sequence[float],
    parent_samples: Sequence[float],
    parent_edge: ConstraintEdge,
    self_is_x: bool,
    child_tables: Iterable[UtilTable] = (),
) -> UtilTable:
    tables = list(child_tables)
    below = [sum((_child_cost(t, own_samples, i) for t in tables), 0.0) for i in range(len(own_samples))]
    costs, best = [], []
    for p in parent_samples:
        best_c, best_v = math.inf, own_samples[0]
        for i, v in enumerate(own_samples):
            f = eval_constraint(parent_edge, v, p) if self_is_x else eval_constraint(parent_edge, p, v)
            c = f + below[i]
            if c < best_c:
                best_c, best_v = c, v
        costs.append(best_c)
        best.append(best_v)
    return UtilTable(tuple(parent_samples), tuple(costs), tuple(best))


def choose_value_from_util(
    own_samples: Sequence[float],
    parent_value: Optional[float] = None,
    table: Optional[UtilTable] = None,
    child_tables: Iterable[UtilTable] = (),
) -> tuple[float, bool]:
    """Own value plus a flag telling whether a nearest-key fallback was used.

    A root minimizes the children's summed costs over its own samples; any
    other agent reads the best own value for the parent's announced value.
    """
    if parent_value is None or table is None:
        tables = list(child_tables)
        best_i = min(
            range(len(own_samples)),
            key=lambda i: (sum((_child_cost(t, own_samples, i) for t in tables), 0.0), i),
        )
        return own_samples[best_i], False
    i, stale = table.index_of(parent_value)
    return table.best_own[i], stale


def should_propagate(previous: Optional[UtilTable], nxt: UtilTable, tol: float = 1e-9) -> bool:
    if previous is None or previous.keys != nxt.keys:
        return True
    return any(abs(a - b) > tol for a, b in zip(previous.costs, nxt.costs))


class SolverHost(Protocol):
    """What a solver may use from the agent hosting it."""

    registers: AgentRegisters
    env: Environment

    def send_solver(self, to: AgentId, payload: tuple[Any, ...]) -> None: ...

    def warn(self, name: str) -> None: ...


class Solver:
    order = ExecutionOrder.NONE

    def __init__(self, agent_id: AgentId, domain: Domain) -> None:
        self.id = agent_id
        self.domain = domain
        self.value: float = domain.samples[0]
        self.runs = 0

    def run(self, host: SolverHost) -> None:
        self.runs += 1

    def receive(self, host: SolverHost, sender: AgentId, payload: tuple[Any, ...]) -> None:
        pass

    def on_parent(self, parent: AgentId, payload: Any) -> None:
        pass

    def forget(self, j: AgentId) -> None:
        pass

    def reset(self) -> None:
        pass


class NoSolver(Solver):
    pass


class TopDownSolver(Solver):
    """Greedy parent-first assignment with an analytic quadratic candidate."""

    order = ExecutionOrder.TOP_DOWN

    def __init__(self, agent_id: AgentId, domain: Domain, refine: bool = True) -> None:
        super().__init__(agent_id, domain)
        self.refine = refine
        self.parent_value: Optional[tuple[AgentId, float]] = None

    def run(self, host: SolverHost) -> None:
        super().run(host)
        self._assign(host, push_all=True)

    def receive(self, host: SolverHost, sender: AgentId, payload: tuple[Any, ...]) -> None:
        if payload[0] != VALUE or sender != host.registers.parent:
            host.warn("stale_solver_message")
            return
        self.parent_value = (sender, payload[1])
        self._assign(host, push_all=False)

    def _assign(self, host: SolverHost, push_all: bool) -> None:
        reg = host.registers
        terms: list[IncidentTerm] = []
        if reg.parent is not None and self.parent_value is not None and self.parent_value[0] == reg.parent:
            e = host.env.edge(self.id, reg.parent)
            if e is not None:
                terms.append(IncidentTerm(e, self.id < reg.parent, self.parent_value[1]))
        own_alphas: list[float] = []
        if not terms:
            for j in reg.neighbors:
                e = host.env.edge(self.id, j)
                if e is not None:
                    own_alphas.append(e.a if self.id < j else e.c)
        new = top_down_assign(self.domain.samples, terms, own_alphas, self.refine, (self.domain.lower, self.domain.upper))
        changed = new != self.value
        self.value = new
        if push_all or changed:
            for c in sorted(reg.children):
                host.send_solver(c, (VALUE, new))

    def on_parent(self, parent: AgentId, payload: Any) -> None:
        self.parent_value = None

    def forget(self, j: AgentId) -> None:
        if self.parent_value is not None and self.parent_value[0] == j:
            self.parent_value = None

    def reset(self) -> None:
        self.parent_value = None


class BottomUpSolver(Solver):
    """Utility tables up, values down, with optional fault containment.

    With containment on, an agent only forwards a table that changed by
    more than ``tol`` and only sends a value to children whose table
    changed or whose last received value is out of date. ``always_send``
    disables both filters.
    """

    order = ExecutionOrder.BOTTOM_UP

    def __init__(self, agent_id: AgentId, domain: Domain, always_send: bool = False, tol: float = 1e-9) -> None:
        super().__init__(agent_id, domain)
        self.always_send = always_send
        self.tol = tol
        self.parent_samples: Optional[tuple[AgentId, tuple[float, ...]]] = None
        self.parent_value: Optional[tuple[AgentId, float]] = None
        self.child_tables: dict[AgentId, UtilTable] = {}
        self.last_sent: Optional[tuple[AgentId, UtilTable]] = None
        self.dirty: set[AgentId] = set()
        self.value_sent: dict[AgentId, float] = {}

    def on_parent(self, parent: AgentId, payload: Any) -> None:
        # a (re)attachment always starts a fresh exchange with the parent
        self.parent_samples = None if payload is None else (parent, tuple(payload))
        self.parent_value = None
        self.last_sent = None

    def run(self, host: SolverHost) -> None:
        super().run(host)
        self._recompute(host)

    def receive(self, host: SolverHost, sender: AgentId, payload: tuple[Any, ...]) -> None:
        reg = host.registers
        if payload[0] == UTIL and sender in reg.children:
            self.child_tables[sender] = payload[1]
            self.dirty.add(sender)
            self._recompute(host)
        elif payload[0] == VALUE and sender == reg.parent:
            self.parent_value = (sender, payload[1])
            self._choose_and_push(host)
        else:
            host.warn("stale_solver_message")

    def _tables(self, reg: AgentRegisters) -> Optional[list[UtilTable]]:
        if any(c not in self.child_tables for c in reg.children):
            return None  # deferred until every child has reported
        return [self.child_tables[c] for c in sorted(reg.children)]

    def _own_table(self, host: SolverHost, tables: list[UtilTable]) -> Optional[UtilTable]:
        reg = host.registers
        if reg.parent is None or self.parent_samples is None or self.parent_samples[0] != reg.parent:
            return None
        e = host.env.edge(self.id, reg.parent)
        if e is None:
            return None
        return build_util_table(self.domain.samples, self.parent_samples[1], e, self.id < reg.parent, tables)

    def _recompute(self, host: SolverHost) -> None:
        reg = host.registers
        tables = self._tables(reg)
        if tables is None:
            return
        if reg.parent is None:
            self._choose_and_push(host)
            return
        table = self._own_table(host, tables)
        if table is None:
            host.warn("missing_parent_samples")
            return
        last = self.last_sent[1] if self.last_sent is not None and self.last_sent[0] == reg.parent else None
        if self.always_send or should_propagate(last, table, self.tol):
            host.send_solver(reg.parent, (UTIL, table))
            self.last_sent = (reg.parent, table)
        else:
            self._choose_and_push(host)

    def _choose_and_push(self, host: SolverHost) -> None:
        reg = host.registers
        tables = self._tables(reg)
        if tables is None:
            return
        if reg.parent is None:
            value, stale = choose_value_from_util(self.domain.samples, child_tables=tables)
        else:
            if self.parent_value is None or self.parent_value[0] != reg.parent:
                return  # wait for the parent's decision
            table = self._own_table(host, tables)
            if table is None:
                return
            value, stale = choose_value_from_util(self.domain.samples, self.parent_value[1], table)
        if stale:
            host.warn("stale_value_key")
        self.value = value
        for c in sorted(reg.children):
            if self.always_send or c in self.dirty or self.value_sent.get(c) != value:
                host.send_solver(c, (VALUE, value))
                self.value_sent[c] = value
                self.dirty.discard(c)

    def forget(self, j: AgentId) -> None:
        self.child_tables.pop(j, None)
        self.dirty.discard(j)
        self.value_sent.pop(j, None)
        if self.parent_value is not None and self.parent_value[0] == j:
            self.parent_value = None
        if self.last_sent is not None and self.last_sent[0] == j:
            self.last_sent = None
        if self.parent_samples is not None and self.parent_samples[0] == j:
            self.parent_samples = None

    def reset(self) -> None:
        self.parent_samples = None
        self.parent_value = None
        self.child_tables.clear()
        self.last_sent = None
        self.dirty.clear()
        self.value_sent.clear()


def make_solver(
    algorithm: ExecutionOrder,
    agent_id: AgentId,
    domain: Domain,
    refine: bool = True,
    fault_containment: bool = True,
) -> Solver:
    if algorithm is ExecutionOrder.TOP_DOWN:
        return TopDownSolver(agent_id, domain, refine=refine)
    if algorithm is ExecutionOrder.BOTTOM_UP:
        return BottomUpSolver(agent_id, domain, always_send=not fault_containment)
    return NoSolver(agent_id, domain)
