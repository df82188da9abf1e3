"""Per-agent hierarchy construction state machine.

Every handler mutates the agent's own registers and returns an
:class:`Effects` value describing what the host (the simulator) must do:
messages to send, an Announce broadcast, a solver trigger, a constraint
edge to create, or a deferred connect-finish step. Handlers never touch
another agent's state, so they can run under any scheduler that keeps
per-agent processing serial.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from .policies import PolicyConfig, phi, select_respondent

AgentId = int


class ActivityState(str, Enum):
    INACTIVE = "INACTIVE"
    ACTIVE = "ACTIVE"


class ExecutionOrder(str, Enum):
    TOP_DOWN = "topdown"
    BOTTOM_UP = "bottomup"
    NONE = "none"


class MessageKind(str, Enum):
    ANNOUNCE = "Announce"
    ANNOUNCE_RESPONSE = "AnnounceResponse"
    ADD_ME = "AddMe"
    CHILD_ADDED = "ChildAdded"
    ALREADY_ACTIVE = "AlreadyActive"
    PARENT_ASSIGNED = "ParentAssigned"
    KEEP_ALIVE = "KeepAlive"
    SOLVER = "SolverPayload"


HANDSHAKE_KINDS = frozenset(
    {
        MessageKind.ANNOUNCE_RESPONSE,
        MessageKind.ADD_ME,
        MessageKind.CHILD_ADDED,
        MessageKind.ALREADY_ACTIVE,
        MessageKind.PARENT_ASSIGNED,
    }
)


class TriggerReason(str, Enum):
    CHILD_ADDED = "ChildAdded"
    PARENT_ASSIGNED = "ParentAssigned"
    NEIGHBOR_REMOVED = "NeighborRemoved"
    CONSTRAINT_CHANGED = "ConstraintChanged"


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: AgentId
    payload: Any = None

    @property
    def label(self) -> str:
        """Counter key: the kind name, or the solver message type for solver traffic."""
        if self.kind is MessageKind.SOLVER:
            return self.payload[0]
        return self.kind.value


@dataclass(frozen=True)
class ProtocolTimers:
    connect_period: float = 1.0
    announce_wait: float = 0.2
    state_timeout: float = 2.0
    # cap for the connect schedule after unanswered attempts
    connect_backoff_max: float = 60.0

    def connect_interval(self, empty_attempts: int) -> float:
        return min(self.connect_period * 2 ** min(empty_attempts, 30), max(self.connect_backoff_max, self.connect_period))


@dataclass
class AgentRegisters:
    id: AgentId
    execution_order: ExecutionOrder = ExecutionOrder.NONE
    state: ActivityState = ActivityState.INACTIVE
    parent: Optional[AgentId] = None
    children: set[AgentId] = field(default_factory=set)
    # respondent id -> child count; insertion ordered, deduplicated by sender
    respondents: dict[AgentId, int] = field(default_factory=dict)
    state_timeout_deadline: Optional[float] = None
    wait_deadline: Optional[float] = None
    # neighbors gained since the last inspection; exempt from one reaping pass
    fresh_neighbors: set[AgentId] = field(default_factory=set)
    empty_attempts: int = 0

    @property
    def neighbors(self) -> list[AgentId]:
        out = sorted(self.children)
        if self.parent is not None:
            out.insert(0, self.parent)
        return out


@dataclass
class Effects:
    sends: list[tuple[AgentId, Message]] = field(default_factory=list)
    broadcast: Optional[Message] = None
    trigger: Optional[TriggerReason] = None
    edge_to: Optional[AgentId] = None
    finish_at: Optional[float] = None
    warning: Optional[str] = None
    wake: bool = False


def init_agent(agent_id: AgentId, execution_order: ExecutionOrder = ExecutionOrder.NONE) -> AgentRegisters:
    if agent_id < 0:
        raise ValueError(f"agent ids are non-negative, got {agent_id}")
    return AgentRegisters(id=agent_id, execution_order=execution_order)


def reset_registers(reg: AgentRegisters) -> None:
    """Drop every hierarchy relation, as a classical restart would."""
    reg.state = ActivityState.INACTIVE
    reg.parent = None
    reg.children.clear()
    reg.respondents.clear()
    reg.state_timeout_deadline = None
    reg.wait_deadline = None
    reg.fresh_neighbors.clear()
    reg.empty_attempts = 0


def connect(reg: AgentRegisters, now: float, timers: ProtocolTimers) -> Effects:
    """Periodic connect tick: start an attempt, or expire a stale ACTIVE state."""
    fx = Effects()
    if reg.state is ActivityState.INACTIVE and reg.parent is None:
        if reg.wait_deadline is not None:
            return fx  # attempt already in its waiting phase
        reg.respondents.clear()
        reg.wait_deadline = now + timers.announce_wait
        fx.broadcast = Message(MessageKind.ANNOUNCE, reg.id)
        fx.finish_at = reg.wait_deadline
    elif (
        reg.state is ActivityState.ACTIVE
        and reg.parent is None
        and reg.state_timeout_deadline is not None
        and now >= reg.state_timeout_deadline
    ):
        reg.state = ActivityState.INACTIVE
        reg.state_timeout_deadline = None
        reg.respondents.clear()
    return fx


def connect_finish(
    reg: AgentRegisters, now: float, policy: PolicyConfig, timers: ProtocolTimers
) -> Effects:
    """Second half of an attempt, run when the announce wait expires."""
    fx = Effects()
    reg.wait_deadline = None
    if reg.state is ActivityState.INACTIVE and reg.parent is None:
        j = select_respondent(reg.respondents.items(), policy)
        if j is not None:
            fx.sends.append((j, Message(MessageKind.ADD_ME, reg.id)))
            reg.state = ActivityState.ACTIVE
            reg.state_timeout_deadline = now + timers.state_timeout
            reg.empty_attempts = 0
        else:
            reg.empty_attempts += 1
    reg.respondents.clear()
    return fx


def receive_announce(reg: AgentRegisters, j: AgentId, policy: PolicyConfig) -> Effects:
    fx = Effects()
    if reg.state is ActivityState.INACTIVE and phi(reg.id, j, len(reg.children), policy):
        fx.sends.append((j, Message(MessageKind.ANNOUNCE_RESPONSE, reg.id, len(reg.children))))
    if j < reg.id and reg.parent is None and reg.empty_attempts:
        # a potential parent showed up: leave the backed-off schedule
        reg.empty_attempts = 0
        fx.wake = True
    return fx


def receive_announce_response(reg: AgentRegisters, j: AgentId, child_count: int) -> None:
    if reg.state is ActivityState.INACTIVE:
        reg.respondents.pop(j, None)
        reg.respondents[j] = child_count


def receive_add_me(
    reg: AgentRegisters, j: AgentId, policy: PolicyConfig, payload: Any = None
) -> Effects:
    """Accept ``j`` as a child, or turn it away with AlreadyActive.

    ``payload`` rides on the ChildAdded reply (the simulator passes the
    agent's domain samples for utility-propagation solvers).
    """
    fx = Effects()
    accept = (
        reg.state is ActivityState.INACTIVE
        and j > reg.id
        and (j in reg.children or len(reg.children) < policy.max_out_degree)
    )
    if accept:
        reg.children.add(j)
        reg.fresh_neighbors.add(j)
        reg.respondents.pop(j, None)
        fx.sends.append((j, Message(MessageKind.CHILD_ADDED, reg.id, payload)))
        fx.edge_to = j
    else:
        fx.sends.append((j, Message(MessageKind.ALREADY_ACTIVE, reg.id)))
    return fx


def receive_child_added(reg: AgentRegisters, j: AgentId) -> Effects:
    fx = Effects()
    if reg.state is ActivityState.ACTIVE and reg.parent is None:
        reg.parent = j
        reg.state = ActivityState.INACTIVE
        reg.state_timeout_deadline = None
        reg.fresh_neighbors.add(j)
        reg.empty_attempts = 0
        fx.sends.append((j, Message(MessageKind.PARENT_ASSIGNED, reg.id)))
        if reg.execution_order is ExecutionOrder.BOTTOM_UP:
            fx.trigger = TriggerReason.CHILD_ADDED
    else:
        fx.warning = "stale_child_added"
    return fx


def receive_already_active(reg: AgentRegisters, j: AgentId) -> None:
    reg.state = ActivityState.INACTIVE
    reg.state_timeout_deadline = None


def receive_parent_assigned(reg: AgentRegisters, j: AgentId) -> Effects:
    fx = Effects()
    if j not in reg.children:
        fx.warning = "stale_parent_assigned"
    elif reg.execution_order is ExecutionOrder.TOP_DOWN:
        fx.trigger = TriggerReason.PARENT_ASSIGNED
    return fx
