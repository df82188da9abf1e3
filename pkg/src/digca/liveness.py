"""Keep-alive exchange and removal of unreachable neighbors."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .protocol import ActivityState, AgentId, AgentRegisters, Message, MessageKind, TriggerReason


@dataclass
class KeepAliveRegister:
    heard_from: set[AgentId] = field(default_factory=set)


@dataclass
class InspectResult:
    removed: list[AgentId] = field(default_factory=list)
    parent_lost: bool = False
    trigger: Optional[TriggerReason] = None


def send_keep_alive(reg: AgentRegisters) -> list[tuple[AgentId, Message]]:
    return [(j, Message(MessageKind.KEEP_ALIVE, reg.id)) for j in reg.neighbors]


def receive_keep_alive(ka: KeepAliveRegister, j: AgentId) -> None:
    ka.heard_from.add(j)


def inspect_neighbors(reg: AgentRegisters, ka: KeepAliveRegister) -> InspectResult:
    """Remove every neighbor not heard from since the previous inspection.

    Neighbors gained after the previous inspection get one pass of grace:
    they may not have had a keep-alive period yet. The caller clears
    solver-side state for each id in ``removed``.
    """
    out = InspectResult()
    for j in reg.neighbors:
        if j in ka.heard_from or j in reg.fresh_neighbors:
            continue
        if j == reg.parent:
            reg.parent = None
            reg.state = ActivityState.INACTIVE
            reg.state_timeout_deadline = None
            reg.empty_attempts = 0
            out.parent_lost = True
        else:
            reg.children.discard(j)
        reg.respondents.pop(j, None)
        out.removed.append(j)
    ka.heard_from.clear()
    reg.fresh_neighbors.clear()
    if out.removed:
        out.trigger = TriggerReason.NEIGHBOR_REMOVED
    return out
