"""Omniscient observer: hierarchy validity, stabilization and run metrics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .model import ConstraintEdge, global_cost
from .policies import PolicyConfig
from .protocol import AgentId


@dataclass(frozen=True)
class HierarchySnapshot:
    at: float
    parent_of: Mapping[AgentId, Optional[AgentId]]
    children_of: Mapping[AgentId, frozenset[AgentId]]
    live_agents: frozenset[AgentId]

    def structure(self) -> tuple:
        return (
            tuple(sorted(self.parent_of.items(), key=lambda kv: kv[0])),
            tuple(sorted((k, tuple(sorted(v))) for k, v in self.children_of.items())),
        )

    def roots(self) -> list[AgentId]:
        return sorted(
            a for a in self.live_agents if self.parent_of.get(a) is None or self.parent_of[a] not in self.live_agents
        )

    def max_depth(self) -> int:
        depth = 0
        frontier = [(r, 0) for r in self.roots()]
        seen: set[AgentId] = set()
        while frontier:
            node, d = frontier.pop()
            if node in seen:
                continue
            seen.add(node)
            depth = max(depth, d)
            for c in self.children_of.get(node, ()):
                if c in self.live_agents and self.parent_of.get(c) == node:
                    frontier.append((c, d + 1))
        return depth


@dataclass
class MetricsRecord:
    event_index: int
    at: float
    event: str
    global_cost: float
    messages_by_kind: dict[str, int]
    total_messages: int
    tree_count: int
    max_depth: int
    live_agents: int
    violations: list[str] = field(default_factory=list)
    warnings: dict[str, int] = field(default_factory=dict)
    quiescent: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def validate_hierarchy(s: HierarchySnapshot, cfg: PolicyConfig, quiescent: bool = False) -> list[str]:
    """List every way ``s`` fails to be a valid hierarchy (empty when valid).

    Mutual consistency between parent and child registers, and references
    to departed agents, are only demanded when ``quiescent`` is set.
    """
    out: list[str] = []
    for a in sorted(s.parent_of):
        p = s.parent_of[a]
        if p is not None and not p < a:
            out.append(f"ordering: agent {a} has parent {p}")
    for a in sorted(s.children_of):
        kids = s.children_of[a]
        if len(kids) > cfg.max_out_degree:
            out.append(f"degree: agent {a} has {len(kids)} children > {cfg.max_out_degree}")
        for c in sorted(kids):
            if not a < c:
                out.append(f"ordering: agent {a} lists child {c}")
            if s.parent_of.get(a) == c:
                out.append(f"parent-child: agent {a} lists its parent {c} as a child")
    for a in sorted(s.parent_of):
        seen = {a}
        p = s.parent_of[a]
        while p is not None:
            if p in seen:
                out.append(f"cycle: through agent {a}")
                break
            seen.add(p)
            p = s.parent_of.get(p)
    if quiescent:
        for a in sorted(s.live_agents):
            p = s.parent_of.get(a)
            if p is not None and (p not in s.live_agents or a not in s.children_of.get(p, ())):
                out.append(f"consistency: agent {a} claims parent {p} which does not list it")
            for c in sorted(s.children_of.get(a, ())):
                if c not in s.live_agents or s.parent_of.get(c) != a:
                    out.append(f"consistency: agent {a} lists child {c} whose parent is {s.parent_of.get(c)}")
    return out


def snapshot_metrics(
    event_index: int,
    at: float,
    event: str,
    edges: Iterable[ConstraintEdge],
    values: Mapping[AgentId, float],
    messages_by_kind: Mapping[str, int],
    hierarchy: HierarchySnapshot,
    cfg: PolicyConfig,
    warnings: Optional[Mapping[str, int]] = None,
    quiescent: bool = False,
    extra_violations: Sequence[str] = (),
) -> MetricsRecord:
    return MetricsRecord(
        event_index=event_index,
        at=at,
        event=event,
        global_cost=global_cost(edges, values),
        messages_by_kind=dict(sorted(messages_by_kind.items())),
        total_messages=sum(messages_by_kind.values()),
        tree_count=len(hierarchy.roots()),
        max_depth=hierarchy.max_depth(),
        live_agents=len(hierarchy.live_agents),
        violations=list(extra_violations) + validate_hierarchy(hierarchy, cfg, quiescent),
        warnings=dict(sorted((warnings or {}).items())),
        quiescent=quiescent,
    )


def check_stabilization(
    snapshots: Sequence[HierarchySnapshot],
    last_event_at: float,
    end_at: float,
    min_quiet: float = 5.0,
) -> tuple[bool, Optional[float]]:
    """Find the instant after which the hierarchy stops changing.

    The returned time is the later of ``last_event_at`` and the last
    structural change in ``snapshots``. The run counts as stabilized only
    when the structure then stays put for at least ``min_quiet`` before
    ``end_at``; a hierarchy still changing at the end reports False.
    """
    t = last_event_at
    prev = None
    for snap in sorted(snapshots, key=lambda s: s.at):
        cur = snap.structure()
        if prev is not None and cur != prev and snap.at > t:
            t = snap.at
        prev = cur
    if end_at - t < min_quiet:
        return False, None
    return True, t
