"""Response determinant, respondent selection and the max-degree gate."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional


class TieBreak(str, Enum):
    LOWEST_ID = "lowest_id"


@dataclass(frozen=True)
class PolicyConfig:
    max_out_degree: int = 3
    tie_break: TieBreak = TieBreak.LOWEST_ID

    def __post_init__(self) -> None:
        if self.max_out_degree < 1:
            raise ValueError(f"max_out_degree must be >= 1, got {self.max_out_degree}")


def phi(i: int, j: int, child_count_of_i: int, cfg: PolicyConfig) -> bool:
    """Should agent ``i`` answer an Announce from ``j``?

    Only lower-indexed agents answer, which makes the parent relation
    antisymmetric and keeps the hierarchy acyclic. Agents already at
    their out-degree cap stay silent.
    """
    return i < j and child_count_of_i < cfg.max_out_degree


def select_respondent(
    respondents: Iterable[tuple[int, int]], cfg: PolicyConfig
) -> Optional[int]:
    best: Optional[tuple[int, int]] = None
    for agent, child_count in respondents:
        key = (child_count, agent)
        if best is None or key < best:
            best = key
    return None if best is None else best[1]
