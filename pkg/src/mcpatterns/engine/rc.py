"""Replica failure policy: tolerate losses while ensemble quality holds."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional


class RcAction(enum.Enum):
    CONTINUE = "continue"
    RESTART_REPLICA = "restart_replica"


@dataclass(frozen=True)
class RcState:
    n_replicas: int
    completed: int = 0
    failed: int = 0
    q: float = 0.9
    exchange_interval: Optional[int] = None
    feedback_rounds: int = 1

    def __post_init__(self):
        if self.n_replicas < 1:
            raise ValueError("need at least one replica")
        if self.completed < 0 or self.failed < 0 or self.completed + self.failed > self.n_replicas:
            raise ValueError("inconsistent replica counts")
        if not 0 < self.q <= 1:
            raise ValueError("quality threshold q must lie in (0, 1]")
        if self.exchange_interval is not None and self.exchange_interval < 1:
            raise ValueError("exchange_interval must be >= 1")
        if self.feedback_rounds < 1:
            raise ValueError("feedback_rounds must be >= 1")


def rc_on_failure(state: RcState) -> RcAction:
    """``state.failed`` counts the failure being decided on."""
    surviving = (state.n_replicas - state.failed) / state.n_replicas
    if surviving >= state.q:
        return RcAction.CONTINUE
    return RcAction.RESTART_REPLICA
