"""Scripted fault injection."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from ..errors import ConfigurationError


class FaultAction(enum.Enum):
    KILL_RANK = "kill_rank"
    RELAUNCH_RANK = "relaunch_rank"


@dataclass(frozen=True)
class FaultEvent:
    time: float
    action: FaultAction
    rank: int


@dataclass(frozen=True)
class FaultScript:
    events: Tuple[FaultEvent, ...] = ()

    @classmethod
    def of(cls, items: Sequence[Tuple[float, str, int]]) -> "FaultScript":
        return cls(tuple(FaultEvent(float(t), FaultAction(a), int(r)) for t, a, r in items))

    def problems(self, world_size: int) -> List[Tuple[int, str, str]]:
        """(event index, field, message) for every violated script invariant."""
        found = []
        last_time = float("-inf")
        down = set()
        for i, ev in enumerate(self.events):
            if ev.time < 0:
                found.append((i, "time", f"time {ev.time} is negative"))
            if ev.time < last_time:
                found.append((i, "time", f"time {ev.time} is earlier than the previous event at {last_time}"))
            last_time = max(last_time, ev.time)
            if not 0 <= ev.rank < world_size:
                found.append((i, "rank", f"rank {ev.rank} is outside the world of {world_size} ranks"))
                continue
            if ev.action is FaultAction.KILL_RANK:
                if ev.rank in down:
                    found.append((i, "action", f"rank {ev.rank} is killed again before being relaunched"))
                down.add(ev.rank)
            else:
                if ev.rank not in down:
                    found.append((i, "action", f"rank {ev.rank} is relaunched without a preceding kill"))
                down.discard(ev.rank)
        return found

    def validate(self, world_size: int) -> None:
        problems = self.problems(world_size)
        if problems:
            i, key, msg = problems[0]
            raise ConfigurationError(f"faults[{i}].{key}: {msg}")
