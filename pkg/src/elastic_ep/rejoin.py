"""Deferred-join reintegration: rank lifecycle, graph ledger, readiness polling."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .core import RankId
from .errors import ProtocolError


class LifecycleState(enum.Enum):
    SERVING = "Serving"
    FAILED = "Failed"
    RELAUNCHING = "Relaunching"
    LOCAL_INIT = "LocalInit"
    JOIN_READY = "JoinReady"
    JOINING = "Joining"
    REJOINED = "Rejoined"


_NEXT = {
    LifecycleState.SERVING: {LifecycleState.FAILED},
    LifecycleState.FAILED: {LifecycleState.RELAUNCHING},
    LifecycleState.RELAUNCHING: {LifecycleState.LOCAL_INIT},
    LifecycleState.LOCAL_INIT: {LifecycleState.JOIN_READY},
    LifecycleState.JOIN_READY: {LifecycleState.JOINING},
    LifecycleState.JOINING: {LifecycleState.REJOINED},
    LifecycleState.REJOINED: {LifecycleState.SERVING},
}


@dataclass
class RankLifecycle:
    state: LifecycleState = LifecycleState.SERVING
    incarnation: int = 0

    def transition(self, to: LifecycleState) -> None:
        # A process can be killed in any live state, including mid-warmup or mid-join.
        if to is LifecycleState.FAILED and self.state is not LifecycleState.FAILED:
            self.state = to
            return
        if to not in _NEXT[self.state]:
            raise ProtocolError(f"illegal lifecycle transition {self.state.value} -> {to.value}")
        if to is LifecycleState.RELAUNCHING:
            self.incarnation += 1
        self.state = to


@dataclass
class GraphLedger:
    """Graph capture counts per rank and the table identity each capture pinned."""

    capture_count: Dict[RankId, int] = field(default_factory=dict)
    table_identity_at_capture: Dict[RankId, int] = field(default_factory=dict)
    bring_up_count: Dict[RankId, int] = field(default_factory=dict)

    def capture(self, rank: RankId, table_identity: int) -> None:
        self.capture_count[rank] = self.capture_count.get(rank, 0) + 1
        self.table_identity_at_capture[rank] = table_identity

    def seal_bring_up(self) -> None:
        self.bring_up_count = dict(self.capture_count)

    def recaptures(self, rank: RankId) -> int:
        return self.capture_count.get(rank, 0) - self.bring_up_count.get(rank, 0)


@dataclass(frozen=True)
class JoinReadySignal:
    rank: RankId
    incarnation: int
    endpoint_token: int
    buffer_handle: int


WARMUP_PHASES: Tuple[Tuple[str, float], ...] = (
    ("runtime_init", 0.20),
    ("endpoint_rebuild", 0.10),
    ("weight_load", 0.45),
    ("graph_capture", 0.25),
)


@dataclass(frozen=True)
class WarmupPlan:
    rank: RankId
    incarnation: int
    start: float
    duration: float
    phases: Tuple[Tuple[str, float], ...]  # (phase name, start time)

    @property
    def ready_time(self) -> float:
        return self.start + self.duration


def relaunch(
    lifecycle: RankLifecycle,
    rank: RankId,
    now: float,
    warmup: float,
    jitter: float = 0.0,
    jitter_draw: float = 0.0,
) -> WarmupPlan:
    """Restart a failed rank; returns the isolated warmup schedule.

    ``jitter_draw`` in [0, 1) scales ``jitter`` and comes from the caller's
    deterministic generator.
    """
    if lifecycle.state is not LifecycleState.FAILED:
        raise ProtocolError(f"rank {rank} is {lifecycle.state.value}, only failed ranks relaunch")
    lifecycle.transition(LifecycleState.RELAUNCHING)
    duration = warmup + jitter * jitter_draw
    phases, t = [], now
    for name, share in WARMUP_PHASES:
        phases.append((name, t))
        t += share * duration
    return WarmupPlan(rank, lifecycle.incarnation, now, duration, tuple(phases))


def next_poll_tick(t: float, period: float) -> float:
    """First point on the polling grid ``k * period`` at or after ``t``."""
    if period <= 0:
        raise ValueError("poll period must be positive")
    k = math.ceil(round(t / period, 9))
    return k * period


@dataclass
class JoinController:
    """Healthy-side view of relaunched ranks, fed by their join-ready reports."""

    period: float
    ready: Dict[RankId, Tuple[float, JoinReadySignal]] = field(default_factory=dict)

    def report(self, signal: JoinReadySignal, at: float) -> None:
        self.ready[signal.rank] = (at, signal)

    def withdraw(self, rank: RankId) -> None:
        self.ready.pop(rank, None)

    def ready_signals(self, now: float) -> List[JoinReadySignal]:
        due = sorted((t, rank, sig) for rank, (t, sig) in self.ready.items() if t <= now + 1e-12)
        return [sig for _, _, sig in due]


def poll_join_ready(controller: JoinController, now: float) -> Optional[JoinReadySignal]:
    """Earliest join-ready signal visible at ``now``, if any. Pure."""
    signals = controller.ready_signals(now)
    return signals[0] if signals else None


@dataclass
class IncorporationResult:
    joined: List[RankId]
    dropped: List[Tuple[JoinReadySignal, str]]
    patched_tables: int = 0
    schedule: Optional[object] = None
    execution: Optional[object] = None
    mix: Dict = field(default_factory=dict)
    healthy_new_captures: int = 0


def _drop_reason(signal: JoinReadySignal, state) -> Optional[str]:
    if not 0 <= signal.rank < state.world_size:
        return "unknown rank"
    life = state.lifecycles[signal.rank]
    if life.state is not LifecycleState.JOIN_READY:
        return f"rank is {life.state.value}"
    if signal.incarnation != life.incarnation:
        return f"stale incarnation {signal.incarnation} (current {life.incarnation})"
    if (signal.endpoint_token, signal.buffer_handle) != tuple(state.current_endpoint[signal.rank]):
        return "endpoint tokens do not match the current incarnation"
    if state.bitmap.is_active(signal.rank):
        return "rank is already active"
    return None


def finish_join(lifecycle: RankLifecycle) -> None:
    lifecycle.transition(LifecycleState.REJOINED)
    lifecycle.transition(LifecycleState.SERVING)


def incorporate(signals, state, links, complete: bool = True) -> IncorporationResult:
    """Bring join-ready ranks back into a live cluster from the healthy side.

    Step 1 patches the rejoining entries in every active peer table and sets
    the bitmap bits. Step 2 overwrites each rejoiner's routing view with the
    current expert locations, whether or not anything moved. The preferred
    placement is then restored with the ordinary repair machinery, treating
    the weights a rejoiner loaded during warmup as local copies.

    Invalid or stale signals are dropped and leave the rank untouched. With
    ``complete=False`` the joiners stay in ``Joining`` so a caller can model
    the pause before calling :func:`finish_join`.
    """
    from .core import SlotId, build_routing
    from .membership import patch_entry
    from .repair import (build_transfer_schedule, classify_repair_sources,
                         compute_repaired_placement, execute_schedule, source_mix)

    captures_before = dict(state.ledger.capture_count)
    joined, dropped = [], []
    for signal in signals:
        reason = "duplicate signal" if signal.rank in joined else _drop_reason(signal, state)
        if reason is None and not state.alive[signal.rank]:
            state.lifecycles[signal.rank].transition(LifecycleState.FAILED)
            reason = "rank died before incorporation"
        if reason is not None:
            dropped.append((signal, reason))
            continue
        joined.append(signal.rank)
    result = IncorporationResult(sorted(joined), dropped)
    if not joined:
        return result

    for rank in result.joined:
        state.lifecycles[rank].transition(LifecycleState.JOINING)
    state.bitmap.activate(result.joined)
    active = state.bitmap.active_ranks()
    for owner in active:
        table = state.peer_tables[owner]
        stale = [r for r in active if not table.entries[r].active]
        for r in stale:
            patch_entry(table, r, *state.current_endpoint[r])
        result.patched_tables += bool(stale)

    old = state.placement.copy()
    for rank in result.joined:
        old.clear_rank(rank)
        for index, e in enumerate(state.warm_slots.get(rank, ())):
            if e is not None:
                old.assign(SlotId(rank, index), e)
    for rank in result.joined:
        state.routing[rank] = build_routing(rank, old, state.bitmap)

    target = compute_repaired_placement(state.bitmap, state.preferred, state.load)
    classification = classify_repair_sources(old, target, state.bitmap, state.topology)
    schedule = build_transfer_schedule(classification, state.bytes_per_expert, target, state.bitmap.version)
    execution = execute_schedule(schedule, state.bitmap, state.backup, links, state.topology, old)
    state.placement = execution.placement
    state.refresh_routing()
    result.schedule, result.execution = schedule, execution
    result.mix = source_mix(old, target, state.bitmap)

    if complete:
        for rank in result.joined:
            finish_join(state.lifecycles[rank])
    healthy = [r for r in range(state.world_size) if r not in result.joined]
    result.healthy_new_captures = sum(
        state.ledger.capture_count.get(r, 0) - captures_before.get(r, 0) for r in healthy)
    return result
