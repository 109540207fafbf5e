"""Peer tables, progress counters and the dispatch round that reads them.

A :class:`PeerTable` is mutated in place; its ``table_identity`` stands in
for the fixed device pointer a captured graph holds, so it must never change
while the owning incarnation lives.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .core import ExpertId, RankId, RoutingTable, Topology
from .errors import ConfigurationError, ProtocolError


class Transport(enum.Enum):
    INTRA_NODE = "intra_node_link"
    INTER_NODE = "inter_node_rdma"


@dataclass
class PeerEntry:
    active: bool
    transport: Transport
    endpoint_token: int
    buffer_handle: int
    generation: int = 0


@dataclass
class PeerTable:
    owner: RankId
    entries: List[PeerEntry]
    table_identity: int

    @classmethod
    def create(
        cls,
        owner: RankId,
        topology: Topology,
        endpoints: Sequence[Tuple[int, int]],
        table_identity: int,
        active: Optional[Iterable[RankId]] = None,
    ) -> "PeerTable":
        """Build a table from per-rank ``(endpoint_token, buffer_handle)`` pairs.

        ``active`` defaults to every rank; a relaunched rank starts with only
        itself active.
        """
        world = topology.world_size
        if len(endpoints) != world:
            raise ConfigurationError(f"need {world} endpoints, got {len(endpoints)}")
        active_set = set(range(world)) if active is None else set(active)
        entries = []
        for rank, (token, buffer) in enumerate(endpoints):
            transport = Transport.INTRA_NODE if topology.same_node(owner, rank) else Transport.INTER_NODE
            entries.append(PeerEntry(rank in active_set, transport, token, buffer))
        return cls(owner, entries, table_identity)

    @property
    def world_size(self) -> int:
        return len(self.entries)

    def active_peers(self) -> Set[RankId]:
        return {r for r, e in enumerate(self.entries) if e.active}


class EndpointAllocator:
    """Deterministic source of opaque endpoint tokens, buffer handles and table identities.

    Values only ever grow, so tokens minted for a new incarnation differ from
    every earlier one.
    """

    def __init__(self):
        self._endpoints = 0
        self._tables = 0

    def endpoint(self) -> Tuple[int, int]:
        n = self._endpoints
        self._endpoints += 1
        return 0x1000 + n, 0xA0000 + 0x100 * n

    def table_identity(self) -> int:
        self._tables += 1
        return 0x7000 + self._tables


def mark_inactive(table: PeerTable, failed: Iterable[RankId]) -> PeerTable:
    """Clear the active bit of each failed peer, leaving addresses in place."""
    failed = set(failed)
    for rank in failed:
        if not 0 <= rank < table.world_size:
            raise ConfigurationError(f"rank {rank} not declared in table of size {table.world_size}")
    if table.owner in failed:
        raise ProtocolError(f"rank {table.owner} cannot deactivate itself")
    for rank in failed:
        table.entries[rank].active = False
    return table


def patch_entry(table: PeerTable, rank: RankId, new_endpoint: int, new_buffer: int) -> PeerTable:
    """Refresh a failed peer's entry with new connection metadata and reactivate it."""
    entry = table.entries[rank]
    if entry.active:
        raise ProtocolError(f"entry for rank {rank} in table of rank {table.owner} is still active")
    entry.endpoint_token = new_endpoint
    entry.buffer_handle = new_buffer
    entry.generation += 1
    entry.active = True
    return table


@dataclass
class SignalCounters:
    """Per-peer signal counters as seen by one receiving rank.

    ``last_progress_time[r]`` is the later of the last observed increment from
    ``r`` and the moment we started waiting on it.
    """

    expected_from: Dict[RankId, int] = field(default_factory=dict)
    observed_from: Dict[RankId, int] = field(default_factory=dict)
    last_progress_time: Dict[RankId, float] = field(default_factory=dict)

    @classmethod
    def for_peers(cls, peers: Iterable[RankId], now: float = 0.0) -> "SignalCounters":
        peers = list(peers)
        return cls({r: 0 for r in peers}, {r: 0 for r in peers}, {r: now for r in peers})

    def outstanding(self, rank: RankId) -> int:
        return self.expected_from.get(rank, 0) - self.observed_from.get(rank, 0)

    def expect(self, rank: RankId, now: float, count: int = 1) -> None:
        if self.outstanding(rank) <= 0:
            self.last_progress_time[rank] = now
        self.expected_from[rank] = self.expected_from.get(rank, 0) + count

    def observe(self, rank: RankId, now: float, count: int = 1) -> None:
        self.observed_from[rank] = self.observed_from.get(rank, 0) + count
        self.last_progress_time[rank] = now

    def forget(self, rank: RankId) -> None:
        for d in (self.expected_from, self.observed_from, self.last_progress_time):
            d.pop(rank, None)


def observe_progress(counters: SignalCounters, now: float, timeout: float) -> Set[RankId]:
    """Peers owing increments for at least ``timeout`` seconds. Does not mutate anything."""
    if timeout <= 0:
        raise ValueError("timeout must be positive")
    return {
        r for r in counters.expected_from
        if counters.outstanding(r) > 0 and now - counters.last_progress_time.get(r, now) >= timeout
    }


@dataclass(frozen=True)
class TransferDescriptor:
    source: RankId
    target: RankId
    expert: ExpertId
    tokens: int
    transport: Transport


@dataclass
class DispatchResult:
    transfers: List[TransferDescriptor]
    skipped: List[Tuple[int, ExpertId, RankId]]


def dispatch_round(
    owner: RankId,
    token_assignments: Sequence[Tuple[int, ExpertId]],
    routing: RoutingTable,
    table: PeerTable,
) -> DispatchResult:
    """Emit one transfer per token group whose routed target is active; skip the rest.

    Whether the target actually hosts the expert is not checked here.
    """
    if table.owner != owner or routing.owner != owner:
        raise ProtocolError(f"tables passed to rank {owner} belong to another rank")
    transfers, skipped = [], []
    for tokens, expert in token_assignments:
        target = routing.route[expert]
        entry = table.entries[target]
        if not entry.active:
            skipped.append((tokens, expert, target))
            continue
        transfers.append(TransferDescriptor(owner, target, expert, tokens, entry.transport))
    return DispatchResult(transfers, skipped)


@dataclass(frozen=True)
class RoundOutcome:
    completed: bool
    suspected_failures: frozenset
    round_duration: float

    def __post_init__(self):
        if self.completed and self.suspected_failures:
            raise ValueError("a completed round cannot carry suspected failures")
