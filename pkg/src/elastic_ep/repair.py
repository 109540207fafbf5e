"""Expert-coverage repair over the surviving ranks.

Planning is pure: :func:`compute_repaired_placement` picks a placement,
:func:`classify_repair_sources` picks the cheapest source for every slot
that changes, and :func:`build_transfer_schedule` batches the moves.
:func:`execute_schedule` then applies the schedule against the live bitmap,
falling back to DRAM backups for peer sources that died after planning.
"""

from __future__ import annotations

import enum
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from .backup import BackupDescriptorTable, BackupReadRequest, serve_reads
from .core import ActiveBitmap, ExpertId, ExpertPlacementMap, RankId, SlotId, Topology
from .errors import CapacityError, ConfigurationError, RepairAborted
from .links import LinkModel
from .membership import Transport


class RepairTier(enum.IntEnum):
    LOCAL_REUSE = 0
    PEER_RELOCATION = 1
    DRAM_RELOAD = 2


class Classification(NamedTuple):
    expert: ExpertId
    tier: RepairTier
    source: Optional[SlotId]  # None means the DRAM backup service


@dataclass(frozen=True)
class Assignment:
    destination: SlotId
    expert: ExpertId
    tier: RepairTier
    source: Optional[SlotId]


@dataclass
class RepairPlan:
    new_placement: ExpertPlacementMap
    assignments: List[Assignment]

    def classification(self) -> Dict[SlotId, "Classification"]:
        return {a.destination: Classification(a.expert, a.tier, a.source) for a in self.assignments}


def _uniform(num_experts: int) -> List[float]:
    return [1.0] * num_experts


def compute_repaired_placement(
    active: ActiveBitmap,
    old: ExpertPlacementMap,
    load: Optional[Sequence[float]] = None,
) -> ExpertPlacementMap:
    """Deterministic greedy placement covering every expert on active ranks.

    1. Keep one surviving copy of each expert (lowest slot on an active rank).
    2. Place experts with no surviving copy, hottest first, on the least-loaded
       active rank with an unclaimed slot, preferring empty slots over slots
       holding spare replicas.
    3. Keep the remaining surviving replicas, then re-create redundancy from
       surviving copies until occupancy is back to what ``old`` had.
    """
    if active.world_size != old.world_size:
        raise ConfigurationError("bitmap and placement disagree on world size")
    n = old.num_experts
    load = _uniform(n) if load is None else list(load)
    if len(load) != n or any(w < 0 for w in load):
        raise ConfigurationError("load must give a non-negative weight per expert")
    ranks = active.active_ranks()
    capacity = len(ranks) * old.slots_per_rank
    if capacity < n:
        raise CapacityError(f"{len(ranks)} active ranks offer {capacity} slots for {n} experts")

    order = sorted(range(n), key=lambda e: (-load[e], e))
    new = ExpertPlacementMap(old.world_size, old.slots_per_rank, n)
    claimed = set()
    rank_load = {r: 0.0 for r in ranks}

    def claim(slot, expert):
        new.assign(slot, expert)
        claimed.add(slot)
        rank_load[slot.rank] += load[expert]

    missing = []
    for e in order:
        holders = sorted(s for s in old.locations(e) if active.is_active(s.rank))
        if holders:
            claim(holders[0], e)
        else:
            missing.append(e)

    def unclaimed(rank):
        return [SlotId(rank, i) for i in range(old.slots_per_rank) if SlotId(rank, i) not in claimed]

    for e in missing:
        candidates = [r for r in ranks if unclaimed(r)]
        rank = min(candidates, key=lambda r: (rank_load[r], r))
        slot = min(unclaimed(rank), key=lambda s: (old.expert_at(s) is not None, s.index))
        claim(slot, e)

    for rank in ranks:
        for slot in unclaimed(rank):
            e = old.expert_at(slot)
            if e is not None and not new.hosts(rank, e):
                claim(slot, e)

    copies = Counter(e for _, e in new.occupied())
    refillable = [e for e in range(n) if any(active.is_active(r) for r in old.ranks_hosting(e))]
    target = min(old.occupancy(), capacity)
    occupancy = sum(copies.values())
    while occupancy < target:
        placed = False
        for e in sorted(refillable, key=lambda e: (-load[e] / copies[e], e)):
            options = [r for r in ranks if not new.hosts(r, e)
                       and any(new.expert_at(s) is None for s in unclaimed(r))]
            if not options:
                continue
            rank = min(options, key=lambda r: (rank_load[r], r))
            slot = min((s for s in unclaimed(rank) if new.expert_at(s) is None), key=lambda s: s.index)
            claim(slot, e)
            copies[e] += 1
            occupancy += 1
            placed = True
            break
        if not placed:
            break
    return new


def changed_slots(old: ExpertPlacementMap, new: ExpertPlacementMap, active: ActiveBitmap) -> List[SlotId]:
    """Occupied slots on active ranks whose content differs between ``old`` and ``new``."""
    return [
        slot for slot, e in new.occupied()
        if active.is_active(slot.rank) and old.expert_at(slot) != e
    ]


def classify_repair_sources(
    old: ExpertPlacementMap,
    new: ExpertPlacementMap,
    active: ActiveBitmap,
    topology: Optional[Topology] = None,
) -> Dict[SlotId, Classification]:
    """Pick the cheapest source tier for every slot whose content changes.

    Peer sources prefer the destination's node (when ``topology`` is given),
    then the source with the fewest outgoing batches so far, then the lowest rank.
    """
    if not old.same_shape(new):
        raise ConfigurationError("old and new placements differ in shape")
    result: Dict[SlotId, Classification] = {}
    outgoing: Dict[RankId, set] = defaultdict(set)
    for slot in changed_slots(old, new, active):
        e = new.expert_at(slot)
        local = sorted(s for s in old.locations(e) if s.rank == slot.rank)
        if local:
            result[slot] = Classification(e, RepairTier.LOCAL_REUSE, local[0])
            continue
        sources = sorted({s.rank for s in old.locations(e) if active.is_active(s.rank)})
        if not sources:
            result[slot] = Classification(e, RepairTier.DRAM_RELOAD, None)
            continue

        def preference(r):
            remote = 0 if topology is None or topology.same_node(r, slot.rank) else 1
            return (remote, len(outgoing[r]), r)

        src = min(sources, key=preference)
        outgoing[src].add(slot.rank)
        src_slot = min(s for s in old.locations(e) if s.rank == src)
        result[slot] = Classification(e, RepairTier.PEER_RELOCATION, src_slot)
    return result


def plan_repair(
    active: ActiveBitmap,
    old: ExpertPlacementMap,
    load: Optional[Sequence[float]] = None,
    topology: Optional[Topology] = None,
) -> RepairPlan:
    new = compute_repaired_placement(active, old, load)
    classification = classify_repair_sources(old, new, active, topology)
    assignments = [Assignment(slot, c.expert, c.tier, c.source) for slot, c in sorted(classification.items())]
    return RepairPlan(new, assignments)


def source_mix(old: ExpertPlacementMap, new: ExpertPlacementMap, active: ActiveBitmap) -> Dict[RepairTier, int]:
    """Tier counts over every occupied slot of ``new`` on active ranks.

    Unchanged slots count as local reuse; changed slots use the minimum tier.
    """
    mix = {tier: 0 for tier in RepairTier}
    for slot, e in new.occupied():
        if not active.is_active(slot.rank):
            continue
        if old.hosts(slot.rank, e):
            mix[RepairTier.LOCAL_REUSE] += 1
        elif any(active.is_active(r) for r in old.ranks_hosting(e)):
            mix[RepairTier.PEER_RELOCATION] += 1
        else:
            mix[RepairTier.DRAM_RELOAD] += 1
    return mix


@dataclass(frozen=True)
class TransferBatch:
    tier: RepairTier
    source: Optional[RankId]  # None: DRAM backup service
    destination: RankId
    experts: Tuple[ExpertId, ...]
    slots: Tuple[SlotId, ...]
    nbytes: int


@dataclass
class TransferSchedule:
    batches: List[TransferBatch]
    target: Optional[ExpertPlacementMap] = None
    bitmap_version: Optional[int] = None

    def bytes_by_tier(self) -> Dict[RepairTier, int]:
        totals = {tier: 0 for tier in RepairTier}
        for batch in self.batches:
            totals[batch.tier] += batch.nbytes
        return totals


def build_transfer_schedule(
    classification: Mapping[SlotId, Classification],
    bytes_per_expert: int,
    target: Optional[ExpertPlacementMap] = None,
    bitmap_version: Optional[int] = None,
) -> TransferSchedule:
    """Group classified moves by (tier, source rank, destination rank).

    Local reuse batches carry zero bytes; they only update metadata.
    """
    groups: Dict[Tuple[RepairTier, Optional[RankId], RankId], List[Tuple[SlotId, ExpertId]]] = defaultdict(list)
    for slot, c in sorted(classification.items()):
        src = None if c.source is None else c.source.rank
        groups[(c.tier, src, slot.rank)].append((slot, c.expert))
    batches = []
    for (tier, src, dst), moves in sorted(groups.items(), key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1], kv[0][2])):
        experts = tuple(e for _, e in moves)
        nbytes = 0 if tier is RepairTier.LOCAL_REUSE else len(experts) * bytes_per_expert
        batches.append(TransferBatch(tier, src, dst, experts, tuple(s for s, _ in moves), nbytes))
    return TransferSchedule(batches, target, bitmap_version)


@dataclass(frozen=True)
class FallbackEvent:
    expert: ExpertId
    destination: RankId
    lost_source: RankId


@dataclass
class ExecutionResult:
    placement: ExpertPlacementMap
    fallbacks: List[FallbackEvent]
    elapsed: float
    phases: Dict[str, float] = field(default_factory=dict)


def execute_schedule(
    schedule: TransferSchedule,
    bitmap: ActiveBitmap,
    backup: BackupDescriptorTable,
    links: LinkModel,
    topology: Topology,
    current: ExpertPlacementMap,
) -> ExecutionResult:
    """Issue every batch after reading the live bitmap.

    Peer batches whose source is no longer active are served from DRAM
    instead. Peer batches sharing a source egress or destination ingress
    serialize; otherwise they overlap. Backup reads follow
    :func:`serve_reads`. The peer phase runs before the backup phase.
    """
    if schedule.target is None:
        raise ConfigurationError("schedule carries no target placement")
    dead_destinations = sorted({b.destination for b in schedule.batches if not bitmap.is_active(b.destination)})
    if dead_destinations:
        raise RepairAborted(dead_destinations)

    fallbacks: List[FallbackEvent] = []
    dram: Dict[RankId, List[ExpertId]] = defaultdict(list)
    port_busy: Dict[Tuple[str, RankId], float] = defaultdict(float)
    for batch in schedule.batches:
        if batch.tier is RepairTier.LOCAL_REUSE:
            continue
        if batch.tier is RepairTier.DRAM_RELOAD:
            dram[batch.destination].extend(batch.experts)
            continue
        if not bitmap.is_active(batch.source):
            for e in batch.experts:
                fallbacks.append(FallbackEvent(e, batch.destination, batch.source))
            dram[batch.destination].extend(batch.experts)
            continue
        transport = Transport.INTRA_NODE if topology.same_node(batch.source, batch.destination) else Transport.INTER_NODE
        duration = links.transfer_time(batch.nbytes, transport)
        port_busy[("out", batch.source)] += duration
        port_busy[("in", batch.destination)] += duration

    peer_time = max(port_busy.values(), default=0.0)
    requests = [BackupReadRequest(tuple(experts), dst) for dst, experts in sorted(dram.items())]
    dram_time = serve_reads(backup, requests, links)

    placement = current.copy()
    target = schedule.target
    for rank in range(placement.world_size):
        for index in range(placement.slots_per_rank):
            slot = SlotId(rank, index)
            e = target.expert_at(slot)
            if e is None:
                placement.clear(slot)
            elif placement.expert_at(slot) != e:
                placement.assign(slot, e)
    return ExecutionResult(
        placement, fallbacks, peer_time + dram_time,
        {"peer_transfer": peer_time, "backup_load": dram_time},
    )
