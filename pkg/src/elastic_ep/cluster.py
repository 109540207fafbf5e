"""Mutable cluster state shared by the protocol steps and the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .backup import BackupDescriptorTable
from .core import (
    ActiveBitmap,
    ExpertPlacementMap,
    RankId,
    RoutingTable,
    SlotId,
    Topology,
    ValidityReport,
    build_routing,
    check_validity,
)
from .errors import ConfigurationError
from .links import LinkModel
from .membership import EndpointAllocator, PeerTable, mark_inactive
from .rejoin import GraphLedger, LifecycleState, RankLifecycle
from .repair import (
    ExecutionResult,
    RepairPlan,
    RepairTier,
    TransferSchedule,
    build_transfer_schedule,
    execute_schedule,
    plan_repair,
    source_mix,
)


def default_slots_per_rank(num_experts: int, redundancy: int, world_size: int) -> int:
    return -(-(num_experts + redundancy) // world_size)


def initial_placement(
    topology: Topology,
    num_experts: int,
    slots_per_rank: int,
    redundancy: int = 0,
    load: Optional[Sequence[float]] = None,
) -> ExpertPlacementMap:
    """Bring-up placement: experts round-robin over ranks, then replicas.

    The ``redundancy`` hottest experts get one extra copy each, placed one
    node away from the primary when there is more than one node.
    """
    world = topology.world_size
    if num_experts + redundancy > world * slots_per_rank:
        raise ConfigurationError(
            f"{num_experts} experts + {redundancy} replicas exceed {world}x{slots_per_rank} slots")
    if redundancy > num_experts * (world - 1):
        raise ConfigurationError("more replicas requested than distinct ranks can hold")
    load = [1.0] * num_experts if load is None else list(load)
    placement = ExpertPlacementMap(world, slots_per_rank, num_experts)

    def free_slot(rank):
        for i in range(slots_per_rank):
            if placement.expert_at(SlotId(rank, i)) is None:
                return SlotId(rank, i)
        return None

    for e in range(num_experts):
        rank = e % world
        while free_slot(rank) is None:
            rank = (rank + 1) % world
        placement.assign(free_slot(rank), e)

    stride = topology.ranks_per_node if topology.num_nodes > 1 else 1
    hot = sorted(range(num_experts), key=lambda e: (-load[e], e))
    for k in range(redundancy):
        e = hot[k % num_experts]
        rank = (min(placement.ranks_hosting(e)) + stride * (1 + k // num_experts)) % world
        for _ in range(world):
            if free_slot(rank) is not None and not placement.hosts(rank, e):
                break
            rank = (rank + 1) % world
        else:
            rank = _make_room(placement, e, free_slot)
        placement.assign(free_slot(rank), e)
    return placement


def _make_room(placement: ExpertPlacementMap, expert: int, free_slot) -> RankId:
    """Free a slot on some rank without ``expert`` by moving one of its experts to a spare slot.

    Only needed when every spare slot sits on a rank that already holds ``expert``.
    """
    world = placement.world_size
    for a in range(world):
        spare = free_slot(a)
        if spare is None:
            continue
        for b in range(world):
            if placement.hosts(b, expert):
                continue
            for slot in (SlotId(b, i) for i in range(placement.slots_per_rank)):
                x = placement.expert_at(slot)
                if x is not None and not placement.hosts(a, x):
                    placement.assign(spare, x)
                    placement.clear(slot)
                    return b
    raise ConfigurationError(f"no rank can take another copy of expert {expert}")


@dataclass
class RepairOutcome:
    plan: RepairPlan
    schedule: TransferSchedule
    baseline: ExpertPlacementMap
    mix: Dict[RepairTier, int]


@dataclass
class ClusterState:
    topology: Topology
    bytes_per_expert: int
    load: List[float]
    bitmap: ActiveBitmap
    placement: ExpertPlacementMap
    preferred: ExpertPlacementMap
    backup: BackupDescriptorTable
    peer_tables: List[PeerTable] = field(default_factory=list)
    routing: List[RoutingTable] = field(default_factory=list)
    lifecycles: List[RankLifecycle] = field(default_factory=list)
    ledger: GraphLedger = field(default_factory=GraphLedger)
    endpoints: EndpointAllocator = field(default_factory=EndpointAllocator)
    current_endpoint: List[Tuple[int, int]] = field(default_factory=list)
    alive: List[bool] = field(default_factory=list)
    warm_slots: Dict[RankId, Tuple] = field(default_factory=dict)

    @classmethod
    def bring_up(
        cls,
        topology: Topology,
        placement: ExpertPlacementMap,
        backup: BackupDescriptorTable,
        bytes_per_expert: int,
        load: Optional[Sequence[float]] = None,
    ) -> "ClusterState":
        world = topology.world_size
        if placement.world_size != world:
            raise ConfigurationError("placement world size differs from topology")
        state = cls(
            topology=topology,
            bytes_per_expert=bytes_per_expert,
            load=[1.0] * placement.num_experts if load is None else list(load),
            bitmap=ActiveBitmap.full(world),
            placement=placement.copy(),
            preferred=placement.copy(),
            backup=backup,
        )
        state.current_endpoint = [state.endpoints.endpoint() for _ in range(world)]
        for r in range(world):
            table = PeerTable.create(r, topology, state.current_endpoint, state.endpoints.table_identity())
            state.peer_tables.append(table)
            state.routing.append(build_routing(r, state.placement, state.bitmap))
            state.lifecycles.append(RankLifecycle())
            state.ledger.capture(r, table.table_identity)
        state.ledger.seal_bring_up()
        state.alive = [True] * world
        return state

    @property
    def world_size(self) -> int:
        return self.topology.world_size

    def refresh_routing(self) -> None:
        """Patch every active rank's routing contents in place."""
        for r in self.bitmap.active_ranks():
            self.routing[r].route[:] = build_routing(r, self.placement, self.bitmap).route

    def validity(self) -> ValidityReport:
        active = set(self.bitmap.active_ranks())
        return check_validity(
            self.bitmap,
            self.placement,
            [self.routing[r] if r in active else None for r in range(self.world_size)],
            [self.peer_tables[r] if r in active else None for r in range(self.world_size)],
        )

    def kill(self, ranks) -> None:
        for r in ranks:
            self.alive[r] = False
            self.lifecycles[r].transition(LifecycleState.FAILED)
            self.warm_slots.pop(r, None)

    def deactivate(self, failed) -> List[RankId]:
        """Clear the failed peers from every surviving table and the bitmap.

        Returns the owners whose tables were patched.
        """
        failed = sorted(set(failed))
        owners = [r for r in self.bitmap.active_ranks() if r not in failed]
        for owner in owners:
            mark_inactive(self.peer_tables[owner], failed)
        self.bitmap.deactivate(failed)
        return owners

    def plan_repair(self) -> RepairOutcome:
        baseline = self.placement.copy()
        plan = plan_repair(self.bitmap, baseline, self.load, self.topology)
        schedule = build_transfer_schedule(
            plan.classification(), self.bytes_per_expert, plan.new_placement, self.bitmap.version)
        return RepairOutcome(plan, schedule, baseline, source_mix(baseline, plan.new_placement, self.bitmap))

    def apply_repair(self, outcome: RepairOutcome, links: LinkModel) -> ExecutionResult:
        result = execute_schedule(outcome.schedule, self.bitmap, self.backup, links, self.topology, self.placement)
        self.placement = result.placement
        self.refresh_routing()
        return result
