"""Cluster identity types, expert placement and routing state, validity checks.

Ranks, nodes and logical experts are plain ``int`` indices. A physical slot
is addressed by :class:`SlotId`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, NamedTuple, Optional, Sequence, Set, Tuple

from .errors import ConfigurationError, ProtocolError

RankId = int
NodeId = int
ExpertId = int


class SlotId(NamedTuple):
    rank: RankId
    index: int


@dataclass(frozen=True)
class Topology:
    num_nodes: int
    ranks_per_node: int

    def __post_init__(self):
        if self.num_nodes < 1 or self.ranks_per_node < 1:
            raise ConfigurationError("topology needs at least one node and one rank per node")

    @property
    def world_size(self) -> int:
        return self.num_nodes * self.ranks_per_node

    def node_of(self, rank: RankId) -> NodeId:
        if not 0 <= rank < self.world_size:
            raise ConfigurationError(f"rank {rank} outside world of size {self.world_size}")
        return rank // self.ranks_per_node

    def same_node(self, a: RankId, b: RankId) -> bool:
        return self.node_of(a) == self.node_of(b)

    def ranks_on(self, node: NodeId) -> range:
        start = node * self.ranks_per_node
        return range(start, start + self.ranks_per_node)


class ActiveBitmap:
    """Active-rank bitmap with a version bumped on every effective change."""

    def __init__(self, bits: Iterable[bool], version: int = 0):
        self._bits = [bool(b) for b in bits]
        if not any(self._bits):
            raise ProtocolError("active bitmap must keep at least one rank active")
        self.version = version

    @classmethod
    def full(cls, world_size: int) -> "ActiveBitmap":
        return cls([True] * world_size)

    @property
    def world_size(self) -> int:
        return len(self._bits)

    @property
    def bits(self) -> Tuple[bool, ...]:
        return tuple(self._bits)

    def is_active(self, rank: RankId) -> bool:
        return self._bits[rank]

    def active_ranks(self) -> List[RankId]:
        return [r for r, b in enumerate(self._bits) if b]

    def _set(self, ranks: Iterable[RankId], value: bool) -> bool:
        new = list(self._bits)
        for r in ranks:
            if not 0 <= r < len(new):
                raise ConfigurationError(f"rank {r} outside bitmap of size {len(new)}")
            new[r] = value
        if new == self._bits:
            return False
        if not any(new):
            raise ProtocolError("active bitmap must keep at least one rank active")
        self._bits = new
        self.version += 1
        return True

    def deactivate(self, ranks: Iterable[RankId]) -> bool:
        return self._set(ranks, False)

    def activate(self, ranks: Iterable[RankId]) -> bool:
        return self._set(ranks, True)

    def copy(self) -> "ActiveBitmap":
        return ActiveBitmap(self._bits, self.version)

    def __eq__(self, other):
        if not isinstance(other, ActiveBitmap):
            return NotImplemented
        return self._bits == other._bits and self.version == other.version

    def __repr__(self):
        active = "".join("1" if b else "0" for b in self._bits)
        return f"ActiveBitmap({active}, v{self.version})"


class ExpertPlacementMap:
    """Slot-to-expert map with its derived expert-to-locations inverse.

    The inverse is maintained by :meth:`assign` and :meth:`clear` only; use
    :meth:`derive_locations` to rebuild it from scratch for cross-checks.
    """

    def __init__(self, world_size: int, slots_per_rank: int, num_experts: int):
        if world_size < 1 or slots_per_rank < 1 or num_experts < 1:
            raise ConfigurationError("placement dimensions must be positive")
        self.world_size = world_size
        self.slots_per_rank = slots_per_rank
        self.num_experts = num_experts
        self._slots: List[List[Optional[ExpertId]]] = [
            [None] * slots_per_rank for _ in range(world_size)
        ]
        self._locations: Dict[ExpertId, Set[SlotId]] = {e: set() for e in range(num_experts)}

    @classmethod
    def from_rank_lists(
        cls,
        rank_experts: Sequence[Sequence[Optional[ExpertId]]],
        slots_per_rank: int,
        num_experts: int,
    ) -> "ExpertPlacementMap":
        placement = cls(len(rank_experts), slots_per_rank, num_experts)
        for rank, experts in enumerate(rank_experts):
            if len(experts) > slots_per_rank:
                raise ConfigurationError(
                    f"rank {rank} lists {len(experts)} experts but has {slots_per_rank} slots"
                )
            for index, expert in enumerate(experts):
                if expert is not None:
                    placement.assign(SlotId(rank, index), expert)
        return placement

    def _check_slot(self, slot: SlotId):
        if not (0 <= slot.rank < self.world_size and 0 <= slot.index < self.slots_per_rank):
            raise ConfigurationError(f"slot {tuple(slot)} outside placement shape")

    def expert_at(self, slot: SlotId) -> Optional[ExpertId]:
        return self._slots[slot.rank][slot.index]

    def assign(self, slot: SlotId, expert: ExpertId) -> None:
        self._check_slot(slot)
        if not 0 <= expert < self.num_experts:
            raise ConfigurationError(f"expert {expert} outside [0, {self.num_experts})")
        self.clear(slot)
        self._slots[slot.rank][slot.index] = expert
        self._locations[expert].add(SlotId(*slot))

    def clear(self, slot: SlotId) -> None:
        self._check_slot(slot)
        old = self._slots[slot.rank][slot.index]
        if old is not None:
            self._locations[old].discard(SlotId(*slot))
            self._slots[slot.rank][slot.index] = None

    def clear_rank(self, rank: RankId) -> None:
        for index in range(self.slots_per_rank):
            self.clear(SlotId(rank, index))

    def locations(self, expert: ExpertId) -> FrozenSet[SlotId]:
        return frozenset(self._locations[expert])

    @property
    def expert_to_locations(self) -> Dict[ExpertId, FrozenSet[SlotId]]:
        return {e: frozenset(locs) for e, locs in self._locations.items()}

    def derive_locations(self) -> Dict[ExpertId, FrozenSet[SlotId]]:
        found: Dict[ExpertId, Set[SlotId]] = {e: set() for e in range(self.num_experts)}
        for slot, expert in self.occupied():
            found[expert].add(slot)
        return {e: frozenset(locs) for e, locs in found.items()}

    def ranks_hosting(self, expert: ExpertId) -> Set[RankId]:
        return {slot.rank for slot in self._locations[expert]}

    def hosts(self, rank: RankId, expert: ExpertId) -> bool:
        return expert in self._slots[rank]

    def slot_contents(self, rank: RankId) -> Tuple[Optional[ExpertId], ...]:
        return tuple(self._slots[rank])

    def experts_on(self, rank: RankId) -> List[ExpertId]:
        return [e for e in self._slots[rank] if e is not None]

    def occupied(self) -> Iterator[Tuple[SlotId, ExpertId]]:
        for rank, slots in enumerate(self._slots):
            for index, expert in enumerate(slots):
                if expert is not None:
                    yield SlotId(rank, index), expert

    def occupancy(self) -> int:
        return sum(1 for _ in self.occupied())

    def copy(self) -> "ExpertPlacementMap":
        dup = ExpertPlacementMap(self.world_size, self.slots_per_rank, self.num_experts)
        dup._slots = [list(s) for s in self._slots]
        dup._locations = {e: set(locs) for e, locs in self._locations.items()}
        return dup

    def to_lists(self) -> List[List[Optional[ExpertId]]]:
        return [list(s) for s in self._slots]

    def same_shape(self, other: "ExpertPlacementMap") -> bool:
        return (self.world_size, self.slots_per_rank, self.num_experts) == (
            other.world_size, other.slots_per_rank, other.num_experts)

    def __eq__(self, other):
        if not isinstance(other, ExpertPlacementMap):
            return NotImplemented
        return self.same_shape(other) and self._slots == other._slots

    def __repr__(self):
        ranks = "; ".join(f"R{r}:{self.experts_on(r)}" for r in range(self.world_size))
        return f"ExpertPlacementMap({ranks})"


@dataclass
class RoutingTable:
    """One rank's view of where each logical expert is served."""

    owner: RankId
    route: List[RankId]

    def target(self, expert: ExpertId) -> RankId:
        return self.route[expert]


def build_routing(owner: RankId, placement: ExpertPlacementMap, bitmap: ActiveBitmap) -> RoutingTable:
    """Route each expert to the owner if it hosts a copy, else the lowest active host."""
    route = []
    for expert in range(placement.num_experts):
        hosts = [r for r in placement.ranks_hosting(expert) if bitmap.is_active(r)]
        if not hosts:
            raise ProtocolError(f"expert {expert} has no active host; repair coverage first")
        route.append(owner if owner in hosts else min(hosts))
    return RoutingTable(owner, route)


@dataclass(frozen=True)
class Violation:
    condition: str
    detail: Tuple[Tuple[str, object], ...]

    @classmethod
    def of(cls, condition: str, **detail) -> "Violation":
        return cls(condition, tuple(sorted(detail.items())))


@dataclass
class ValidityReport:
    peer_set_ok: bool
    coverage_ok: bool
    routing_ok: bool
    violations: List[Violation] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.peer_set_ok and self.coverage_ok and self.routing_ok and not self.violations


def coverage_gap(bitmap: ActiveBitmap, placement: ExpertPlacementMap) -> Set[ExpertId]:
    """Experts with no copy on any active rank."""
    if bitmap.world_size != placement.world_size:
        raise ConfigurationError("bitmap and placement disagree on world size")
    return {
        e for e in range(placement.num_experts)
        if not any(bitmap.is_active(r) for r in placement.ranks_hosting(e))
    }


def check_validity(
    bitmap: ActiveBitmap,
    placement: ExpertPlacementMap,
    routing: Sequence[Optional[RoutingTable]],
    peer_tables: Sequence,
) -> ValidityReport:
    """Evaluate the three live-instance conditions, collecting every violation.

    ``routing`` and ``peer_tables`` are indexed by rank; entries for inactive
    ranks are ignored and may be ``None``. Peer tables are read through their
    ``entries[r].active`` flags.
    """
    world = bitmap.world_size
    if placement.world_size != world or len(routing) != world or len(peer_tables) != world:
        raise ConfigurationError("validity inputs describe different world sizes")

    violations: List[Violation] = []
    active = bitmap.active_ranks()
    active_set = set(active)

    for owner in active:
        table = peer_tables[owner]
        if table is None or len(table.entries) != world:
            raise ConfigurationError(f"rank {owner} has no peer table of size {world}")
        marked = {r for r, entry in enumerate(table.entries) if entry.active}
        for r in sorted(marked - active_set):
            violations.append(Violation.of("peer_set", owner=owner, peer=r, issue="inactive peer marked active"))
        for r in sorted(active_set - marked):
            violations.append(Violation.of("peer_set", owner=owner, peer=r, issue="active peer marked inactive"))
    peer_set_ok = not any(v.condition == "peer_set" for v in violations)

    for expert in sorted(coverage_gap(bitmap, placement)):
        violations.append(Violation.of("coverage", expert=expert))
    coverage_ok = not any(v.condition == "coverage" for v in violations)

    for owner in active:
        table = routing[owner]
        if table is None or len(table.route) != placement.num_experts:
            raise ConfigurationError(f"rank {owner} has no total routing table")
        for expert, target in enumerate(table.route):
            if not (0 <= target < world and bitmap.is_active(target)):
                violations.append(Violation.of("routing", owner=owner, expert=expert, target=target,
                                               issue="routed to inactive rank"))
            elif not placement.hosts(target, expert):
                violations.append(Violation.of("routing", owner=owner, expert=expert, target=target,
                                               issue="target does not host expert"))
    routing_ok = not any(v.condition == "routing" for v in violations)

    return ValidityReport(peer_set_ok, coverage_ok, routing_ok, violations)
