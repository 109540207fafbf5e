"""Per-node DRAM backup managers: descriptor layout and batched read timing."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, NamedTuple, Sequence, Tuple

from .core import ExpertId, NodeId, RankId
from .errors import MissingBackupError
from .links import LinkModel


class BackupDescriptor(NamedTuple):
    node: NodeId
    offset: int
    size: int


@dataclass(frozen=True)
class BackupDescriptorTable:
    entries: Mapping[ExpertId, BackupDescriptor]

    def lookup(self, expert: ExpertId) -> BackupDescriptor:
        try:
            return self.entries[expert]
        except KeyError:
            raise MissingBackupError([expert]) from None

    def node_summary(self) -> Dict[NodeId, Tuple[int, int]]:
        """``{node: (expert_count, total_bytes)}``."""
        summary: Dict[NodeId, List[int]] = defaultdict(lambda: [0, 0])
        for desc in self.entries.values():
            summary[desc.node][0] += 1
            summary[desc.node][1] += desc.size
        return {node: (n, b) for node, (n, b) in sorted(summary.items())}


def build_backup_layout(
    num_experts: int,
    bytes_per_expert: int,
    nodes: Sequence[NodeId],
    disabled_nodes: Iterable[NodeId] = (),
) -> BackupDescriptorTable:
    """Assign experts round-robin to nodes with contiguous per-node offsets.

    Experts landing on a node in ``disabled_nodes`` get no entry, which makes
    later reads of them fail with :class:`MissingBackupError`.
    """
    if not nodes:
        raise ValueError("backup layout needs at least one node")
    disabled = set(disabled_nodes)
    entries = {}
    next_offset = defaultdict(int)
    for expert in range(num_experts):
        node = nodes[expert % len(nodes)]
        offset = next_offset[node]
        next_offset[node] += bytes_per_expert
        if node not in disabled:
            entries[expert] = BackupDescriptor(node, offset, bytes_per_expert)
    return BackupDescriptorTable(entries)


@dataclass(frozen=True)
class BackupReadRequest:
    experts: Tuple[ExpertId, ...]
    destination: RankId

    def __post_init__(self):
        object.__setattr__(self, "experts", tuple(dict.fromkeys(self.experts)))
        if not self.experts:
            raise ValueError("backup read request must name at least one expert")


def serve_reads(
    table: BackupDescriptorTable,
    requests: Sequence[BackupReadRequest],
    links: LinkModel,
) -> float:
    """Elapsed seconds for a set of concurrent read requests.

    Reads from one node share its DRAM read bandwidth and serialize; different
    nodes proceed in parallel, so the slowest node bounds the total.
    """
    missing = [e for req in requests for e in req.experts if e not in table.entries]
    if missing:
        raise MissingBackupError(missing)
    if not requests:
        return 0.0
    per_node: Dict[NodeId, int] = defaultdict(int)
    for req in requests:
        for expert in req.experts:
            desc = table.entries[expert]
            per_node[desc.node] += desc.size
    return links.dram_read_latency + max(per_node.values()) / links.dram_read_bandwidth


def serve_read(table: BackupDescriptorTable, req: BackupReadRequest, links: LinkModel) -> float:
    return serve_reads(table, [req], links)
