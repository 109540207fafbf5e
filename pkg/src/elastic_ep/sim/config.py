"""Simulation parameters that are not owned by a protocol module."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

from ..errors import ConfigurationError


@dataclass(frozen=True)
class ExpertSpec:
    count: int = 256
    bytes_per_expert: int = 2_617_187_500
    redundancy: int = 0
    slots_per_rank: Optional[int] = None
    placement: Optional[Tuple[Tuple[int, ...], ...]] = None
    load: Optional[Tuple[float, ...]] = None
    backup_disabled_nodes: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.count < 1 or self.bytes_per_expert < 1 or self.redundancy < 0:
            raise ConfigurationError("experts.count and experts.bytes_per_expert must be positive, redundancy >= 0")


@dataclass(frozen=True)
class ProtocolConfig:
    timeout: float = 1.0
    poll_period: float = 0.5
    warmup: float = 30.0
    warmup_jitter: float = 0.0

    def __post_init__(self):
        if self.timeout <= 0 or self.poll_period <= 0 or self.warmup <= 0 or self.warmup_jitter < 0:
            raise ConfigurationError("protocol timeout, poll_period and warmup must be positive, jitter >= 0")


@dataclass(frozen=True)
class CostModel:
    """Per-round serving cost and fixed protocol step latencies, in simulated seconds."""

    round_compute: float = 0.04
    overlap: float = 0.5
    token_bytes: int = 7168
    metadata_latency_per_rank: float = 0.02
    entry_patch_latency: float = 1.0
    broadcast_latency: float = 2.0

    def __post_init__(self):
        if self.round_compute <= 0 or self.token_bytes < 1:
            raise ConfigurationError("cost.round_compute and cost.token_bytes must be positive")
        if not 0 <= self.overlap <= 1:
            raise ConfigurationError("cost.overlap must lie in [0, 1]")
        if min(self.metadata_latency_per_rank, self.entry_patch_latency, self.broadcast_latency) < 0:
            raise ConfigurationError("cost latencies must be non-negative")
