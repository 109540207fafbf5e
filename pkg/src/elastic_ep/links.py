"""Bandwidth and latency constants for the simulated fabric."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError
from .membership import Transport


@dataclass(frozen=True)
class LinkModel:
    intra_node_bandwidth: float  # bytes/s
    inter_node_bandwidth: float
    dram_read_bandwidth: float
    intra_node_latency: float  # seconds per message
    inter_node_latency: float
    dram_read_latency: float

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ConfigurationError(f"links.{name} must be positive, got {value}")
        if self.dram_read_bandwidth > self.inter_node_bandwidth:
            raise ConfigurationError("links.dram_read_bandwidth must not exceed links.inter_node_bandwidth")

    def bandwidth(self, transport: Transport) -> float:
        if transport is Transport.INTRA_NODE:
            return self.intra_node_bandwidth
        return self.inter_node_bandwidth

    def latency(self, transport: Transport) -> float:
        if transport is Transport.INTRA_NODE:
            return self.intra_node_latency
        return self.inter_node_latency

    def transfer_time(self, nbytes: float, transport: Transport) -> float:
        return self.latency(transport) + nbytes / self.bandwidth(transport)
