"""Elastic expert-parallel serving: membership, coverage repair, deferred rejoin, and a simulator."""

from .core import (
    ActiveBitmap,
    ExpertPlacementMap,
    RoutingTable,
    SlotId,
    Topology,
    ValidityReport,
    build_routing,
    check_validity,
    coverage_gap,
)
from .errors import (
    CapacityError,
    ConfigurationError,
    ElasticEPError,
    MissingBackupError,
    ProtocolError,
    RepairAborted,
    TraceFormatError,
)

__version__ = "0.1.0"
