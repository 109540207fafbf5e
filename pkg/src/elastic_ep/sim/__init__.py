"""Discrete-event simulation of an elastic expert-parallel serving cluster."""

from .analysis import derive_pause_windows, derive_throughput
from .config import CostModel, ExpertSpec, ProtocolConfig
from .engine import run_scenario
from .faults import FaultAction, FaultEvent, FaultScript
from .trace import EventTrace
from .workload import WorkloadSpec
