from __future__ import annotations

from pathlib import Path

import pytest

from elastic_ep import scenario as scen
from elastic_ep.backup import build_backup_layout
from elastic_ep.cli import run_config
from elastic_ep.cluster import ClusterState
from elastic_ep.core import ExpertPlacementMap, Topology
from elastic_ep.links import LinkModel

ACCEPTANCE_LINES: list = []

BUNDLED = ("nofault", "fig1_single_rank", "fig2", "fig7_sweep", "fig8_scales")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def links():
    return LinkModel(200e9, 50e9, 20e9, 5e-6, 2e-5, 5e-5)


FIG2_LISTS = [[0, 4], [1, 5], [2, 6], [3, 7, 2]]
FIG2_LOAD = [1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0]


@pytest.fixture
def fig2_placement():
    return ExpertPlacementMap.from_rank_lists(FIG2_LISTS, 3, 8)


@pytest.fixture
def fig2_state(fig2_placement):
    topo = Topology(4, 1)
    backup = build_backup_layout(8, 100, [0, 1, 2, 3])
    return ClusterState.bring_up(topo, fig2_placement, backup, 100, FIG2_LOAD)


class BundledRuns:
    """Runs each bundled scenario once per session through the CLI code path."""

    def __init__(self, root: Path):
        self.root = root
        self._done = {}

    def __call__(self, name: str):
        if name not in self._done:
            config = scen.load(name)
            out = self.root / name
            summary, unrecoverable = run_config(config, out, echo=lambda *_: None)
            self._done[name] = (config, out, summary, unrecoverable)
        return self._done[name]


@pytest.fixture(scope="session")
def bundled(tmp_path_factory):
    return BundledRuns(tmp_path_factory.mktemp("bundled"))


def warm_up(state: ClusterState, rank: int, now: float = 0.0):
    """Relaunch ``rank`` and run its isolated warmup to JoinReady, as the engine does."""
    from elastic_ep.core import RoutingTable
    from elastic_ep.membership import PeerTable
    from elastic_ep.rejoin import JoinReadySignal, LifecycleState, relaunch

    plan = relaunch(state.lifecycles[rank], rank, now, warmup=10.0)
    state.alive[rank] = True
    state.lifecycles[rank].transition(LifecycleState.LOCAL_INIT)
    state.current_endpoint[rank] = state.endpoints.endpoint()
    state.peer_tables[rank] = PeerTable.create(rank, state.topology, state.current_endpoint,
                                               state.endpoints.table_identity(), active=[rank])
    state.routing[rank] = RoutingTable(rank, [rank] * state.placement.num_experts)
    state.warm_slots[rank] = state.preferred.slot_contents(rank)
    state.ledger.capture(rank, state.peer_tables[rank].table_identity)
    state.lifecycles[rank].transition(LifecycleState.JOIN_READY)
    token, buffer = state.current_endpoint[rank]
    return plan, JoinReadySignal(rank, plan.incarnation, token, buffer)


def fail_and_repair(state: ClusterState, ranks, links):
    state.kill(ranks)
    state.deactivate(ranks)
    outcome = state.plan_repair()
    state.apply_repair(outcome, links)
    return outcome
