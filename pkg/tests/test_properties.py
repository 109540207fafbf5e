"""Property tests for the invariants each module promises."""

from __future__ import annotations

import copy

from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from elastic_ep import ActiveBitmap, CapacityError, ExpertPlacementMap, SlotId, Topology, build_routing, check_validity, coverage_gap
from elastic_ep.backup import BackupReadRequest, build_backup_layout, serve_reads
from elastic_ep.cluster import ClusterState, initial_placement
from elastic_ep.links import LinkModel
from elastic_ep.membership import (EndpointAllocator, PeerTable, SignalCounters, dispatch_round, mark_inactive,
                                   observe_progress, patch_entry)
from elastic_ep.rejoin import next_poll_tick
from elastic_ep.repair import RepairTier, classify_repair_sources, compute_repaired_placement, source_mix
from elastic_ep.sim.analysis import derive_throughput
from elastic_ep.sim.trace import EventTrace

from oracles import min_tier_oracle, validity_oracle

LINKS = LinkModel(200e9, 50e9, 20e9, 5e-6, 2e-5, 5e-5)
settings.register_profile("repo", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@st.composite
def instances(draw, max_world=8):
    nodes = draw(st.integers(1, 2))
    per = draw(st.integers(2, max_world // nodes))
    topo = Topology(nodes, per)
    world = topo.world_size
    experts = draw(st.integers(world, 6 * world))
    redundancy = draw(st.integers(0, experts))
    slots = -(-(experts + redundancy) // world) + draw(st.integers(0, 2))
    placement = initial_placement(topo, experts, slots, redundancy)
    kills = draw(st.lists(st.integers(0, world - 1), min_size=1, max_size=-(-world // 2), unique=True))
    return topo, placement, kills


@st.composite
def placements(draw):
    world, slots, experts = draw(st.integers(1, 5)), draw(st.integers(1, 4)), draw(st.integers(1, 8))
    ops = draw(st.lists(st.tuples(st.integers(0, world - 1), st.integers(0, slots - 1),
                                  st.one_of(st.none(), st.integers(0, experts - 1))), max_size=40))
    return world, slots, experts, ops


@given(placements())
def test_locations_are_inverse_image(args):
    world, slots, experts, ops = args
    p = ExpertPlacementMap(world, slots, experts)
    for r, i, e in ops:
        if e is None:
            p.clear(SlotId(r, i))
        else:
            p.assign(SlotId(r, i), e)
    lists = p.to_lists()
    for e in range(experts):
        assert p.locations(e) == {SlotId(r, i) for r in range(world) for i in range(slots) if lists[r][i] == e}


@given(instances())
def test_repair_restores_validity_and_is_deterministic(inst):
    topo, placement, kills = inst
    state = ClusterState.bring_up(topo, placement, build_backup_layout(placement.num_experts, 10, [0, 1]), 10)
    state.kill(kills)
    state.deactivate(kills)
    try:
        outcome = state.plan_repair()
    except CapacityError:
        assume(False)
    assert compute_repaired_placement(state.bitmap, placement, state.load) == outcome.plan.new_placement
    state.apply_repair(outcome, LINKS)
    report = state.validity()
    again = state.validity()
    assert report == again
    assert report.valid
    assert coverage_gap(state.bitmap, state.placement) == set()
    bits = list(state.bitmap.bits)
    assert validity_oracle(bits, state.placement.to_lists(), [t.route for t in state.routing],
                           [[e.active for e in t.entries] for t in state.peer_tables]) == (True, True, True)


@given(instances())
def test_tier_matches_minimum_feasible_tier(inst):
    topo, old, kills = inst
    bm = ActiveBitmap.full(topo.world_size)
    bm.deactivate(kills)
    try:
        new = compute_repaired_placement(bm, old)
    except CapacityError:
        assume(False)
    got = {slot: int(c.tier) for slot, c in classify_repair_sources(old, new, bm, topo).items()}
    assert got == min_tier_oracle(old.to_lists(), new.to_lists(), bm.bits)


@given(instances(), st.data())
def test_dram_reloads_monotone_in_failure_set(inst, data):
    topo, old, kills = inst
    smaller = kills[: data.draw(st.integers(1, len(kills)))]
    counts = []
    for failed in (smaller, kills):
        bm = ActiveBitmap.full(topo.world_size)
        bm.deactivate(failed)
        try:
            counts.append(source_mix(old, compute_repaired_placement(bm, old), bm)[RepairTier.DRAM_RELOAD])
        except CapacityError:
            assume(False)
    assert counts[0] <= counts[1]


@given(instances())
def test_coverage_gap_empty_iff_coverage_ok(inst):
    topo, placement, kills = inst
    full = ActiveBitmap.full(topo.world_size)
    routing = [build_routing(r, placement, full) for r in range(topo.world_size)]
    alloc = EndpointAllocator()
    eps = [alloc.endpoint() for _ in range(topo.world_size)]
    tables = [PeerTable.create(r, topo, eps, alloc.table_identity()) for r in range(topo.world_size)]
    bm = full.copy()
    bm.deactivate(kills)
    report = check_validity(bm, placement, routing, tables)
    assert (coverage_gap(bm, placement) == set()) == report.coverage_ok


@given(st.integers(2, 8), st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=60))
def test_table_identity_stable_and_mark_idempotent(world, steps):
    topo = Topology(1, world)
    alloc = EndpointAllocator()
    eps = [alloc.endpoint() for _ in range(world)]
    table = PeerTable.create(0, topo, eps, alloc.table_identity())
    identity = table.table_identity
    for _, peer in steps:
        peer = 1 + peer % (world - 1)
        if table.entries[peer].active:
            once = copy.deepcopy(mark_inactive(table, [peer]))
            assert mark_inactive(table, [peer]) == once
        else:
            before = table.entries[peer].generation
            patch_entry(table, peer, *alloc.endpoint())
            assert table.entries[peer].generation == before + 1
        assert table.table_identity == identity
        assert len(table.entries) == world


@given(st.integers(2, 8), st.data())
def test_dispatch_never_targets_inactive(world, data):
    topo = Topology(1, world)
    alloc = EndpointAllocator()
    table = PeerTable.create(0, topo, [alloc.endpoint() for _ in range(world)], alloc.table_identity())
    dead = data.draw(st.lists(st.integers(1, world - 1), unique=True))
    mark_inactive(table, dead)
    routing = build_routing(0, initial_placement(topo, 2 * world, 2), ActiveBitmap.full(world))
    groups = data.draw(st.lists(st.tuples(st.integers(1, 9), st.integers(0, 2 * world - 1)), max_size=30))
    result = dispatch_round(0, groups, routing, table)
    assert all(table.entries[d.target].active for d in result.transfers)
    assert len(result.transfers) + len(result.skipped) == len(groups)


@given(st.lists(st.tuples(st.floats(0, 10), st.integers(1, 3), st.floats(0, 10), st.integers(0, 3)),
                min_size=1, max_size=8),
       st.floats(0, 20), st.floats(0, 10), st.floats(0.05, 3))
def test_observe_progress_monotone_in_time(hist, now, extra, timeout):
    c = SignalCounters.for_peers(range(len(hist)))
    for r, (t_exp, n_exp, t_obs, n_obs) in enumerate(hist):
        c.expect(r, t_exp, n_exp)
        c.observe(r, t_obs, n_obs)
    assert observe_progress(c, now, timeout) <= observe_progress(c, now + extra, timeout)


@given(st.integers(1, 300), st.integers(1, 10**6), st.integers(1, 9))
def test_backup_layout_total_and_disjoint(experts, w, nodes):
    table = build_backup_layout(experts, w, list(range(nodes)))
    assert sorted(table.entries) == list(range(experts))
    for node in range(nodes):
        spans = sorted((d.offset, d.offset + d.size) for d in table.entries.values() if d.node == node)
        assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))
    serve_reads(table, [BackupReadRequest(tuple(range(experts)), 0)], LINKS)


@given(st.lists(st.integers(0, 39), min_size=1, max_size=20))
def test_backup_reads_serialize_per_node(experts):
    table = build_backup_layout(40, 10**9, [0, 1, 2, 3])
    reqs = [BackupReadRequest((e,), i % 3) for i, e in enumerate(experts)]
    per_node = {}
    for e in experts:  # one read per request, even for a repeated expert
        per_node[e % 4] = per_node.get(e % 4, 0) + 1
    expected = LINKS.dram_read_latency + max(per_node.values()) * 10**9 / LINKS.dram_read_bandwidth
    assert abs(serve_reads(table, reqs, LINKS) - expected) < 1e-9


@given(st.floats(0, 1e4, allow_nan=False), st.sampled_from([0.1, 0.25, 0.5, 1.0, 2.0]))
def test_poll_tick_is_first_grid_point(t, period):
    tick = next_poll_tick(t, period)
    assert tick >= t - 1e-9
    assert tick - period < t + 1e-9
    assert abs(tick / period - round(tick / period)) < 1e-6


@given(st.dictionaries(st.integers(0, 199), st.integers(1, 1000), max_size=60), st.sampled_from([0.25, 0.5, 1.0]))
def test_throughput_conserves_tokens(rounds, window):
    recs = [{"t": k * 0.1, "type": "round", "tokens": tok} for k, tok in sorted(rounds.items())]
    recs.append({"t": 20.0, "type": "end"})
    s = derive_throughput(recs, window=window, step=window)
    total = sum(tok for k, tok in rounds.items() if k > 0)
    assert abs(s.values.sum() * window - total) < 1e-6 * max(total, 1)


@given(st.lists(st.tuples(st.floats(0, 5, allow_nan=False), st.sampled_from(["round", "kill", "x"]),
                          st.integers(-5, 5)), max_size=20))
def test_trace_round_trip(items):
    tr = EventTrace({"format": "elastic-ep-trace", "version": 1, "config_hash": "h"})
    t = 0.0
    for dt, kind, v in items:
        t += dt
        tr.emit(t, kind, value=v)
    tr.emit(t + 1, "end")
    back = EventTrace.loads(tr.dumps())
    assert back.records == tr.records and back.dumps() == tr.dumps()
