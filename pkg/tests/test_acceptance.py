"""One test per acceptance criterion; each prints a PASS/FAIL line.

The lines are also collected and repeated at the end of the pytest run.
"""

from __future__ import annotations

import itertools
import random
import time


from elastic_ep import ActiveBitmap, CapacityError, ExpertPlacementMap, Topology
from elastic_ep.backup import build_backup_layout
from elastic_ep.cluster import ClusterState, default_slots_per_rank, initial_placement
from elastic_ep.rejoin import incorporate
from elastic_ep.repair import classify_repair_sources, compute_repaired_placement
from elastic_ep.sim import ExpertSpec, FaultScript, ProtocolConfig, WorkloadSpec, run_scenario
from elastic_ep.sim.trace import EventTrace
from elastic_ep.summary import dumps, summarize

from conftest import ACCEPTANCE_LINES, FIG2_LISTS, fail_and_repair, warm_up
from oracles import min_tier_oracle, validity_oracle


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_criterion_1_validity_restoration(links):
    rng = random.Random(1)
    start = time.perf_counter()
    instances = feasible = passed = 0
    failures = []
    while feasible < 1000:
        nodes = rng.choice([1, 2])
        world = rng.choice([w for w in range(4, 9) if w % nodes == 0])
        topo = Topology(nodes, world // nodes)
        experts = rng.randint(32, 64)
        redundancy = rng.randint(0, experts)  # zero or one extra replica per expert
        slots = default_slots_per_rank(experts, redundancy, world) + rng.choice([0, 0, 1, 2])
        placement = initial_placement(topo, experts, slots, redundancy)
        state = ClusterState.bring_up(topo, placement, build_backup_layout(experts, 10, list(range(nodes))), 10)
        kills = rng.sample(range(world), rng.randint(1, -(-world // 2)))
        instances += 1
        state.kill(kills)
        state.deactivate(kills)
        try:
            outcome = state.plan_repair()
        except CapacityError:
            assert (world - len(kills)) * slots < experts
            continue
        feasible += 1
        state.apply_repair(outcome, links)
        report = state.validity()
        oracle = validity_oracle(list(state.bitmap.bits), state.placement.to_lists(),
                                 [t.route for t in state.routing],
                                 [[e.active for e in t.entries] for t in state.peer_tables])
        if report.valid and oracle == (True, True, True):
            passed += 1
        else:
            failures.append((world, experts, redundancy, kills))
    elapsed = time.perf_counter() - start
    ok = feasible > 0 and passed == feasible and elapsed < 60.0
    record(1, ok, f"{passed}/{feasible} capacity-feasible of {instances} random instances valid "
                  f"(checker and brute-force oracle agree) in {elapsed:.1f}s")
    assert not failures, failures[:5]
    assert elapsed < 60.0


def _small_instances():
    rng = random.Random(2)
    for world in range(2, 6):
        topo = Topology(1, world)
        for experts in range(world, 11):
            shapes = []
            for redundancy in range(0, experts + 1):
                if redundancy > experts * (world - 1):
                    continue
                base = default_slots_per_rank(experts, redundancy, world)
                for slots in (base, base + 1):
                    shapes.append(initial_placement(topo, experts, slots, redundancy))
            for _ in range(4):  # arbitrary placements covering every expert
                slots = rng.randint(-(-experts // world), experts)
                lists = [[] for _ in range(world)]
                for e in range(experts):
                    options = [r for r in range(world) if len(lists[r]) < slots]
                    lists[rng.choice(options)].append(e)
                for _ in range(rng.randint(0, world * slots - experts)):
                    r = rng.randrange(world)
                    spare = [e for e in range(experts) if e not in lists[r]]
                    if len(lists[r]) < slots and spare:
                        lists[r].append(rng.choice(spare))
                shapes.append(ExpertPlacementMap.from_rank_lists(lists, slots, experts))
            for placement in shapes:
                yield topo, placement


def test_criterion_2_tier_minimality():
    start = time.perf_counter()
    cases = assignments = mismatches = 0
    for topo, old in _small_instances():
        world = topo.world_size
        old_lists = old.to_lists()
        for k in range(1, world):
            for kills in itertools.combinations(range(world), k):
                bm = ActiveBitmap.full(world)
                bm.deactivate(kills)
                try:
                    new = compute_repaired_placement(bm, old)
                except CapacityError:
                    continue
                cases += 1
                got = classify_repair_sources(old, new, bm, topo)
                expected = min_tier_oracle(old_lists, new.to_lists(), bm.bits)
                assignments += len(expected)
                if {s: int(c.tier) for s, c in got.items()} != expected:
                    mismatches += 1
                for slot, c in got.items():
                    if c.source is not None and (not bm.is_active(c.source.rank) or old.expert_at(c.source) != c.expert):
                        mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 30.0 and cases > 0
    record(2, ok, f"{assignments} assignments over {cases} (instance, kill subset) cases match the "
                  f"minimum-tier oracle, {mismatches} mismatches, {elapsed:.1f}s")
    assert mismatches == 0
    assert elapsed < 30.0


def test_criterion_3_fig2_worked_example(bundled):
    from elastic_ep import scenario as scen

    config, out, summary, _ = bundled("fig2")
    golden_equal = (out / "summary.json").read_text() == scen.bundled_golden("fig2")
    failure, rejoin = summary["failures"][0], summary["rejoins"][0]
    # endpoint tokens handed out at bring-up, from an independent bring-up of the same placement
    fresh = ClusterState.bring_up(Topology(4, 1), ExpertPlacementMap.from_rank_lists(FIG2_LISTS, 3, 8),
                                  build_backup_layout(8, 1, [0]), 1)
    bring_up_tokens = {tok for tok, _ in fresh.current_endpoint}
    token, generation = rejoin["entries"]["endpoint_generation"]["2"]
    checks = {
        "golden": golden_equal,
        "repairs": failure["repairs"] == [[2, "peer_relocation", 3, 1], [6, "dram_reload", -1, 0]],
        "degraded routes": failure["routes"] == {"rank": 0, "route": [0, 1, 1, 3, 0, 1, 0, 3]},
        "restored routes": rejoin["routes"]["route"] == [0, 1, 2, 3, 0, 1, 2, 3],
        "restored placement": [[e for e in r if e is not None] for r in rejoin["placement"]] == FIG2_LISTS,
        "fresh entry": token not in bring_up_tokens and generation == 1,
    }
    failed = [k for k, v in checks.items() if not v]
    record(3, not failed, "fig2: E2 peer R3->R1, E6 DRAM->R0, routes R1/R0 while degraded, "
                          f"E2/E6 -> R2 after rejoin with fresh token {token:#x}; golden equal={golden_equal}"
                          + (f"; failed: {failed}" if failed else ""))
    assert not failed


def _relaunch_captures(trace):
    counts = {}
    for rec in trace.of_type("capture"):
        if rec["phase"] == "relaunch":
            counts[rec["rank"]] = counts.get(rec["rank"], 0) + 1
    return counts


def test_criterion_4_zero_recapture(bundled, links):
    _, out, sweep, _ = bundled("fig8_scales")
    sweep_ok = True
    for row in sweep["variants"]:
        trace = EventTrace.read(out / row["variant"] / "trace.jsonl")
        killed = {r["rank"] for r in trace.of_type("kill")}
        end = trace.records[-1]
        for r in range(len(end["captures"])):
            if r not in killed and end["captures"][r] != end["bring_up_captures"][r]:
                sweep_ok = False
        relaunched = {}
        for ev in trace.header["config"]["faults"]:
            if ev[1] == "relaunch_rank":
                relaunched[ev[2]] = relaunched.get(ev[2], 0) + 1
        if _relaunch_captures(trace) != relaunched or row["recaptures_healthy"] != 0:
            sweep_ok = False

    # 100 cycles through the protocol steps directly
    rng = random.Random(4)
    topo = Topology(2, 4)
    placement = initial_placement(topo, 32, 8, redundancy=16)
    state = ClusterState.bring_up(topo, placement, build_backup_layout(32, 10, [0, 1]), 10)
    bring_up = dict(state.ledger.capture_count)
    cycles_ok = True
    for _ in range(100):
        victims = rng.sample(range(8), rng.randint(1, 4))
        before = dict(state.ledger.capture_count)
        fail_and_repair(state, victims, links)
        res = incorporate([warm_up(state, r)[1] for r in victims], state, links)
        for r in range(8):
            if r not in victims and state.ledger.capture_count[r] != before[r]:
                cycles_ok = False
        cycles_ok &= res.healthy_new_captures == 0
    cycles_ok &= all(state.ledger.capture_count[r] - bring_up[r] == state.lifecycles[r].incarnation for r in range(8))

    # 100 cycles through the simulator, checked by scanning the trace
    faults, t, cycle_victims = [], 5.0, []
    for _ in range(100):
        victims = sorted(rng.sample(range(4), rng.randint(1, 2)))
        for r in victims:
            faults.append((round(t + rng.uniform(0, 0.1), 4), "kill_rank", r))
        faults.sort()
        for r in victims:
            faults.append((round(t + 1.5, 4), "relaunch_rank", r))
        cycle_victims.append((t, victims))
        t += 16.0
    faults.sort(key=lambda f: (f[0], f[1] != "kill_rank"))
    trace = run_scenario(Topology(2, 2), ExpertSpec(16, 10**9, 4, 8), WorkloadSpec(64, 128, 256, 4, 2), links,
                         FaultScript.of(faults), ProtocolConfig(warmup=6.0), seed=4, horizon=t + 5.0,
                         trace_level="debug")
    sim_ok = trace.records[-1]["halted"] is False
    identity = {r["rank"]: r["identity"] for r in trace.of_type("capture") if r["phase"] == "bring_up"}
    for rec in trace.records:
        if rec["type"] == "capture" and rec["phase"] == "relaunch":
            _, victims = max(c for c in cycle_victims if c[0] <= rec["t"])
            sim_ok &= rec["rank"] in victims
            identity[rec["rank"]] = rec["identity"]
        elif rec["type"] == "peer_table":
            sim_ok &= rec["identity"] == identity[rec["owner"]]
    relaunches = sum(1 for f in faults if f[1] == "relaunch_rank")
    sim_ok &= sum(_relaunch_captures(trace).values()) == relaunches
    sim_ok &= len(list(trace.of_type("incorporate_end"))) == 100

    ok = sweep_ok and cycles_ok and sim_ok
    record(4, ok, f"fig8_scales sweep (5 variants) healthy recaptures 0: {sweep_ok}; 100 protocol-level "
                  f"cycles: {cycles_ok}; 100 simulated cycles ({relaunches} relaunches): {sim_ok}")
    assert ok


def test_criterion_5_two_pause_shape(bundled):
    _, _, s, _ = bundled("fig1_single_rank")
    pauses, plateaus = s["pauses"], s["plateaus"]
    healthy, reduced, restored = (p[2] for p in plateaus) if len(plateaus) == 3 else (None, None, None)
    shape_ok = (len(pauses) == 2 and len(plateaus) == 3 and reduced is not None and reduced > 0
                and plateaus[1][1] > plateaus[1][0] and reduced < healthy
                and abs(restored - healthy) <= 0.05 * healthy)
    _, _, sweep, _ = bundled("fig8_scales")
    p2 = {row["failed_ranks"]: row["pause2"] for row in sweep["variants"]}
    mono = all(p2[a] is not None and p2[b] is not None and p2[a] <= p2[b] for a, b in [(1, 2), (2, 4), (4, 8)])
    ok = shape_ok and mono
    record(5, ok, f"fig1 pauses {[p[:2] for p in pauses]}, plateaus healthy {healthy:.0f} > reduced {reduced:.0f}, "
                  f"restored {restored:.0f} ({100 * (restored - healthy) / healthy:+.2f}%); "
                  f"second pause f1..f16 = {[p2[k] for k in (1, 2, 4, 8, 16)]}")
    assert ok


def test_criterion_6_source_mix_trend(bundled):
    _, _, sweep, _ = bundled("fig7_sweep")
    rows = {row["failed_ranks"]: row["mix_pct"] for row in sweep["variants"]}
    dram = [rows[k]["dram_reload"] for k in (1, 2, 4, 8, 16)]
    increasing = all(a < b for a, b in zip(dram, dram[1:]))
    gpu = {k: rows[k]["local_reuse"] + rows[k]["peer_relocation"] for k in (1, 2, 4, 8)}
    majority = all(v > 50.0 for v in gpu.values())
    ok = increasing and dram[-1] > dram[0] and majority
    record(6, ok, f"DRAM share by failed ranks 1..16 = {[round(d, 2) for d in dram]}%; "
                  f"GPU-sourced share at <=8 = {[round(v, 2) for v in gpu.values()]}%")
    assert ok


def test_criterion_7_restart_dominance(bundled):
    _, out, s, _ = bundled("fig1_single_rank")
    config = EventTrace.read(out / "trace.jsonl").header["config"]
    proto = config["protocol"]
    warmup = proto["warmup"] + proto["warmup_jitter"] / 2
    per_node = config["topology"]["ranks_per_node"]
    restart = proto["timeout"] + 0.55 * warmup + 0.45 * warmup * per_node
    off = sum(b - a for a, b, _ in s["pauses"])
    ratio = restart / off
    ok = len(s["pauses"]) == 2 and ratio >= 5.0
    record(7, ok, f"modeled full restart {restart:.2f}s vs off-service {off:.2f}s: ratio {ratio:.1f} (need >= 5)")
    assert ok


def test_criterion_8_determinism_and_replay(bundled):
    from elastic_ep import scenario as scen

    identical = []
    for name in ("fig1_single_rank", "fig2"):
        config = scen.load(name)
        (variant, faults), = config.variants()
        a = run_scenario(**config.run_kwargs(faults, variant)).dumps()
        b = run_scenario(**config.run_kwargs(faults, variant)).dumps()
        _, out, _, _ = bundled(name)
        identical.append(a == b == (out / "trace.jsonl").read_text())
    replays = []
    for name in ("nofault", "fig1_single_rank", "fig2", "fig7_sweep", "fig8_scales"):
        _, out, _, _ = bundled(name)
        for path in sorted(out.rglob("trace.jsonl")):
            again = dumps(summarize(EventTrace.read(path)))
            replays.append(again == (path.parent / "summary.json").read_text())
    ok = all(identical) and all(replays)
    record(8, ok, f"repeated runs byte-identical: {identical}; replay == run summary for "
                  f"{sum(replays)}/{len(replays)} traces")
    assert ok


def test_criterion_9_detection_timing(bundled, links):
    _, out, _, _ = bundled("fig1_single_rank")
    traces = [EventTrace.read(out / "trace.jsonl")]
    rng = random.Random(9)
    for _ in range(20):
        kill_at = round(rng.uniform(5.0, 15.0), 6)
        traces.append(run_scenario(Topology(2, 2), ExpertSpec(16, 10**9, 4, 8), WorkloadSpec(64, 128, 256, 4, 2),
                                   links, FaultScript.of([(kill_at, "kill_rank", rng.randrange(4))]),
                                   ProtocolConfig(timeout=1.0), seed=rng.randrange(100), horizon=20.0))
    worst, mid_round = 0.0, 0
    for tr in traces:
        kill = tr.first("kill")
        before = [r["t"] for r in tr.of_type("round") if r["t"] <= kill["t"]]
        stall = next(r for r in tr.of_type("round_stall") if r["t"] >= kill["t"])
        suspect = next(r for r in tr.of_type("suspect") if r["t"] >= stall["t"])
        if before and before[-1] < kill["t"] < stall["t"]:
            mid_round += 1
        worst = max(worst, abs(suspect["t"] - (stall["t"] + 1.0)))
    ok = worst <= 1e-9 and mid_round == len(traces)
    record(9, ok, f"{mid_round}/{len(traces)} mid-round kills; max |suspect - (round end + 1.0 s)| = {worst:.1e} s")
    assert ok
