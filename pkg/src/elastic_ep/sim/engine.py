"""Discrete-event cluster simulator driving the protocol modules.

One event loop owns every piece of mutable state. Events are ordered by
``(time, sequence number)``; the sequence number is assigned when an event
is scheduled, so ties resolve in scheduling order and runs are reproducible.
"""

from __future__ import annotations

import dataclasses
import hashlib
import heapq
import json
from typing import Any, Dict, List, Optional

import numpy as np

from ..backup import build_backup_layout
from ..cluster import ClusterState, default_slots_per_rank, initial_placement
from ..core import ActiveBitmap, ExpertPlacementMap, RoutingTable, Topology, coverage_gap
from ..errors import CapacityError, ConfigurationError, RepairAborted
from ..links import LinkModel
from ..membership import PeerTable, SignalCounters, observe_progress
from ..rejoin import (
    WARMUP_PHASES,
    JoinController,
    JoinReadySignal,
    LifecycleState,
    finish_join,
    incorporate,
    next_poll_tick,
    relaunch,
)
from ..repair import RepairTier, execute_schedule
from .config import CostModel, ExpertSpec, ProtocolConfig
from .faults import FaultAction, FaultScript
from .trace import TRACE_FORMAT, TRACE_VERSION, EventTrace
from .workload import ExpertRouter, WorkloadSpec, counter_hash, to_unit

# Lifecycle states in which a rank takes part in dispatch rounds.
_PARTICIPATING = {LifecycleState.SERVING, LifecycleState.JOINING, LifecycleState.REJOINED}
_RECOVERING = {LifecycleState.RELAUNCHING, LifecycleState.LOCAL_INIT, LifecycleState.JOIN_READY}

TIER_NAMES = {RepairTier.LOCAL_REUSE: "local_reuse", RepairTier.PEER_RELOCATION: "peer_relocation",
              RepairTier.DRAM_RELOAD: "dram_reload"}


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if hasattr(obj, "value") and not isinstance(obj, (int, float, str, bool)):
        return obj.value
    return obj


def config_hash(config: Dict[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _mix_dict(mix) -> Dict[str, int]:
    return {TIER_NAMES[t]: mix.get(t, 0) for t in RepairTier}


class Simulation:
    def __init__(self, topology: Topology, experts: ExpertSpec, workload: WorkloadSpec, links: LinkModel,
                 faults: FaultScript, protocol: ProtocolConfig, cost: CostModel, seed: int, horizon: float,
                 name: str = "scenario", trace_level: str = "info", extra: Optional[Dict[str, Any]] = None):
        if horizon <= 0:
            raise ConfigurationError("horizon must be positive")
        if trace_level not in ("info", "debug"):
            raise ConfigurationError(f"trace level must be 'info' or 'debug', got {trace_level!r}")
        world = topology.world_size
        faults.validate(world)
        self.topology, self.experts, self.workload, self.links = topology, experts, workload, links
        self.faults, self.protocol, self.cost = faults, protocol, cost
        self.seed, self.horizon, self.debug = seed, horizon, trace_level == "debug"

        slots = experts.slots_per_rank or default_slots_per_rank(experts.count, experts.redundancy, world)
        load = list(experts.load) if experts.load is not None else [1.0] * experts.count
        if len(load) != experts.count:
            raise ConfigurationError(f"experts.load lists {len(load)} weights for {experts.count} experts")
        if experts.placement is not None:
            if len(experts.placement) != world:
                raise ConfigurationError(f"experts.placement lists {len(experts.placement)} ranks, world is {world}")
            placement = ExpertPlacementMap.from_rank_lists(experts.placement, slots, experts.count)
            if coverage_gap(ActiveBitmap.full(world), placement):
                raise ConfigurationError("experts.placement leaves some experts without a slot")
        else:
            placement = initial_placement(topology, experts.count, slots, experts.redundancy, load)
        backup = build_backup_layout(experts.count, experts.bytes_per_expert, list(range(topology.num_nodes)),
                                     experts.backup_disabled_nodes)
        self.state = ClusterState.bring_up(topology, placement, backup, experts.bytes_per_expert, load)
        self.router = ExpertRouter(workload, experts.count, seed)

        config = {
            "name": name, "seed": seed, "horizon": horizon,
            "topology": _plain(topology), "experts": _plain(experts), "workload": _plain(workload),
            "links": _plain(links), "protocol": _plain(protocol), "cost": _plain(cost),
            "faults": [[e.time, e.action.value, e.rank] for e in faults.events],
        }
        config["experts"]["slots_per_rank"] = slots
        if extra:
            config.update(_plain(extra))
        self.trace = EventTrace({
            "format": TRACE_FORMAT, "version": TRACE_VERSION, "config_hash": config_hash(config),
            "trace_level": trace_level, "config": config,
        })

        same = np.array([[topology.same_node(a, b) for b in range(world)] for a in range(world)])
        self._bandwidth = np.where(same, links.intra_node_bandwidth, links.inter_node_bandwidth)
        self._same_node = same
        self._route_matrix = None

        self._heap: List[tuple] = []
        self._seq = 0
        self._current = None  # seq of the event being handled
        self.now = 0.0
        self.mode = "serving"
        self.round_no = 0
        self.round_start = 0.0
        self.counters: Optional[SignalCounters] = None

        self.req_id = np.zeros(0, dtype=np.int64)
        self.req_home = np.zeros(0, dtype=np.int64)
        self.req_left = np.zeros(0, dtype=np.int64)
        self.next_request = 0

        self.controller = JoinController(protocol.poll_period)
        self.pending_join: Dict[int, JoinReadySignal] = {}
        self.polling = False
        self.episode: Optional[Dict[str, Any]] = None
        self.joining: Optional[Dict[str, Any]] = None
        self.ever_failed = set()

    # -- event plumbing -------------------------------------------------

    def _push(self, t: float, kind: str, actor: str, **payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, actor, self._current, payload))

    def emit(self, type_: str, **fields) -> None:
        self.trace.emit(self.now, type_, **fields)

    def _lifecycle(self, rank: int) -> None:
        life = self.state.lifecycles[rank]
        self.emit("lifecycle", rank=rank, state=life.state.value, incarnation=life.incarnation)

    def _membership(self, change: str, ranks) -> None:
        bm = self.state.bitmap
        self.emit("membership", change=change, ranks=sorted(ranks),
                  bits="".join("1" if b else "0" for b in bm.bits), version=bm.version)

    def _peer_tables(self, owners, ranks) -> None:
        if not self.debug:
            return
        for owner in owners:
            table = self.state.peer_tables[owner]
            self.emit("peer_table", owner=owner, identity=table.table_identity, ranks=sorted(ranks),
                      active="".join("1" if e.active else "0" for e in table.entries),
                      generations=[table.entries[r].generation for r in sorted(ranks)])

    # -- run --------------------------------------------------------------

    def run(self) -> EventTrace:
        st = self.state
        self.emit("bring_up", world=st.world_size, nodes=self.topology.num_nodes,
                  slots_per_rank=st.placement.slots_per_rank, placement=st.placement.to_lists(),
                  backup={str(n): list(v) for n, v in sorted(st.backup.node_summary().items())})
        for r in range(st.world_size):
            self.emit("capture", rank=r, incarnation=0, identity=st.peer_tables[r].table_identity, phase="bring_up")
        self._membership("bring_up", range(st.world_size))
        for ev in self.faults.events:
            kind = "kill" if ev.action is FaultAction.KILL_RANK else "relaunch"
            self._push(ev.time, kind, "fault", rank=ev.rank)
        self._start_round()

        halted = False
        while self._heap:
            t, seq, kind, actor, cause, payload = heapq.heappop(self._heap)
            if t > self.horizon:
                break
            self.now, self._current = t, seq
            self.trace.event_log.append((seq, t, kind, actor, cause))
            getattr(self, f"_on_{kind}")(**payload)
            if self.mode == "halted":
                halted = True
                break
        if not halted:
            self.now = float(self.horizon)
        self._finish()
        return self.trace

    def _finish(self) -> None:
        st = self.state
        self.emit("end", rounds=self.round_no, in_flight=int(len(self.req_id)),
                  captures=[st.ledger.capture_count.get(r, 0) for r in range(st.world_size)],
                  bring_up_captures=[st.ledger.bring_up_count.get(r, 0) for r in range(st.world_size)],
                  halted=self.mode == "halted")

    # -- serving rounds -----------------------------------------------------

    def _routes(self) -> np.ndarray:
        if self._route_matrix is None:
            self._route_matrix = np.array([self.state.routing[r].route for r in range(self.state.world_size)])
        return self._route_matrix

    def _refill(self) -> None:
        st = self.state
        need = self.workload.max_concurrency - len(self.req_id)
        if need <= 0:
            return
        active = st.bitmap.active_ranks()
        counts = np.bincount(self.req_home, minlength=st.world_size)
        homes = []
        for _ in range(need):
            r = min(active, key=lambda x: (counts[x], x))
            counts[r] += 1
            homes.append(r)
        ids = np.arange(self.next_request, self.next_request + need, dtype=np.int64)
        self.next_request += need
        self.req_id = np.concatenate([self.req_id, ids])
        self.req_home = np.concatenate([self.req_home, np.array(homes, dtype=np.int64)])
        self.req_left = np.concatenate([self.req_left, np.full(need, self.workload.output_tokens, dtype=np.int64)])
        self.emit("admit", count=need, first_id=int(ids[0]))

    def _round_duration(self) -> float:
        st, wl = self.state, self.workload
        world = st.world_size
        active = len(st.bitmap.active_ranks())
        compute = self.cost.round_compute * world / active
        n = len(self.req_id)
        if n == 0:
            return compute
        layer = self.round_no % wl.moe_layers
        positions = wl.output_tokens - self.req_left
        experts = self.router.draw(self.req_id, layer, positions)
        targets = self._routes()[self.req_home[:, None], experts]
        counts = np.zeros((world, world))
        np.add.at(counts, (np.repeat(self.req_home, wl.experts_per_token), targets.ravel()), 1)
        np.fill_diagonal(counts, 0)
        pair = counts + counts.T
        link_time = float((pair * self.cost.token_bytes * wl.moe_layers / self._bandwidth).max())
        remote = pair > 0
        if not remote.any():
            latency = 0.0
        elif (remote & ~self._same_node).any():
            latency = self.links.inter_node_latency
        else:
            latency = self.links.intra_node_latency
        return compute + (1 - self.cost.overlap) * link_time + 2 * wl.moe_layers * latency

    def _start_round(self) -> None:
        if self.mode != "serving":
            return
        self._refill()
        self.round_start = self.now
        duration = self._round_duration()
        self._push(self.now + duration, "round_end", "cluster", round=self.round_no, duration=duration)

    def _on_round_end(self, round: int, duration: float) -> None:
        st = self.state
        active = st.bitmap.active_ranks()
        silent = [r for r in active if st.lifecycles[r].state not in _PARTICIPATING]
        if silent:
            observer = min(r for r in active if r not in silent)
            self.counters = SignalCounters.for_peers([r for r in active if r != observer], self.round_start)
            for r in self.counters.expected_from:
                self.counters.expect(r, self.now)
                if r not in silent:
                    self.counters.observe(r, self.now)
            self.mode = "stalled"
            self.emit("round_stall", round=round, observer=observer)
            self._push(self.now + self.protocol.timeout, "detect", "cluster", observer=observer)
            return

        n = len(self.req_id)
        self.req_left -= 1
        done = self.req_left <= 0
        completed = int(done.sum())
        if completed:
            keep = ~done
            self.req_id, self.req_home, self.req_left = self.req_id[keep], self.req_home[keep], self.req_left[keep]
        self.emit("round", round=round, tokens=n, completed=completed, active=len(active), duration=duration)
        self.round_no += 1
        if self.pending_join:
            self._begin_incorporation()
        else:
            self._start_round()

    # -- failure handling ---------------------------------------------------

    def _fail_ranks(self, ranks, observer) -> None:
        st = self.state
        ranks = sorted(ranks)
        self.emit("suspect", ranks=ranks, observer=observer)
        hit = np.isin(self.req_home, ranks)
        count = int(hit.sum())
        if count:
            keep = ~hit
            self.req_id, self.req_home, self.req_left = self.req_id[keep], self.req_home[keep], self.req_left[keep]
        self.emit("requests_failed", count=count, ranks=ranks)
        owners = st.deactivate(ranks)
        self.ever_failed.update(ranks)
        self._membership("deactivate", ranks)
        self._peer_tables(owners, ranks)
        if self.episode is None:
            self.episode = {"start": self.now, "failed": [], "phases": {
                "metadata": 0.0, "timeout_wait": 0.0, "peer_transfer": 0.0, "backup_load": 0.0},
                "attempts": 0, "fallbacks": 0}
        self.episode["failed"] = sorted(set(self.episode["failed"]) | set(ranks))

    def _on_detect(self, observer: int) -> None:
        st = self.state
        suspects = observe_progress(self.counters, self.now, self.protocol.timeout)
        suspects = {r for r in suspects if st.bitmap.is_active(r)}
        self.counters = None
        self._fail_ranks(suspects, observer)
        self._begin_repair()

    def _silent_active(self) -> List[int]:
        st = self.state
        return [r for r in st.bitmap.active_ranks() if st.lifecycles[r].state not in _PARTICIPATING]

    def _begin_repair(self) -> None:
        st = self.state
        self.mode = "repairing"
        self.episode["attempts"] += 1
        if self.episode["attempts"] > st.world_size:
            return self._unrecoverable("repair re-planned more than world_size times")
        try:
            outcome = st.plan_repair()
        except CapacityError as exc:
            return self._unrecoverable(str(exc))
        survivors = len(st.bitmap.active_ranks())
        meta = self.cost.metadata_latency_per_rank * survivors
        self.episode["phases"]["metadata"] += meta
        planned = {TIER_NAMES[t]: 0 for t in RepairTier}
        for a in outcome.plan.assignments:
            planned[TIER_NAMES[a.tier]] += 1
        self.emit("repair_begin", failed=self.episode["failed"], attempt=self.episode["attempts"],
                  survivors=survivors, bitmap_version=st.bitmap.version, planned=planned)
        self._outcome = outcome
        self._push(self.now + meta, "repair_issue", "cluster")

    def _on_repair_issue(self) -> None:
        if self._silent_active():
            # Transfers touching a dead peer stall until the same timeout fires.
            self._push(self.now + self.protocol.timeout, "repair_timeout", "cluster")
            return
        self._execute()

    def _on_repair_timeout(self) -> None:
        silent = self._silent_active()
        observer = min(r for r in self.state.bitmap.active_ranks() if r not in silent)
        self.episode["phases"]["timeout_wait"] += self.protocol.timeout
        self._fail_ranks(silent, observer)
        self._execute()

    def _execute(self) -> None:
        st = self.state
        try:
            result = execute_schedule(self._outcome.schedule, st.bitmap, st.backup, self.links,
                                      self.topology, st.placement)
        except RepairAborted as exc:
            self.emit("repair_abort", ranks=list(exc.ranks))
            return self._begin_repair()
        for fb in result.fallbacks:
            self.emit("fallback", expert=fb.expert, destination=fb.destination, lost_source=fb.lost_source)
        self.episode["fallbacks"] += len(result.fallbacks)
        self.episode["phases"]["peer_transfer"] += result.phases["peer_transfer"]
        self.episode["phases"]["backup_load"] += result.phases["backup_load"]
        self._result = result
        self._push(self.now + result.elapsed, "repair_done", "cluster")

    def _on_repair_done(self) -> None:
        st = self.state
        st.placement = self._result.placement
        for r in range(st.world_size):
            if not st.bitmap.is_active(r):
                st.placement.clear_rank(r)
        if coverage_gap(st.bitmap, st.placement):
            self.emit("repair_stale", bitmap_version=st.bitmap.version)
            return self._begin_repair()
        st.refresh_routing()
        self._route_matrix = None
        self._validity("repair")
        outcome, ep = self._outcome, self.episode
        observer = st.bitmap.active_ranks()[0]
        self.emit(
            "repair_end", failed=ep["failed"], attempts=ep["attempts"], fallbacks=ep["fallbacks"],
            duration=self.now - ep["start"], phases=ep["phases"], mix=_mix_dict(outcome.mix),
            assignments=[[a.destination.rank, a.destination.index, a.expert, TIER_NAMES[a.tier],
                          None if a.source is None else a.source.rank] for a in outcome.plan.assignments],
            bytes={TIER_NAMES[t]: b for t, b in outcome.schedule.bytes_by_tier().items()},
            routes_of=observer, routes=list(st.routing[observer].route), placement=st.placement.to_lists(),
        )
        self.episode = None
        self.mode = "serving"
        self._start_round()

    def _validity(self, epoch: str) -> None:
        report = self.state.validity()
        self.emit("validity", epoch=epoch, version=self.state.bitmap.version, valid=report.valid,
                  peer_set_ok=report.peer_set_ok, coverage_ok=report.coverage_ok, routing_ok=report.routing_ok,
                  violations=len(report.violations))

    def _unrecoverable(self, reason: str) -> None:
        self.emit("unrecoverable", reason=reason, active=self.state.bitmap.active_ranks())
        self.mode = "halted"

    # -- faults and relaunch --------------------------------------------------

    def _on_kill(self, rank: int) -> None:
        st = self.state
        st.kill([rank])
        self.controller.withdraw(rank)
        self.pending_join.pop(rank, None)
        self.emit("kill", rank=rank, active=st.bitmap.is_active(rank))
        self._lifecycle(rank)

    def _on_relaunch(self, rank: int) -> None:
        st = self.state
        life = st.lifecycles[rank]
        draw = float(to_unit(counter_hash(self.seed, 0x4A, rank, life.incarnation + 1))[0])
        plan = relaunch(life, rank, self.now, self.protocol.warmup, self.protocol.warmup_jitter, draw)
        st.alive[rank] = True
        self._lifecycle(rank)
        actor = f"rank:{rank}"
        for index, (_, start) in enumerate(plan.phases):
            self._push(start, "warmup", actor, rank=rank, incarnation=plan.incarnation, phase=index)
        self._push(plan.ready_time, "join_ready", actor, rank=rank, incarnation=plan.incarnation)
        if not self.polling:
            self.polling = True
            self._push(next_poll_tick(self.now, self.protocol.poll_period), "poll", "controller")

    def _stale(self, rank: int, incarnation: int) -> bool:
        life = self.state.lifecycles[rank]
        return life.incarnation != incarnation or life.state is LifecycleState.FAILED

    def _on_warmup(self, rank: int, incarnation: int, phase: int) -> None:
        if self._stale(rank, incarnation):
            return
        st = self.state
        name = WARMUP_PHASES[phase][0]
        fields = {}
        if name == "runtime_init":
            st.lifecycles[rank].transition(LifecycleState.LOCAL_INIT)
            self._lifecycle(rank)
        elif name == "endpoint_rebuild":
            st.current_endpoint[rank] = st.endpoints.endpoint()
            st.peer_tables[rank] = PeerTable.create(rank, self.topology, st.current_endpoint,
                                                    st.endpoints.table_identity(), active=[rank])
            st.routing[rank] = RoutingTable(rank, [rank] * st.placement.num_experts)
            fields = {"endpoint_token": st.current_endpoint[rank][0], "identity": st.peer_tables[rank].table_identity}
        elif name == "weight_load":
            st.warm_slots[rank] = st.preferred.slot_contents(rank)
            fields = {"experts": len(st.preferred.experts_on(rank))}
        self.emit("warmup_phase", rank=rank, incarnation=incarnation, phase=name, **fields)
        if name == "graph_capture":
            identity = st.peer_tables[rank].table_identity
            st.ledger.capture(rank, identity)
            self.emit("capture", rank=rank, incarnation=incarnation, identity=identity, phase="relaunch")

    def _on_join_ready(self, rank: int, incarnation: int) -> None:
        if self._stale(rank, incarnation):
            return
        st = self.state
        st.lifecycles[rank].transition(LifecycleState.JOIN_READY)
        self._lifecycle(rank)
        token, buffer = st.current_endpoint[rank]
        self.controller.report(JoinReadySignal(rank, incarnation, token, buffer), self.now)
        self.emit("join_ready", rank=rank, incarnation=incarnation, endpoint_token=token)

    def _on_poll(self) -> None:
        st = self.state
        for sig in self.controller.ready_signals(self.now):
            if st.bitmap.is_active(sig.rank) or sig.rank in self.pending_join:
                continue
            self.pending_join[sig.rank] = sig
            self.controller.withdraw(sig.rank)
            self.emit("join_observed", rank=sig.rank, incarnation=sig.incarnation,
                      ready_at=self.controller_ready_time(sig))
        waiting = [r for r in range(st.world_size)
                   if st.lifecycles[r].state in _RECOVERING and r not in self.pending_join]
        if waiting:
            self._push(next_poll_tick(self.now + self.protocol.poll_period, self.protocol.poll_period),
                       "poll", "controller")
        else:
            self.polling = False

    def controller_ready_time(self, sig: JoinReadySignal) -> float:
        for rec in reversed(self.trace.records):
            if rec["type"] == "join_ready" and rec["rank"] == sig.rank and rec["incarnation"] == sig.incarnation:
                return rec["t"]
        return self.now

    # -- incorporation --------------------------------------------------------

    def _begin_incorporation(self) -> None:
        st = self.state
        signals = [self.pending_join[r] for r in sorted(self.pending_join)]
        self.pending_join.clear()
        self.emit("incorporate_begin", ranks=[s.rank for s in signals])
        result = incorporate(signals, st, self.links, complete=False)
        for sig, reason in result.dropped:
            self.emit("join_dropped", rank=sig.rank, incarnation=sig.incarnation, reason=reason)
            if st.lifecycles[sig.rank].state is LifecycleState.FAILED:
                self._lifecycle(sig.rank)
        if not result.joined:
            return self._start_round()
        for r in result.joined:
            self._lifecycle(r)
        self._membership("activate", result.joined)
        self._peer_tables(st.bitmap.active_ranks(), result.joined)
        phases = {
            "entry_patch": self.cost.entry_patch_latency * len(result.joined),
            "broadcast": self.cost.broadcast_latency,
            "peer_transfer": result.execution.phases["peer_transfer"],
            "backup_load": result.execution.phases["backup_load"],
        }
        self.mode = "incorporating"
        self.joining = {"start": self.now, "result": result, "phases": phases}
        self._route_matrix = None
        self._push(self.now + sum(phases.values()), "incorporate_end", "cluster")

    def _on_incorporate_end(self) -> None:
        st = self.state
        job, self.joining = self.joining, None
        result = job["result"]
        joined, aborted = [], []
        for r in result.joined:
            if st.lifecycles[r].state is LifecycleState.FAILED:
                aborted.append(r)
                continue
            finish_join(st.lifecycles[r])
            joined.append(r)
            self.emit("lifecycle", rank=r, state=LifecycleState.REJOINED.value,
                      incarnation=st.lifecycles[r].incarnation)
            self._lifecycle(r)
        for r in aborted:
            self.emit("incorporate_aborted", rank=r)
        self._validity("rejoin")
        observer = st.bitmap.active_ranks()[0]
        witness = min((r for r in st.bitmap.active_ranks() if r not in result.joined), default=observer)
        entries = {str(r): [st.peer_tables[witness].entries[r].endpoint_token,
                            st.peer_tables[witness].entries[r].generation] for r in result.joined}
        self.emit(
            "incorporate_end", ranks=joined, aborted=aborted, duration=self.now - job["start"],
            phases=job["phases"], mix=_mix_dict(result.mix), restored=st.placement == st.preferred,
            healthy_new_captures=result.healthy_new_captures, routes_of=observer,
            routes=list(st.routing[observer].route), placement=st.placement.to_lists(),
            entries_seen_by=witness, entries=entries,
        )
        self.mode = "serving"
        self._start_round()


def run_scenario(topology: Topology, experts: ExpertSpec, workload: WorkloadSpec, links: LinkModel,
                 faults: FaultScript, protocol: ProtocolConfig, cost: Optional[CostModel] = None, seed: int = 0,
                 horizon: float = 60.0, name: str = "scenario", trace_level: str = "info",
                 extra: Optional[Dict[str, Any]] = None) -> EventTrace:
    """Simulate one scenario; the returned trace is a pure function of the arguments."""
    sim = Simulation(topology, experts, workload, links, faults, protocol, cost or CostModel(), seed, horizon,
                     name, trace_level, extra)
    return sim.run()
