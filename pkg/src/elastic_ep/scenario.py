"""Scenario files: TOML with one table per configuration group.

Every protocol and cost constant is spelled out in the file; only a few
optional fields (explicit placement, load weights, skew, sweep, expect)
may be omitted. Validation collects every problem with the field path and,
where it can be found, the line it sits on.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import Topology
from .errors import ConfigurationError
from .links import LinkModel
from .sim.config import CostModel, ExpertSpec, ProtocolConfig
from .sim.faults import FaultScript
from .sim.workload import WorkloadSpec

SCENARIO_SUFFIX = ".scenario"


@dataclass(frozen=True)
class Diagnostic:
    field: str
    message: str
    line: Optional[int] = None

    def __str__(self):
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.field}: {self.message}"


class ScenarioError(ConfigurationError):
    def __init__(self, diagnostics: List[Diagnostic], path: Optional[str] = None):
        self.diagnostics = diagnostics
        self.path = path
        prefix = f"{path}: " if path else ""
        super().__init__(prefix + "; ".join(str(d) for d in diagnostics))


# (type, required, check) per key; check is one of None, "pos", "nonneg", "unit".
_INT, _FLOAT, _STR, _BOOL, _LIST = "int", "float", "str", "bool", "list"
_SCHEMA: Dict[str, Dict[str, Tuple[str, bool, Optional[str]]]] = {
    "": {"name": (_STR, True, None), "seed": (_INT, True, "nonneg"), "horizon": (_FLOAT, True, "pos")},
    "topology": {"nodes": (_INT, True, "pos"), "ranks_per_node": (_INT, True, "pos")},
    "experts": {
        "count": (_INT, True, "pos"), "bytes_per_expert": (_INT, True, "pos"),
        "redundancy": (_INT, True, "nonneg"), "slots_per_rank": (_INT, False, "pos"),
        "placement": (_LIST, False, None), "load": (_LIST, False, None),
        "backup_disabled_nodes": (_LIST, False, None),
    },
    "workload": {
        "max_concurrency": (_INT, True, "pos"), "input_tokens": (_INT, True, "pos"),
        "output_tokens": (_INT, True, "pos"), "moe_layers": (_INT, True, "pos"),
        "experts_per_token": (_INT, True, "pos"), "routing": (_STR, True, None), "skew": (_FLOAT, False, "pos"),
    },
    "links": {k: (_FLOAT, True, "pos") for k in (
        "intra_node_bandwidth", "inter_node_bandwidth", "dram_read_bandwidth",
        "intra_node_latency", "inter_node_latency", "dram_read_latency")},
    "protocol": {"timeout": (_FLOAT, True, "pos"), "poll_period": (_FLOAT, True, "pos"),
                 "warmup": (_FLOAT, True, "pos"), "warmup_jitter": (_FLOAT, True, "nonneg")},
    "cost": {
        "round_compute": (_FLOAT, True, "pos"), "overlap": (_FLOAT, True, "unit"),
        "token_bytes": (_INT, True, "pos"), "metadata_latency_per_rank": (_FLOAT, True, "nonneg"),
        "entry_patch_latency": (_FLOAT, True, "nonneg"), "broadcast_latency": (_FLOAT, True, "nonneg"),
    },
    "faults": {"time": (_FLOAT, True, "nonneg"), "action": (_STR, True, None), "rank": (_INT, True, "nonneg")},
    "sweep": {"failed_ranks": (_LIST, True, None), "kill_at": (_FLOAT, True, "nonneg"),
              "relaunch_at": (_FLOAT, False, "nonneg")},
    "expect": {
        "pauses": (_INT, False, "nonneg"), "reduced_below_healthy": (_BOOL, False, None),
        "restored_within": (_FLOAT, False, "nonneg"), "min_restart_ratio": (_FLOAT, False, "pos"),
        "join_after_degraded": (_BOOL, False, None), "repaired": (_LIST, False, None),
        "restored": (_BOOL, False, None), "dram_share_increasing": (_BOOL, False, None),
        "gpu_majority_upto": (_INT, False, "nonneg"), "pause2_monotone": (_BOOL, False, None),
    },
}
_OPTIONAL_TABLES = {"faults", "sweep", "expect"}
_TIERS = ("local_reuse", "peer_relocation", "dram_reload")


@dataclass(frozen=True)
class SweepSpec:
    failed_ranks: Tuple[int, ...]
    kill_at: float
    relaunch_at: Optional[float] = None


@dataclass
class ScenarioConfig:
    name: str
    seed: int
    horizon: float
    topology: Topology
    experts: ExpertSpec
    workload: WorkloadSpec
    links: LinkModel
    protocol: ProtocolConfig
    cost: CostModel
    faults: FaultScript
    sweep: Optional[SweepSpec] = None
    expect: Dict[str, Any] = field(default_factory=dict)
    source: Optional[str] = None

    def variants(self) -> List[Tuple[str, FaultScript]]:
        """``(variant name, fault script)`` pairs; a plain scenario has one variant."""
        if self.sweep is None:
            return [(self.name, self.faults)]
        return [(f"{self.name}_f{k}", _sweep_faults(self.faults, self.sweep, k)) for k in self.sweep.failed_ranks]

    def run_kwargs(self, faults: FaultScript, variant: str, seed: Optional[int] = None) -> Dict[str, Any]:
        extra = {"scenario": self.name, "variant": variant, "expect": self.expect}
        return dict(topology=self.topology, experts=self.experts, workload=self.workload, links=self.links,
                    faults=faults, protocol=self.protocol, cost=self.cost,
                    seed=self.seed if seed is None else seed, horizon=self.horizon, name=self.name, extra=extra)


def _sweep_faults(base: FaultScript, sweep: SweepSpec, k: int) -> FaultScript:
    items = [(e.time, e.action.value, e.rank) for e in base.events]
    items += [(sweep.kill_at, "kill_rank", r) for r in range(k)]
    if sweep.relaunch_at is not None:
        items += [(sweep.relaunch_at, "relaunch_rank", r) for r in range(k)]
    return FaultScript.of(sorted(items, key=lambda x: x[0]))


class _Locator:
    """Finds the line of ``key`` inside ``[table]`` (or the n-th ``[[table]]``) in raw TOML text."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def _table_start(self, table: str, index: Optional[int]) -> Optional[int]:
        if not table:
            return 0
        pattern = re.compile(rf"^\s*\[\[\s*{re.escape(table)}\s*\]\]" if index is not None
                             else rf"^\s*\[\s*{re.escape(table)}\s*\]")
        seen = -1
        for i, line in enumerate(self.lines):
            if pattern.match(line):
                seen += 1
                if index is None or seen == index:
                    return i
        return None

    def line(self, table: str, key: Optional[str] = None, index: Optional[int] = None) -> Optional[int]:
        start = self._table_start(table, index)
        if start is None:
            return None
        if key is None:
            return start + 1
        key_re = re.compile(rf"^\s*{re.escape(key)}\s*=")
        for i in range(start + (1 if table else 0), len(self.lines)):
            if i > start and re.match(r"^\s*\[", self.lines[i]):
                break
            if key_re.match(self.lines[i]):
                return i + 1
        return start + 1


def _type_ok(value, kind: str) -> bool:
    if kind == _INT:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == _FLOAT:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == _STR:
        return isinstance(value, str)
    if kind == _BOOL:
        return isinstance(value, bool)
    return isinstance(value, list)


def _check_value(value, check: Optional[str]) -> Optional[str]:
    if check == "pos" and not value > 0:
        return f"must be positive, got {value}"
    if check == "nonneg" and not value >= 0:
        return f"must be non-negative, got {value}"
    if check == "unit" and not 0 <= value <= 1:
        return f"must lie in [0, 1], got {value}"
    return None


class _Validator:
    def __init__(self, text: str):
        self.loc = _Locator(text)
        self.diagnostics: List[Diagnostic] = []

    def add(self, path: str, message: str, table: str = "", key: Optional[str] = None,
            index: Optional[int] = None) -> None:
        self.diagnostics.append(Diagnostic(path, message, self.loc.line(table, key, index)))

    def table(self, data: Dict[str, Any], table: str, index: Optional[int] = None) -> Dict[str, Any]:
        schema = _SCHEMA[table]
        prefix = "" if not table else (f"{table}[{index}]." if index is not None else f"{table}.")
        out = {}
        for key, value in data.items():
            if key not in schema:
                if not table and key in _SCHEMA:
                    continue
                self.add(prefix + key, "unknown field", table, key, index)
                continue
            kind, _, check = schema[key]
            if not _type_ok(value, kind):
                self.add(prefix + key, f"expected {kind}, got {type(value).__name__}", table, key, index)
                continue
            problem = None if kind in (_LIST, _STR, _BOOL) else _check_value(value, check)
            if problem:
                self.add(prefix + key, problem, table, key, index)
                continue
            out[key] = value
        for key, (_, required, _) in schema.items():
            if required and key not in data:
                self.add(prefix + key, "missing required field", table, None, index)
        return out


def parse_text(text: str, source: Optional[str] = None) -> ScenarioConfig:
    config, diagnostics = _parse(text, source)
    if diagnostics:
        raise ScenarioError(diagnostics, source)
    return config


def check_text(text: str, source: Optional[str] = None) -> List[Diagnostic]:
    return _parse(text, source)[1]


def _parse(text: str, source: Optional[str]):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        return None, [Diagnostic("<file>", f"invalid TOML: {exc}", int(m.group(1)) if m else None)]

    v = _Validator(text)
    for key, value in raw.items():
        if key in _SCHEMA and key:
            if key == "faults":
                if not isinstance(value, list):
                    v.add("faults", "must be an array of [[faults]] tables", "faults")
            elif not isinstance(value, dict):
                v.add(key, "must be a table", "", key)
        elif key not in _SCHEMA[""]:
            v.add(key, "unknown field or table", "", key)
    top = v.table(raw, "")
    sections = {}
    for name in _SCHEMA:
        if not name or name == "faults":
            continue
        data = raw.get(name)
        if data is None:
            if name not in _OPTIONAL_TABLES:
                v.add(name, "missing required table")
            continue
        if isinstance(data, dict):
            sections[name] = v.table(data, name)
    faults_raw = raw.get("faults", [])
    faults = []
    if isinstance(faults_raw, list):
        for i, item in enumerate(faults_raw):
            entry = v.table(item if isinstance(item, dict) else {}, "faults", i)
            faults.append(entry)
            if "action" in entry and entry["action"] not in ("kill_rank", "relaunch_rank"):
                v.add(f"faults[{i}].action", f"must be 'kill_rank' or 'relaunch_rank', got {entry['action']!r}",
                      "faults", "action", i)
    if v.diagnostics:
        return None, v.diagnostics
    return _build(top, sections, faults, v, source)


def _build(top, sections, faults, v: _Validator, source):
    topo_s, exp_s, wl_s = sections["topology"], sections["experts"], sections["workload"]
    links_s, proto_s, cost_s = sections["links"], sections["protocol"], sections["cost"]
    topology = Topology(topo_s["nodes"], topo_s["ranks_per_node"])
    world = topology.world_size
    count, redundancy = exp_s["count"], exp_s["redundancy"]
    slots = exp_s.get("slots_per_rank", -(-(count + redundancy) // world))

    if count + redundancy > world * slots:
        v.add("experts.redundancy",
              f"capacity: {count} experts + {redundancy} replicas need {count + redundancy} slots, "
              f"but {world} ranks x {slots} slots offer {world * slots}", "experts", "redundancy")
    elif redundancy > count * (world - 1):
        v.add("experts.redundancy", f"capacity: at most {count * (world - 1)} replicas fit on distinct ranks",
              "experts", "redundancy")
    placement = exp_s.get("placement")
    if placement is not None:
        ok = (len(placement) == world and all(isinstance(r, list) and len(r) <= slots for r in placement)
              and all(isinstance(e, int) and not isinstance(e, bool) and 0 <= e < count for r in placement for e in r))
        if not ok:
            v.add("experts.placement", f"must list {world} ranks of at most {slots} expert ids in [0, {count})",
                  "experts", "placement")
        elif set(e for r in placement for e in r) != set(range(count)):
            v.add("experts.placement", "must place every expert at least once", "experts", "placement")
        elif any(len(set(r)) != len(r) for r in placement):
            v.add("experts.placement", "a rank may hold each expert at most once", "experts", "placement")
        placement = tuple(tuple(r) for r in placement)
    load = exp_s.get("load")
    if load is not None:
        if len(load) != count or any(not _type_ok(w, _FLOAT) or w < 0 for w in load):
            v.add("experts.load", f"must list {count} non-negative weights", "experts", "load")
        load = tuple(float(w) for w in load)
    disabled = exp_s.get("backup_disabled_nodes", [])
    if any(not _type_ok(n, _INT) or not 0 <= n < topology.num_nodes for n in disabled):
        v.add("experts.backup_disabled_nodes", f"node ids must lie in [0, {topology.num_nodes})",
              "experts", "backup_disabled_nodes")
    if wl_s["routing"] not in ("uniform", "skewed"):
        v.add("workload.routing", f"must be 'uniform' or 'skewed', got {wl_s['routing']!r}", "workload", "routing")
    if links_s["dram_read_bandwidth"] > links_s["inter_node_bandwidth"]:
        v.add("links.dram_read_bandwidth", "must not exceed links.inter_node_bandwidth",
              "links", "dram_read_bandwidth")

    script = FaultScript.of([(f["time"], f["action"], f["rank"]) for f in faults])
    for i, key, message in script.problems(world):
        v.add(f"faults[{i}].{key}", message, "faults", key, i)

    sweep = None
    if "sweep" in sections:
        s = sections["sweep"]
        values = s["failed_ranks"]
        if not values or any(not _type_ok(k, _INT) or not 1 <= k < world for k in values):
            v.add("sweep.failed_ranks", f"must list failure counts in [1, {world - 1}]", "sweep", "failed_ranks")
        else:
            sweep = SweepSpec(tuple(values), float(s["kill_at"]),
                              None if s.get("relaunch_at") is None else float(s["relaunch_at"]))
            if sweep.relaunch_at is not None and sweep.relaunch_at < sweep.kill_at:
                v.add("sweep.relaunch_at", "must not precede sweep.kill_at", "sweep", "relaunch_at")
            for k in values:
                for i, _, message in _sweep_faults(script, sweep, k).problems(world):
                    v.add("sweep", f"with {k} failed ranks, fault {i}: {message}", "sweep")
                    break

    expect = dict(sections.get("expect", {}))
    for entry in expect.get("repaired", []):
        if not (isinstance(entry, list) and len(entry) == 4 and entry[1] in _TIERS):
            v.add("expect.repaired", "entries are [expert, tier, source rank or -1, destination rank]",
                  "expect", "repaired")
            break

    if v.diagnostics:
        return None, v.diagnostics
    try:
        config = ScenarioConfig(
            name=top["name"], seed=top["seed"], horizon=float(top["horizon"]), topology=topology,
            experts=ExpertSpec(count, exp_s["bytes_per_expert"], redundancy, slots, placement, load, tuple(disabled)),
            workload=WorkloadSpec(**{k: wl_s[k] for k in wl_s}),
            links=LinkModel(**{k: float(x) for k, x in links_s.items()}),
            protocol=ProtocolConfig(**{k: float(x) for k, x in proto_s.items()}),
            cost=CostModel(**cost_s),
            faults=script, sweep=sweep, expect=expect, source=source,
        )
    except ConfigurationError as exc:
        return None, [Diagnostic("<config>", str(exc))]
    return config, []


def bundled_names() -> List[str]:
    root = resources.files("elastic_ep") / "scenarios"
    return sorted(p.name[: -len(SCENARIO_SUFFIX)] for p in root.iterdir() if p.name.endswith(SCENARIO_SUFFIX))


def resolve(config: str) -> Tuple[str, str]:
    """Return ``(text, source label)`` for a path or a bundled scenario name."""
    path = Path(config)
    if path.is_file():
        return path.read_text(), str(path)
    root = resources.files("elastic_ep") / "scenarios"
    name = config[: -len(SCENARIO_SUFFIX)] if config.endswith(SCENARIO_SUFFIX) else config
    bundled = root / f"{name}{SCENARIO_SUFFIX}"
    if bundled.is_file():
        return bundled.read_text(), f"<bundled {name}>"
    raise ConfigurationError(f"no scenario file or bundled scenario named {config!r}")


def load(config: str) -> ScenarioConfig:
    text, source = resolve(config)
    return parse_text(text, source)


def bundled_golden(name: str) -> Optional[str]:
    golden = resources.files("elastic_ep") / "scenarios" / f"{name}.expected.json"
    return golden.read_text() if golden.is_file() else None
