"""Run summaries computed from a trace alone, plus the embedded assertions."""

from __future__ import annotations

import json
from typing import Any, Dict, List

from .rejoin import WARMUP_PHASES
from .sim.analysis import (
    PAUSE_RESOLUTION,
    derive_pause_windows,
    derive_throughput,
    plateaus,
    steady_state_index,
)
from .sim.trace import EventTrace

STEADY_SPAN = 5.0
_DIGITS = 6


def _round(obj):
    if isinstance(obj, float):
        return round(obj, _DIGITS) + 0.0
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def modeled_full_restart(config: Dict[str, Any]) -> float:
    """Off-service time of a full-cluster restart built from the same warmup constants.

    Every rank of a node reloads weights from the node's shared storage at
    once, so the weight-load share scales with ranks per node; the other
    warmup phases run in parallel across ranks.
    """
    proto = config["protocol"]
    warmup = proto["warmup"] + proto["warmup_jitter"] / 2
    weight_share = dict(WARMUP_PHASES)["weight_load"]
    per_node = config["topology"]["ranks_per_node"]
    return proto["timeout"] + warmup * (1 - weight_share) + warmup * weight_share * per_node


def _mix_pct(mix: Dict[str, int]) -> Dict[str, float]:
    total = sum(mix.values())
    return {k: (100.0 * v / total if total else 0.0) for k, v in mix.items()}


def summarize(trace: EventTrace) -> Dict[str, Any]:
    header, records = trace.header, trace.records
    config = header["config"]
    horizon = records[-1]["t"]
    fine = derive_throughput(trace, window=PAUSE_RESOLUTION, step=PAUSE_RESOLUTION, horizon=horizon)
    pauses = derive_pause_windows(fine, span=STEADY_SPAN)
    steady = steady_state_index(fine, span=STEADY_SPAN)
    steady_t = float(fine.times[steady]) if steady is not None else None
    segments = plateaus(trace, pauses, steady_t, horizon) if steady_t is not None else []
    healthy = segments[0][2] if segments else None

    kills: Dict[int, float] = {}
    failures: List[Dict[str, Any]] = []
    rejoins: List[Dict[str, Any]] = []
    validity = []
    join_ready = []
    admitted = completed = failed = tokens = 0
    suspects_at = []
    unrecoverable = None
    for rec in records:
        kind = rec["type"]
        if kind == "kill":
            kills[rec["rank"]] = rec["t"]
        elif kind == "suspect":
            suspects_at.append((rec["t"], rec["ranks"]))
        elif kind == "admit":
            admitted += rec["count"]
        elif kind == "round":
            completed += rec["completed"]
            tokens += rec["tokens"]
        elif kind == "requests_failed":
            failed += rec["count"]
        elif kind == "validity":
            validity.append([rec["t"], rec["epoch"], rec["valid"]])
        elif kind == "join_ready":
            join_ready.append([rec["t"], rec["rank"]])
        elif kind == "unrecoverable":
            unrecoverable = rec["reason"]
        elif kind == "repair_end":
            first_kill = min(kills[r] for r in rec["failed"])
            first_suspect = min(t for t, ranks in suspects_at if set(ranks) & set(rec["failed"]))
            phases = dict(rec["phases"])
            phases["detection"] = first_suspect - first_kill
            repairs = sorted([a[2], a[3], -1 if a[4] is None else a[4], a[0]] for a in rec["assignments"]
                             if a[3] != "local_reuse")
            failures.append({
                "ranks": rec["failed"], "killed_at": first_kill, "detected_at": first_suspect,
                "repaired_at": rec["t"], "off_service": rec["t"] - first_kill, "phases": phases,
                "mix": rec["mix"], "mix_pct": _mix_pct(rec["mix"]), "bytes": rec["bytes"],
                "fallbacks": rec["fallbacks"], "attempts": rec["attempts"], "repairs": repairs,
                "routes": {"rank": rec["routes_of"], "route": rec["routes"]}, "placement": rec["placement"],
            })
            suspects_at = []
        elif kind == "incorporate_end":
            rejoins.append({
                "ranks": rec["ranks"], "aborted": rec["aborted"], "started_at": rec["t"] - rec["duration"],
                "finished_at": rec["t"], "duration": rec["duration"], "phases": rec["phases"], "mix": rec["mix"],
                "restored": rec["restored"], "routes": {"rank": rec["routes_of"], "route": rec["routes"]},
                "placement": rec["placement"],
                "entries": {"seen_by": rec["entries_seen_by"], "endpoint_generation": rec["entries"]},
            })
    end = records[-1]
    captures, bring_up = end["captures"], end["bring_up_captures"]
    healthy_ranks = [r for r in range(len(captures)) if r not in kills]
    relaunch_captures: Dict[int, int] = {}
    for rec in records:
        if rec["type"] == "capture" and rec["phase"] == "relaunch":
            relaunch_captures[rec["rank"]] = relaunch_captures.get(rec["rank"], 0) + 1

    for seg, f in zip(segments[1:], failures):
        f["post_plateau"] = seg[2]
    pause_list = [[a, b, b - a] for a, b in pauses]
    off_service = sum(p[2] for p in pause_list)
    restart = modeled_full_restart(config)
    summary = {
        "scenario": config.get("scenario", config["name"]),
        "variant": config.get("variant", config["name"]),
        "config_hash": header["config_hash"],
        "seed": config["seed"],
        "horizon": horizon,
        "steady_state_at": steady_t,
        "healthy_plateau": healthy,
        "pauses": pause_list,
        "plateaus": [list(s) for s in segments],
        "failures": failures,
        "rejoins": rejoins,
        "join_ready": join_ready,
        "validity": validity,
        "recaptures": {
            "healthy": sum(captures[r] - bring_up[r] for r in healthy_ranks),
            "per_rank": [c - b for c, b in zip(captures, bring_up)],
            "relaunch_captures": {str(r): n for r, n in sorted(relaunch_captures.items())},
        },
        "requests": {"admitted": admitted, "completed": completed, "failed": failed,
                     "in_flight": end["in_flight"], "tokens": tokens},
        "restart": {"modeled_full_restart": restart, "off_service": off_service,
                    "ratio": restart / off_service if off_service > 0 else None},
        "backup": next((r["backup"] for r in records if r["type"] == "bring_up"), {}),
        "unrecoverable": unrecoverable,
    }
    summary["assertions"] = assertions(summary, config)
    summary["ok"] = all(summary["assertions"].values())
    return _round(summary)


def assertions(s: Dict[str, Any], config: Dict[str, Any]) -> Dict[str, bool]:
    out = {
        "validity_every_epoch": all(v[2] for v in s["validity"]),
        "zero_healthy_recapture": s["recaptures"]["healthy"] == 0,
        "one_capture_per_incarnation": all(
            s["recaptures"]["per_rank"][int(r)] == n for r, n in s["recaptures"]["relaunch_captures"].items()),
        "request_conservation": (
            s["requests"]["admitted"] == s["requests"]["completed"] + s["requests"]["failed"]
            + s["requests"]["in_flight"]
            and s["requests"]["tokens"] <= s["requests"]["admitted"] * config["workload"]["output_tokens"]),
        "recoverable": s["unrecoverable"] is None,
    }
    expect = config.get("expect") or {}
    plateau_means = [p[2] for p in s["plateaus"]]
    healthy = s["healthy_plateau"]
    if "pauses" in expect:
        out["pause_count"] = len(s["pauses"]) == expect["pauses"]
    if expect.get("reduced_below_healthy"):
        out["reduced_below_healthy"] = (len(plateau_means) >= 2 and None not in plateau_means[:2]
                                        and plateau_means[1] < healthy)
    if "restored_within" in expect:
        last = plateau_means[-1] if plateau_means else None
        out["restored_within"] = (len(plateau_means) >= 2 and last is not None and healthy is not None
                                  and abs(last - healthy) <= expect["restored_within"] * healthy)
    if "min_restart_ratio" in expect:
        ratio = s["restart"]["ratio"]
        out["restart_ratio"] = ratio is not None and ratio >= expect["min_restart_ratio"]
    if expect.get("join_after_degraded"):
        out["join_after_degraded"] = bool(s["join_ready"] and s["pauses"]
                                          and s["join_ready"][0][0] > s["pauses"][0][1])
    if "repaired" in expect:
        got = s["failures"][0]["repairs"] if s["failures"] else []
        out["repaired"] = sorted(list(x) for x in expect["repaired"]) == got
    if expect.get("restored"):
        out["restored"] = bool(s["rejoins"]) and all(r["restored"] for r in s["rejoins"])
    return out


def sweep_summary(name: str, variants: Dict[str, Dict[str, Any]], expect: Dict[str, Any],
                  failed_ranks: List[int]) -> Dict[str, Any]:
    """Cross-variant view of a sweep plus its trend assertions."""
    rows = []
    for k, (variant, s) in zip(failed_ranks, variants.items()):
        f = s["failures"][0] if s["failures"] else None
        second = s["pauses"][1][2] if len(s["pauses"]) >= 2 else None
        rows.append({
            "variant": variant, "failed_ranks": k,
            "mix_pct": f["mix_pct"] if f else None,
            "phases": f["phases"] if f else None,
            "post_plateau": f.get("post_plateau") if f else None,
            "healthy_plateau": s["healthy_plateau"],
            "pauses": s["pauses"], "pause2": second,
            "recaptures_healthy": s["recaptures"]["healthy"], "ok": s["ok"],
        })
    checks = {"variants_ok": all(r["ok"] for r in rows),
              "zero_healthy_recapture": all(r["recaptures_healthy"] == 0 for r in rows)}
    if expect.get("dram_share_increasing"):
        shares = [r["mix_pct"]["dram_reload"] if r["mix_pct"] else None for r in rows]
        checks["dram_share_increasing"] = None not in shares and all(a < b for a, b in zip(shares, shares[1:]))
    if "gpu_majority_upto" in expect:
        limit = expect["gpu_majority_upto"]
        checks["gpu_majority"] = all(
            r["mix_pct"] is not None and r["mix_pct"]["local_reuse"] + r["mix_pct"]["peer_relocation"] > 50.0
            for r in rows if r["failed_ranks"] <= limit)
    if expect.get("pause2_monotone"):
        p2 = [r["pause2"] for r in rows]
        checks["pause2_monotone"] = None not in p2 and all(a <= b for a, b in zip(p2, p2[1:]))
    out = {"sweep": name, "variants": rows, "assertions": checks, "ok": all(checks.values())}
    return _round(out)


def dumps(summary: Dict[str, Any]) -> str:
    return json.dumps(summary, indent=2, sort_keys=True, allow_nan=False) + "\n"
