"""Independent reference computations, written without the package's helpers."""

from __future__ import annotations


def slot_lists(placement):
    return placement.to_lists()


def validity_oracle(bits, lists, routes, peer_active):
    """Brute-force (peer_set_ok, coverage_ok, routing_ok).

    ``bits``: active flag per rank. ``lists``: slot contents per rank.
    ``routes[r]``: route list of rank r. ``peer_active[r]``: active flags in r's table.
    """
    world = len(bits)
    num_experts = len(routes[next(r for r in range(world) if bits[r])])
    peer_ok = all(
        [bool(peer_active[r][p]) for p in range(world)] == [bool(b) for b in bits]
        for r in range(world) if bits[r]
    )
    coverage_ok = True
    for e in range(num_experts):
        if not any(bits[r] and e in lists[r] for r in range(world)):
            coverage_ok = False
    routing_ok = True
    for r in range(world):
        if not bits[r]:
            continue
        for e in range(num_experts):
            target = routes[r][e]
            if not (0 <= target < world and bits[target] and e in lists[target]):
                routing_ok = False
    return peer_ok, coverage_ok, routing_ok


def min_tier_oracle(old_lists, new_lists, bits):
    """Minimum feasible tier for every slot whose content changes on an active rank.

    0 local reuse, 1 peer relocation, 2 DRAM reload.
    """
    out = {}
    for r, slots in enumerate(new_lists):
        if not bits[r]:
            continue
        for i, e in enumerate(slots):
            if e is None or old_lists[r][i] == e:
                continue
            if e in old_lists[r]:
                out[(r, i)] = 0
            elif any(bits[q] and e in old_lists[q] for q in range(len(bits))):
                out[(r, i)] = 1
            else:
                out[(r, i)] = 2
    return out


def moving_average_oracle(events, times, window):
    """Spreadsheet-style trailing average: tokens of events in (t - window, t] over window."""
    out = []
    for t in times:
        total = sum(tok for et, tok in events if t - window < et <= t)
        out.append(total / window)
    return out
