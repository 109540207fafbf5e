"""Throughput series and pause windows derived from round records."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np

# Pause windows are extracted from a fine series; rounds must stay shorter than this.
PAUSE_RESOLUTION = 0.25


@dataclass(frozen=True)
class Series:
    times: np.ndarray  # right edge of each averaging window
    values: np.ndarray  # tokens per second
    window: float
    step: float

    def __len__(self):
        return len(self.times)


def _emissions(trace) -> Tuple[np.ndarray, np.ndarray]:
    records = trace.records if hasattr(trace, "records") else trace
    rounds = [(r["t"], r["tokens"]) for r in records if r["type"] == "round"]
    if not rounds:
        return np.zeros(0), np.zeros(0)
    t, tok = zip(*rounds)
    return np.asarray(t, dtype=float), np.asarray(tok, dtype=float)


def derive_throughput(trace, window: float = 5.0, step: Optional[float] = None,
                      horizon: Optional[float] = None) -> Series:
    """Trailing moving average of emitted tokens per second.

    Sample ``k`` sits at ``t_k = (k + 1) * step`` and averages the tokens of
    rounds ending in ``(t_k - window, t_k]``. ``step`` defaults to ``window``
    capped at one second. ``horizon`` defaults to the last record time.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    step = min(window, 1.0) if step is None else step
    if step <= 0:
        raise ValueError("step must be positive")
    t, tok = _emissions(trace)
    if horizon is None:
        records = trace.records if hasattr(trace, "records") else trace
        horizon = records[-1]["t"] if records else 0.0
    n = int(np.floor(horizon / step + 1e-9))
    times = step * np.arange(1, n + 1)
    cum = np.concatenate([[0.0], np.cumsum(tok)])
    hi = np.searchsorted(t, times + 1e-9, side="right")
    lo = np.searchsorted(t, times - window + 1e-9, side="right")
    values = (cum[hi] - cum[lo]) / window
    return Series(times, values, window, step)


def steady_state_index(series: Series, span: float = 5.0, tolerance: float = 0.05) -> Optional[int]:
    """Index of the sample where the run reaches steady state.

    The series is first smoothed to a ``span``-long trailing average; steady
    state begins at the first ``span``-long run of smoothed samples that all
    stay within ``tolerance`` of the running maximum.
    """
    k = max(1, int(round(span / series.step)))
    v = series.values
    if len(v) < k:
        return None
    cum = np.concatenate([[0.0], np.cumsum(v)])
    smooth = (cum[k:] - cum[:-k]) / k  # smooth[j] averages v[j:j + k]
    running = np.maximum.accumulate(smooth)
    for j in range(len(smooth) - k + 1):
        top = running[j + k - 1]
        if top > 0 and np.all(smooth[j:j + k] >= (1 - tolerance) * top):
            return j + k - 1
    return None


def derive_pause_windows(series: Series, span: float = 5.0, tolerance: float = 0.05) -> List[Tuple[float, float]]:
    """Maximal zero-throughput intervals after steady state, as ``(start, end)`` times."""
    start = steady_state_index(series, span, tolerance)
    if start is None:
        return []
    zero = series.values[start:] == 0
    windows = []
    i = 0
    while i < len(zero):
        if not zero[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(zero) and zero[j + 1]:
            j += 1
        a, b = start + i, start + j
        windows.append((float(series.times[a] - series.window), float(series.times[b])))
        i = j + 1
    return windows


def segment_mean(trace, start: float, end: float) -> Optional[float]:
    """Tokens per second emitted by rounds ending in ``(start, end]``."""
    if end <= start:
        return None
    t, tok = _emissions(trace)
    mask = (t > start) & (t <= end)
    return float(tok[mask].sum() / (end - start))


def plateaus(trace, pauses: Iterable[Tuple[float, float]], steady_start: float, horizon: float,
             trim: float = PAUSE_RESOLUTION) -> List[Tuple[float, float, Optional[float]]]:
    """Productive segments between pauses with their mean throughput.

    Each segment is trimmed by ``trim`` on both sides to drop partial rounds
    next to a pause.
    """
    edges = [steady_start]
    for a, b in pauses:
        edges += [a, b]
    edges.append(horizon)
    out = []
    for a, b in zip(edges[0::2], edges[1::2]):
        lo = a + (trim if a != steady_start else 0.0)
        hi = b - (trim if b != horizon else 0.0)
        out.append((a, b, segment_mean(trace, lo, hi)))
    return out
