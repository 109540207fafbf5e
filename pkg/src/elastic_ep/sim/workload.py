"""Closed-loop decode workload and counter-based expert routing draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x):
    """Vectorized splitmix64 finalizer over ``uint64`` arrays (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_hash(seed: int, *keys) -> np.ndarray:
    """Hash ``seed`` and a sequence of broadcastable integer keys into ``uint64`` draws.

    Each draw depends only on its own key tuple, never on draw order.
    """
    with np.errstate(over="ignore"):
        h = splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
        for key in keys:
            h = splitmix64(h ^ np.asarray(key, dtype=np.uint64))
    return h


def to_unit(h: np.ndarray) -> np.ndarray:
    """Map ``uint64`` hashes to floats in [0, 1) using the top 53 bits."""
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class WorkloadSpec:
    max_concurrency: int = 512
    input_tokens: int = 256
    output_tokens: int = 4096
    moe_layers: int = 58
    experts_per_token: int = 8
    routing: str = "uniform"  # or "skewed"
    skew: float = 1.0

    def __post_init__(self):
        for name in ("max_concurrency", "input_tokens", "output_tokens", "moe_layers", "experts_per_token"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"workload.{name} must be positive")
        if self.routing not in ("uniform", "skewed"):
            raise ConfigurationError(f"workload.routing must be 'uniform' or 'skewed', got {self.routing!r}")
        if self.skew <= 0:
            raise ConfigurationError("workload.skew must be positive")


class ExpertRouter:
    """Draws ``experts_per_token`` experts per (request, layer, position) from a fixed distribution.

    Choices are drawn with replacement; the skewed distribution is a
    Zipf-like law over a seed-dependent permutation of expert ids.
    """

    def __init__(self, spec: WorkloadSpec, num_experts: int, seed: int):
        self.spec = spec
        self.num_experts = num_experts
        self.seed = seed
        self.cdf = None
        if spec.routing == "skewed":
            order = np.argsort(counter_hash(seed, 0xE5, np.arange(num_experts)), kind="stable")
            weights = np.empty(num_experts)
            weights[order] = 1.0 / np.arange(1, num_experts + 1) ** spec.skew
            self.cdf = np.cumsum(weights / weights.sum())
            self.cdf[-1] = 1.0

    def draw(self, request_ids: np.ndarray, layer: int, positions: np.ndarray) -> np.ndarray:
        """Expert ids shaped ``(len(request_ids), experts_per_token)``."""
        k = self.spec.experts_per_token
        req = np.asarray(request_ids, dtype=np.uint64)[:, None]
        pos = np.asarray(positions, dtype=np.uint64)[:, None]
        choice = np.arange(k, dtype=np.uint64)[None, :]
        u = to_unit(counter_hash(self.seed, req, np.uint64(layer), pos, choice))
        if self.cdf is None:
            return np.minimum((u * self.num_experts).astype(np.int64), self.num_experts - 1)
        return np.searchsorted(self.cdf, u, side="right").clip(max=self.num_experts - 1)
