"""Feature-balanced dataset sampling.

Each balanced feature is binned; per-bin sampling weights are inversely
proportional to the empirical bin mass raised to an exponent in [0, 1]
(0 keeps the empirical distribution, 1 balances to uniform). Weights are
max-normalized so they act directly as keep-probabilities, and an example's
keep-probability is the joint product across all balanced features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeding import np_rng
from .synthworld import Episode


@dataclass(frozen=True)
class BalanceSpec:
    """Balanced features as (metadata key, strictly increasing bin edges)."""

    features: tuple[tuple[str, tuple[float, ...]], ...]
    exponent: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.exponent <= 1.0:
            raise ValueError("exponent must lie in [0, 1]")
        for name, edges in self.features:
            arr = np.asarray(edges, dtype=float)
            if arr.size < 2:
                raise ValueError(f"feature {name!r} needs at least 2 bin edges")
            if not np.all(np.diff(arr) > 0):
                raise ValueError(f"bin edges for {name!r} must be strictly increasing")


def find_bin(value: float, edges) -> int:
    """Index of the half-open bin [e_i, e_{i+1}) containing value.

    The last bin is closed on the right. Values outside all bins are an error.
    """
    edges = np.asarray(edges, dtype=float)
    if value < edges[0] or value > edges[-1]:
        raise ValueError(f"value {value} outside bin range [{edges[0]}, {edges[-1]}]")
    idx = int(np.searchsorted(edges, value, side="right")) - 1
    return min(idx, len(edges) - 2)


def compute_bin_weights(empirical_counts, exponent: float) -> np.ndarray:
    """Per-bin keep-weights: (1/p_i)^exponent, max-normalized to 1.

    Zero-count bins get weight 0 (nothing there to sample).
    """
    counts = np.asarray(empirical_counts, dtype=float)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("counts must be a non-empty 1-D array")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    total = counts.sum()
    if total == 0:
        raise ValueError("all-zero counts: empirical distribution undefined")
    probs = counts / total
    weights = np.zeros_like(probs)
    positive = probs > 0
    weights[positive] = (1.0 / probs[positive]) ** exponent
    weights /= weights[positive].max()
    return weights


def keep_probability(example_features: dict, weights_per_feature: dict) -> float:
    """Joint keep-probability: product of the example's per-feature bin weights."""
    prob = 1.0
    for name, (edges, weights) in weights_per_feature.items():
        if name not in example_features:
            raise ValueError(f"feature {name!r} missing from example record")
        idx = find_bin(float(example_features[name]), edges)
        prob *= float(weights[idx])
    return float(min(max(prob, 0.0), 1.0))


def feature_weights(episodes: list[Episode], spec: BalanceSpec) -> dict:
    """Empirical per-feature bin weights over a corpus of episodes."""
    out = {}
    for name, edges in spec.features:
        counts = np.zeros(len(edges) - 1)
        for ep in episodes:
            counts[find_bin(float(ep.metadata[name]), edges)] += 1
        out[name] = (tuple(edges), compute_bin_weights(counts, spec.exponent))
    return out


def sample_dataset(episodes: list[Episode], spec: BalanceSpec, seed: int) -> list[Episode]:
    """Independently keep each episode with its joint keep-probability."""
    if not episodes:
        raise ValueError("episodes must be non-empty")
    weights = feature_weights(episodes, spec)
    rng = np_rng(seed, "balance")
    kept = []
    for ep in episodes:
        p = keep_probability(ep.metadata, weights)
        if rng.random() < p:
            kept.append(ep)
    return kept
