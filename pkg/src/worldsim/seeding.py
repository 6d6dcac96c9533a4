"""Deterministic seed derivation.

One global seed fans out into independent substreams keyed by string labels,
so every stage/batch/rollout draws from its own reproducible stream.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(root: int, *labels: object) -> int:
    """Derive a 63-bit seed from a root seed and a label path."""
    h = hashlib.sha256()
    h.update(str(int(root)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def np_rng(root: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *labels))


def torch_gen(root: int, *labels: object) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(root, *labels))
    return gen
