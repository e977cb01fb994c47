"""Deterministic seed derivation.

All stochastic choices in the package (patch init, batch order, trigger
placement, holdout splits, poisoning selection) draw from generators seeded
through :func:`derive_seed`, so a single experiment seed fans out into
independent, reproducible streams.
"""

from __future__ import annotations

import hashlib

import torch


def derive_seed(seed: int, tag: str) -> int:
    """Map (seed, purpose tag) to a stable 63-bit sub-seed."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def torch_generator(seed: int, tag: str) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(derive_seed(seed, tag))
    return gen
