"""Seed fan-out: every RNG consumer gets a child seed derived from one master seed."""

import hashlib

import numpy as np


def hash64(*parts) -> int:
    """Stable 64-bit hash of ``parts`` (ints and strings), independent of PYTHONHASHSEED."""
    key = "\x1f".join(f"{type(p).__name__}:{p}" for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def child_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(hash64(*parts))
