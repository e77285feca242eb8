"""Derivation of independent RNG streams from one master seed."""

import hashlib

import numpy as np


def derive_seed(master: int, *keys) -> int:
    """Stable 64-bit seed for ``keys`` under ``master``.

    Uses sha256 rather than ``hash()`` so streams survive interpreter
    restarts (string hashing is salted per process).
    """
    h = hashlib.sha256(repr((int(master),) + tuple(str(k) for k in keys)).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
