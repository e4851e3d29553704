"""Deterministic derivation of named child seeds from one root seed."""

import hashlib


def derive_seed(seed: int, label: str) -> int:
    """Stable 63-bit child seed for the (seed, label) pair."""
    digest = hashlib.blake2b(f"{seed}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % (2**63)
