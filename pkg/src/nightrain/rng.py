"""Deterministic random number plumbing.

All stochastic code in the toolkit draws from numpy's counter-based Philox
generator, keyed by 64-bit seeds derived with a stable hash.  Derivation is
independent of iteration order, so per-frame work can be parallelised or
reordered without changing results.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(global_seed: int, *parts) -> int:
    """Derive a child seed from a global seed and a path of parts.

    Parts may be ints or strings; the encoding is unambiguous (type-tagged,
    length-prefixed), so ("ab", 1) and ("a", "b1") never collide.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update((int(global_seed) & _MASK64).to_bytes(8, "little"))
    for part in parts:
        if isinstance(part, (int, np.integer)):
            h.update(b"i" + (int(part) & _MASK64).to_bytes(8, "little"))
        else:
            raw = str(part).encode("utf-8")
            h.update(b"s" + len(raw).to_bytes(4, "little") + raw)
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int) -> np.random.Generator:
    """Philox generator keyed by a 64-bit seed (platform independent)."""
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64))
