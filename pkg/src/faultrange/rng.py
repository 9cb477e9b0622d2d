"""Counter-based random streams keyed by (master seed, purpose, indices).

Every random decision in the toolkit draws from a Philox generator whose key
is derived from a stable label, so sampled values depend only on the key and
never on execution order. This is what makes campaigns reproducible under
any parallel schedule.
"""

import hashlib

import numpy as np


def derive_rng(master_seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Return an independent generator for the given (seed, purpose, indices) key."""
    h = hashlib.sha256()
    h.update(purpose.encode("utf-8"))
    h.update(b"\x00")
    h.update(repr((int(master_seed),) + tuple(int(i) for i in indices)).encode("ascii"))
    key = int.from_bytes(h.digest()[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))
