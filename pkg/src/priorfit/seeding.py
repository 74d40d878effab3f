"""Deterministic seed derivation.

Every random draw in the package flows through one root seed. Sub-streams are
derived by hashing (root, tag, counters), never by mutating a shared generator,
so any step of a run can be reproduced in isolation and training can resume
mid-run without serializing RNG state.
"""

import hashlib

import torch

_MASK = (1 << 63) - 1


def derive_seed(root: int, *path: int | str) -> int:
    """Derive a child seed from a root seed and a sequence of tags/counters."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode())
    for p in path:
        h.update(b"/")
        h.update(str(p).encode())
    return int.from_bytes(h.digest(), "little") & _MASK


def generator(seed: int) -> torch.Generator:
    g = torch.Generator(device="cpu")
    g.manual_seed(int(seed))
    return g
