"""Seeding and input validation helpers shared by the estimators."""

import zlib

import numpy as np


def derive_seed(root: int, name: str) -> int:
    """Stable named sub-seed of ``root`` (independent of hash randomization)."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def check_pairs(pairs, num_users=None, num_items=None) -> np.ndarray:
    """Coerce to an ``(n, 2)`` int64 array of (user, item) and range-check."""
    pairs = np.asarray(pairs)
    if pairs.ndim == 1 and pairs.size in (0, 2):
        pairs = pairs.reshape(-1, 2)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError(f"pairs must have shape (n, 2), got {pairs.shape}")
    if pairs.size and not np.issubdtype(pairs.dtype, np.integer):
        if not np.all(np.mod(pairs, 1) == 0):
            raise ValueError("pair ids must be integers")
    pairs = pairs.astype(np.int64)
    if len(pairs):
        if pairs.min() < 0:
            raise IndexError("negative user/item id")
        if num_users is not None and pairs[:, 0].max() >= num_users:
            raise IndexError(f"user id {pairs[:, 0].max()} out of range (num_users={num_users})")
        if num_items is not None and pairs[:, 1].max() >= num_items:
            raise IndexError(f"item id {pairs[:, 1].max()} out of range (num_items={num_items})")
    return pairs


def check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite values in {name}")
