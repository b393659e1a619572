"""Rating data: loading, chronological leave-one-out splits, fixed negatives
and recency-capped neighborhoods."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DatasetError, InsufficientCandidatesError

_log = logging.getLogger(__name__)

FORMATS = ("movielens-tab", "generic-csv")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """Interaction triples with timestamps over zero-based user/item indices.

    ``user_ids`` / ``item_ids`` map an index back to the raw id found in the
    source file.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    num_users: int
    num_items: int
    rating_scale: tuple[float, float]
    user_ids: np.ndarray | None = None
    item_ids: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "users", _frozen(self.users, np.int64))
        object.__setattr__(self, "items", _frozen(self.items, np.int64))
        object.__setattr__(self, "ratings", _frozen(self.ratings, np.float64))
        object.__setattr__(self, "timestamps", _frozen(self.timestamps, np.int64))
        n = len(self.users)
        if not (len(self.items) == len(self.ratings) == len(self.timestamps) == n):
            raise DatasetError("interaction columns have different lengths")
        if n:
            if self.users.min() < 0 or self.users.max() >= self.num_users:
                raise DatasetError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= self.num_items:
                raise DatasetError("item index out of range")
            lo, hi = self.rating_scale
            if self.ratings.min() < lo or self.ratings.max() > hi:
                raise DatasetError(f"rating outside scale {self.rating_scale}")
            keys = self.users * self.num_items + self.items
            if len(np.unique(keys)) != n:
                raise DatasetError("duplicate (user, item) pairs")

    def __len__(self):
        return len(self.users)

    @property
    def pairs(self) -> np.ndarray:
        return np.column_stack([self.users, self.items])

    def subset(self, rows) -> "RatingDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return RatingDataset(
            self.users[rows], self.items[rows], self.ratings[rows], self.timestamps[rows],
            self.num_users, self.num_items, self.rating_scale, self.user_ids, self.item_ids,
        )

    def interaction_keys(self) -> np.ndarray:
        """Sorted ``user * num_items + item`` codes, for fast membership tests."""
        return np.sort(self.users * self.num_items + self.items)

    def __eq__(self, other):
        if not isinstance(other, RatingDataset):
            return NotImplemented
        return (
            self.num_users == other.num_users
            and self.num_items == other.num_items
            and tuple(self.rating_scale) == tuple(other.rating_scale)
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.ratings, other.ratings)
            and np.array_equal(self.timestamps, other.timestamps)
        )


@dataclass(frozen=True, eq=False)
class SplitDataset:
    train: RatingDataset
    validation: RatingDataset
    test: RatingDataset
    # row indices into the dataset that was split
    train_rows: np.ndarray = field(repr=False)
    validation_rows: np.ndarray = field(repr=False)
    test_rows: np.ndarray = field(repr=False)

    @property
    def full(self) -> RatingDataset:
        parts = (self.train, self.validation, self.test)
        return RatingDataset(
            np.concatenate([p.users for p in parts]),
            np.concatenate([p.items for p in parts]),
            np.concatenate([p.ratings for p in parts]),
            np.concatenate([p.timestamps for p in parts]),
            self.train.num_users, self.train.num_items, self.train.rating_scale,
            self.train.user_ids, self.train.item_ids,
        )


@dataclass(frozen=True, eq=False)
class NegativeSamples:
    """Fixed negative candidates: row ``k`` belongs to ``users[k]`` / ``positives[k]``."""

    users: np.ndarray
    positives: np.ndarray
    items: np.ndarray
    seed: int

    def candidates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flatten to (users, items, labels): each group is the positive
        followed by its negatives."""
        n = self.items.shape[1]
        users = np.repeat(self.users, n + 1)
        items = np.column_stack([self.positives, self.items]).ravel()
        labels = np.tile(np.r_[1.0, np.zeros(n)], len(self.users))
        return users, items, labels


@dataclass(frozen=True, eq=False)
class NeighborIndex:
    by_item: tuple  # item -> users, timestamp order
    by_user: tuple  # user -> items, timestamp order
    cap: int
    num_users: int
    num_items: int

    def padded(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        """Dense ``(n, cap)`` neighbor table plus lengths; padding slots hold 0."""
        lists = self.by_item if kind == "item" else self.by_user
        table = np.zeros((len(lists), max(self.cap, 1)), dtype=np.int64)
        lengths = np.zeros(len(lists), dtype=np.int64)
        for k, nb in enumerate(lists):
            table[k, : len(nb)] = nb
            lengths[k] = len(nb)
        return table, lengths


def _reindex(raw):
    uniq, inv = np.unique(np.asarray(raw), return_inverse=True)
    return uniq, inv.astype(np.int64)


def load_ratings(path, format: str = "movielens-tab", rating_scale=None) -> RatingDataset:
    """Read ``user, item, rating, timestamp`` rows and reindex ids to ``0..n-1``.

    ``movielens-tab`` is the tab separated ``u.data`` layout without header;
    ``generic-csv`` needs the header ``user,item,rating,timestamp``.  The
    rating scale defaults to the observed (min, max).
    """
    path = Path(path)
    if format not in FORMATS:
        raise DatasetError(f"unknown format {format!r}; expected one of {FORMATS}")
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")

    users, items, ratings, stamps = [], [], [], []
    with path.open(newline="") as fh:
        if format == "movielens-tab":
            rows = (line.rstrip("\r\n").split("\t") for line in fh)
            first = 1
        else:
            rows = csv.reader(fh)
            header = next(rows, None)
            if header is None:
                raise DatasetError(f"{path}: empty dataset")
            if [h.strip() for h in header] != ["user", "item", "rating", "timestamp"]:
                raise DatasetError(f"{path}:1: expected header user,item,rating,timestamp")
            first = 2
        for lineno, row in enumerate(rows, start=first):
            if not row or row == [""]:
                continue
            if len(row) != 4:
                raise DatasetError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                users.append(row[0].strip())
                items.append(row[1].strip())
                ratings.append(float(row[2]))
                stamps.append(int(row[3]))
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed row {row!r} ({exc})") from None

    if not users:
        raise DatasetError(f"{path}: empty dataset")

    # numeric ids sort numerically
    try:
        users = [int(u) for u in users]
        items = [int(i) for i in items]
    except ValueError:
        pass
    user_ids, uidx = _reindex(users)
    item_ids, iidx = _reindex(items)
    r = np.asarray(ratings, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise DatasetError(f"{path}: non-finite rating")
    scale = (float(r.min()), float(r.max())) if rating_scale is None else tuple(map(float, rating_scale))
    ds = RatingDataset(uidx, iidx, r, np.asarray(stamps, dtype=np.int64),
                       len(user_ids), len(item_ids), scale, user_ids, item_ids)
    _log.info("loaded %d interactions (%d users, %d items) from %s",
              len(ds), ds.num_users, ds.num_items, path)
    return ds


def chronological_leave_one_out(ds: RatingDataset) -> SplitDataset:
    """Per user: latest interaction to test, second latest to validation.

    Users with fewer than three interactions stay entirely in train.  Equal
    timestamps are ordered by item index, so the higher index counts as later.
    """
    order = np.lexsort((ds.items, ds.timestamps, ds.users))
    counts = np.bincount(ds.users, minlength=ds.num_users)
    ends = np.cumsum(counts)
    eligible = counts >= 3
    test_rows = order[ends[eligible] - 1]
    val_rows = order[ends[eligible] - 2]
    held = np.zeros(len(ds), dtype=bool)
    held[test_rows] = True
    held[val_rows] = True
    train_rows = np.flatnonzero(~held)
    return SplitDataset(
        ds.subset(train_rows), ds.subset(val_rows), ds.subset(test_rows),
        _frozen(train_rows, np.int64), _frozen(val_rows, np.int64), _frozen(test_rows, np.int64),
    )


def sample_negatives(split: SplitDataset, n: int = 99, seed: int = 0,
                     part: str = "test") -> NegativeSamples:
    """Draw ``n`` distinct never-interacted items for every example of ``part``."""
    target = split.test if part == "test" else split.validation
    full = split.full
    rng = np.random.default_rng(seed)
    seen = [[] for _ in range(full.num_users)]
    for u, i in zip(full.users.tolist(), full.items.tolist()):
        seen[u].append(i)
    all_items = np.arange(full.num_items)
    out = np.empty((len(target), n), dtype=np.int64)
    order = np.argsort(target.users, kind="stable")
    for row, k in enumerate(order):
        u = int(target.users[k])
        cand = np.setdiff1d(all_items, seen[u], assume_unique=True)
        if len(cand) < n:
            raise InsufficientCandidatesError(
                f"user {u} has {len(cand)} candidate negatives, {n} requested")
        out[row] = rng.choice(cand, size=n, replace=False)
    return NegativeSamples(_frozen(target.users[order], np.int64),
                           _frozen(target.items[order], np.int64),
                           _frozen(out, np.int64), int(seed))


def _capped_groups(keys, members, stamps, n_groups, cap):
    groups = []
    order = np.lexsort((members, -stamps, keys))  # newest first, lower id wins ties
    bounds = np.searchsorted(keys[order], np.arange(n_groups + 1))
    for g in range(n_groups):
        sel = order[bounds[g]:bounds[g + 1]][:cap]
        sel = sel[np.lexsort((members[sel], stamps[sel]))]
        groups.append(_frozen(members[sel], np.int64))
    return tuple(groups)


def build_neighbor_index(train: RatingDataset, cap: int = 50) -> NeighborIndex:
    """N(i) = users who rated item i, N(u) = items rated by u; each keeps the
    ``cap`` most recent entries, listed in timestamp order."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    by_item = _capped_groups(train.items, train.users, train.timestamps, train.num_items, cap)
    by_user = _capped_groups(train.users, train.items, train.timestamps, train.num_users, cap)
    return NeighborIndex(by_item, by_user, int(cap), train.num_users, train.num_items)
