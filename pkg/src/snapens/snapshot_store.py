"""Per-pair snapshot prediction vectors and the ``snapens-v1`` text format.

File layout::

    snapens-v1,<N_m>,<tag_1>,...,<tag_N_m>
    #source,<algorithm>
    #scale,<min>,<max>
    #validation,<metric>,<v_1>,...,<v_N_m>
    <user>,<item>,<p_1>,...,<p_N_m>
    ...

Only the first line and the data rows are required; ``#`` lines are
optional metadata written by :func:`save`. Values use 17 significant digits,
so a save/load round trip is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import SnapshotFormatError
from .utils import check_pairs

MAGIC = "snapens-v1"


@dataclass(frozen=True)
class SnapshotMeta:
    index: int
    tag: float
    source: str = ""
    validation: float | None = None


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Snapshot predictions for a set of (user, item) pairs.

    ``preds[n, s]`` is snapshot ``s``'s prediction for ``pairs[n]``.
    """

    metas: tuple
    pairs: np.ndarray
    preds: np.ndarray
    rating_scale: tuple | None = None
    validation_metric: str | None = None
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        pairs = check_pairs(self.pairs)
        preds = np.array(self.preds, dtype=np.float64, copy=True)
        if preds.ndim != 2:
            preds = preds.reshape(len(pairs), -1) if len(pairs) else preds.reshape(0, len(self.metas))
        if len(preds) != len(pairs):
            raise ValueError(f"{len(preds)} prediction rows for {len(pairs)} pairs")
        if preds.shape[1] != len(self.metas):
            raise ValueError(f"prediction width {preds.shape[1]} != {len(self.metas)} snapshots")
        if not np.all(np.isfinite(preds)):
            raise ValueError("snapshot predictions must be finite")
        tags = [m.tag for m in self.metas]
        if any(b <= a for a, b in zip(tags, tags[1:])):
            raise ValueError("snapshot tags must be strictly increasing")
        pairs = pairs.copy()
        pairs.setflags(write=False)
        preds.setflags(write=False)
        object.__setattr__(self, "metas", tuple(self.metas))
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "preds", preds)
        if self.rating_scale is not None:
            object.__setattr__(self, "rating_scale", tuple(float(x) for x in self.rating_scale))

    @property
    def n_snapshots(self) -> int:
        return len(self.metas)

    @property
    def tags(self) -> np.ndarray:
        return np.array([m.tag for m in self.metas], dtype=np.float64)

    @property
    def source(self) -> str:
        return self.metas[0].source if self.metas else ""

    def __len__(self):
        return len(self.pairs)

    def _index(self):
        if self._lookup is None:
            lookup = {(int(u), int(i)): n for n, (u, i) in enumerate(self.pairs)}
            if len(lookup) != len(self.pairs):
                raise ValueError("duplicate (user, item) pairs in snapshot set")
            object.__setattr__(self, "_lookup", lookup)
        return self._lookup

    def __getitem__(self, pair) -> np.ndarray:
        return self.preds[self._index()[(int(pair[0]), int(pair[1]))]]

    def __contains__(self, pair):
        return (int(pair[0]), int(pair[1])) in self._index()

    @property
    def predictions(self) -> dict:
        """Mapping view ``(user, item) -> prediction vector``."""
        return {p: self.preds[n] for p, n in self._index().items()}

    def rows_for(self, pairs) -> np.ndarray:
        """Row positions of ``pairs`` in this set (KeyError if absent)."""
        idx = self._index()
        return np.array([idx[(int(u), int(i))] for u, i in check_pairs(pairs)], dtype=np.int64)

    def with_validation(self, scores, metric: str) -> "SnapshotSet":
        metas = tuple(replace(m, validation=float(v)) for m, v in zip(self.metas, scores))
        return replace(self, metas=metas, validation_metric=metric, _lookup=None)

    def __eq__(self, other):
        if not isinstance(other, SnapshotSet):
            return NotImplemented
        return (self.metas == other.metas
                and self.rating_scale == other.rating_scale
                and self.validation_metric == other.validation_metric
                and np.array_equal(self.pairs, other.pairs)
                and np.array_equal(self.preds, other.preds))


def materialize(snapshots, pairs, rating_scale=None) -> SnapshotSet:
    """Evaluate every snapshot model on ``pairs``.

    Models need ``predict(pairs)``, ``tag`` and ``source``; they are ordered
    by tag. Predictions are clipped to ``rating_scale`` when given.
    """
    snapshots = sorted(snapshots, key=lambda m: m.tag)
    if not snapshots:
        raise ValueError("no snapshot models")
    pairs = check_pairs(pairs)
    for m in snapshots:
        nu, ni = getattr(m, "num_users", None), getattr(m, "num_items", None)
        check_pairs(pairs, nu, ni)
    preds = np.column_stack([m.predict(pairs) for m in snapshots]) if len(pairs) else \
        np.zeros((0, len(snapshots)))
    if rating_scale is not None:
        preds = np.clip(preds, *rating_scale)
    metas = tuple(SnapshotMeta(k, m.tag, m.source) for k, m in enumerate(snapshots))
    return SnapshotSet(metas, pairs, preds, rating_scale)


def _num(x) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return format(x, ".17g")


def save(sset: SnapshotSet, path) -> None:
    path = Path(path)
    lines = [",".join([MAGIC, str(sset.n_snapshots)] + [_num(t) for t in sset.tags])]
    if sset.source:
        lines.append(f"#source,{sset.source}")
    if sset.rating_scale is not None:
        lines.append("#scale," + ",".join(_num(x) for x in sset.rating_scale))
    if sset.validation_metric is not None:
        vals = ["nan" if m.validation is None else _num(m.validation) for m in sset.metas]
        lines.append(",".join(["#validation", sset.validation_metric] + vals))
    for (u, i), row in zip(sset.pairs.tolist(), sset.preds):
        lines.append(",".join([str(u), str(i)] + [format(float(v), ".17g") for v in row]))
    path.write_text("\n".join(lines) + "\n")


def load(path) -> SnapshotSet:
    path = Path(path)
    text = path.read_text() if path.exists() else None
    if text is None:
        raise SnapshotFormatError(f"{path}: no such file")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise SnapshotFormatError(f"{path}: empty file")
    head = lines[0].split(",")
    if head[0].strip() != MAGIC:
        raise SnapshotFormatError(f"{path}: unsupported header {head[0]!r}, expected {MAGIC}")
    try:
        n_m = int(head[1])
        tags = [float(t) for t in head[2:]]
    except (IndexError, ValueError):
        raise SnapshotFormatError(f"{path}:1: malformed header") from None
    if n_m < 1 or len(tags) != n_m:
        raise SnapshotFormatError(f"{path}:1: header declares {n_m} snapshots but lists {len(tags)} tags")

    source, scale, metric, vals = "", None, None, [None] * n_m
    pairs, preds = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if fields[0].startswith("#"):
            key = fields[0][1:]
            if key == "source":
                source = fields[1]
            elif key == "scale":
                scale = (float(fields[1]), float(fields[2]))
            elif key == "validation":
                metric = fields[1]
                if len(fields) - 2 != n_m:
                    raise SnapshotFormatError(f"{path}:{lineno}: validation row width mismatch")
                vals = [None if v == "nan" else float(v) for v in fields[2:]]
            continue
        if len(fields) != n_m + 2:
            raise SnapshotFormatError(
                f"{path}:{lineno}: row has {len(fields) - 2} predictions, header says {n_m}")
        try:
            pairs.append((int(fields[0]), int(fields[1])))
            preds.append([float(v) for v in fields[2:]])
        except ValueError:
            raise SnapshotFormatError(f"{path}:{lineno}: malformed row") from None

    metas = tuple(SnapshotMeta(k, t, source, v) for k, (t, v) in enumerate(zip(tags, vals)))
    try:
        return SnapshotSet(metas, np.array(pairs, dtype=np.int64).reshape(-1, 2),
                           np.array(preds, dtype=np.float64).reshape(-1, n_m), scale, metric)
    except ValueError as exc:
        raise SnapshotFormatError(f"{path}: {exc}") from None
