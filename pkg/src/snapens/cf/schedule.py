from __future__ import annotations

import math
from dataclasses import dataclass

MODES = ("every-delta-T", "knn-k-list", "cyclic-lr")


def cyclic_lr(epoch: int, base_lr: float, cycle_len: int) -> float:
    """Cosine-annealed rate restarting every ``cycle_len`` epochs (0-based epoch)."""
    if cycle_len < 1:
        raise ValueError("cycle_len must be >= 1")
    t = epoch % cycle_len
    return base_lr / 2.0 * (math.cos(math.pi * t / cycle_len) + 1.0)


@dataclass(frozen=True)
class SnapshotSchedule:
    mode: str = "every-delta-T"
    delta_T: int = 10
    max_epoch: int = 90
    k_list: tuple = ()
    cycles: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.mode == "every-delta-T":
            if self.delta_T < 1:
                raise ValueError("delta_T must be >= 1")
            if self.max_epoch < 0 or self.max_epoch % self.delta_T:
                raise ValueError("max_epoch must be a multiple of delta_T")
        elif self.mode == "knn-k-list":
            if not self.k_list or min(self.k_list) < 1:
                raise ValueError("k_list must be non-empty with counts >= 1")
            object.__setattr__(self, "k_list", tuple(sorted(int(k) for k in self.k_list)))
        else:
            if self.cycles < 1 or self.max_epoch < self.cycles or self.max_epoch % self.cycles:
                raise ValueError("cyclic-lr needs max_epoch a positive multiple of cycles")

    @property
    def cycle_len(self) -> int:
        return self.max_epoch // self.cycles

    def capture_epochs(self) -> list[int]:
        """1-based epochs after which a snapshot is taken."""
        if self.mode == "every-delta-T":
            return list(range(self.delta_T, self.max_epoch + 1, self.delta_T))
        if self.mode == "cyclic-lr":
            return [c * self.cycle_len for c in range(1, self.cycles + 1)]
        return []

    @property
    def n_snapshots(self) -> int:
        return len(self.k_list) if self.mode == "knn-k-list" else len(self.capture_epochs())

    def learning_rate(self, epoch: int, lr: float) -> float:
        """Rate for 0-based ``epoch``; constant unless cyclic."""
        if self.mode == "cyclic-lr":
            return cyclic_lr(epoch, lr, self.cycle_len)
        return lr
