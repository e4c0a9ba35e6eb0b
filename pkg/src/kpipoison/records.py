"""Per-UE KPI records and the columnar dataset that holds them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import INTEGER_COLS, N_FEATURES, THROUGHPUT_COLS
from .errors import DomainError, OrderingError

BENIGN = 0
POISONED = 1
LABEL_NAMES = ("benign", "poisoned")


@dataclass(frozen=True)
class KpiRecord:
    timestamp: int
    ue_id: int
    ue_thp_ul: float
    prb_used_ul: int
    ue_thp_dl: float
    prb_used_dl: int
    tot_nbr_ul_per_sec: int
    tot_nbr_dl_per_sec: int

    def features(self) -> np.ndarray:
        return np.array(
            [
                self.ue_thp_ul,
                self.prb_used_ul,
                self.ue_thp_dl,
                self.prb_used_dl,
                self.tot_nbr_ul_per_sec,
                self.tot_nbr_dl_per_sec,
            ],
            dtype=np.float64,
        )

    @classmethod
    def from_row(cls, timestamp: int, ue_id: int, row: Sequence[float]) -> "KpiRecord":
        return cls(
            int(timestamp),
            int(ue_id),
            float(row[0]),
            int(row[1]),
            float(row[2]),
            int(row[3]),
            int(row[4]),
            int(row[5]),
        )


class Dataset:
    """Ordered KPI records stored as columns.

    ``features`` is an ``(N, 6)`` float64 array in dataset column order;
    integer KPIs hold integral values. Rows are sorted by
    ``(timestamp, ue_id)``.
    """

    __slots__ = ("timestamp", "ue_id", "features")

    def __init__(self, timestamp, ue_id, features, *, check: bool = True):
        self.timestamp = np.ascontiguousarray(timestamp, dtype=np.int64)
        self.ue_id = np.ascontiguousarray(ue_id, dtype=np.int64)
        self.features = np.ascontiguousarray(features, dtype=np.float64).reshape(-1, N_FEATURES)
        if not (len(self.timestamp) == len(self.ue_id) == len(self.features)):
            raise ValueError("column lengths differ")
        if check:
            self.validate()

    @classmethod
    def empty(cls) -> "Dataset":
        return cls(np.empty(0), np.empty(0), np.empty((0, N_FEATURES)))

    @classmethod
    def from_records(cls, records: Sequence[KpiRecord]) -> "Dataset":
        if not records:
            return cls.empty()
        return cls(
            [r.timestamp for r in records],
            [r.ue_id for r in records],
            np.stack([r.features() for r in records]),
        )

    def __len__(self) -> int:
        return len(self.timestamp)

    def __iter__(self) -> Iterator[KpiRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.timestamp, other.timestamp)
            and np.array_equal(self.ue_id, other.ue_id)
            and np.array_equal(self.features, other.features)
        )

    def record(self, i: int) -> KpiRecord:
        return KpiRecord.from_row(self.timestamp[i], self.ue_id[i], self.features[i])

    def copy(self) -> "Dataset":
        return Dataset(self.timestamp.copy(), self.ue_id.copy(), self.features.copy(), check=False)

    def is_sorted(self) -> bool:
        if len(self) < 2:
            return True
        dt = np.diff(self.timestamp)
        du = np.diff(self.ue_id)
        return bool(np.all((dt > 0) | ((dt == 0) & (du > 0))))

    def validate(self) -> None:
        if not self.is_sorted():
            raise OrderingError("records must be strictly sorted by (timestamp, ue_id)")
        f = self.features
        if not np.all(np.isfinite(f)):
            raise DomainError("non-finite KPI value")
        if np.any(f < 0):
            raise DomainError("negative KPI value")
        ints = f[:, list(INTEGER_COLS)]
        if not np.array_equal(ints, np.round(ints)):
            raise DomainError("integer KPI holds a fractional value")
        if np.any(self.timestamp < 0) or np.any(self.ue_id < 0):
            raise DomainError("negative timestamp or UE id")

    def ue_ids(self) -> np.ndarray:
        return np.unique(self.ue_id)

    def rows_for(self, ue_id: int) -> np.ndarray:
        """Row indices of one UE, in time order."""
        return np.flatnonzero(self.ue_id == ue_id)

    def select(self, mask_or_idx) -> "Dataset":
        return Dataset(
            self.timestamp[mask_or_idx],
            self.ue_id[mask_or_idx],
            self.features[mask_or_idx],
            check=False,
        )


def quantize(features: np.ndarray) -> np.ndarray:
    """Snap a feature block onto the record domain in place.

    Throughputs are clamped at zero and kept to 6 decimals (the on-disk
    precision); count features become non-negative integers.
    """
    f = features
    for c in THROUGHPUT_COLS:
        f[..., c] = np.round(np.maximum(f[..., c], 0.0), 6)
    for c in INTEGER_COLS:
        f[..., c] = np.maximum(np.rint(f[..., c]), 0.0)
    # -0.0 would serialise differently from 0.0
    f += 0.0
    return f
