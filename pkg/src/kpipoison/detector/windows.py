"""Sliding windows over per-UE record sequences, and z-score normalisation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from ..errors import ConfigError, ShapeError
from ..records import BENIGN, POISONED, Dataset

STD_FLOOR = 1e-9
SEQUENCE_LENGTHS = (1, 2, 5, 10, 15, 20)


@dataclass(frozen=True)
class WindowSpec:
    length: int
    stride: int = 1

    def __post_init__(self):
        if self.length < 1:
            raise ConfigError(f"window length must be >= 1, got {self.length}")
        if self.stride != 1:
            raise ConfigError("only stride 1 is supported")


@dataclass(frozen=True)
class Window:
    ue_id: int
    start_t: int
    matrix: np.ndarray  # (L, 6)
    label: int


@dataclass
class WindowSet:
    """All windows of one length, stored as stacked arrays.

    ``x`` has shape ``(n, L, 6)``; ``labels`` is 1 for poisoned.
    """

    x: np.ndarray
    labels: np.ndarray
    ue_ids: np.ndarray
    start_t: np.ndarray

    @property
    def length(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Window:
        return Window(int(self.ue_ids[i]), int(self.start_t[i]), self.x[i], int(self.labels[i]))

    def __iter__(self) -> Iterator[Window]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.x[idx], self.labels[idx], self.ue_ids[idx], self.start_t[idx])

    @property
    def n_poisoned(self) -> int:
        return int(np.sum(self.labels == POISONED))


def _runs(ts: np.ndarray) -> list[tuple[int, int]]:
    """Split row positions into runs of consecutive timestamps."""
    if len(ts) == 0:
        return []
    breaks = np.flatnonzero(np.diff(ts) != 1) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [len(ts)]])
    return list(zip(starts.tolist(), ends.tolist()))


def make_windows(
    dataset: Dataset, labels: Optional[np.ndarray], spec: WindowSpec | int
) -> WindowSet:
    """Every stride-1 window of ``spec.length`` consecutive seconds, per UE.

    A window is poisoned if any record in it is poisoned. UEs (or gaps)
    shorter than the window contribute nothing.
    """
    if isinstance(spec, int):
        spec = WindowSpec(spec)
    L = spec.length
    if labels is None:
        labels = np.zeros(len(dataset), dtype=np.int8)
    labels = np.asarray(labels)
    if len(labels) != len(dataset):
        raise ShapeError("labels do not cover the dataset")
    xs, ys, us, ss = [], [], [], []
    for ue in dataset.ue_ids():
        rows = dataset.rows_for(int(ue))
        ts = dataset.timestamp[rows]
        for a, b in _runs(ts):
            n = b - a
            if n < L:
                continue
            seg = dataset.features[rows[a:b]]
            lab = labels[rows[a:b]].astype(np.int64)
            xs.append(np.lib.stride_tricks.sliding_window_view(seg, L, axis=0).transpose(0, 2, 1))
            csum = np.concatenate([[0], np.cumsum(lab)])
            ys.append(((csum[L:] - csum[: n - L + 1]) > 0).astype(np.int8))
            us.append(np.full(n - L + 1, ue, dtype=np.int64))
            ss.append(ts[a : b - L + 1])
    if not xs:
        return WindowSet(
            np.empty((0, L, dataset.features.shape[1])),
            np.empty(0, dtype=np.int8),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
        )
    return WindowSet(
        np.ascontiguousarray(np.concatenate(xs)),
        np.concatenate(ys),
        np.concatenate(us),
        np.concatenate(ss),
    )


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "std", np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR))
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))


def fit_normalization(features: np.ndarray) -> NormalizationStats:
    """Per-feature mean/std over benign training records (rows of ``features``)."""
    x = np.asarray(features, dtype=np.float64).reshape(-1, np.shape(features)[-1])
    if len(x) == 0:
        raise ValueError("need at least one benign training record")
    return NormalizationStats(x.mean(axis=0), x.std(axis=0))


def fit_normalization_windows(windows: WindowSet) -> NormalizationStats:
    """Stats from the benign windows' records; each record counted once per UE."""
    benign = windows.labels == BENIGN
    x = windows.x[benign]
    L = windows.length
    ue = np.repeat(windows.ue_ids[benign], L)
    t = (windows.start_t[benign][:, None] + np.arange(L)).ravel()
    _, first = np.unique(np.stack([ue, t], axis=1), axis=0, return_index=True)
    return fit_normalization(x.reshape(-1, x.shape[-1])[np.sort(first)])


def normalize(x: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - stats.mean) / stats.std


def denormalize(z: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) * stats.std + stats.mean


def chronological_split(dataset: Dataset, train_frac: float = 0.7) -> tuple[np.ndarray, np.ndarray]:
    """Boolean row masks for a per-UE chronological train/test split."""
    train = np.zeros(len(dataset), dtype=bool)
    for ue in dataset.ue_ids():
        rows = dataset.rows_for(int(ue))
        n_train = int(np.floor(train_frac * len(rows)))
        train[rows[:n_train]] = True
    return train, ~train
