"""Self-describing model checkpoint.

Layout::

    8 bytes   magic  b"KPICKPT1"
    8 bytes   header length n, unsigned little-endian
    n bytes   UTF-8 JSON header (sorted keys)
    ...       tensors, little-endian float64, C order, in header order

The header records architecture dims, the trained sequence length, the
training config and seed, and every tensor's name and shape. Writing is
deterministic: identical models produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..errors import FormatError, ShapeError
from .lstm import RecurrentClassifier
from .windows import NormalizationStats

MAGIC = b"KPICKPT1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: RecurrentClassifier
    stats: NormalizationStats
    train_config: dict
    meta: dict

    @property
    def seq_len(self) -> int:
        return self.model.seq_len


def to_bytes(model: RecurrentClassifier, stats: NormalizationStats, train_config: dict, meta: Optional[dict] = None) -> bytes:
    tensors = [(k, v) for k, v in model.params.items()]
    tensors += [("norm_mean", stats.mean), ("norm_std", stats.std)]
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": {
            "n_features": model.n_features,
            "hidden": list(model.hidden),
            "n_classes": model.n_classes,
            "dropout": model.dropout,
            "seq_len": model.seq_len,
        },
        "train_config": train_config,
        "meta": meta or {},
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(hbytes)), hbytes]
    parts += [np.ascontiguousarray(v, dtype="<f8").tobytes() for _, v in tensors]
    return b"".join(parts)


def from_bytes(blob: bytes) -> Checkpoint:
    if blob[:8] != MAGIC:
        raise FormatError("not a model checkpoint (bad magic)")
    if len(blob) < 16:
        raise FormatError("checkpoint truncated")
    (n,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"corrupt checkpoint header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('format_version')}")
    try:
        arch = header["architecture"]
        model = RecurrentClassifier(
            arch["n_features"], tuple(arch["hidden"]), arch["n_classes"], arch["dropout"], arch["seq_len"]
        )
        listed = header["tensors"]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"corrupt checkpoint header: {e!r}") from e
    expected = model.expected_shapes()
    expected["norm_mean"] = (arch["n_features"],)
    expected["norm_std"] = (arch["n_features"],)
    names = [t["name"] for t in listed]
    if sorted(names) != sorted(expected):
        raise ShapeError(f"checkpoint tensors {names} do not match architecture")
    offset = 16 + n
    loaded = {}
    for t in listed:
        shape = tuple(t["shape"])
        if shape != tuple(expected[t["name"]]):
            raise ShapeError(
                f"tensor {t['name']} has shape {shape}, architecture requires {expected[t['name']]}"
            )
        size = int(np.prod(shape)) * 8
        if offset + size > len(blob):
            raise FormatError("checkpoint truncated")
        loaded[t["name"]] = np.frombuffer(blob, dtype="<f8", count=size // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += size
    if offset != len(blob):
        raise FormatError("trailing bytes after checkpoint tensors")
    stats = NormalizationStats(loaded.pop("norm_mean"), loaded.pop("norm_std"))
    model.params = {k: loaded[k] for k in expected if k in loaded}
    return Checkpoint(model, stats, header.get("train_config", {}), header.get("meta", {}))


def save(path: Union[str, Path], model, stats, train_config: dict, meta: Optional[dict] = None) -> None:
    Path(path).write_bytes(to_bytes(model, stats, train_config, meta))


def load(path: Union[str, Path], expect_seq_len: Optional[int] = None) -> Checkpoint:
    ckpt = from_bytes(Path(path).read_bytes())
    if expect_seq_len is not None and ckpt.seq_len != expect_seq_len:
        raise ShapeError(f"checkpoint was trained on L={ckpt.seq_len}, requested L={expect_seq_len}")
    return ckpt
