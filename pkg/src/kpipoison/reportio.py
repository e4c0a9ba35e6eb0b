"""Dataset CSV and KPI-report message codecs, plus file replay.

Dataset files carry the eight report columns (and an optional ``Label``)
with throughputs at 6 decimals and counts as bare integers. Messages are
single-line JSON objects, one per O-DU per reporting second.
"""

from __future__ import annotations

import enum
import io
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from .emulator import Topology
from .errors import DomainError, FormatError, OrderingError, ParseError
from .injector import AttackPlan, interval_mask
from .records import LABEL_NAMES, POISONED, Dataset, KpiRecord

KEY_COLUMNS = ("Timestamp", "UEid")
FEATURE_COLUMNS = (
    "UEThpUl",
    "PrbUsedUl",
    "UEThpDl",
    "PrbUsedDl",
    "TotNbrUl_per_sec",
    "TotNbrDl_per_sec",
)
COLUMNS = KEY_COLUMNS + FEATURE_COLUMNS
HEADER = ",".join(COLUMNS)
LABEL_COLUMN = "Label"

_RECORD_ATTRS = (
    "timestamp",
    "ue_id",
    "ue_thp_ul",
    "prb_used_ul",
    "ue_thp_dl",
    "prb_used_dl",
    "tot_nbr_ul_per_sec",
    "tot_nbr_dl_per_sec",
)
_FLOAT_COLUMNS = {"UEThpUl", "UEThpDl"}


# ---------------------------------------------------------------- dataset
def encode_dataset(dataset: Dataset, labels: Optional[np.ndarray] = None) -> bytes:
    if not dataset.is_sorted():
        raise OrderingError("dataset must be sorted by (Timestamp, UEid) before encoding")
    with_labels = labels is not None
    if with_labels and len(labels) != len(dataset):
        raise FormatError("labels do not match dataset length")
    head = HEADER + ("," + LABEL_COLUMN if with_labels else "")
    f = dataset.features
    rows = zip(
        dataset.timestamp.tolist(),
        dataset.ue_id.tolist(),
        f[:, 0].tolist(),
        f[:, 1].astype(np.int64).tolist(),
        f[:, 2].tolist(),
        f[:, 3].astype(np.int64).tolist(),
        f[:, 4].astype(np.int64).tolist(),
        f[:, 5].astype(np.int64).tolist(),
    )
    out = [head]
    if with_labels:
        names = [LABEL_NAMES[int(v)] for v in labels]
        out += [
            "%d,%d,%.6f,%d,%.6f,%d,%d,%d,%s" % (*r, lab) for r, lab in zip(rows, names)
        ]
    else:
        out += ["%d,%d,%.6f,%d,%.6f,%d,%d,%d" % r for r in rows]
    return ("\n".join(out) + "\n").encode("ascii")


def decode_dataset(data: Union[bytes, str]) -> tuple[Dataset, Optional[np.ndarray]]:
    text = data.decode("ascii") if isinstance(data, bytes) else data
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty file: missing header")
    header = lines[0]
    if header == HEADER:
        with_labels = False
    elif header == HEADER + "," + LABEL_COLUMN:
        with_labels = True
    else:
        raise FormatError(f"unexpected header {header!r}; expected {HEADER!r} (optionally ,{LABEL_COLUMN})")
    n_cols = len(COLUMNS) + with_labels
    ts, ues, feats, labels = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != n_cols:
            raise FormatError(f"line {lineno}: expected {n_cols} fields, got {len(parts)}")
        vals = []
        for name, raw in zip(COLUMNS, parts):
            try:
                v = float(raw) if name in _FLOAT_COLUMNS else int(raw)
            except ValueError:
                raise ParseError(lineno, name, raw) from None
            if name in _FLOAT_COLUMNS and not math.isfinite(v):
                raise ParseError(lineno, name, raw)
            if v < 0:
                raise DomainError(f"line {lineno}: {name}={raw} is negative")
            vals.append(v)
        if with_labels:
            lab = parts[-1]
            if lab not in LABEL_NAMES:
                raise ParseError(lineno, LABEL_COLUMN, lab)
            labels.append(LABEL_NAMES.index(lab))
        if ts and (vals[0], vals[1]) <= (ts[-1], ues[-1]):
            raise OrderingError(f"line {lineno}: rows not strictly sorted by (Timestamp, UEid)")
        ts.append(vals[0])
        ues.append(vals[1])
        feats.append(vals[2:])
    if not ts:
        ds = Dataset.empty()
    else:
        ds = Dataset(ts, ues, np.array(feats, dtype=np.float64), check=False)
    return ds, (np.array(labels, dtype=np.int8) if with_labels else None)


def write_dataset(path: Union[str, Path], dataset: Dataset, labels=None) -> None:
    Path(path).write_bytes(encode_dataset(dataset, labels))


def read_dataset(path: Union[str, Path]) -> tuple[Dataset, Optional[np.ndarray]]:
    return decode_dataset(Path(path).read_bytes())


# ---------------------------------------------------------------- messages
class MsgType(str, enum.Enum):
    KPI_REPORT = "KPI_REPORT"
    OTHER = "OTHER"


class Tag(str, enum.Enum):
    UNTAGGED = "untagged"
    BENIGN = "benign"
    POISONED = "poisoned"


@dataclass(frozen=True)
class KpiReportMessage:
    msg_type: MsgType
    source_node: str
    period_start: int
    records: tuple[KpiRecord, ...] = ()
    tag: Tag = Tag.UNTAGGED

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.msg_type is MsgType.OTHER and self.records:
            raise FormatError("OTHER messages carry no KPI records")
        for r in self.records:
            if r.timestamp != self.period_start:
                raise FormatError(
                    f"record of UE {r.ue_id} has timestamp {r.timestamp}, message period_start is {self.period_start}"
                )

    def with_tag(self, tag: Tag) -> "KpiReportMessage":
        return replace(self, tag=tag)


_MESSAGE_FIELDS = {"msg_type", "source_node", "period_start", "records", "tag"}


def record_to_dict(r: KpiRecord) -> dict:
    return {col: getattr(r, attr) for col, attr in zip(COLUMNS, _RECORD_ATTRS)}


def record_from_dict(d: dict) -> KpiRecord:
    if not isinstance(d, dict):
        raise FormatError("record must be a JSON object")
    extra = set(d) - set(COLUMNS)
    if extra:
        raise FormatError(f"unknown record field(s) {sorted(extra)}")
    missing = [c for c in COLUMNS if c not in d]
    if missing:
        raise FormatError(f"record missing field(s) {missing}")
    vals = {}
    for col, attr in zip(COLUMNS, _RECORD_ATTRS):
        v = d[col]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise FormatError(f"record field {col} must be numeric, got {v!r}")
        if col in _FLOAT_COLUMNS:
            v = float(v)
            if not math.isfinite(v):
                raise FormatError(f"record field {col} is not finite")
        elif not isinstance(v, int):
            raise FormatError(f"record field {col} must be an integer, got {v!r}")
        if v < 0:
            raise DomainError(f"record field {col}={v} is negative")
        vals[attr] = v
    return KpiRecord(**vals)


def message_to_dict(msg: KpiReportMessage) -> dict:
    return {
        "msg_type": msg.msg_type.value,
        "source_node": msg.source_node,
        "period_start": msg.period_start,
        "records": [record_to_dict(r) for r in msg.records],
        "tag": msg.tag.value,
    }


def message_from_dict(d: dict) -> KpiReportMessage:
    if not isinstance(d, dict):
        raise FormatError("message must be a JSON object")
    extra = set(d) - _MESSAGE_FIELDS
    if extra:
        raise FormatError(f"unknown message field(s) {sorted(extra)}")
    if "msg_type" not in d:
        raise FormatError("message missing msg_type")
    try:
        msg_type = MsgType(d["msg_type"])
        tag = Tag(d.get("tag", Tag.UNTAGGED.value))
    except ValueError as e:
        raise FormatError(str(e)) from None
    for k in ("source_node", "period_start"):
        if k not in d:
            raise FormatError(f"message missing {k}")
    if not isinstance(d["source_node"], str):
        raise FormatError("source_node must be a string")
    ps = d["period_start"]
    if isinstance(ps, bool) or not isinstance(ps, int) or ps < 0:
        raise FormatError(f"period_start must be a non-negative integer, got {ps!r}")
    records = d.get("records", [])
    if not isinstance(records, list):
        raise FormatError("records must be a list")
    return KpiReportMessage(
        msg_type, d["source_node"], ps, tuple(record_from_dict(r) for r in records), tag
    )


def encode_message(msg: KpiReportMessage) -> str:
    return json.dumps(message_to_dict(msg), separators=(",", ":"))


def decode_message(line: Union[str, bytes]) -> KpiReportMessage:
    try:
        d = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"undecodable message: {e}") from None
    return message_from_dict(d)


def read_messages(stream: Iterable[str]) -> Iterator[KpiReportMessage]:
    for lineno, line in enumerate(stream, start=1):
        if line.strip():
            try:
                yield decode_message(line)
            except FormatError as e:
                raise FormatError(f"line {lineno}: {e}") from None


# ---------------------------------------------------------------- replay
def dataset_messages(
    dataset: Dataset,
    topology: Topology,
    labels: Optional[np.ndarray] = None,
) -> Iterator[KpiReportMessage]:
    """Group records per (second, serving O-DU), in time then topology order.

    With ``labels`` the messages carry their ground-truth tag.
    """
    odus = topology.odu_ids
    odu_index = {o: i for i, o in enumerate(odus)}
    ue_odu = {int(u): odu_index[topology.odu_of_ue(int(u))] for u in dataset.ue_ids()}
    if len(dataset) == 0:
        return
    bounds = np.flatnonzero(np.diff(dataset.timestamp)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(dataset)]])
    for a, b in zip(starts.tolist(), ends.tolist()):
        t = int(dataset.timestamp[a])
        groups: dict[int, list[int]] = {}
        for i in range(a, b):
            groups.setdefault(ue_odu[int(dataset.ue_id[i])], []).append(i)
        for k in sorted(groups):
            rows = groups[k]
            tag = Tag.UNTAGGED
            if labels is not None:
                tag = Tag.POISONED if np.any(labels[rows] == POISONED) else Tag.BENIGN
            yield KpiReportMessage(
                MsgType.KPI_REPORT, odus[k], t, tuple(dataset.record(i) for i in rows), tag
            )


def replay(
    source: Union[str, Path, bytes, Dataset],
    topology: Topology,
    plan: Optional[AttackPlan] = None,
    speedup: float = math.inf,
    sleep: Callable[[float], None] = time.sleep,
    report_period_s: float = 1.0,
) -> Iterator[KpiReportMessage]:
    """Stream a dataset file as KPI report messages.

    Messages of one reporting second go out back to back; the stream then
    waits ``report_period_s / speedup`` before the next second
    (``speedup=inf`` never sleeps). When ``plan`` is given, messages are
    tagged with their ground truth.
    """
    if not speedup > 0:
        raise ValueError("speedup must be > 0")
    if isinstance(source, Dataset):
        dataset = source
    elif isinstance(source, bytes):
        dataset, _ = decode_dataset(source)
    else:
        dataset, _ = read_dataset(source)
    labels = interval_mask(dataset, plan).astype(np.int8) if plan is not None else None
    delay = 0.0 if math.isinf(speedup) else report_period_s / speedup
    prev_t = None
    for msg in dataset_messages(dataset, topology, labels):
        if prev_t is not None and msg.period_start != prev_t and delay > 0:
            sleep(delay)
        prev_t = msg.period_start
        yield msg


def messages_to_dataset(messages: Iterable[KpiReportMessage]) -> Dataset:
    """Concatenate message records back into a (re-sorted) dataset."""
    recs = [r for m in messages for r in m.records]
    recs.sort(key=lambda r: (r.timestamp, r.ue_id))
    return Dataset.from_records(recs)
