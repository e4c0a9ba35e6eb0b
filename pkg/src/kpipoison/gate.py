"""Detection gate at the RIC boundary and a toy PRB-allocating xApp.

Messages flow through four stages: receive, route (only KPI reports go
to detection), per-UE window classification, then tag and forward to
subscribers. Under the discard policy poisoned records are removed from
the delivered message and each one is reported to the SMO audit log.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol, Sequence, Union

import numpy as np

from .errors import ConfigError, FormatError
from .records import KpiRecord
from .reportio import KpiReportMessage, MsgType, Tag, decode_message, encode_message

log = logging.getLogger(__name__)


class GatePolicy(str, enum.Enum):
    TAG_AND_FORWARD = "TAG_AND_FORWARD"
    DISCARD_POISONED_AND_NOTIFY = "DISCARD_POISONED_AND_NOTIFY"


class Route(str, enum.Enum):
    DETECT = "detect"
    BYPASS = "bypass"
    QUARANTINE = "quarantine"


class ColdStart(str, enum.Enum):
    BENIGN = "benign"  # verdict benign until L records are buffered
    HOLD = "hold"  # withhold records until the UE's buffer is warm


class WindowClassifier(Protocol):
    seq_len: int

    def p_poisoned(self, windows: np.ndarray) -> np.ndarray:
        """``(n, L, 6)`` raw windows -> ``(n,)`` poisoned probabilities."""


class ModelClassifier:
    """Adapter from a trained recurrent model + normalisation stats."""

    def __init__(self, model, stats):
        from .detector.train import infer

        if model.seq_len is None:
            raise ConfigError("model has no trained sequence length")
        self.model = model
        self.stats = stats
        self.seq_len = int(model.seq_len)
        self._infer = infer

    def p_poisoned(self, windows: np.ndarray) -> np.ndarray:
        return self._infer(self.model, windows, self.stats)[:, 1]


class ConstantClassifier:
    """Always returns the same probability; ``0.0`` never flags."""

    def __init__(self, seq_len: int = 1, p: float = 0.0):
        self.seq_len = seq_len
        self.p = p

    def p_poisoned(self, windows):
        return np.full(len(windows), self.p)


@dataclass(frozen=True)
class Verdict:
    ue_id: int
    timestamp: int
    poisoned: bool
    p_poisoned: float
    warm: bool


@dataclass(frozen=True)
class TaggedMessage:
    message: KpiReportMessage
    verdicts: tuple[Verdict, ...]

    @property
    def tag(self) -> Tag:
        return self.message.tag


@dataclass(frozen=True)
class Notification:
    wall_time: float
    ue_id: int
    period_start: int
    verdict_confidence: float
    source_node: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "wall_time": self.wall_time,
                "ue_id": self.ue_id,
                "period_start": self.period_start,
                "verdict_confidence": self.verdict_confidence,
                "source_node": self.source_node,
            },
            separators=(",", ":"),
        )


@dataclass(frozen=True)
class LatencyRecord:
    source_node: str
    period_start: int
    route: Route
    latency_ms: float


@dataclass
class GateOutput:
    route: Route
    delivered: Optional[KpiReportMessage]
    tagged: Optional[TaggedMessage]
    notifications: list[Notification]
    dropped_ue_ids: tuple[int, ...]
    latency: Optional[LatencyRecord]


def latency_summary(records: Sequence[LatencyRecord]) -> dict[str, float]:
    if not records:
        return {"n": 0, "p50": math.nan, "p95": math.nan, "max": math.nan}
    ms = np.array([r.latency_ms for r in records])
    return {
        "n": int(len(ms)),
        "p50": float(np.percentile(ms, 50)),
        "p95": float(np.percentile(ms, 95)),
        "max": float(ms.max()),
    }


class Gate:
    """Stateful detection gate. One instance per stream; thread-safe."""

    def __init__(
        self,
        classifier: WindowClassifier,
        policy: GatePolicy = GatePolicy.TAG_AND_FORWARD,
        cold_start: ColdStart = ColdStart.BENIGN,
        subscribers: Optional[list[Callable[[GateOutput], None]]] = None,
        clock: Callable[[], int] = time.perf_counter_ns,
        wall_clock: Callable[[], float] = time.time,
        audit_log: Optional[Union[str, Path]] = None,
    ):
        self.classifier = classifier
        self.seq_len = int(classifier.seq_len)
        if self.seq_len < 1:
            raise ConfigError("sequence length must be >= 1")
        self.policy = GatePolicy(policy)
        self.cold_start = ColdStart(cold_start)
        self.subscribers = list(subscribers or [])
        self._clock = clock
        self._wall = wall_clock
        self._audit_path = Path(audit_log) if audit_log else None
        self._buffers: dict[int, deque] = {}
        self._lock = threading.Lock()
        self.latencies: list[LatencyRecord] = []
        self.notifications: list[Notification] = []
        self.verdict_log: list[Verdict] = []
        self.quarantine: list[tuple[str, str]] = []

    # stage 1 + 2
    def ingest(self, message: Union[KpiReportMessage, str, bytes]) -> tuple[Route, Optional[KpiReportMessage]]:
        if not isinstance(message, KpiReportMessage):
            try:
                message = decode_message(message)
            except FormatError as e:
                raw = message.decode("utf-8", "replace") if isinstance(message, bytes) else str(message)
                self.quarantine.append((raw, str(e)))
                log.error("quarantined undecodable message: %s", e)
                return Route.QUARANTINE, None
        if message.msg_type is MsgType.KPI_REPORT:
            return Route.DETECT, message
        return Route.BYPASS, message

    # stage 3
    def detect(self, message: KpiReportMessage) -> list[Verdict]:
        L = self.seq_len
        pending, verdicts = [], []
        for r in message.records:
            buf = self._buffers.get(r.ue_id)
            if buf is None:
                buf = self._buffers[r.ue_id] = deque(maxlen=L)
            elif buf and buf[-1][0] + 1 != r.timestamp:
                # gap in the UE's reports: the window would not be consecutive
                buf.clear()
            buf.append((r.timestamp, r.features()))
            if len(buf) == L:
                pending.append((len(verdicts), np.stack([row for _, row in buf])))
                verdicts.append(None)
            else:
                verdicts.append(Verdict(r.ue_id, r.timestamp, False, 0.0, False))
        if pending:
            probs = self.classifier.p_poisoned(np.stack([w for _, w in pending]))
            for (i, _), p in zip(pending, probs):
                r = message.records[i]
                verdicts[i] = Verdict(r.ue_id, r.timestamp, bool(p >= 0.5), float(p), True)
        return verdicts

    # stage 4
    def tag_and_forward(
        self, message: KpiReportMessage, verdicts: Sequence[Verdict]
    ) -> tuple[KpiReportMessage, TaggedMessage, list[Notification], tuple[int, ...]]:
        poisoned = any(v.poisoned for v in verdicts)
        tagged_msg = message.with_tag(Tag.POISONED if poisoned else Tag.BENIGN)
        tagged = TaggedMessage(tagged_msg, tuple(verdicts))
        notes: list[Notification] = []
        drop = set()
        if self.policy is GatePolicy.DISCARD_POISONED_AND_NOTIFY and poisoned:
            now = self._wall()
            for v in verdicts:
                if v.poisoned:
                    drop.add(v.ue_id)
                    notes.append(Notification(now, v.ue_id, message.period_start, v.p_poisoned, message.source_node))
        if self.cold_start is ColdStart.HOLD:
            drop |= {v.ue_id for v in verdicts if not v.warm}
        if drop:
            keep = tuple(r for r in message.records if r.ue_id not in drop)
            delivered = replace(tagged_msg, records=keep)
        else:
            delivered = tagged_msg
        return delivered, tagged, notes, tuple(sorted(drop))

    def process(self, message: Union[KpiReportMessage, str, bytes]) -> GateOutput:
        """Run one message through all four stages and notify subscribers."""
        with self._lock:
            t0 = self._clock()
            route, msg = self.ingest(message)
            if route is Route.QUARANTINE:
                out = GateOutput(route, None, None, [], (), None)
            elif route is Route.BYPASS:
                out = GateOutput(route, msg, None, [], (), None)
            else:
                verdicts = self.detect(msg)
                delivered, tagged, notes, dropped = self.tag_and_forward(msg, verdicts)
                self.verdict_log.extend(verdicts)
                out = GateOutput(route, delivered, tagged, notes, dropped, None)
            for sub in self.subscribers:
                sub(out)
            if route is not Route.QUARANTINE:
                lat = LatencyRecord(msg.source_node, msg.period_start, route, (self._clock() - t0) / 1e6)
                out.latency = lat
                self.latencies.append(lat)
            if out.notifications:
                self.notifications.extend(out.notifications)
                if self._audit_path is not None:
                    with self._audit_path.open("a", encoding="utf-8") as fh:
                        for n in out.notifications:
                            fh.write(n.to_json() + "\n")
            return out

    def run(self, messages: Iterable) -> list[GateOutput]:
        return [self.process(m) for m in messages]

    def latency_summary(self) -> dict[str, float]:
        return latency_summary(self.latencies)

    def clear_logs(self, audit_log: Optional[Union[str, Path]] = None) -> None:
        """Drop meters and logs but keep the warm UE buffers."""
        with self._lock:
            self.latencies.clear()
            self.notifications.clear()
            self.verdict_log.clear()
            self.quarantine.clear()
            self._audit_path = Path(audit_log) if audit_log else None

    def reset(self) -> None:
        with self._lock:
            self._buffers.clear()
            self.latencies.clear()
            self.notifications.clear()
            self.verdict_log.clear()
            self.quarantine.clear()


# ---------------------------------------------------------------- xApp
@dataclass
class XAppState:
    x_mbps_per_prb: float = 10.0
    assigned: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.x_mbps_per_prb > 0:
            raise ConfigError("X (Mbps per PRB) must be > 0")


def xapp_allocate(record: Optional[KpiRecord], assigned: int, x_mbps_per_prb: float) -> int:
    """New PRB allocation for one UE from its latest report.

    ``record=None`` means the gate discarded the report: hold.
    """
    if not x_mbps_per_prb > 0:
        raise ConfigError("X (Mbps per PRB) must be > 0")
    if record is None:
        return assigned
    target = math.ceil((record.ue_thp_dl + record.ue_thp_ul) / x_mbps_per_prb)
    if target > assigned:
        assigned = target
    usage = record.prb_used_dl + record.prb_used_ul
    if usage < assigned:
        assigned = max(target, usage)
    return assigned


class QosXApp:
    """Subscriber that keeps one PRB allocation per UE."""

    def __init__(self, x_mbps_per_prb: float = 10.0):
        self.state = XAppState(x_mbps_per_prb)
        self.history: dict[int, dict[int, int]] = {}  # period -> ue -> assigned

    def consume(self, message: Optional[KpiReportMessage], held_ue_ids: Iterable[int] = ()) -> None:
        if message is None or message.msg_type is not MsgType.KPI_REPORT:
            return
        st = self.state
        snap = self.history.setdefault(message.period_start, {})
        for r in message.records:
            st.assigned[r.ue_id] = xapp_allocate(r, st.assigned.get(r.ue_id, 0), st.x_mbps_per_prb)
            snap[r.ue_id] = st.assigned[r.ue_id]
        for ue in held_ue_ids:
            st.assigned[ue] = xapp_allocate(None, st.assigned.get(ue, 0), st.x_mbps_per_prb)
            snap[ue] = st.assigned[ue]

    def __call__(self, out: GateOutput) -> None:
        self.consume(out.delivered, out.dropped_ue_ids)


def allocation_deviation(run: QosXApp, baseline: QosXApp) -> dict[int, float]:
    """Per-period mean |assigned - baseline assigned| over the baseline's UEs."""
    out = {}
    for period, base in sorted(baseline.history.items()):
        got = run.history.get(period, {})
        diffs = [abs(got.get(ue, 0) - a) for ue, a in base.items()]
        out[period] = float(np.mean(diffs)) if diffs else 0.0
    return out
