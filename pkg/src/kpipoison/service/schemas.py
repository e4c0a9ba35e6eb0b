"""Request and response bodies for the gate service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from ..gate import GateOutput, Notification
from ..reportio import MsgType, Tag, message_to_dict


class KpiRecordModel(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    timestamp: int = Field(alias="Timestamp", ge=0)
    ue_id: int = Field(alias="UEid", ge=0)
    ue_thp_ul: float = Field(alias="UEThpUl", ge=0, allow_inf_nan=False)
    prb_used_ul: int = Field(alias="PrbUsedUl", ge=0)
    ue_thp_dl: float = Field(alias="UEThpDl", ge=0, allow_inf_nan=False)
    prb_used_dl: int = Field(alias="PrbUsedDl", ge=0)
    tot_nbr_ul: int = Field(alias="TotNbrUl_per_sec", ge=0)
    tot_nbr_dl: int = Field(alias="TotNbrDl_per_sec", ge=0)


class KpiReportModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    msg_type: MsgType
    source_node: str
    period_start: int = Field(ge=0)
    records: list[KpiRecordModel] = Field(default_factory=list)
    tag: Tag = Tag.UNTAGGED

    def to_dict(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


class VerdictModel(BaseModel):
    ue_id: int
    timestamp: int
    poisoned: bool
    p_poisoned: float
    warm: bool


class NotificationModel(BaseModel):
    wall_time: float
    ue_id: int
    period_start: int
    verdict_confidence: float
    source_node: str

    @classmethod
    def of(cls, n: Notification) -> "NotificationModel":
        return cls(**vars(n))


class GateResponse(BaseModel):
    route: str
    delivered: Optional[KpiReportModel] = None
    verdicts: list[VerdictModel] = Field(default_factory=list)
    dropped_ue_ids: list[int] = Field(default_factory=list)
    notifications: list[NotificationModel] = Field(default_factory=list)
    latency_ms: Optional[float] = None

    @classmethod
    def of(cls, out: GateOutput) -> "GateResponse":
        return cls(
            route=out.route.value,
            delivered=KpiReportModel.model_validate(message_to_dict(out.delivered)) if out.delivered else None,
            verdicts=[VerdictModel(**vars(v)) for v in (out.tagged.verdicts if out.tagged else ())],
            dropped_ue_ids=list(out.dropped_ue_ids),
            notifications=[NotificationModel.of(n) for n in out.notifications],
            latency_ms=out.latency.latency_ms if out.latency else None,
        )


class LatencyModel(BaseModel):
    n: int
    p50: Optional[float]
    p95: Optional[float]
    max: Optional[float]


class AllocationModel(BaseModel):
    x_mbps_per_prb: float
    assigned: dict[int, int]


class HealthModel(BaseModel):
    status: str = "ok"
    policy: str
    seq_len: int
    version: str
