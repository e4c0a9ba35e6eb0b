"""FastAPI application exposing one gate instance and its xApp subscriber."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Union

from fastapi import FastAPI, Request

from .. import __version__
from ..gate import ColdStart, Gate, GatePolicy, QosXApp
from ..reportio import message_from_dict
from .schemas import (
    AllocationModel,
    GateResponse,
    HealthModel,
    KpiReportModel,
    LatencyModel,
    NotificationModel,
)


def _classifier(source):
    if isinstance(source, (str, Path)):
        from ..detector import checkpoint
        from ..gate import ModelClassifier

        ckpt = checkpoint.load(source)
        return ModelClassifier(ckpt.model, ckpt.stats)
    return source


def create_app(
    model: Union[str, Path, object],
    policy: Union[str, GatePolicy] = GatePolicy.DISCARD_POISONED_AND_NOTIFY,
    x_mbps_per_prb: float = 10.0,
    audit_log: Optional[Union[str, Path]] = None,
    cold_start: ColdStart = ColdStart.BENIGN,
) -> FastAPI:
    """``model`` is a checkpoint path or any object with ``seq_len`` and ``p_poisoned``."""
    xapp = QosXApp(x_mbps_per_prb)
    gate = Gate(_classifier(model), policy, cold_start, subscribers=[xapp], audit_log=audit_log)
    app = FastAPI(title="kpipoison gate", version=__version__)
    app.state.gate = gate
    app.state.xapp = xapp

    @app.get("/healthz", response_model=HealthModel)
    def healthz():
        return HealthModel(policy=gate.policy.value, seq_len=gate.seq_len, version=__version__)

    @app.post("/v1/messages", response_model=GateResponse)
    def post_message(msg: KpiReportModel):
        return GateResponse.of(gate.process(message_from_dict(msg.to_dict())))

    @app.post("/v1/stream", response_model=list[GateResponse])
    async def post_stream(request: Request):
        # raw lines go to the gate unparsed so bad ones are quarantined, not rejected
        body = (await request.body()).decode("utf-8", "replace")
        return [GateResponse.of(gate.process(line)) for line in body.splitlines() if line.strip()]

    @app.get("/v1/notifications", response_model=list[NotificationModel])
    def notifications():
        return [NotificationModel.of(n) for n in gate.notifications]

    @app.get("/v1/latency", response_model=LatencyModel)
    def latency():
        s = gate.latency_summary()
        return LatencyModel(**{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in s.items()})

    @app.get("/v1/xapp", response_model=AllocationModel)
    def allocations():
        return AllocationModel(x_mbps_per_prb=xapp.state.x_mbps_per_prb, assigned=dict(xapp.state.assigned))

    @app.post("/v1/reset")
    def reset():
        gate.reset()
        xapp.state.assigned.clear()
        xapp.history.clear()
        return {"status": "reset"}

    return app
