"""Thin client that streams a dataset to a running gate service."""

from __future__ import annotations

import httpx

from ..emulator import build_topology
from ..errors import KpiError
from ..records import Dataset
from ..reportio import dataset_messages, encode_message


def replay_remote(url: str, dataset: Dataset, config, batch: int = 64, client: httpx.Client | None = None) -> dict:
    """POST the dataset's messages in batches; return the server's latency and notifications."""
    own = client is None
    client = client or httpx.Client(base_url=url, timeout=60.0)
    try:
        msgs = [encode_message(m) for m in dataset_messages(dataset, build_topology(config.emulation))]
        for i in range(0, len(msgs), batch):
            r = client.post("/v1/stream", content="\n".join(msgs[i : i + batch]), headers={"content-type": "application/x-ndjson"})
            r.raise_for_status()
        latency = client.get("/v1/latency").json()
        notes = client.get("/v1/notifications").json()
    except httpx.HTTPError as e:
        raise KpiError(f"gate service at {url}: {e}") from e
    finally:
        if own:
            client.close()
    nan = float("nan")
    latency = {k: (nan if v is None else v) for k, v in latency.items()}
    return {"latency": latency, "notifications": notes}
