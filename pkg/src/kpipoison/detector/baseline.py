"""Per-UE Mahalanobis-distance detector, used as an independent reference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, PlanError
from ..injector import MvnModel, fit_mvn
from ..records import BENIGN, Dataset
from .windows import WindowSet


def baseline_score(window: np.ndarray, model: MvnModel) -> float:
    """Mean over rows of the Mahalanobis distance to the UE's benign model."""
    return float(np.mean(model.mahalanobis(np.asarray(window, dtype=np.float64))))


def baseline_classify(score: float, tau: float) -> int:
    return int(score > tau)


@dataclass
class BaselineDetector:
    models: dict[int, MvnModel]
    tau: float
    quantile: float = 0.99

    @classmethod
    def fit(
        cls, train: Dataset, labels: np.ndarray, train_windows: WindowSet, quantile: float = 0.99
    ) -> "BaselineDetector":
        """Fit per-UE models on benign training records; threshold on benign windows."""
        models = {}
        benign = np.asarray(labels) == BENIGN
        for ue in train.ue_ids():
            rows = (train.ue_id == ue) & benign
            models[int(ue)] = fit_mvn(train.features[rows])
        det = cls(models, np.inf, quantile)
        scores = det.scores(train_windows.subset(train_windows.labels == BENIGN))
        tau = float(np.quantile(scores, quantile))
        if not np.isfinite(tau) or tau <= 0:
            raise NumericError(f"degenerate baseline threshold {tau}")
        det.tau = tau
        return det

    def scores(self, windows: WindowSet) -> np.ndarray:
        out = np.empty(len(windows))
        for ue in np.unique(windows.ue_ids):
            model = self.models.get(int(ue))
            if model is None:
                raise PlanError(f"no benign model fitted for UE {ue}")
            sel = windows.ue_ids == ue
            x = windows.x[sel]
            d = model.mahalanobis(x.reshape(-1, x.shape[-1])).reshape(x.shape[0], x.shape[1])
            out[sel] = d.mean(axis=1)
        return out

    def predict(self, windows: WindowSet) -> np.ndarray:
        return (self.scores(windows) > self.tau).astype(np.int8)
