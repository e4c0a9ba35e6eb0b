"""Mini-batch Adam training and inference for the recurrent classifier."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, DivergenceError, ShapeError, TrainingError
from .lstm import DEFAULT_HIDDEN, RecurrentClassifier, cross_entropy
from .windows import NormalizationStats, WindowSet, normalize

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    class_weighting: bool = True
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    dropout: float = 0.2

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        eps_t = self.eps * np.sqrt(1 - b2**self.t)
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            # same as lr * m_hat / (sqrt(v_hat) + eps), without allocating m_hat/v_hat
            params[k] -= lr_t * m / (np.sqrt(v) + eps_t)


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_accuracy: list[float] = field(default_factory=list)


def class_weights(labels: np.ndarray, n_classes: int = 2) -> np.ndarray:
    """Inverse-frequency weights, normalised so a balanced set gets 1.0 each."""
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    return len(labels) / (n_classes * counts)


def train(
    windows: WindowSet,
    stats: NormalizationStats,
    config: Optional[TrainConfig] = None,
    rng: Optional[np.random.Generator] = None,
    history: Optional[TrainHistory] = None,
) -> RecurrentClassifier:
    """Fit a fresh classifier on normalised windows.

    ``rng`` drives initialisation, shuffling and dropout; defaults to one
    seeded from ``config.seed``.
    """
    config = config or TrainConfig()
    config.validate()
    labels = np.asarray(windows.labels, dtype=np.int64)
    if len(labels) == 0 or len(np.unique(labels)) < 2:
        raise TrainingError("training windows must contain both benign and poisoned examples")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    L = windows.length
    model = RecurrentClassifier(
        windows.x.shape[2], config.hidden, 2, config.dropout, seq_len=L, rng=rng
    )
    if config.epochs == 0:
        return model
    x = normalize(windows.x, stats)
    w_class = class_weights(labels) if config.class_weighting else np.ones(2)
    w = w_class[labels]
    opt = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.eps)
    n = len(labels)
    bs = config.batch_size
    batch_index = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            cache = model.forward(x[idx], rng)
            loss, dlogits = cross_entropy(cache.logits, labels[idx], w[idx])
            if not np.isfinite(loss):
                raise DivergenceError(batch_index, loss)
            grads = model.backward(cache, dlogits)
            opt.step(model.params, grads)
            total += loss * len(idx)
            correct += int(np.sum(cache.logits.argmax(axis=1) == labels[idx]))
            batch_index += 1
        if history is not None:
            history.epoch_loss.append(total / n)
            history.epoch_accuracy.append(correct / n)
        log.info("epoch %d/%d loss=%.5f acc=%.4f", epoch + 1, config.epochs, total / n, correct / n)
    return model


def infer(model: RecurrentClassifier, windows, stats: NormalizationStats) -> np.ndarray:
    """Class probabilities ``(n, 2)`` as (p_benign, p_poisoned); dropout is never applied.

    ``windows`` is a WindowSet, a raw ``(n, L, 6)`` array, or one ``(L, 6)`` window.
    """
    x = windows.x if isinstance(windows, WindowSet) else np.asarray(windows, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"cannot interpret input of shape {x.shape} as windows")
    if len(x) == 0:
        return np.empty((0, 2))
    p = model.predict_proba(normalize(x, stats))
    return p[0] if single else p


def classify(probs: np.ndarray) -> np.ndarray:
    """1 (poisoned) where p_poisoned >= 0.5."""
    return (np.asarray(probs)[..., 1] >= 0.5).astype(np.int8)
