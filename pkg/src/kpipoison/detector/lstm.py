"""Stacked LSTM sequence classifier in plain numpy.

Architecture: ``n_layers`` LSTM layers, each followed by dropout, then an
affine head producing two logits from the last layer's final hidden
state. Gate order inside every fused weight block is (input, forget,
cell, output). Forward passes run time-major; all state is float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ShapeError

DEFAULT_HIDDEN = (256, 128, 64)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _orthogonal(rng, rows, cols):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q if rows >= cols else q.T


@dataclass
class _LayerCache:
    x: np.ndarray  # (T, B, n_in)
    h: np.ndarray  # (T+1, B, H), h[0] = 0
    c: np.ndarray  # (T+1, B, H)
    gates: np.ndarray  # (T, B, 4H) post-activation i, f, g, o
    tanh_c: np.ndarray  # (T, B, H)
    mask: Optional[np.ndarray]  # dropout mask on outputs, pre-scaled


@dataclass
class ForwardCache:
    layers: list
    head_in: np.ndarray  # (B, H_last) after dropout
    logits: np.ndarray


class RecurrentClassifier:
    """LSTM stack + softmax head over windows of shape ``(B, L, n_features)``."""

    def __init__(
        self,
        n_features: int = 6,
        hidden: tuple[int, ...] = DEFAULT_HIDDEN,
        n_classes: int = 2,
        dropout: float = 0.2,
        seq_len: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        if not hidden:
            raise ValueError("need at least one recurrent layer")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self.n_features = int(n_features)
        self.hidden = tuple(int(h) for h in hidden)
        self.n_classes = int(n_classes)
        self.dropout = float(dropout)
        self.seq_len = seq_len
        self.params: dict[str, np.ndarray] = {}
        rng = rng if rng is not None else np.random.default_rng(0)
        n_in = self.n_features
        for k, H in enumerate(self.hidden):
            self.params[f"W{k}"] = _glorot(rng, n_in, 4 * H)
            self.params[f"U{k}"] = np.concatenate([_orthogonal(rng, H, H) for _ in range(4)], axis=1)
            b = np.zeros(4 * H)
            b[H : 2 * H] = 1.0  # forget-gate bias
            self.params[f"b{k}"] = b
            n_in = H
        self.params["Wy"] = _glorot(rng, n_in, self.n_classes)
        self.params["by"] = np.zeros(self.n_classes)

    # ------------------------------------------------------------------
    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.params.items()}

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        n_in = self.n_features
        for k, H in enumerate(self.hidden):
            shapes[f"W{k}"] = (n_in, 4 * H)
            shapes[f"U{k}"] = (H, 4 * H)
            shapes[f"b{k}"] = (4 * H,)
            n_in = H
        shapes["Wy"] = (n_in, self.n_classes)
        shapes["by"] = (self.n_classes,)
        return shapes

    def copy(self) -> "RecurrentClassifier":
        other = object.__new__(RecurrentClassifier)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def check_input(self, x: np.ndarray) -> None:
        if x.ndim != 3 or x.shape[2] != self.n_features:
            raise ShapeError(f"expected (batch, L, {self.n_features}) input, got {x.shape}")
        if self.seq_len is not None and x.shape[1] != self.seq_len:
            raise ShapeError(f"model was trained on L={self.seq_len}, got windows of L={x.shape[1]}")

    # ------------------------------------------------------------------
    def forward(
        self, x: np.ndarray, dropout_rng: Optional[np.random.Generator] = None
    ) -> ForwardCache:
        """Run the stack. Dropout is applied only when ``dropout_rng`` is given."""
        x = np.asarray(x, dtype=np.float64)
        self.check_input(x)
        seq = np.ascontiguousarray(x.transpose(1, 0, 2))  # (T, B, F)
        T, B, _ = seq.shape
        caches = []
        last = len(self.hidden) - 1
        for k, H in enumerate(self.hidden):
            W, U, b = self.params[f"W{k}"], self.params[f"U{k}"], self.params[f"b{k}"]
            pre = (seq.reshape(T * B, -1) @ W).reshape(T, B, 4 * H) + b
            h = np.zeros((T + 1, B, H))
            c = np.zeros((T + 1, B, H))
            gates = np.empty((T, B, 4 * H))
            tanh_c = np.empty((T, B, H))
            for t in range(T):
                a = pre[t] + h[t] @ U
                g = gates[t]
                g[:, : 2 * H] = _sigmoid(a[:, : 2 * H])
                g[:, 2 * H : 3 * H] = np.tanh(a[:, 2 * H : 3 * H])
                g[:, 3 * H :] = _sigmoid(a[:, 3 * H :])
                c[t + 1] = g[:, H : 2 * H] * c[t] + g[:, :H] * g[:, 2 * H : 3 * H]
                tanh_c[t] = np.tanh(c[t + 1])
                h[t + 1] = g[:, 3 * H :] * tanh_c[t]
            mask = None
            if k < last:
                out = h[1:]
                if dropout_rng is not None and self.dropout > 0:
                    mask = self._mask(dropout_rng, out.shape)
                    out = out * mask
            else:
                out = h[T]
                if dropout_rng is not None and self.dropout > 0:
                    mask = self._mask(dropout_rng, out.shape)
                    out = out * mask
            caches.append(_LayerCache(seq, h, c, gates, tanh_c, mask))
            seq = out
        logits = seq @ self.params["Wy"] + self.params["by"]
        return ForwardCache(caches, seq, logits)

    def _mask(self, rng, shape):
        keep = 1.0 - self.dropout
        return (rng.random(shape) < keep) / keep

    def backward(self, cache: ForwardCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Backpropagation through time from ``dLoss/dlogits``."""
        grads = {
            "Wy": cache.head_in.T @ dlogits,
            "by": dlogits.sum(axis=0),
        }
        d_out = dlogits @ self.params["Wy"].T  # (B, H_last)
        last = len(self.hidden) - 1
        d_seq = None
        for k in range(last, -1, -1):
            H = self.hidden[k]
            lc = cache.layers[k]
            T, B, n_in = lc.x.shape
            if k == last:
                d_top = np.zeros((T, B, H))
                d_top[T - 1] = d_out if lc.mask is None else d_out * lc.mask
            else:
                d_top = d_seq if lc.mask is None else d_seq * lc.mask
            U = self.params[f"U{k}"]
            UT = np.ascontiguousarray(U.T)
            d_pre = np.empty((T, B, 4 * H))
            dh_next = np.zeros((B, H))
            dc_next = np.zeros((B, H))
            for t in range(T - 1, -1, -1):
                g = lc.gates[t]
                i, f, gg, o = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
                dh = d_top[t] + dh_next
                tc = lc.tanh_c[t]
                dc = dh * o * (1.0 - tc * tc) + dc_next
                da = d_pre[t]
                da[:, :H] = dc * gg * i * (1.0 - i)
                da[:, H : 2 * H] = dc * lc.c[t] * f * (1.0 - f)
                da[:, 2 * H : 3 * H] = dc * i * (1.0 - gg * gg)
                da[:, 3 * H :] = dh * tc * o * (1.0 - o)
                dc_next = dc * f
                dh_next = da @ UT
            flat = d_pre.reshape(T * B, 4 * H)
            grads[f"U{k}"] = lc.h[:T].reshape(T * B, H).T @ flat
            grads[f"W{k}"] = lc.x.reshape(T * B, n_in).T @ flat
            grads[f"b{k}"] = flat.sum(axis=0)
            if k > 0:
                d_seq = (flat @ self.params[f"W{k}"].T).reshape(T, B, n_in)
        return grads

    # ------------------------------------------------------------------
    def logits(self, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        self.check_input(x)
        if len(x) <= chunk:
            return self.forward(x).logits
        return np.concatenate([self.forward(x[i : i + chunk]).logits for i in range(0, len(x), chunk)])

    def predict_proba(self, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
        return softmax(self.logits(x, chunk))


def cross_entropy(
    logits: np.ndarray, targets: np.ndarray, weights: Optional[np.ndarray] = None
) -> tuple[float, np.ndarray]:
    """Mean (optionally weighted) categorical cross-entropy and its logit gradient.

    ``targets`` holds class indices; the one-hot expansion is implicit.
    """
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z - logsum[:, None]
    idx = np.arange(n)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    loss = float(-(w * logp[idx, targets]).sum() / n)
    d = np.exp(logp)
    d[idx, targets] -= 1.0
    d *= (w / n)[:, None]
    return loss, d


def loss_and_gradients(
    model: RecurrentClassifier,
    x: np.ndarray,
    targets: np.ndarray,
    weights: Optional[np.ndarray] = None,
    dropout_rng: Optional[np.random.Generator] = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients for one batch.

    Dropout stays off unless ``dropout_rng`` is passed (training only).
    """
    if len(x) == 0:
        raise ValueError("empty batch")
    cache = model.forward(x, dropout_rng)
    loss, dlogits = cross_entropy(cache.logits, np.asarray(targets), weights)
    return loss, model.backward(cache, dlogits)
