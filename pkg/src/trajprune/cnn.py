"""Minimal CNN forward with per-channel masking.

Layer = conv -> folded batch-norm affine (scale/shift per channel) -> ReLU
-> optional 2x2 max pool. A global average pool feeds the classifier.
Masked output channels produce all-zero maps (the whole post-affine map is
zeroed, so a channel's shift cannot leak through).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import EngineError, MaskError, ShapeError


@dataclass
class ConvLayer:
    filters: np.ndarray  # [C_out, C_in, k, k]
    scale: np.ndarray    # [C_out]
    shift: np.ndarray    # [C_out]
    stride: int = 1
    pad: int = 0
    pool: int = 0        # 0 = none, 2 = 2x2 max pool after activation


@dataclass
class CnnGraph:
    layers: list[ConvLayer]
    classifier: np.ndarray  # [C_last, n_classes]
    n_classes: int

    def __post_init__(self):
        self.validate()

    def validate(self):
        c_prev = None
        for i, layer in enumerate(self.layers):
            c_out, c_in, kh, kw = layer.filters.shape
            if kh != kw:
                raise ShapeError(f"layer {i} kernel must be square")
            if c_prev is not None and c_in != c_prev:
                raise ShapeError(
                    f"layer {i} expects {c_in} input channels, got {c_prev}"
                )
            if layer.scale.shape != (c_out,) or layer.shift.shape != (c_out,):
                raise ShapeError(f"layer {i} affine length != {c_out}")
            c_prev = c_out
        if self.classifier.shape != (c_prev, self.n_classes):
            raise ShapeError("classifier shape inconsistent with last layer")
        for layer in self.layers:
            for a in (layer.filters, layer.scale, layer.shift):
                if not np.isfinite(a).all():
                    raise EngineError("cnn weights contain NaN/Inf", code="non_finite")
        if not np.isfinite(self.classifier).all():
            raise EngineError("cnn weights contain NaN/Inf", code="non_finite")

    @property
    def channel_counts(self) -> list[int]:
        return [layer.filters.shape[0] for layer in self.layers]


@dataclass
class ChannelMask:
    channels: list[list[int]]  # kept channel indices per conv layer

    @classmethod
    def full(cls, g: CnnGraph) -> "ChannelMask":
        return cls(channels=[list(range(c)) for c in g.channel_counts])

    def validate(self, g: CnnGraph):
        counts = g.channel_counts
        if len(self.channels) != len(counts):
            raise MaskError("channel mask layer count mismatch")
        for i, kept in enumerate(self.channels):
            if any(not 0 <= c < counts[i] for c in kept):
                raise MaskError(f"channel index out of range in layer {i}")


@dataclass
class CnnTrace:
    features: list[np.ndarray] = field(repr=False, default_factory=list)
    logits: np.ndarray | None = None


def _conv2d(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """im2col + matmul convolution; [B,C,H,W] -> [B,C_out,H',W']."""
    b, c, h, w = x.shape
    c_out, c_in, k, _ = layer.filters.shape
    if c != c_in:
        raise ShapeError(f"conv expects {c_in} channels, got {c}")
    s, p = layer.stride, layer.pad
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    h_out = (h + 2 * p - k) // s + 1
    w_out = (w + 2 * p - k) // s + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError("spatial dims too small for kernel")
    cols = np.empty((b, h_out, w_out, c_in, k, k), dtype=np.float32)
    for di in range(k):
        for dj in range(k):
            cols[:, :, :, :, di, dj] = x[
                :, :, di:di + s * h_out:s, dj:dj + s * w_out:s
            ].transpose(0, 2, 3, 1)
    flat = np.ascontiguousarray(cols.reshape(b * h_out * w_out, c_in * k * k))
    wmat = np.ascontiguousarray(layer.filters.reshape(c_out, -1).T)
    out = _kernels.matmul(flat, wmat)
    return out.reshape(b, h_out, w_out, c_out).transpose(0, 3, 1, 2)


def _maxpool2(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    v = x[:, :, :h2 * 2, :w2 * 2].reshape(b, c, h2, 2, w2, 2)
    return v.max(axis=(3, 5))


def cnn_forward(g: CnnGraph, batch: np.ndarray,
                channel_mask: ChannelMask | None = None) -> CnnTrace:
    """Masked forward; features captured per layer post-activation, before
    any pooling."""
    if channel_mask is None:
        channel_mask = ChannelMask.full(g)
    channel_mask.validate(g)
    x = np.ascontiguousarray(batch, dtype=np.float32)
    if x.ndim != 4:
        raise ShapeError("cnn batch must be [B,C,H,W]")
    trace = CnnTrace()
    for i, layer in enumerate(g.layers):
        y = _conv2d(x, layer)
        y = y * layer.scale[None, :, None, None] + layer.shift[None, :, None, None]
        y = np.maximum(y, 0.0)
        dropped = [c for c in range(layer.filters.shape[0])
                   if c not in set(channel_mask.channels[i])]
        if dropped:
            y[:, dropped] = 0.0
        trace.features.append(y)
        x = _maxpool2(y) if layer.pool == 2 else y
    pooled = x.astype(np.float64).mean(axis=(2, 3)).astype(np.float32)
    trace.logits = _kernels.matmul(np.ascontiguousarray(pooled), g.classifier)
    return trace
