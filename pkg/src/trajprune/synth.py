"""Seeded random toy models and calibration batches.

Weight magnitudes are spread per head / per neuron / per channel (lognormal
factors) so that randomly initialized toys still carry a real importance
signal: some units matter, some barely do.
"""

from __future__ import annotations

import numpy as np

from .cnn import CnnGraph, ConvLayer
from .model import BlockWeights, CalibrationBatch, ModelGraph


def toy_encoder(seed: int, n_blocks: int = 2, n_heads: int = 4, head_dim: int = 8,
                ffn_dim: int = 16, n_classes: int = 4, vocab_size: int | None = None,
                max_seq: int = 32, pooling: str = "first",
                spread: float = 1.0) -> ModelGraph:
    """Random encoder. With ``vocab_size`` set the model is language-style
    (token batches); otherwise it is vision-style (feature batches with a
    class token at position 0)."""
    rng = np.random.default_rng(seed)
    d = n_heads * head_dim
    scale = 1.0 / np.sqrt(d)

    def mat(rows, cols, s=1.0):
        return (rng.normal(size=(rows, cols)) * scale * s).astype(np.float32)

    blocks = []
    for _ in range(n_blocks):
        head_scales = np.exp(rng.normal(0.0, spread, size=n_heads))
        neuron_scales = np.exp(rng.normal(0.0, spread, size=ffn_dim))
        wq = mat(d, d)
        wk = mat(d, d)
        wv = mat(d, d)
        wo = mat(d, d)
        # Scale each head's value/output pathway so heads differ in impact.
        for h in range(n_heads):
            sl = slice(h * head_dim, (h + 1) * head_dim)
            wv[:, sl] *= head_scales[h]
            wo[sl, :] *= head_scales[h]
        w1 = mat(d, ffn_dim)
        w2 = mat(ffn_dim, d)
        w1 *= neuron_scales[None, :].astype(np.float32)
        w2 *= neuron_scales[:, None].astype(np.float32)
        blocks.append(BlockWeights(
            wq=wq, wk=wk, wv=wv, wo=wo, w1=w1, w2=w2,
            ln1_gamma=(1.0 + 0.1 * rng.normal(size=d)).astype(np.float32),
            ln1_beta=(0.1 * rng.normal(size=d)).astype(np.float32),
            ln2_gamma=(1.0 + 0.1 * rng.normal(size=d)).astype(np.float32),
            ln2_beta=(0.1 * rng.normal(size=d)).astype(np.float32),
        ))
    embedding = None
    if vocab_size is not None:
        embedding = rng.normal(size=(vocab_size, d)).astype(np.float32)
    positional = (0.5 * rng.normal(size=(max_seq, d))).astype(np.float32)
    return ModelGraph(
        n_blocks=n_blocks, d_model=d, n_heads=n_heads, head_dim=head_dim,
        ffn_dims=[ffn_dim] * n_blocks, n_classes=n_classes, blocks=blocks,
        classifier=(rng.normal(size=(d, n_classes)) * scale * 4).astype(np.float32),
        pooling=pooling, embedding=embedding, positional=positional,
    )


def toy_batch(seed: int, model: ModelGraph, batch_size: int = 8,
              seq_len: int = 16, with_labels: bool = True) -> CalibrationBatch:
    rng = np.random.default_rng(seed)
    labels = None
    if with_labels:
        labels = rng.integers(0, model.n_classes, size=batch_size).astype(np.int32)
    if model.embedding is not None:
        tokens = rng.integers(0, model.vocab_size, size=(batch_size, seq_len))
        return CalibrationBatch(tokens=tokens.astype(np.int32), labels=labels)
    features = rng.normal(size=(batch_size, seq_len, model.d_model))
    return CalibrationBatch(features=features.astype(np.float32), labels=labels)


def toy_cnn(seed: int, channels: tuple[int, ...] = (4, 8), in_channels: int = 3,
            kernel: int = 3, n_classes: int = 4, spread: float = 1.0) -> CnnGraph:
    rng = np.random.default_rng(seed)
    layers = []
    c_in = in_channels
    for li, c_out in enumerate(channels):
        fan = c_in * kernel * kernel
        filt = (rng.normal(size=(c_out, c_in, kernel, kernel))
                / np.sqrt(fan)).astype(np.float32)
        ch_scales = np.exp(rng.normal(0.0, spread, size=c_out)).astype(np.float32)
        filt *= ch_scales[:, None, None, None]
        layers.append(ConvLayer(
            filters=filt,
            scale=(1.0 + 0.1 * rng.normal(size=c_out)).astype(np.float32),
            shift=(0.1 * rng.normal(size=c_out)).astype(np.float32),
            stride=1, pad=kernel // 2,
            pool=2 if li == len(channels) - 1 else 0,
        ))
        c_in = c_out
    classifier = (rng.normal(size=(c_in, n_classes)) / np.sqrt(c_in)).astype(np.float32)
    return CnnGraph(layers=layers, classifier=classifier, n_classes=n_classes)


def toy_cnn_batch(seed: int, cnn: CnnGraph, batch_size: int = 4,
                  hw: int = 8, with_labels: bool = True) -> np.ndarray:
    rng = np.random.default_rng(seed)
    c_in = cnn.layers[0].filters.shape[1]
    return rng.normal(size=(batch_size, c_in, hw, hw)).astype(np.float32)
