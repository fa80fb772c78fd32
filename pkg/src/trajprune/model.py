"""Maskable transformer-encoder forward pass.

Blocks are pre-LN: x + MHA(LN(x)) then x + FFN(LN(x)) with tanh-GELU.
Masked heads contribute exactly zero (their slice of the concatenated head
outputs is zeroed before the output projection); masked neurons zero both
their inbound W1 column and outbound W2 row. Per-block feature taps feed the
importance metric, and an optional per-layer token schedule is realized by
bipartite merging after each block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels
from .errors import EngineError, MaskError, ParameterError, ShapeError
from .tensor import layer_norm


class TapPoint(Enum):
    """Where the per-block feature is captured."""

    L_NORM = "l_norm"      # block output after residual, before next LN
    FFN = "ffn"            # output of the final dense projection, pre-residual
    IM_DENSE = "im_dense"  # hidden after W1 + GELU

    @classmethod
    def parse(cls, s: str) -> "TapPoint":
        try:
            return cls(s.strip().lower())
        except ValueError:
            raise ParameterError(f"unknown tap point {s!r}") from None


GELU_CUBIC = 0.044715


def gelu(x: np.ndarray) -> np.ndarray:
    z = x.astype(np.float64)
    inner = math.sqrt(2.0 / math.pi) * (z + GELU_CUBIC * z * z * z)
    return (0.5 * z * (1.0 + np.tanh(inner))).astype(np.float32)


@dataclass
class BlockWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray | None  # None when the block's FFN was fully removed
    w2: np.ndarray | None
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray


@dataclass
class ModelGraph:
    n_blocks: int
    d_model: int
    n_heads: int
    head_dim: int
    ffn_dims: list[int]
    n_classes: int
    blocks: list[BlockWeights]
    classifier: np.ndarray
    pooling: str = "first"  # "first" | "mean"
    embedding: np.ndarray | None = None
    positional: np.ndarray | None = None

    def __post_init__(self):
        self.validate()

    @property
    def max_seq(self) -> int | None:
        return None if self.positional is None else int(self.positional.shape[0])

    @property
    def vocab_size(self) -> int | None:
        return None if self.embedding is None else int(self.embedding.shape[0])

    def validate(self):
        if self.d_model != self.n_heads * self.head_dim:
            raise ShapeError(
                f"d_model {self.d_model} != n_heads {self.n_heads} * "
                f"head_dim {self.head_dim}"
            )
        if len(self.blocks) != self.n_blocks or len(self.ffn_dims) != self.n_blocks:
            raise ShapeError("block count mismatch")
        if self.pooling not in ("first", "mean"):
            raise ParameterError(f"unknown pooling {self.pooling!r}")
        d = self.d_model
        for i, blk in enumerate(self.blocks):
            for name in ("wq", "wk", "wv", "wo"):
                w = getattr(blk, name)
                if w.shape != (d, d):
                    raise ShapeError(f"block {i} {name} shape {w.shape} != ({d},{d})")
            df = self.ffn_dims[i]
            if df > 0:
                if blk.w1 is None or blk.w2 is None:
                    raise ShapeError(f"block {i} missing FFN weights")
                if blk.w1.shape != (d, df) or blk.w2.shape != (df, d):
                    raise ShapeError(f"block {i} FFN shapes inconsistent with {df}")
            for name in ("ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"):
                if getattr(blk, name).shape != (d,):
                    raise ShapeError(f"block {i} {name} length != {d}")
        if self.classifier.shape[0] != d:
            raise ShapeError("classifier rows != d_model")
        for arr in self._all_arrays():
            if not np.isfinite(arr).all():
                raise EngineError("model weights contain NaN/Inf", code="non_finite")

    def _all_arrays(self):
        for blk in self.blocks:
            for name in ("wq", "wk", "wv", "wo", "w1", "w2",
                         "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"):
                a = getattr(blk, name)
                if a is not None:
                    yield a
        yield self.classifier
        if self.embedding is not None:
            yield self.embedding
        if self.positional is not None:
            yield self.positional


@dataclass
class CalibrationBatch:
    tokens: np.ndarray | None = None    # i32 [B,T]
    features: np.ndarray | None = None  # f32 [B,T,D]
    labels: np.ndarray | None = None    # i32 [B]

    def __post_init__(self):
        if (self.tokens is None) == (self.features is None):
            raise ParameterError("batch needs exactly one of tokens/features")

    @property
    def batch_size(self) -> int:
        src = self.tokens if self.tokens is not None else self.features
        return int(src.shape[0])

    @property
    def seq_len(self) -> int:
        src = self.tokens if self.tokens is not None else self.features
        return int(src.shape[1])

    def take(self, n: int) -> "CalibrationBatch":
        """First-n slice along the batch dimension."""
        if n >= self.batch_size:
            return self
        return CalibrationBatch(
            tokens=None if self.tokens is None else self.tokens[:n],
            features=None if self.features is None else self.features[:n],
            labels=None if self.labels is None else self.labels[:n],
        )


@dataclass
class PruneMask:
    heads: list[list[int]]    # kept head indices per block, sorted
    neurons: list[list[int]]  # kept neuron indices per block, sorted
    token_counts: list[int] | None = None  # tokens surviving after each block

    @classmethod
    def full(cls, model: ModelGraph) -> "PruneMask":
        return cls(
            heads=[list(range(model.n_heads)) for _ in range(model.n_blocks)],
            neurons=[list(range(df)) for df in model.ffn_dims],
        )

    def validate(self, model: ModelGraph, seq_len: int | None = None):
        if len(self.heads) != model.n_blocks or len(self.neurons) != model.n_blocks:
            raise MaskError("mask block count does not match model")
        for i in range(model.n_blocks):
            if any(not 0 <= h < model.n_heads for h in self.heads[i]):
                raise MaskError(f"head index out of range in block {i}")
            if any(not 0 <= n < model.ffn_dims[i] for n in self.neurons[i]):
                raise MaskError(f"neuron index out of range in block {i}")
            if len(set(self.heads[i])) != len(self.heads[i]):
                raise MaskError(f"duplicate head index in block {i}")
            if len(set(self.neurons[i])) != len(self.neurons[i]):
                raise MaskError(f"duplicate neuron index in block {i}")
        if self.token_counts is not None:
            if len(self.token_counts) != model.n_blocks:
                raise MaskError("token_counts length does not match model")
            prev = seq_len if seq_len is not None else self.token_counts[0]
            for c in self.token_counts:
                if c < 1:
                    raise MaskError("token count below 1")
                if c > prev:
                    raise MaskError("token_counts must be non-increasing")
                prev = c

    def is_full(self, model: ModelGraph) -> bool:
        if self.token_counts is not None:
            return False
        return all(
            len(self.heads[i]) == model.n_heads
            and len(self.neurons[i]) == model.ffn_dims[i]
            for i in range(model.n_blocks)
        )

    def equal_before(self, model: ModelGraph, block: int) -> bool:
        """True if the mask keeps everything in blocks < block."""
        return all(
            len(self.heads[i]) == model.n_heads
            and len(self.neurons[i]) == model.ffn_dims[i]
            for i in range(block)
        )

    def dropped_heads(self, block: int, n_heads: int) -> list[int]:
        kept = set(self.heads[block])
        return [h for h in range(n_heads) if h not in kept]

    def dropped_neurons(self, block: int, ffn_dim: int) -> list[int]:
        kept = set(self.neurons[block])
        return [n for n in range(ffn_dim) if n not in kept]


@dataclass
class ActivationTrace:
    features: list[np.ndarray]      # one tap feature per block
    logits: np.ndarray              # [B, n_classes]
    block_inputs: list[np.ndarray] = field(repr=False, default_factory=list)
    final_hidden: np.ndarray | None = field(repr=False, default=None)
    tap: TapPoint = TapPoint.FFN
    token_counts: list[int] | None = None


def _embed(model: ModelGraph, batch: CalibrationBatch) -> np.ndarray:
    t = batch.seq_len
    if model.max_seq is not None and t > model.max_seq:
        raise EngineError(
            f"batch length {t} exceeds model max {model.max_seq}",
            code="token_overflow",
        )
    if batch.tokens is not None:
        if model.embedding is None:
            raise ParameterError("token batch requires an embedding table")
        if batch.tokens.min() < 0 or batch.tokens.max() >= model.vocab_size:
            raise ParameterError("token id out of vocabulary range")
        x = model.embedding[batch.tokens]
    else:
        if batch.features.shape[2] != model.d_model:
            raise ShapeError(
                f"feature dim {batch.features.shape[2]} != d_model {model.d_model}"
            )
        x = batch.features
    x = np.ascontiguousarray(x, dtype=np.float32)
    if model.positional is not None:
        x = x + model.positional[:t]
    return x


def _attention(model: ModelGraph, blk: BlockWeights, h: np.ndarray,
               dropped_heads: list[int]) -> np.ndarray:
    b, t, d = h.shape
    nh, dh = model.n_heads, model.head_dim
    flat = np.ascontiguousarray(h.reshape(b * t, d))

    def heads_view(w):
        p = _kernels.matmul(flat, w)  # [B*T, D]
        return np.ascontiguousarray(
            p.reshape(b, t, nh, dh).transpose(0, 2, 1, 3).reshape(b * nh, t, dh)
        )

    q = heads_view(blk.wq)
    k = heads_view(blk.wk)
    v = heads_view(blk.wv)
    scores = _kernels.matmul_batched(q, np.ascontiguousarray(k.transpose(0, 2, 1)))
    scores = scores / np.float32(math.sqrt(dh))
    attn = _kernels.softmax_rows(
        np.ascontiguousarray(scores.reshape(b * nh * t, t)), 1.0
    ).reshape(b * nh, t, t)
    ctx = _kernels.matmul_batched(np.ascontiguousarray(attn), v)
    ctx = ctx.reshape(b, nh, t, dh).transpose(0, 2, 1, 3).copy()  # [B,T,H,dh]
    if dropped_heads:
        ctx[:, :, dropped_heads, :] = 0.0
    concat = np.ascontiguousarray(ctx.reshape(b * t, d))
    return _kernels.matmul(concat, blk.wo).reshape(b, t, d)


def _ffn(blk: BlockWeights, h: np.ndarray, dropped_neurons: list[int]):
    """Returns (hidden, ffn_out); hidden already has masked columns zeroed."""
    b, t, d = h.shape
    if blk.w1 is None:
        hidden = np.zeros((b, t, 0), dtype=np.float32)
        return hidden, np.zeros((b, t, d), dtype=np.float32)
    flat = np.ascontiguousarray(h.reshape(b * t, d))
    hidden = gelu(_kernels.matmul(flat, blk.w1))
    if dropped_neurons:
        # A zeroed W1 column gives pre-activation 0 and GELU(0) = 0, and the
        # matching W2 row is zeroed too, so zeroing the hidden column is the
        # exact joint masking.
        hidden[:, dropped_neurons] = 0.0
    out = _kernels.matmul(hidden, blk.w2).reshape(b, t, d)
    return hidden.reshape(b, t, -1), out


class _MergePlan:
    """Per-batch-element token merge: which positions drop, and which groups
    average into which destination."""

    def __init__(self, keep: list[np.ndarray], groups: list[dict[int, list[int]]],
                 t_out: int):
        self.keep = keep
        self.groups = groups
        self.t_out = t_out

    def apply(self, x: np.ndarray) -> np.ndarray:
        b = x.shape[0]
        out = np.empty((b, self.t_out, x.shape[2]), dtype=np.float32)
        for bi in range(b):
            merged = x[bi].astype(np.float64)
            for dst, srcs in self.groups[bi].items():
                merged[dst] = merged[[dst] + srcs].mean(axis=0)
            out[bi] = merged[self.keep[bi]].astype(np.float32)
        return out


def _merge_plan(ref: np.ndarray, r: int) -> _MergePlan:
    b, t, _ = ref.shape
    if r < 0 or r > (t - 1) // 2:
        raise ParameterError(f"merge count {r} outside 0..{(t - 1) // 2} for T={t}")
    a_pos = np.arange(1, t, 2)
    b_pos = np.arange(2, t, 2)
    keep: list[np.ndarray] = []
    groups: list[dict[int, list[int]]] = []
    for bi in range(b):
        toks = ref[bi].astype(np.float64)
        norms = np.linalg.norm(toks, axis=1)
        unit = toks / np.maximum(norms, 1e-12)[:, None]
        sim = unit[a_pos] @ unit[b_pos].T
        best = sim.max(axis=1)
        match = sim.argmax(axis=1)
        order = np.argsort(-best, kind="stable")[:r]
        drop = set()
        grp: dict[int, list[int]] = {}
        for ai in order:
            src = int(a_pos[ai])
            dst = int(b_pos[match[ai]])
            drop.add(src)
            grp.setdefault(dst, []).append(src)
        keep.append(np.array([p for p in range(t) if p not in drop], dtype=np.int64))
        groups.append(grp)
    return _MergePlan(keep, groups, t - r)


def bipartite_merge(f: np.ndarray, r: int) -> np.ndarray:
    """Merge ``r`` tokens of a [B,T,D] block by alternating-partition cosine
    matching; token 0 is never merged and output order is preserved."""
    f = np.ascontiguousarray(f, dtype=np.float32)
    if f.ndim != 3:
        raise ShapeError("bipartite_merge expects a rank-3 tensor")
    if r == 0:
        return f
    return _merge_plan(f, r).apply(f)


def random_prune_tokens(f: np.ndarray, r: int, seed: int) -> np.ndarray:
    """Uniformly drop ``r`` non-class tokens; deterministic under the seed."""
    f = np.ascontiguousarray(f, dtype=np.float32)
    if f.ndim != 3:
        raise ShapeError("random_prune_tokens expects a rank-3 tensor")
    t = f.shape[1]
    if r < 0 or r > t - 1:
        raise ParameterError(f"drop count {r} outside 0..{t - 1} for T={t}")
    if r == 0:
        return f
    rng = np.random.default_rng(seed)
    dropped = rng.choice(t - 1, size=r, replace=False) + 1
    keep = np.setdiff1d(np.arange(t), dropped)
    return f[:, keep, :]


def _pool(model: ModelGraph, x: np.ndarray) -> np.ndarray:
    if model.pooling == "first":
        return np.ascontiguousarray(x[:, 0, :])
    return np.ascontiguousarray(x.astype(np.float64).mean(axis=1).astype(np.float32))


def _run_blocks(model: ModelGraph, mask: PruneMask, tap: TapPoint,
                x: np.ndarray, start_block: int):
    """Run blocks start_block..N-1. Returns (features, block_inputs,
    final_hidden, counts) covering only the blocks actually run."""
    features: list[np.ndarray] = []
    block_inputs: list[np.ndarray] = []
    counts: list[int] = []
    for i in range(start_block, model.n_blocks):
        blk = model.blocks[i]
        block_inputs.append(x)
        h1 = layer_norm(x, blk.ln1_gamma, blk.ln1_beta)
        x = x + _attention(model, blk, h1, mask.dropped_heads(i, model.n_heads))
        h2 = layer_norm(x, blk.ln2_gamma, blk.ln2_beta)
        hidden, ffn_out = _ffn(blk, h2, mask.dropped_neurons(i, model.ffn_dims[i]))
        x = x + ffn_out
        if tap is TapPoint.FFN:
            feat = ffn_out
        elif tap is TapPoint.IM_DENSE:
            feat = hidden
        else:
            feat = x
        if mask.token_counts is not None:
            # Merge down to the scheduled count; one pass can merge at most
            # floor((T-1)/2) tokens, so large reductions take several passes.
            # The matching is computed on the block output and applied to the
            # captured feature as well.
            target = mask.token_counts[i]
            while x.shape[1] > target:
                t_cur = x.shape[1]
                r = min(t_cur - target, (t_cur - 1) // 2)
                if r == 0:
                    # two tokens left, one wanted: merging cannot pair the
                    # last non-class token, so it is dropped
                    x = np.ascontiguousarray(x[:, :1, :])
                    feat = np.ascontiguousarray(feat[:, :1, :])
                    continue
                plan = _merge_plan(x, r)
                x = plan.apply(x)
                feat = plan.apply(feat)
        features.append(feat)
        counts.append(x.shape[1])
    return features, block_inputs, x, counts


def forward(model: ModelGraph, batch: CalibrationBatch,
            mask: PruneMask | None = None,
            tap: TapPoint = TapPoint.FFN) -> ActivationTrace:
    """Masked forward pass capturing one feature per block plus logits."""
    if mask is None:
        mask = PruneMask.full(model)
    mask.validate(model, seq_len=batch.seq_len)
    x = _embed(model, batch)
    features, block_inputs, final, counts = _run_blocks(model, mask, tap, x, 0)
    logits = _kernels.matmul(_pool(model, final), model.classifier)
    return ActivationTrace(
        features=features, logits=logits, block_inputs=block_inputs,
        final_hidden=final, tap=tap,
        token_counts=counts if mask.token_counts is not None else None,
    )


def forward_from(model: ModelGraph, batch: CalibrationBatch, mask: PruneMask,
                 tap: TapPoint, start_block: int,
                 cached: ActivationTrace) -> ActivationTrace:
    """Same result as forward(), reusing the cached full-mask state up to
    ``start_block``. The mask may differ from the full mask only at or after
    ``start_block``."""
    mask.validate(model, seq_len=batch.seq_len)
    if cached.tap is not tap:
        raise MaskError("cached trace was captured at a different tap point")
    if len(cached.block_inputs) != model.n_blocks:
        raise MaskError("cached trace does not cover the full model")
    if cached.block_inputs[0].shape[:2] != (batch.batch_size, batch.seq_len):
        raise MaskError("cached trace does not match the batch")
    if mask.token_counts is not None:
        raise MaskError("forward_from does not support token schedules")
    if not mask.equal_before(model, start_block):
        raise MaskError("mask deviates before start_block; cache is invalid")
    if start_block == 0:
        return forward(model, batch, mask, tap)
    x = cached.block_inputs[start_block]
    tail_feats, tail_inputs, final, _ = _run_blocks(model, mask, tap, x, start_block)
    logits = _kernels.matmul(_pool(model, final), model.classifier)
    return ActivationTrace(
        features=list(cached.features[:start_block]) + tail_feats,
        logits=logits,
        block_inputs=list(cached.block_inputs[:start_block]) + tail_inputs,
        final_hidden=final, tap=tap,
    )


def forward_from_state(model: ModelGraph, mask: PruneMask, tap: TapPoint,
                       start_block: int, state: np.ndarray,
                       cached: ActivationTrace) -> ActivationTrace:
    """Replay blocks start_block..N-1 from an explicit hidden state (used for
    token-position masking, where the perturbation is injected into the
    stream rather than expressed as a head/neuron mask)."""
    tail_feats, _, final, _ = _run_blocks(model, mask, tap, state, start_block)
    logits = _kernels.matmul(_pool(model, final), model.classifier)
    return ActivationTrace(
        features=list(cached.features[:start_block]) + tail_feats,
        logits=logits, tap=tap,
    )
