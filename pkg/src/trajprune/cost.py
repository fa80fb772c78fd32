"""FLOPs cost model: the constraint side of the budgeted mask search.

Counting convention (documented so ratios stay counter-invariant):
multiply-accumulate = 2 FLOPs; softmax/LayerNorm/GELU = 5 FLOPs per element;
plain adds (residuals, pooling sums) = 1 FLOP per element. Elementwise
overhead is charged at architectural width because the masked engine still
executes those ops full-width; only multiply-accumulate work scales with the
mask, which keeps per-unit costs exactly additive. Counts are per sequence
(the batch dimension is excluded) and the embedding lookup is excluded.
"""

from __future__ import annotations

from .cnn import ChannelMask, CnnGraph
from .errors import MaskError, ParameterError
from .model import ModelGraph, PruneMask


class CostModel:
    """FLOPs of a masked encoder at a fixed calibration sequence length."""

    def __init__(self, model: ModelGraph, seq_len: int):
        if seq_len < 1:
            raise ParameterError("seq_len must be >= 1")
        self.model = model
        self.seq_len = int(seq_len)
        self._baseline = self.flops(PruneMask.full(model))

    def head_unit(self, t: int) -> int:
        d, dh = self.model.d_model, self.model.head_dim
        return 2 * t * d * dh * 4 + 2 * t * t * dh * 2

    def neuron_unit(self, t: int) -> int:
        return 4 * t * self.model.d_model

    def block_overhead(self, t: int, block: int) -> int:
        d = self.model.d_model
        df = self.model.ffn_dims[block]
        h = self.model.n_heads
        return (5 * t * d          # LN before attention
                + 5 * h * t * t    # attention softmax
                + t * d            # attention residual
                + 5 * t * d        # LN before FFN
                + 5 * t * df       # GELU
                + t * d)           # FFN residual

    def model_overhead(self, t_final: int) -> int:
        d = self.model.d_model
        out = 2 * d * self.model.n_classes
        if self.model.pooling == "mean":
            out += t_final * d + d
        return out

    def entering_counts(self, mask: PruneMask) -> list[int]:
        """Token count seen by each block (schedule shifts counts by one:
        counts[i] is the population *after* block i)."""
        n = self.model.n_blocks
        if mask.token_counts is None:
            return [self.seq_len] * n
        return [self.seq_len] + list(mask.token_counts[: n - 1])

    def flops(self, mask: PruneMask) -> int:
        mask.validate(self.model, seq_len=self.seq_len)
        total = 0
        t_in = self.entering_counts(mask)
        for i in range(self.model.n_blocks):
            t = t_in[i]
            total += len(mask.heads[i]) * self.head_unit(t)
            total += len(mask.neurons[i]) * self.neuron_unit(t)
            total += self.block_overhead(t, i)
        t_final = (self.seq_len if mask.token_counts is None
                   else mask.token_counts[-1])
        total += self.model_overhead(t_final)
        return total

    @property
    def baseline(self) -> int:
        return self._baseline

    def budget_from_ratio(self, keep_ratio: float) -> int:
        if not 0.0 < keep_ratio <= 1.0:
            raise ParameterError(f"keep ratio must be in (0,1], got {keep_ratio}")
        return int(keep_ratio * self._baseline)

    def minimal_mask_flops(self) -> int:
        """Cost of the smallest legal mask: one head per block, no neurons."""
        m = PruneMask(heads=[[0]] * self.model.n_blocks,
                      neurons=[[] for _ in range(self.model.n_blocks)])
        return self.flops(m)


def flops(model: ModelGraph, mask: PruneMask, seq_len: int) -> int:
    return CostModel(model, seq_len).flops(mask)


def budget_from_ratio(model: ModelGraph, keep_ratio: float, seq_len: int) -> int:
    return CostModel(model, seq_len).budget_from_ratio(keep_ratio)


class CnnCostModel:
    """FLOPs of a channel-masked CNN for a fixed input resolution.

    Layer work depends on the kept channels of both the producing and the
    consuming side, so per-channel costs are not globally additive; the model
    recomputes the whole network per mask instead of pricing units.
    """

    def __init__(self, g: CnnGraph, input_hw: tuple[int, int]):
        self.graph = g
        self.input_hw = (int(input_hw[0]), int(input_hw[1]))
        self._baseline = self.flops(ChannelMask.full(g))

    def flops(self, mask: ChannelMask) -> int:
        mask.validate(self.graph)
        h, w = self.input_hw
        total = 0
        c_in_kept = self.graph.layers[0].filters.shape[1]
        for i, layer in enumerate(self.graph.layers):
            k = layer.filters.shape[2]
            s, p = layer.stride, layer.pad
            h_out = (h + 2 * p - k) // s + 1
            w_out = (w + 2 * p - k) // s + 1
            if h_out < 1 or w_out < 1:
                raise MaskError("input resolution too small for this network")
            kept = len(mask.channels[i])
            total += 2 * h_out * w_out * kept * c_in_kept * k * k  # conv MACs
            total += 2 * h_out * w_out * kept                      # affine
            total += h_out * w_out * kept                          # ReLU
            h, w = h_out, w_out
            if layer.pool == 2:
                h, w = h // 2, w // 2
                total += h * w * kept * 4                          # window max
            c_in_kept = kept
        total += h * w * c_in_kept + c_in_kept                     # global avg pool
        total += 2 * self.graph.classifier.shape[0] * self.graph.n_classes
        return total

    @property
    def baseline(self) -> int:
        return self._baseline

    def budget_from_ratio(self, keep_ratio: float) -> int:
        if not 0.0 < keep_ratio <= 1.0:
            raise ParameterError(f"keep ratio must be in (0,1], got {keep_ratio}")
        return int(keep_ratio * self._baseline)
