"""Trajectory importance scoring.

A unit's importance is the perturbation its removal causes downstream: the
squared Frobenius distance between relational maps of base and masked layer
features, accumulated over a configurable layer range, plus a lambda-weighted
temperature-scaled KL divergence between base and masked logits. One masked
forward per unit, no gradients.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cnn import ChannelMask, CnnGraph, cnn_forward
from .errors import ParameterError, ShapeError
from .model import (
    ActivationTrace,
    CalibrationBatch,
    ModelGraph,
    PruneMask,
    TapPoint,
    forward,
    forward_from,
    forward_from_state,
)
from .tensor import gram_diff_sq

TRAJECTORY_RANGES = ("[i]", "[i+1]", "[i,N]", "[i+1,N]")
AGGREGATIONS = ("sum", "mean")
TASKS = ("language", "vision")

# Finite stand-in for "never prune this": keeps tables JSON-serializable
# while guaranteeing the class token loses every ascending-order comparison.
TOKEN_SENTINEL = 1e30

LAMBDA_DEFAULTS = {"language": 0.1, "vision": 0.01}


@dataclass
class ScoreConfig:
    task: str = "language"
    lam: float | None = None  # None -> per-task default
    temperature: float = 4.0
    aggregation: str = "sum"
    trajectory_range: str = "[i+1,N]"
    tap: TapPoint = TapPoint.FFN
    batch_size: int = 32

    def __post_init__(self):
        if self.task not in TASKS:
            raise ParameterError(f"unknown task {self.task!r}")
        if self.lam is not None and self.lam < 0:
            raise ParameterError("lambda must be >= 0")
        if self.temperature <= 0:
            raise ParameterError("temperature must be > 0")
        if self.aggregation not in AGGREGATIONS:
            raise ParameterError(f"unknown aggregation {self.aggregation!r}")
        if self.trajectory_range not in TRAJECTORY_RANGES:
            raise ParameterError(
                f"trajectory range must be one of {TRAJECTORY_RANGES}")
        if isinstance(self.tap, str):
            self.tap = TapPoint.parse(self.tap)

    @property
    def resolved_lambda(self) -> float:
        return LAMBDA_DEFAULTS[self.task] if self.lam is None else self.lam


@dataclass
class ImportanceTable:
    head_scores: list[list[float]]
    neuron_scores: list[list[float]]
    token_scores: list[list[float]] | None = None
    channel_scores: list[list[float]] | None = None

    def validate(self):
        for group in (self.head_scores, self.neuron_scores,
                      self.token_scores, self.channel_scores):
            if group is None:
                continue
            for row in group:
                for v in row:
                    if not (math.isfinite(v) and v >= 0):
                        raise ParameterError(f"importance entry {v} invalid")

    def to_dict(self) -> dict:
        out = {
            "schema": "importance-table/1",
            "head_scores": self.head_scores,
            "neuron_scores": self.neuron_scores,
        }
        if self.token_scores is not None:
            out["token_scores"] = self.token_scores
        if self.channel_scores is not None:
            out["channel_scores"] = self.channel_scores
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ImportanceTable":
        if d.get("schema") != "importance-table/1":
            raise ParameterError("not an importance-table/1 document")
        t = cls(
            head_scores=d.get("head_scores", []),
            neuron_scores=d.get("neuron_scores", []),
            token_scores=d.get("token_scores"),
            channel_scores=d.get("channel_scores"),
        )
        t.validate()
        return t


def md_loss(fp: np.ndarray, f: np.ndarray) -> float:
    """Relational-map distance between two same-shape feature blocks."""
    return gram_diff_sq(fp, f)


def kd_loss(base_logits: np.ndarray, masked_logits: np.ndarray, t: float) -> float:
    """T^2-scaled batch-mean KL(softmax(base/T) || softmax(masked/T))."""
    if t <= 0:
        raise ParameterError("temperature must be > 0")
    a = np.asarray(base_logits, dtype=np.float64)
    b = np.asarray(masked_logits, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"logit shapes differ: {a.shape} vs {b.shape}")

    def log_softmax(z):
        z = z / t
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    lp = log_softmax(a)
    lq = log_softmax(b)
    p = np.exp(lp)
    kl = (p * (lp - lq)).sum(axis=1).mean()
    return max(float(t * t * kl), 0.0)


def _trajectory_layers(block: int, n_blocks: int, rng: str) -> list[int]:
    if rng == "[i]":
        return [block]
    if rng == "[i+1]":
        return [block + 1] if block + 1 < n_blocks else []
    if rng == "[i,N]":
        return list(range(block, n_blocks))
    return list(range(block + 1, n_blocks))


def _aggregate(terms: list[float], aggregation: str) -> float:
    if not terms:
        return 0.0
    if aggregation == "mean":
        return sum(terms) / len(terms)
    return sum(terms)


def _single_unit_mask(model: ModelGraph, block: int, unit: int, kind: str) -> PruneMask:
    mask = PruneMask.full(model)
    if kind == "head":
        if not 0 <= unit < model.n_heads:
            raise ParameterError(f"head index {unit} out of range")
        mask.heads[block] = [h for h in mask.heads[block] if h != unit]
    elif kind == "neuron":
        if not 0 <= unit < model.ffn_dims[block]:
            raise ParameterError(f"neuron index {unit} out of range")
        mask.neurons[block] = [n for n in mask.neurons[block] if n != unit]
    else:
        raise ParameterError(f"unknown unit kind {kind!r}")
    return mask


def _unit_score_parts(model, batch, cache, block, unit, kind, cfg):
    mask = _single_unit_mask(model, block, unit, kind)
    trace = forward_from(model, batch, mask, cfg.tap, block, cache)
    layers = _trajectory_layers(block, model.n_blocks, cfg.trajectory_range)
    terms = [md_loss(trace.features[z], cache.features[z]) for z in layers]
    md = _aggregate(terms, cfg.aggregation)
    kd = kd_loss(cache.logits, trace.logits, cfg.temperature)
    return md, kd


def unit_importance(model: ModelGraph, batch: CalibrationBatch,
                    cache: ActivationTrace, block: int, unit: int, kind: str,
                    cfg: ScoreConfig) -> float:
    """Trajectory importance of one attention head or FFN neuron."""
    if not 0 <= block < model.n_blocks:
        raise ParameterError(f"block index {block} out of range")
    md, kd = _unit_score_parts(model, batch, cache, block, unit, kind, cfg)
    return md + cfg.resolved_lambda * kd


def _check_loss_magnitudes(md_vals: list[float], kd_vals: list[float]):
    """The two loss families are expected to sit 1-2 decades apart; outside
    that band the lambda weighting deserves a second look."""
    mean_md = float(np.mean(md_vals)) if md_vals else 0.0
    mean_kd = float(np.mean(kd_vals)) if kd_vals else 0.0
    if mean_md <= 0.0 or mean_kd <= 0.0:
        return
    gap = math.floor(math.log10(mean_md)) - math.floor(math.log10(mean_kd))
    if not 1 <= gap <= 2:
        warnings.warn(
            f"feature-map loss is 10^{gap} of the logit loss (mean "
            f"{mean_md:.3g} vs {mean_kd:.3g}); expected 10-100x larger. "
            "Consider adjusting --lambda.",
            stacklevel=3,
        )


def _worker_count() -> int:
    raw = os.environ.get("TRAJPRUNE_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def score_all(model: ModelGraph, batch: CalibrationBatch,
              cfg: ScoreConfig | None = None,
              with_tokens: bool = False) -> ImportanceTable:
    """Score every head and FFN neuron (and optionally every token position)
    against a baseline trace computed exactly once."""
    cfg = cfg or ScoreConfig()
    batch = batch.take(cfg.batch_size)
    cache = forward(model, batch, PruneMask.full(model), cfg.tap)

    jobs = []
    for i in range(model.n_blocks):
        for h in range(model.n_heads):
            jobs.append((i, h, "head"))
        for n in range(model.ffn_dims[i]):
            jobs.append((i, n, "neuron"))

    def run(job):
        i, u, kind = job
        return _unit_score_parts(model, batch, cache, i, u, kind, cfg)

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]

    lam = cfg.resolved_lambda
    head_scores = [[0.0] * model.n_heads for _ in range(model.n_blocks)]
    neuron_scores = [[0.0] * df for df in model.ffn_dims]
    for (i, u, kind), (md, kd) in zip(jobs, parts):
        score = md + lam * kd
        if kind == "head":
            head_scores[i][u] = score
        else:
            neuron_scores[i][u] = score
    _check_loss_magnitudes([p[0] for p in parts], [p[1] for p in parts])

    token_scores = None
    if with_tokens:
        token_scores = token_importance(model, batch, cfg, cache=cache)
    table = ImportanceTable(head_scores=head_scores, neuron_scores=neuron_scores,
                            token_scores=token_scores)
    table.validate()
    return table


def _token_md(fp: np.ndarray, f: np.ndarray) -> float:
    """Position-averaged inter-sample relational-map distance: one [B,B] map
    per token, compared between masked and base features."""
    a = np.asarray(fp, dtype=np.float64)
    b = np.asarray(f, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    ga = np.einsum("bjd,cjd->jbc", a, a)
    gb = np.einsum("bjd,cjd->jbc", b, b)
    diff = ga - gb
    return float((diff * diff).sum() / a.shape[1])


def token_importance(model: ModelGraph, batch: CalibrationBatch,
                     cfg: ScoreConfig | None = None,
                     cache: ActivationTrace | None = None) -> list[list[float]]:
    """Score each (block, token position) pair by zeroing the token's feature
    vector at that block's input and measuring the downstream trajectory.
    Position 0 (class token) gets a sentinel so it is never scheduled out."""
    cfg = cfg or ScoreConfig(task="vision")
    batch = batch.take(cfg.batch_size)
    if cache is None:
        cache = forward(model, batch, PruneMask.full(model), cfg.tap)
    full = PruneMask.full(model)
    t = batch.seq_len
    lam = cfg.resolved_lambda
    scores: list[list[float]] = []
    for i in range(model.n_blocks):
        row = [TOKEN_SENTINEL]
        for j in range(1, t):
            state = cache.block_inputs[i].copy()
            state[:, j, :] = 0.0
            trace = forward_from_state(model, full, cfg.tap, i, state, cache)
            layers = _trajectory_layers(i, model.n_blocks, cfg.trajectory_range)
            terms = [_token_md(trace.features[z], cache.features[z]) for z in layers]
            md = _aggregate(terms, cfg.aggregation)
            kd = kd_loss(cache.logits, trace.logits, cfg.temperature)
            row.append(md + lam * kd)
        scores.append(row)
    return scores


def _channel_md(fp: np.ndarray, f: np.ndarray) -> float:
    """Batch-summed map distance: features are summed over the batch axis and
    the squared Frobenius distance is scaled by 1/B."""
    a = np.asarray(fp, dtype=np.float64)
    b = np.asarray(f, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.sum(axis=0) - b.sum(axis=0)
    return float((diff * diff).sum() / a.shape[0])


def channel_importance(g: CnnGraph, batch: np.ndarray,
                       cfg: ScoreConfig | None = None) -> list[list[float]]:
    """Trajectory importance of each conv output channel."""
    cfg = cfg or ScoreConfig(task="vision")
    base = cnn_forward(g, batch)
    n = len(g.layers)
    lam = cfg.resolved_lambda
    scores: list[list[float]] = []
    for i, layer in enumerate(g.layers):
        row = []
        for c in range(layer.filters.shape[0]):
            mask = ChannelMask.full(g)
            mask.channels[i] = [x for x in mask.channels[i] if x != c]
            trace = cnn_forward(g, batch, mask)
            layers = _trajectory_layers(i, n, cfg.trajectory_range)
            terms = [_channel_md(trace.features[z], base.features[z])
                     for z in layers]
            md = _aggregate(terms, cfg.aggregation)
            kd = kd_loss(base.logits, trace.logits, cfg.temperature)
            row.append(md + lam * kd)
        scores.append(row)
    return scores
