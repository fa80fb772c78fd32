"""Budgeted mask search and token-schedule derivation.

Three-phase pipeline: pick attention heads, rank-fill FFN neurons, and only
then (if a FLOPs gap remains) remove tokens in ascending importance order.
Heads and neurons are never revisited once the token phase starts.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .cost import CnnCostModel, CostModel
from .errors import InfeasibleBudgetError, ParameterError, ScheduleError
from .importance import ImportanceTable
from .cnn import ChannelMask
from .model import ModelGraph, PruneMask


@dataclass
class SearchResult:
    mask: PruneMask
    cumulative_importance: float
    achieved_flops: int
    step_log: list[tuple[int, int, float]] = field(default_factory=list)
    # (kept heads, kept neurons, cumulative importance) per search step


def _head_order(table: ImportanceTable) -> list[tuple[int, int]]:
    """Global descending head order with one twist: each block's best head
    comes first so every prefix of length >= n_blocks covers every block.
    By an exchange argument the prefix of length k is then the best legal
    k-subset, so the per-step optimality of the partitioned search holds."""
    n_blocks = len(table.head_scores)
    anchors = []
    rest = []
    for i, row in enumerate(table.head_scores):
        best = min(range(len(row)), key=lambda h: (-row[h], h))
        anchors.append((-row[best], i, best))
        for h in range(len(row)):
            if h != best:
                rest.append((-row[h], i, h))
    anchors.sort()
    rest.sort()
    return [(i, h) for _, i, h in anchors + rest]


def _neuron_order(table: ImportanceTable) -> list[tuple[int, int]]:
    units = []
    for i, row in enumerate(table.neuron_scores):
        for n, s in enumerate(row):
            units.append((-s, i, n))
    units.sort()
    return [(i, n) for _, i, n in units]


def _mask_from_units(n_blocks: int, heads, neurons) -> PruneMask:
    m = PruneMask(heads=[[] for _ in range(n_blocks)],
                  neurons=[[] for _ in range(n_blocks)])
    for i, h in heads:
        m.heads[i].append(h)
    for i, n in neurons:
        m.neurons[i].append(n)
    for i in range(n_blocks):
        m.heads[i].sort()
        m.neurons[i].sort()
    return m


def mask_search(table: ImportanceTable, cost: CostModel, budget: int) -> SearchResult:
    """Partitioned greedy search: for each head count k, keep the k best
    heads (each block covered), fill with the longest affordable prefix of
    rank-ordered neurons, and return the step with maximum cumulative
    importance. Ties prefer fewer heads."""
    n_blocks = cost.model.n_blocks
    if budget < cost.minimal_mask_flops():
        raise InfeasibleBudgetError(
            f"budget {budget} below minimal mask cost {cost.minimal_mask_flops()}")
    heads = _head_order(table)
    neurons = _neuron_order(table)
    t_in = cost.entering_counts(PruneMask.full(cost.model))

    best: SearchResult | None = None
    log: list[tuple[int, int, float]] = []
    for k in range(n_blocks, len(heads) + 1):
        kept_heads = heads[:k]
        base = cost.flops(_mask_from_units(n_blocks, kept_heads, []))
        if base > budget:
            break  # larger k only costs more
        cum = sum(table.head_scores[i][h] for i, h in kept_heads)
        rem = budget - base
        kept_neurons = []
        for i, n in neurons:
            c = cost.neuron_unit(t_in[i])
            if c > rem:
                break
            rem -= c
            cum += table.neuron_scores[i][n]
            kept_neurons.append((i, n))
        log.append((k, len(kept_neurons), cum))
        if best is None or cum > best.cumulative_importance:
            mask = _mask_from_units(n_blocks, kept_heads, kept_neurons)
            best = SearchResult(mask=mask, cumulative_importance=cum,
                                achieved_flops=cost.flops(mask))
    if best is None:
        raise InfeasibleBudgetError("no feasible step under the budget")
    best.step_log = log
    return best


def brute_force_oracle(table: ImportanceTable, cost: CostModel, budget: int,
                       mode: str = "partition") -> SearchResult:
    """Reference searches for testing.

    mode="partition": independently enumerate the same (head count, neuron
    prefix) space as mask_search and return its maximum.
    mode="subsets": enumerate every legal head subset (>=1 per block) and
    solve neurons exactly; tiny instances only. Reports the true optimum of
    the unpartitioned space.
    """
    n_blocks = cost.model.n_blocks
    t_in = cost.entering_counts(PruneMask.full(cost.model))
    fixed = sum(cost.block_overhead(t_in[i], i) for i in range(n_blocks))
    fixed += cost.model_overhead(cost.seq_len)

    if mode == "partition":
        heads = _head_order(table)
        neurons = _neuron_order(table)
        best = None
        for k in range(n_blocks, len(heads) + 1):
            kept_heads = heads[:k]
            used = fixed + sum(cost.head_unit(t_in[i]) for i, _ in kept_heads)
            if used > budget:
                continue
            cum = sum(table.head_scores[i][h] for i, h in kept_heads)
            kept_neurons = []
            for i, n in neurons:
                c = cost.neuron_unit(t_in[i])
                if used + c > budget:
                    break
                used += c
                cum += table.neuron_scores[i][n]
                kept_neurons.append((i, n))
            if best is None or cum > best[0]:
                best = (cum, kept_heads, kept_neurons)
        if best is None:
            raise InfeasibleBudgetError("no feasible step under the budget")
        cum, kept_heads, kept_neurons = best
        mask = _mask_from_units(n_blocks, kept_heads, kept_neurons)
        return SearchResult(mask=mask, cumulative_importance=cum,
                            achieved_flops=cost.flops(mask))

    if mode != "subsets":
        raise ParameterError(f"unknown oracle mode {mode!r}")

    total_units = sum(len(r) for r in table.head_scores)
    total_units += sum(len(r) for r in table.neuron_scores)
    if total_units > 24:
        raise ParameterError("instance too large for full-subset enumeration")
    unit_costs = {cost.neuron_unit(t_in[i]) for i in range(n_blocks)}
    if len(unit_costs) != 1:
        raise ParameterError("subset oracle assumes uniform neuron cost")
    neuron_cost = unit_costs.pop()

    all_neurons = sorted(
        ((table.neuron_scores[i][n], i, n)
         for i in range(n_blocks) for n in range(len(table.neuron_scores[i]))),
        reverse=True)
    prefix = np.cumsum([0.0] + [s for s, _, _ in all_neurons])

    per_block = []
    for i, row in enumerate(table.head_scores):
        subsets = []
        for r in range(1, len(row) + 1):
            subsets.extend(itertools.combinations(range(len(row)), r))
        per_block.append([(i, sub) for sub in subsets])

    best = None
    for combo in itertools.product(*per_block):
        kept_heads = [(i, h) for i, sub in combo for h in sub]
        used = fixed + sum(cost.head_unit(t_in[i]) for i, _ in kept_heads)
        if used > budget:
            continue
        cum = sum(table.head_scores[i][h] for i, h in kept_heads)
        m = min((budget - used) // neuron_cost, len(all_neurons)) if neuron_cost else len(all_neurons)
        value = cum + float(prefix[int(m)])
        if best is None or value > best[0]:
            kept_neurons = [(i, n) for _, i, n in all_neurons[:int(m)]]
            best = (value, kept_heads, kept_neurons)
    if best is None:
        raise InfeasibleBudgetError("no feasible subset under the budget")
    value, kept_heads, kept_neurons = best
    mask = _mask_from_units(n_blocks, kept_heads, kept_neurons)
    return SearchResult(mask=mask, cumulative_importance=value,
                        achieved_flops=cost.flops(mask))


def token_schedule_steps(token_scores: list[list[float]], cost: CostModel,
                         model: ModelGraph, mask: PruneMask,
                         budget: int) -> tuple[list[int], list[tuple[int, int, int]]]:
    """token_schedule plus the acceptance trace: each step is
    (token, new exit block, previous exit block)."""
    n = model.n_blocks
    t = cost.seq_len
    if mask.token_counts is not None:
        raise ParameterError("mask already carries a token schedule")
    counts = [t] * n

    def flops_with(c):
        trial = PruneMask(heads=mask.heads, neurons=mask.neurons, token_counts=c)
        return cost.flops(trial)

    steps: list[tuple[int, int, int]] = []
    if flops_with(counts) <= budget:
        return counts, steps

    units = sorted(
        ((token_scores[i][j], i, j) for i in range(n)
         for j in range(1, len(token_scores[i]))),
    )
    exits = {j: n for j in range(1, t)}  # n = survives every block
    for _, i, j in units:
        if i >= exits[j]:
            continue  # token already gone by this block
        steps.append((j, i, exits[j]))
        for z in range(i, exits[j]):
            counts[z] -= 1
        exits[j] = i
        if flops_with(counts) <= budget:
            return counts, steps
    raise ScheduleError(
        f"budget {budget} unreachable even at the minimum token schedule")


def token_schedule(token_scores: list[list[float]], cost: CostModel,
                   model: ModelGraph, mask: PruneMask, budget: int) -> list[int]:
    """Close a remaining FLOPs gap by removing (block, token) units in
    ascending importance order. Accepting unit (i, j) makes token j exit
    after block i, shrinking the population of every later block; a cheaper
    later unit for the same token can only move its exit earlier. The class
    token is protected by its sentinel score. Ties prefer the earliest block
    (largest saving per unit of importance given up), then the lowest token
    index."""
    counts, _ = token_schedule_steps(token_scores, cost, model, mask, budget)
    return counts


def channel_search(channel_scores: list[list[float]], cost: CnnCostModel,
                   budget: int) -> ChannelMask:
    """Greedy CNN variant: drop output channels in ascending importance until
    the budget is met, never emptying a layer."""
    mask = ChannelMask.full(cost.graph)
    if cost.flops(mask) <= budget:
        return mask
    units = sorted(
        ((channel_scores[i][c], i, c)
         for i in range(len(channel_scores))
         for c in range(len(channel_scores[i]))),
    )
    for _, i, c in units:
        if len(mask.channels[i]) <= 1:
            continue
        mask.channels[i] = [x for x in mask.channels[i] if x != c]
        if cost.flops(mask) <= budget:
            return mask
    raise InfeasibleBudgetError(
        f"budget {budget} below the one-channel-per-layer floor")
