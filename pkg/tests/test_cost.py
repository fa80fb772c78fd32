import numpy as np
import pytest

from trajprune import synth
from trajprune.cnn import ChannelMask
from trajprune.cost import CnnCostModel, CostModel
from trajprune.errors import ParameterError
from trajprune.model import PruneMask

from oracles import instrumented_flops


def random_mask(model, rng, with_counts=False, seq_len=10):
    mask = PruneMask.full(model)
    for i in range(model.n_blocks):
        kh = int(rng.integers(1, model.n_heads + 1))
        mask.heads[i] = sorted(rng.choice(model.n_heads, size=kh, replace=False).tolist())
        kn = int(rng.integers(0, model.ffn_dims[i] + 1))
        mask.neurons[i] = sorted(rng.choice(model.ffn_dims[i], size=kn, replace=False).tolist())
    if with_counts:
        counts = []
        prev = seq_len
        for _ in range(model.n_blocks):
            prev = int(rng.integers(max(1, prev - 3), prev + 1))
            counts.append(prev)
        mask.token_counts = counts
    return mask


class TestFlops:
    def test_full_mask_is_baseline(self, tiny_model):
        cost = CostModel(tiny_model, seq_len=10)
        assert cost.flops(PruneMask.full(tiny_model)) == cost.baseline

    def test_empty_neurons_linear_decomposition(self, tiny_model):
        cost = CostModel(tiny_model, seq_len=10)
        mask = PruneMask.full(tiny_model)
        for i in range(tiny_model.n_blocks):
            mask.neurons[i] = []
        assert cost.flops(mask) == cost.baseline - sum(
            df * 4 * 10 * tiny_model.d_model for df in tiny_model.ffn_dims)

    @pytest.mark.parametrize("pooling", ["first", "mean"])
    def test_matches_instrumented_counter(self, pooling):
        model = synth.toy_encoder(seed=5, n_blocks=3, n_heads=4, head_dim=4,
                                  ffn_dim=12, n_classes=5, pooling=pooling)
        cost = CostModel(model, seq_len=9)
        rng = np.random.default_rng(17)
        for _ in range(20):
            mask = random_mask(model, rng, with_counts=bool(rng.integers(0, 2)),
                               seq_len=9)
            assert cost.flops(mask) == instrumented_flops(model, mask, 9)

    def test_monotonicity_adding_any_unit(self, tiny_model):
        cost = CostModel(tiny_model, seq_len=8)
        rng = np.random.default_rng(3)
        mask = random_mask(tiny_model, rng)
        f0 = cost.flops(mask)
        for i in range(tiny_model.n_blocks):
            for h in range(tiny_model.n_heads):
                if h not in mask.heads[i]:
                    grown = PruneMask(
                        heads=[sorted(r + [h]) if z == i else list(r)
                               for z, r in enumerate(mask.heads)],
                        neurons=[list(r) for r in mask.neurons])
                    assert cost.flops(grown) > f0
            for n in range(tiny_model.ffn_dims[i]):
                if n not in mask.neurons[i]:
                    grown = PruneMask(
                        heads=[list(r) for r in mask.heads],
                        neurons=[sorted(r + [n]) if z == i else list(r)
                                 for z, r in enumerate(mask.neurons)])
                    assert cost.flops(grown) > f0

    def test_additivity_unit_cost(self, tiny_model):
        cost = CostModel(tiny_model, seq_len=8)
        mask = PruneMask.full(tiny_model)
        less = PruneMask.full(tiny_model)
        less.heads[1] = less.heads[1][:-1]
        assert cost.flops(mask) - cost.flops(less) == cost.head_unit(8)
        less2 = PruneMask.full(tiny_model)
        less2.neurons[0] = less2.neurons[0][:-1]
        assert cost.flops(mask) - cost.flops(less2) == cost.neuron_unit(8)


class TestBudget:
    def test_ratio_one_is_baseline(self, tiny_model):
        cost = CostModel(tiny_model, seq_len=10)
        assert cost.budget_from_ratio(1.0) == cost.baseline

    def test_floor_semantics(self, tiny_model):
        cost = CostModel(tiny_model, seq_len=10)
        assert cost.budget_from_ratio(0.6) == int(0.6 * cost.baseline)

    def test_ratio_out_of_range(self, tiny_model):
        cost = CostModel(tiny_model, seq_len=10)
        for bad in (0.0, -0.1, 1.01):
            with pytest.raises(ParameterError):
                cost.budget_from_ratio(bad)

    def test_published_deit_style_ratio(self):
        # A model shaped like the small vision baseline: pruning it to 70.3%
        # keep leaves budget/baseline at 0.700 after rounding to two digits,
        # matching the published 0.91/1.3 reduction pair.
        model = synth.toy_encoder(seed=1, n_blocks=12, n_heads=3, head_dim=8,
                                  ffn_dim=96, n_classes=10, max_seq=64)
        cost = CostModel(model, seq_len=64)
        budget = cost.budget_from_ratio(0.703)
        assert budget / cost.baseline == pytest.approx(0.703, abs=1e-6)
        assert round(budget / cost.baseline, 2) == 0.70


class TestCnnCost:
    def test_full_mask_baseline_and_monotone(self):
        g = synth.toy_cnn(seed=2, channels=(4, 6))
        cost = CnnCostModel(g, input_hw=(8, 8))
        full = ChannelMask.full(g)
        assert cost.flops(full) == cost.baseline
        smaller = ChannelMask.full(g)
        smaller.channels[0] = smaller.channels[0][:-1]
        assert cost.flops(smaller) < cost.baseline
