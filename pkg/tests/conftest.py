import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from trajprune import synth


@pytest.fixture(scope="session")
def tiny_model():
    """Fixed 2-block toy encoder shared across suites."""
    return synth.toy_encoder(seed=7, n_blocks=2, n_heads=4, head_dim=8,
                             ffn_dim=16, n_classes=4, spread=0.5)


@pytest.fixture(scope="session")
def tiny_batch(tiny_model):
    return synth.toy_batch(seed=11, model=tiny_model, batch_size=4, seq_len=10)
