"""trajprune: one-shot, retraining-free structured pruning for transformer
encoders and small CNNs.

Each prunable unit (attention head, FFN neuron, token position, conv
channel) is scored by the perturbation its removal induces in all downstream
layer embeddings and the output logits; a greedy partitioned search then
selects the highest-importance mask that fits a FLOPs budget, optionally
followed by a per-layer token-reduction schedule.
"""

from ._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
