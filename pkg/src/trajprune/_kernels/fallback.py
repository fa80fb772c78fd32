"""numpy implementations of the hot kernels.

Selected when the compiled extension is unavailable (or forced via
TRAJPRUNE_BACKEND=numpy). Inputs are C-contiguous float32 arrays; every
kernel accumulates in float64 and casts the result back to float32, matching
the compiled backend's accumulation discipline.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


def matmul_batched(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # [n,m,k] @ [n,k,j] -> [n,m,j]
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


def softmax_rows(x: np.ndarray, t: float) -> np.ndarray:
    z = x.astype(np.float64) / t
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True)).astype(np.float32)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float) -> np.ndarray:
    z = x.astype(np.float64)
    mu = z.mean(axis=1, keepdims=True)
    var = z.var(axis=1, keepdims=True)
    out = (z - mu) / np.sqrt(var + eps)
    out = out * gamma.astype(np.float64) + beta.astype(np.float64)
    return out.astype(np.float32)


def gram_diff_sq(xp: np.ndarray, x: np.ndarray) -> float:
    # ||A A^T - B B^T||_F^2 via the DxD identity; the (rows x rows) Gram
    # matrix is never formed.
    a = xp.astype(np.float64)
    b = x.astype(np.float64)
    ata = a.T @ a
    btb = b.T @ b
    bta = b.T @ a
    return float((ata * ata).sum() - 2.0 * (bta * bta).sum() + (btb * btb).sum())
