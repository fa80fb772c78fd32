"""Dense float32 numeric substrate.

Tensors are C-contiguous float32 numpy arrays of rank 1..4. All reductions
accumulate in float64 (see _kernels). These five operations are the only
math primitives the rest of the engine builds on.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ParameterError, ShapeError

Tensor = np.ndarray

MAX_RANK = 4


def as_tensor(x, rank: int | None = None) -> Tensor:
    """Coerce to a C-contiguous float32 array and validate rank."""
    a = np.ascontiguousarray(x, dtype=np.float32)
    if not 1 <= a.ndim <= MAX_RANK:
        raise ShapeError(f"tensor rank must be 1..{MAX_RANK}, got {a.ndim}")
    if rank is not None and a.ndim != rank:
        raise ShapeError(f"expected rank-{rank} tensor, got rank {a.ndim}")
    return a


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product [m,k] x [k,n] -> [m,n]."""
    a = as_tensor(a, rank=2)
    b = as_tensor(b, rank=2)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    return _kernels.matmul(a, b)


def softmax_temp(logits: Tensor, t: float) -> Tensor:
    """Temperature softmax over each row of a [B,C] tensor.

    Rows are shifted by their max before exponentiation, so adding a
    constant to a row leaves the output unchanged.
    """
    if t <= 0:
        raise ParameterError(f"temperature must be > 0, got {t}")
    logits = as_tensor(logits, rank=2)
    return _kernels.softmax_rows(logits, float(t))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each trailing-D vector to mean 0 / variance 1, then scale
    and shift."""
    x = as_tensor(x)
    gamma = as_tensor(gamma, rank=1)
    beta = as_tensor(beta, rank=1)
    d = x.shape[-1]
    if gamma.shape[0] != d or beta.shape[0] != d:
        raise ShapeError(
            f"gamma/beta length {gamma.shape[0]}/{beta.shape[0]} does not "
            f"match last dim {d}"
        )
    flat = x.reshape(-1, d)
    out = _kernels.layer_norm(np.ascontiguousarray(flat), gamma, beta, float(eps))
    return out.reshape(x.shape)


def _flatten_rows(f: Tensor) -> Tensor:
    """[B,T,D] -> [B*T, D], batch-major."""
    b, t, d = f.shape
    return np.ascontiguousarray(f.reshape(b * t, d))


def gram(f: Tensor) -> Tensor:
    """Relational map of a [B,T,D] feature block: X X^T with X = [B*T, D]."""
    f = as_tensor(f, rank=3)
    x = _flatten_rows(f)
    return _kernels.matmul(x, np.ascontiguousarray(x.T))


def gram_diff_sq(fp: Tensor, f: Tensor, materialize: bool = False) -> float:
    """Squared Frobenius distance between the relational maps of two
    same-shape [B,T,D] feature blocks.

    The default path works in D x D space and never forms the (BT x BT)
    maps; ``materialize=True`` switches to the direct computation and exists
    only so tests can cross-check the identity.
    """
    fp = as_tensor(fp, rank=3)
    f = as_tensor(f, rank=3)
    if fp.shape != f.shape:
        raise ShapeError(f"shape mismatch: {fp.shape} vs {f.shape}")
    xp = _flatten_rows(fp)
    x = _flatten_rows(f)
    if materialize:
        a = xp.astype(np.float64)
        b = x.astype(np.float64)
        diff = a @ a.T - b @ b.T
        val = float((diff * diff).sum())
    else:
        val = _kernels.gram_diff_sq(xp, x)
    # Rounding can leave a tiny negative residue; importance must be >= 0.
    return val if val > 0.0 else 0.0
