"""Backend selection for the numeric kernels.

Two interchangeable implementations exist: a numpy backend (matmuls hit
BLAS) and a compiled Cython extension. Benchmarks (benchmarks/
bench_kernels.py) show BLAS wins the matmul-dominated engine paths, so numpy
is the default; TRAJPRUNE_BACKEND=ext opts into the compiled core (it also
serves as an independent implementation the test suite runs against), and
TRAJPRUNE_BACKEND=numpy forces the default explicitly.
"""

import os

from . import fallback as _numpy_backend

_choice = os.environ.get("TRAJPRUNE_BACKEND", "numpy").strip().lower()

if _choice == "ext":
    try:
        from . import _ext as _impl
    except ImportError:
        raise ImportError(
            "TRAJPRUNE_BACKEND=ext but the compiled kernel extension is "
            "not built; run `pip install -e . --no-build-isolation`"
        ) from None
elif _choice == "numpy":
    _impl = _numpy_backend
else:
    raise ImportError(f"unknown TRAJPRUNE_BACKEND {_choice!r} (want ext|numpy)")

BACKEND = _impl.NAME
matmul = _impl.matmul
matmul_batched = _impl.matmul_batched
softmax_rows = _impl.softmax_rows
layer_norm = _impl.layer_norm
gram_diff_sq = _impl.gram_diff_sq

__all__ = [
    "BACKEND",
    "matmul",
    "matmul_batched",
    "softmax_rows",
    "layer_norm",
    "gram_diff_sq",
]
