"""Benchmark the compiled kernel extension against the numpy fallback.

Usage: python benchmarks/bench_kernels.py
The script re-executes itself once per backend (the backend is fixed at
import time) and prints a comparison table.
"""

import json
import os
import subprocess
import sys
import time


def timeit(fn, *args, repeat=50):
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def run_backend():
    import numpy as np

    from trajprune import _kernels, synth
    from trajprune.importance import ScoreConfig, score_all
    from trajprune.model import forward

    rng = np.random.default_rng(0)
    a = rng.normal(size=(128, 128)).astype(np.float32)
    b = rng.normal(size=(128, 128)).astype(np.float32)
    x = rng.normal(size=(256, 64)).astype(np.float32)
    g = rng.normal(size=64).astype(np.float32)
    fp = rng.normal(size=(96, 48)).astype(np.float32)
    f = rng.normal(size=(96, 48)).astype(np.float32)

    model = synth.toy_encoder(seed=1, n_blocks=4, n_heads=4, head_dim=16,
                              ffn_dim=128, n_classes=8, max_seq=64)
    batch = synth.toy_batch(seed=2, model=model, batch_size=8, seq_len=32)

    import warnings
    warnings.filterwarnings("ignore")
    results = {
        "backend": _kernels.BACKEND,
        "matmul 128x128x128": timeit(_kernels.matmul, a, b),
        "softmax 256x64": timeit(_kernels.softmax_rows, x, 4.0),
        "layer_norm 256x64": timeit(_kernels.layer_norm, x, g, g, 1e-5),
        "gram_diff_sq 96x48": timeit(_kernels.gram_diff_sq, fp, f),
        "forward 4-block": timeit(lambda: forward(model, batch), repeat=10),
        "score_all 4-block": timeit(
            lambda: score_all(model, batch, ScoreConfig(batch_size=8)), repeat=2),
    }
    print(json.dumps(results))


def main():
    if "--backend" in sys.argv:
        run_backend()
        return
    rows = []
    for backend in ("ext", "numpy"):
        env = dict(os.environ, TRAJPRUNE_BACKEND=backend)
        proc = subprocess.run([sys.executable, __file__, "--backend"],
                              capture_output=True, env=env, text=True)
        if proc.returncode != 0:
            print(f"{backend}: failed\n{proc.stderr}", file=sys.stderr)
            continue
        rows.append(json.loads(proc.stdout.strip().splitlines()[-1]))
    if not rows:
        sys.exit(1)
    keys = [k for k in rows[0] if k != "backend"]
    width = max(len(k) for k in keys) + 2
    header = "kernel".ljust(width) + "".join(r["backend"].rjust(14) for r in rows)
    if len(rows) == 2:
        header += "ext/numpy".rjust(12)
    print(header)
    print("-" * len(header))
    for k in keys:
        line = k.ljust(width)
        for r in rows:
            line += f"{r[k] * 1e6:12.1f}us"
        if len(rows) == 2 and rows[1][k]:
            line += f"{rows[0][k] / rows[1][k]:11.2f}x"
        print(line)


if __name__ == "__main__":
    main()
