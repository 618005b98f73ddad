"""Benchmark comparing the compiled and numpy kernel backends."""

import time

import numpy as np

from . import kernels

_CASES = [
    # (kernel, description, builder)
    ("matmul", "matmul 64x512 @ 512x512 f32",
     lambda rng: (rng.standard_normal((64, 512)).astype(np.float32),
                  rng.standard_normal((512, 512)).astype(np.float32))),
    ("matmul", "matmul 8x16 @ 16x16 f32",
     lambda rng: (rng.standard_normal((8, 16)).astype(np.float32),
                  rng.standard_normal((16, 16)).astype(np.float32))),
    ("softmax_rows", "softmax 128x128 f32",
     lambda rng: (rng.standard_normal((128, 128)).astype(np.float32),)),
    ("softmax_rows", "softmax 8x8 f32",
     lambda rng: (rng.standard_normal((8, 8)).astype(np.float32),)),
    ("layer_norm_rows", "layer_norm 64x512 f32",
     lambda rng: (rng.standard_normal((64, 512)).astype(np.float32),
                  np.ones((1, 512), dtype=np.float32),
                  np.zeros((1, 512), dtype=np.float32), 1e-5)),
    ("pairwise_sq_dists", "pairwise 400x2 f64",
     lambda rng: (rng.standard_normal((400, 2)),)),
    ("pairwise_sq_dists", "pairwise 200x512 f64",
     lambda rng: (rng.standard_normal((200, 512)),)),
]


def _time(fn, args, repeats: int) -> float:
    fn(*args)  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats


def run_benchmarks(repeats: int = 20) -> list[dict]:
    """Per-case mean seconds for every importable backend."""
    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    rows = []
    for kernel, desc, builder in _CASES:
        args = builder(rng)
        row = {"case": desc}
        for name, mod in backends.items():
            row[name] = _time(getattr(mod, kernel), args, repeats)
        rows.append(row)
    return rows


def format_table(rows: list[dict]) -> str:
    names = [k for k in rows[0] if k != "case"]
    width = max(len(r["case"]) for r in rows)
    header = "case".ljust(width) + "".join(f"  {n:>12}" for n in names)
    if len(names) == 2:
        header += f"  {'py/c speed':>12}"
    lines = [header, "-" * len(header)]
    for r in rows:
        line = r["case"].ljust(width)
        for n in names:
            line += f"  {r[n] * 1e6:>10.1f}us"
        if len(names) == 2:
            line += f"  {r['py'] / r['c']:>11.2f}x"
        lines.append(line)
    lines.append("")
    lines.append(f"active backend: {kernels.backend_name()}")
    return "\n".join(lines)
