"""Wall-clock timing of the hot kernels for every available backend."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import kernels, scorer, sorter

HEADER = "backend,op,n,seconds"


def _best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(k, n: int, rng: np.random.Generator):
    """Callables for one backend module ``k`` at size ``n``."""
    a = np.full(n, 1.0 / n)
    s = rng.random(n)
    cost = np.ascontiguousarray(sorter.build_cost(s).value)
    K = np.exp(-cost / 0.1)
    feats = rng.normal(size=(n, 256))
    pts = rng.normal(size=(n, 3))
    dg = rng.normal(size=(n, n))
    us, vs, _ = k.sinkhorn_scaling(K, a, a, 200, 0.0)
    fs, gs, _ = k.sinkhorn_log(cost, 1e-3, a, a, 200, 0.0)
    g = ad.maxpool_cols(feats)
    return {
        # tol=0 forces the full iteration budget so sizes are comparable
        "sinkhorn_forward": lambda: k.sinkhorn_scaling(K, a, a, 200, 0.0),
        "sinkhorn_backward": lambda: k.sinkhorn_scaling_backward(K, us, vs, a, a, dg),
        "sinkhorn_log_forward": lambda: k.sinkhorn_log(cost, 1e-3, a, a, 200, 0.0),
        "sinkhorn_log_backward": lambda: k.sinkhorn_log_backward(cost, 1e-3, fs, gs, dg),
        "score_exact": lambda: k.argmax_counts(feats),
        "score_soft": lambda: scorer.score_soft(feats, g, 0.5),
        "fps": lambda: k.fps_order(pts, min(n, 64), 0),
        "nn_sqdist": lambda: k.nn_sqdist(pts, pts),
    }


def run(sizes=(32, 64, 128, 256, 512), repeats: int = 3, seed: int = 0, backends=None) -> list[tuple[str, str, int, float]]:
    """Rows ``(backend, op, n, best seconds)`` for every backend, op and size."""
    mods = kernels.available_backends()
    names = sorted(mods) if backends is None else list(backends)
    rows = []
    for name in names:
        for n in sizes:
            rng = np.random.default_rng([seed, n])
            for op, fn in _cases(mods[name], int(n), rng).items():
                rows.append((name, op, int(n), _best_of(fn, repeats)))
    return rows


def to_csv(rows) -> str:
    return HEADER + "\n" + "".join(f"{b},{op},{n},{t:.6e}\n" for b, op, n, t in rows)


def write_csv(rows, path) -> Path:
    path = Path(path)
    path.write_text(to_csv(rows))
    return path


def speedups(rows) -> dict[tuple[str, int], float]:
    """``python / cython`` time ratio per ``(op, n)`` where both were measured."""
    t = {(b, op, n): s for b, op, n, s in rows}
    return {
        (op, n): t[("python", op, n)] / t[("cython", op, n)]
        for (b, op, n) in t
        if b == "cython" and ("python", op, n) in t and t[("cython", op, n)] > 0
    }
