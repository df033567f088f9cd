"""Differentiable sorting of scores by entropic optimal transport.

Scores are rescaled onto rank targets (highest score -> 1, lowest -> N),
the squared distance to each rank ``1..N`` forms the cost, and Sinkhorn
iterations produce a transport plan with uniform ``1/N`` marginals.  Scaling
the plan by ``N`` gives a doubly-stochastic soft permutation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Node
from .errors import ConvergenceWarning, DimensionError, InputError, ParameterError, ParseError

LOG_DOMAIN_BELOW = 1e-2


@dataclass
class SinkhornConfig:
    epsilon: float = 0.1
    max_iters: int = 200
    tol: float = 1e-6
    anneal_eps: float | None = 1e-3

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not self.tol > 0:
            raise ParameterError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.anneal_eps is not None and not self.anneal_eps > 0:
            raise ParameterError(f"anneal_eps must be positive, got {self.anneal_eps}")


@dataclass
class SinkhornStats:
    iters: int
    violation: float
    log_domain: bool


@dataclass
class Ordering:
    """Real-valued ranks ``gamma`` and the integer ranks they round to.

    ``hard_ranks[i]`` is the 1-based rank of point ``i``; rank 1 is the most
    important point.
    """

    gamma: np.ndarray
    hard_ranks: np.ndarray

    @property
    def order(self) -> np.ndarray:
        """Point indices sorted from rank 1 to rank N."""
        return np.argsort(self.hard_ranks, kind="stable")

    def top(self, n: int) -> np.ndarray:
        return self.order[:n]


def _as_scores(s) -> Node:
    if not isinstance(s, Node) and not np.all(np.isfinite(np.asarray(s, dtype=np.float64))):
        raise InputError("scores contain non-finite values")
    s = ad.as_node(s)
    if s.rows == 1 and s.cols > 1:
        s = ad.transpose(s)
    if s.cols != 1:
        raise DimensionError(f"scores must be a vector, got shape {s.shape}")
    if not np.all(np.isfinite(s.value)):
        raise InputError("scores contain non-finite values")
    return s


def rank_targets(s) -> Node:
    """Map scores linearly onto ``[1, N]`` with the highest score at 1."""
    s = _as_scores(s)
    n = s.rows
    hi = float(s.value.max())
    lo = float(s.value.min())
    if n == 1:
        return ad.Node(np.ones((1, 1)))
    if hi == lo:
        return ad.Node(np.full((n, 1), (n + 1) / 2.0))
    smax = ad.maxpool_cols(s)
    smin = ad.scale(ad.maxpool_cols(ad.scale(s, -1.0)), -1.0)
    frac = ad.div(ad.sub(smax, s), ad.sub(smax, smin))
    return ad.add(ad.scale(frac, n - 1), 1.0)


def build_cost(s) -> Node:
    """``C_ij = (t_i - j)^2 / max(C)`` with ``t`` from :func:`rank_targets`."""
    targets = rank_targets(s)
    n = targets.rows
    ranks = np.arange(1, n + 1, dtype=np.float64)[None, :]
    raw = ad.square(ad.sub(targets, ranks))
    if n == 1:
        return raw
    top = float(raw.value.max())
    # the largest entry sits at a pinned target (1 or N, or the midpoint when
    # all scores tie), so it carries no gradient
    return ad.scale(raw, 1.0 / top)


def sinkhorn_solve(c, cfg: SinkhornConfig, epsilon: float | None = None) -> tuple[Node, SinkhornStats]:
    """Entropic OT plan between uniform marginals, plus solver diagnostics."""
    c = ad.as_node(c)
    if c.rows != c.cols:
        raise DimensionError(f"cost must be square, got {c.shape}")
    cost = np.ascontiguousarray(c.value)
    if not np.all(np.isfinite(cost)) or np.any(cost < 0):
        raise InputError("cost entries must be finite and non-negative")
    eps = cfg.epsilon if epsilon is None else float(epsilon)
    if not eps > 0:
        raise ParameterError(f"epsilon must be positive, got {eps}")
    n = c.rows
    a = np.full(n, 1.0 / n)
    b = a.copy()
    if eps < LOG_DOMAIN_BELOW:
        fs, gs, err = kernels.sinkhorn_log(cost, eps, a, b, cfg.max_iters, cfg.tol)
        plan = np.exp((fs[-1][:, None] + gs[-1][None, :] - cost) / eps)
        iters = fs.shape[0]

        def bw(g):
            return (kernels.sinkhorn_log_backward(cost, eps, fs, gs, np.ascontiguousarray(g)),)

    else:
        K = np.exp(-cost / eps)
        us, vs, err = kernels.sinkhorn_scaling(K, a, b, cfg.max_iters, cfg.tol)
        plan = us[-1][:, None] * K * vs[-1][None, :]
        iters = us.shape[0]

        def bw(g):
            dK = kernels.sinkhorn_scaling_backward(K, us, vs, a, b, np.ascontiguousarray(g))
            return (-dK * K / eps,)

    stats = SinkhornStats(iters, float(err), eps < LOG_DOMAIN_BELOW)
    if not err < cfg.tol:
        warnings.warn(ConvergenceWarning(float(err), iters), stacklevel=3)
    return ad.custom(plan, (c,), "sinkhorn", bw), stats


def sinkhorn(c, cfg: SinkhornConfig | None = None, epsilon: float | None = None) -> Node:
    plan, _ = sinkhorn_solve(c, cfg or SinkhornConfig(), epsilon)
    return plan


def ordering_from_plan(plan) -> Ordering:
    """``gamma = N * plan @ [1..N]``; hard ranks from sorting ``gamma`` ascending."""
    p = ad.as_node(plan).value
    n = p.shape[0]
    gamma = n * (p @ np.arange(1, n + 1, dtype=np.float64))
    return Ordering(gamma, _ranks_from_gamma(gamma))


def hard_sort_oracle(s) -> Ordering:
    """Exact descending sort; equal scores keep index order."""
    s = np.asarray(ad.as_node(s).value, dtype=np.float64).ravel()
    order = np.argsort(-s, kind="stable")
    ranks = np.empty(len(s), dtype=np.int64)
    ranks[order] = np.arange(1, len(s) + 1)
    return Ordering(ranks.astype(np.float64), ranks)


def _ranks_from_gamma(gamma: np.ndarray) -> np.ndarray:
    order = np.argsort(gamma, kind="stable")
    ranks = np.empty(len(gamma), dtype=np.int64)
    ranks[order] = np.arange(1, len(gamma) + 1)
    return ranks


def hard_ordering(s, cfg: SinkhornConfig | None = None) -> Ordering:
    """Ordering from a plan solved at the annealed epsilon (no gradient).

    Each point's real-valued rank is the expected column under its own row of
    the plan, i.e. ``gamma`` with the row renormalised to mass ``1/N``. The two
    agree once the solver has converged; the renormalised form stays monotone
    in the rank target for any column potential, so the hard ranks are exact
    even when the small-epsilon solve stops short of ``tol``.
    """
    cfg = cfg or SinkhornConfig()
    cost = build_cost(ad.stop_gradient(_as_scores(s))).value
    n = cost.shape[0]
    eps = cfg.anneal_eps if cfg.anneal_eps is not None else cfg.epsilon
    a = np.full(n, 1.0 / n)
    if eps < LOG_DOMAIN_BELOW:
        _, gs, _ = kernels.sinkhorn_log(np.ascontiguousarray(cost), eps, a, a.copy(), cfg.max_iters, cfg.tol)
        g = gs[-1]
    else:
        _, vs, _ = kernels.sinkhorn_scaling(np.exp(-cost / eps), a, a.copy(), cfg.max_iters, cfg.tol)
        with np.errstate(divide="ignore"):
            g = eps * np.log(vs[-1])
    logits = (g[None, :] - cost) / eps
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    gamma = (w @ np.arange(1, n + 1, dtype=np.float64)) / w.sum(axis=1)
    return Ordering(gamma, _ranks_from_gamma(gamma))


def soft_permute(points, plan) -> Node:
    """Ordered cloud ``(N * plan)^T @ points``; row r is the soft rank-r point."""
    points = ad.as_node(points)
    plan = ad.as_node(plan)
    if plan.rows != points.rows:
        raise DimensionError(f"plan is {plan.shape} but cloud has {points.rows} points")
    return ad.soft_gather(ad.scale(plan, plan.rows), points)


def write_ordering(path, ordering: Ordering) -> None:
    """One ``point_index rank`` line per point (both 1-based), sorted by rank."""
    lines = [f"{i + 1} {r}" for i, r in ((int(i), int(ordering.hard_ranks[i])) for i in ordering.order)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ordering(path) -> np.ndarray:
    """Return 1-based ranks indexed by 0-based point index."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'point_index rank', got {line!r}", lineno, path)
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ParseError(f"non-integer field in {line!r}", lineno, path) from None
    ranks = np.zeros(len(pairs), dtype=np.int64)
    for idx, rank in pairs:
        if not 1 <= idx <= len(pairs):
            raise ParseError(f"point index {idx} out of range", None, path)
        ranks[idx - 1] = rank
    return ranks
