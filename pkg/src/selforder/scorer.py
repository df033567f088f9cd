"""Per-point importance scores from a feature map.

Scores are returned as ``N x 1`` column nodes so they plug straight into the
sorter.  ``score_exact`` is the non-differentiable counting oracle; the soft
scorer is its trainable relaxation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Node
from .errors import ParameterError

MODES = ("exact", "soft", "maxpool", "sum")


@dataclass
class ScorerConfig:
    mode: str = "soft"
    tau: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"unknown scorer mode {self.mode!r}; expected one of {MODES}")
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")


def score_exact(f) -> Node:
    """Fraction of feature columns whose maximum each point holds.

    Ties go to the lowest point index, so the scores always sum to one.
    """
    f = ad.as_node(f)
    counts = kernels.argmax_counts(np.ascontiguousarray(f.value))
    return Node((counts / f.cols)[:, None])


def score_soft(f, g, tau: float) -> Node:
    """``s_i = (1/D) * sum_j 2 * sigmoid((f_ij - g_j) / tau)``.

    ``g`` should be the column maxima of ``f``; when it is computed from
    ``f`` in the same graph the gradient also flows through the max-pool.
    """
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    f = ad.as_node(f)
    sig = ad.sigmoid_temp(ad.sub(f, g), tau)
    return ad.scale(ad.sum_rows(sig), 2.0 / f.cols)


def score_soft_shortcut(f, g, tau: float = 1.0) -> np.ndarray:
    """Un-normalised ``sum_j sigmoid(f_ij - g_j)``; same ranking as :func:`score_soft`."""
    f = np.asarray(ad.as_node(f).value)
    g = np.asarray(ad.as_node(g).value)
    return (0.5 * (1.0 + np.tanh((f - g) / (2.0 * tau)))).sum(axis=1)


def score_maxpool(f) -> Node:
    """Largest feature of each point (row maxima)."""
    f = ad.as_node(f)
    idx = np.argmax(f.value, axis=1)
    rows = np.arange(f.rows)

    def bw(g):
        out = np.zeros_like(f.value)
        out[rows, idx] = g[:, 0]
        return (out,)

    return ad.custom(f.value[rows, idx][:, None], (f,), "rowmax", bw)


def score_sum(f) -> Node:
    return ad.sum_rows(f)


def score(f, cfg: ScorerConfig, g=None) -> Node:
    """Dispatch on ``cfg.mode``; ``g`` defaults to the max-pool of ``f``."""
    if cfg.mode == "exact":
        return score_exact(f)
    if cfg.mode == "maxpool":
        return score_maxpool(f)
    if cfg.mode == "sum":
        return score_sum(f)
    if g is None:
        g = ad.maxpool_cols(f)
    return score_soft(f, g, cfg.tau)
