"""Nested prefix subsets of an ordered cloud and the multi-level NCE loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ContractError, InputError, ParameterError

POSITIVE_MODES = ("own-level", "all-levels")


def hierarchy_sizes(n: int, theta: int) -> list[int]:
    """``theta, theta^2, ...`` up to ``n``, closed with ``n`` itself."""
    theta = int(theta)
    if theta < 2:
        raise ParameterError(f"theta must be >= 2, got {theta}")
    if n < theta:
        raise InputError(f"cloud of {n} points is smaller than theta={theta}")
    sizes = []
    size = theta
    while size <= n:
        sizes.append(size)
        size *= theta
    if sizes[-1] < n:
        sizes.append(n)
    return sizes


@dataclass
class SubsetHierarchy:
    theta: int
    sizes: list[int]
    subsets: list[Node]


def build_hierarchy(ordered, n: int, theta: int = 2) -> SubsetHierarchy:
    ordered = ad.as_node(ordered)
    sizes = hierarchy_sizes(n, theta)
    return SubsetHierarchy(int(theta), sizes, [ad.slice_rows(ordered, 0, k) for k in sizes])


def appearance_counts(n: int, theta: int = 2) -> np.ndarray:
    """Number of level subsets containing each rank position."""
    counts = np.zeros(n, dtype=np.int64)
    for k in hierarchy_sizes(n, theta):
        counts[:k] += 1
    return counts


@dataclass
class ContrastBatch:
    """Anchor embeddings ``B x E`` and one ``B x E`` matrix per level.

    Row ``b`` of every matrix belongs to cloud ``b``.
    """

    anchors: Node
    levels: list[Node]
    phi: float = 0.7
    positives: str = "own-level"

    def __post_init__(self):
        if not self.phi > 0:
            raise ParameterError(f"phi must be positive, got {self.phi}")
        if self.positives not in POSITIVE_MODES:
            raise ParameterError(f"positives must be one of {POSITIVE_MODES}")
        b = self.anchors.rows
        if any(level.shape != self.anchors.shape for level in self.levels):
            raise ContractError("every level needs one embedding per cloud")
        if b < 2:
            raise ContractError("contrastive loss needs at least two clouds in the batch")

    @property
    def batch_size(self) -> int:
        return self.anchors.rows


def _similarities(anchors: Node, level: Node, phi: float) -> Node:
    return ad.scale(ad.matmul(anchors, ad.transpose(level)), 1.0 / phi)


def nce_level_loss(batch: ContrastBatch, k: int) -> Node:
    """Mean over clouds of ``-log(sum_pos exp(sim/phi) / sum_all exp(sim/phi))``.

    Negatives of cloud ``b`` are the level-``k`` subsets of the other clouds.
    """
    if batch.batch_size < 2:
        raise ContractError("contrastive loss needs at least two clouds in the batch")
    b = batch.batch_size
    eye = np.eye(b)
    sims = _similarities(batch.anchors, batch.levels[k], batch.phi)
    if batch.positives == "own-level":
        pos = ad.sum_rows(ad.mul(sims, eye))
        per_cloud = ad.sub(ad.logsumexp_rows(sims), pos)
    else:
        # own subsets at every level form the positive set
        own = [ad.sum_rows(ad.mul(_similarities(batch.anchors, lvl, batch.phi), eye)) for lvl in batch.levels]
        own_cols = ad.transpose(ad.concat_rows([ad.transpose(o) for o in own]))
        negatives = ad.add(sims, -1e300 * eye)  # masked out by exp underflow
        denom = ad.logsumexp_rows(ad.transpose(ad.concat_rows([ad.transpose(own_cols), ad.transpose(negatives)])))
        per_cloud = ad.sub(denom, ad.logsumexp_rows(own_cols))
    return ad.mean_all(per_cloud)


def total_loss(batch: ContrastBatch) -> Node:
    """Sum of the level losses."""
    terms = [nce_level_loss(batch, k) for k in range(len(batch.levels))]
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out
