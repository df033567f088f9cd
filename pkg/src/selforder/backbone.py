"""Shared per-point MLP encoder, max-pooled descriptor and projection head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import DimensionError, InputError

HEAD_DIM = 128


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class MLP:
    """Stack of affine layers with relu between them (not after the last)."""

    weights: list[Node]
    biases: list[Node]

    @classmethod
    def init(cls, widths, rng: np.random.Generator) -> MLP:
        ws, bs = [], []
        for fi, fo in zip(widths[:-1], widths[1:]):
            ws.append(Node(glorot(rng, fi, fo), requires_grad=True))
            bs.append(Node(np.zeros((1, fo)), requires_grad=True))
        return cls(ws, bs)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].rows] + [w.cols for w in self.weights]

    def __call__(self, x) -> Node:
        h = ad.as_node(x)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if k < last:
                h = ad.relu(h)
        return h

    def named_parameters(self, prefix: str) -> dict[str, Node]:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{k}.weight"] = w
            out[f"{prefix}.{k}.bias"] = b
        return out


@dataclass
class BackboneParams:
    """Encoder ``3 -> ... -> D`` plus the 2-layer projection head ``D -> 128``."""

    encoder: MLP
    head: MLP

    @classmethod
    def init(cls, widths=(3, 64, 128, 256), rng=None, head_hidden: int = HEAD_DIM) -> BackboneParams:
        widths = tuple(int(w) for w in widths)
        if widths[0] != 3:
            raise DimensionError(f"first encoder width must be 3, got {widths[0]}")
        rng = np.random.default_rng(0) if rng is None else rng
        encoder = MLP.init(widths, rng)
        head = MLP.init((widths[-1], head_hidden, HEAD_DIM), rng)
        return cls(encoder, head)

    @property
    def feature_dim(self) -> int:
        return self.encoder.widths[-1]

    def named_parameters(self, prefix: str = "") -> dict[str, Node]:
        p = f"{prefix}." if prefix else ""
        return {**self.encoder.named_parameters(p + "encoder"), **self.head.named_parameters(p + "head")}


def _check_points(points) -> Node:
    node = ad.as_node(points)
    if node.rows < 1:
        raise InputError("point cloud is empty")
    if node.cols != 3:
        raise DimensionError(f"expected N x 3 points, got {node.shape}")
    return node


def encode(points, params: BackboneParams) -> Node:
    """Per-point features ``N x D``; no information crosses between points."""
    return params.encoder(_check_points(points))


def global_feature(f) -> Node:
    return ad.maxpool_cols(f)


def project(pooled, params: BackboneParams, normalize: bool = True) -> Node:
    """Head applied row-wise to pooled descriptors, then L2-normalised unless ``normalize`` is off."""
    z = params.head(pooled)
    return ad.l2_normalize_rows(z) if normalize else z


def embed(points, params: BackboneParams, normalize: bool = True) -> Node:
    """128-d latent of a cloud (or of soft-permuted point rows); unit length by default."""
    return project(global_feature(encode(points, params)), params, normalize)


@dataclass
class OrderingModel:
    """Scorer backbone and contrastive-loss backbone.

    With ``share_weights`` (the default) both paths use the same parameter
    set; otherwise the loss path gets an independent copy initialised from
    the same generator stream.
    """

    scorer: BackboneParams
    loss: BackboneParams
    share_weights: bool = True
    widths: tuple[int, ...] = field(default=(3, 64, 128, 256))

    @classmethod
    def init(cls, widths=(3, 64, 128, 256), share_weights: bool = True, seed: int = 0) -> OrderingModel:
        rng = np.random.default_rng(seed)
        scorer = BackboneParams.init(widths, rng)
        loss = scorer if share_weights else BackboneParams.init(widths, rng)
        return cls(scorer, loss, share_weights, tuple(widths))

    def named_parameters(self) -> dict[str, Node]:
        if self.share_weights:
            return self.scorer.named_parameters("shared")
        return {**self.scorer.named_parameters("scorer"), **self.loss.named_parameters("loss")}
