"""Baseline selectors, frozen task networks and subset-size metric curves.

The protocol: task networks are trained on full clouds and frozen; each
selection method then supplies its top-``n`` points per cloud and the
frozen network is scored on those subsets.  Subsets are fed in original
point-index order, so selecting all ``N`` points reproduces the full-cloud
input exactly for every method.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import backbone, kernels, scorer, sorter
from .backbone import MLP
from .data import LabeledDataset
from .errors import InputError, ContractError
from .train import AdamState, TrainConfig, TrainState, adamw_step, cosine_lr

log = logging.getLogger(__name__)

METHOD_TAGS = ("random", "fps", "learned")


# ---------------------------------------------------------------------------
# selection


def _check_n(cloud: np.ndarray, n: int) -> None:
    if not 1 <= n <= len(cloud):
        raise InputError(f"subset size {n} outside [1, {len(cloud)}]")


def random_select(cloud, n: int, seed: int) -> np.ndarray:
    """Indices of ``n`` points drawn uniformly without replacement."""
    cloud = np.asarray(cloud)
    _check_n(cloud, n)
    return np.random.default_rng(seed).permutation(len(cloud))[:n]


def fps_select(cloud, n: int, start_index: int = 0) -> np.ndarray:
    """Greedy farthest-point sampling; ties go to the lowest index."""
    cloud = np.ascontiguousarray(cloud, dtype=np.float64)
    _check_n(cloud, n)
    if not 0 <= start_index < len(cloud):
        raise InputError(f"start index {start_index} outside the cloud")
    return kernels.fps_order(cloud, n, start_index)


def learned_ordering(cloud, model: backbone.OrderingModel, cfg: TrainConfig) -> sorter.Ordering:
    """Hard annealed ordering of one cloud under a trained scorer."""
    feats = backbone.encode(cloud, model.scorer)
    s = scorer.score(ad.stop_gradient(feats), cfg.scorer)
    return sorter.hard_ordering(s, cfg.sinkhorn)


def learned_order(cloud, model: backbone.OrderingModel, cfg: TrainConfig) -> np.ndarray:
    """Full ranking (point indices, rank 1 first) from the hard annealed sort."""
    return learned_ordering(cloud, model, cfg).order


@dataclass
class SelectionMethod:
    """A named way of ranking the points of a cloud.

    ``learned`` needs ``state`` (a trained :class:`TrainState`, e.g. from
    :func:`selforder.train.load_checkpoint`).
    """

    tag: str
    state: TrainState | None = None
    seed: int = 0

    def __post_init__(self):
        if self.tag not in METHOD_TAGS:
            raise InputError(f"unknown selection method {self.tag!r}")
        if self.tag == "learned" and self.state is None:
            raise InputError("the learned method needs a trained checkpoint")

    def order(self, cloud: np.ndarray, index: int = 0) -> np.ndarray:
        """Permutation of point indices; its first ``n`` entries are the top-n subset."""
        n = len(cloud)
        if self.tag == "random":
            return random_select(cloud, n, self.seed * 1_000_003 + index)
        if self.tag == "fps":
            return fps_select(cloud, n, 0)
        return learned_order(cloud, self.state.model, self.state.config)

    def orders(self, clouds: Sequence[np.ndarray]) -> list[np.ndarray]:
        return [self.order(c, i) for i, c in enumerate(clouds)]


def take_subset(cloud: np.ndarray, order: np.ndarray, n: int) -> np.ndarray:
    _check_n(cloud, n)
    return cloud[np.sort(order[:n])]


# ---------------------------------------------------------------------------
# metrics


def chamfer(x, y) -> float:
    """Mean nearest squared distance x->y plus y->x."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if len(x) == 0 or len(y) == 0:
        raise InputError("chamfer distance of an empty cloud")
    dxy, _ = kernels.nn_sqdist(x, y)
    dyx, _ = kernels.nn_sqdist(y, x)
    return float(dxy.mean() + dyx.mean())


def chamfer_loss(pred, target) -> ad.Node:
    """Differentiable chamfer distance with respect to ``pred`` (``M x 3``)."""
    pred = ad.as_node(pred)
    x = np.ascontiguousarray(pred.value)
    y = np.ascontiguousarray(target, dtype=np.float64)
    dxy, ixy = kernels.nn_sqdist(x, y)
    dyx, iyx = kernels.nn_sqdist(y, x)
    m, n = len(x), len(y)

    def bw(g):
        grad = 2.0 * (x - y[ixy]) / m
        np.add.at(grad, iyx, 2.0 * (x[iyx] - y) / n)
        return (grad * g[0, 0],)

    return ad.custom(np.array([[dxy.mean() + dyx.mean()]]), (pred,), "chamfer", bw)


def average_precision(relevant: Sequence[bool]) -> float:
    """AP of one ranked list: mean of precision@k over the relevant positions."""
    rel = np.asarray(relevant, dtype=bool)
    hits = np.flatnonzero(rel)
    if len(hits) == 0:
        return float("nan")
    return float(np.mean(np.arange(1, len(hits) + 1) / (hits + 1)))


def mean_average_precision(embeddings, labels) -> float:
    """Leave-one-out retrieval mAP with same-class relevance.

    Each query ranks every other item by Euclidean distance (ties by index).
    Queries whose class has no other member are skipped with a warning.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    sq = (e * e).sum(axis=1)
    dist = sq[:, None] - 2.0 * e @ e.T + sq[None, :]
    aps = []
    skipped = 0
    for q in range(len(e)):
        others = np.delete(np.arange(len(e)), q)
        ranked = others[np.argsort(dist[q, others], kind="stable")]
        rel = labels[ranked] == labels[q]
        if not rel.any():
            skipped += 1
            continue
        aps.append(average_precision(rel))
    if skipped:
        warnings.warn(f"{skipped} retrieval queries had no relevant item and were skipped", stacklevel=2)
    if not aps:
        raise InputError("no retrieval query has a relevant item")
    return float(np.mean(aps))


# ---------------------------------------------------------------------------
# task networks


def _train_loop(params: dict, loss_fn: Callable, n_items: int, epochs: int, batch: int, lr0: float, seed: int):
    rng = np.random.default_rng(seed)
    opt = AdamState()
    steps = epochs * math.ceil(n_items / batch)
    for _ in range(epochs):
        perm = rng.permutation(n_items)
        for start in range(0, n_items, batch):
            loss = loss_fn(perm[start : start + batch])
            ad.backward(loss)
            lr = cosine_lr(opt.step, steps, lr0)
            adamw_step({k: p.value for k, p in params.items()}, {k: p.grad for k, p in params.items()}, opt, lr, 0.0)
    return opt


@dataclass
class Classifier:
    """PointNet-style classifier: shared point MLP, max-pool, linear head."""

    encoder: MLP
    head: MLP
    n_classes: int

    @classmethod
    def init(cls, n_classes: int, widths=(3, 64, 128, 256), seed: int = 0) -> Classifier:
        rng = np.random.default_rng(seed)
        return cls(MLP.init(widths, rng), MLP.init((widths[-1], n_classes), rng), n_classes)

    def parameters(self) -> dict[str, ad.Node]:
        return {**self.encoder.named_parameters("encoder"), **self.head.named_parameters("head")}

    def pooled(self, cloud) -> ad.Node:
        return ad.maxpool_cols(self.encoder(cloud))

    def logits(self, clouds) -> ad.Node:
        return self.head(ad.concat_rows([self.pooled(c) for c in clouds]))

    def features(self, clouds) -> np.ndarray:
        """Pooled descriptors, used as the frozen retrieval embedding."""
        return np.vstack([self.pooled(c).value for c in clouds])

    def predict(self, clouds) -> np.ndarray:
        return np.argmax(self.logits(clouds).value, axis=1)

    def accuracy(self, clouds, labels) -> float:
        return float(np.mean(self.predict(clouds) == np.asarray(labels)))


def cross_entropy(logits: ad.Node, labels) -> ad.Node:
    onehot = np.eye(logits.cols)[np.asarray(labels)]
    picked = ad.sum_rows(ad.mul(logits, onehot))
    return ad.mean_all(ad.sub(ad.logsumexp_rows(logits), picked))


def train_classifier(
    dataset: LabeledDataset,
    n_classes: int | None = None,
    widths=(3, 64, 128, 256),
    epochs: int = 40,
    batch: int = 16,
    lr0: float = 1e-3,
    seed: int = 0,
) -> Classifier:
    """Supervised training on full clouds; the result is treated as frozen."""
    n_classes = n_classes or int(dataset.labels.max()) + 1
    clf = Classifier.init(n_classes, widths, seed)
    labels = dataset.labels

    def loss_fn(idx):
        return cross_entropy(clf.logits([dataset.clouds[i] for i in idx]), labels[idx])

    _train_loop(clf.parameters(), loss_fn, len(dataset), epochs, batch, lr0, seed)
    return clf


@dataclass
class AutoEncoder:
    """Point MLP encoder, max-pool, and a 2-layer MLP decoding ``M x 3`` points."""

    encoder: MLP
    decoder: MLP
    n_out: int

    @classmethod
    def init(cls, n_out: int = 128, widths=(3, 64, 128, 256), hidden: int = 256, seed: int = 0) -> AutoEncoder:
        rng = np.random.default_rng(seed)
        return cls(MLP.init(widths, rng), MLP.init((widths[-1], hidden, 3 * n_out), rng), n_out)

    def parameters(self) -> dict[str, ad.Node]:
        return {**self.encoder.named_parameters("encoder"), **self.decoder.named_parameters("decoder")}

    def decode_node(self, cloud) -> ad.Node:
        flat = self.decoder(ad.maxpool_cols(self.encoder(cloud)))
        return ad.custom(flat.value.reshape(self.n_out, 3), (flat,), "reshape", lambda g: (g.reshape(1, -1),))

    def reconstruct(self, cloud) -> np.ndarray:
        return self.decode_node(cloud).value


def train_autoencoder(
    dataset: LabeledDataset,
    n_out: int = 128,
    widths=(3, 64, 128, 256),
    epochs: int = 40,
    batch: int = 16,
    lr0: float = 1e-3,
    seed: int = 0,
) -> AutoEncoder:
    ae = AutoEncoder.init(n_out, widths, seed=seed)

    def loss_fn(idx):
        terms = [chamfer_loss(ae.decode_node(dataset.clouds[i]), dataset.clouds[i]) for i in idx]
        return ad.scale(ad.sum_all(ad.concat_rows(terms)), 1.0 / len(terms))

    _train_loop(ae.parameters(), loss_fn, len(dataset), epochs, batch, lr0, seed)
    return ae


# ---------------------------------------------------------------------------
# curves


@dataclass
class MetricCurve:
    method: str
    kind: str
    points: list[tuple[int, float]] = field(default_factory=list)

    @property
    def sizes(self) -> list[int]:
        return [n for n, _ in self.points]

    def value_at(self, n: int) -> float:
        for size, value in self.points:
            if size == n:
                return value
        raise KeyError(n)


def _orders(method: SelectionMethod, dataset: LabeledDataset, orders) -> list[np.ndarray]:
    return orders if orders is not None else method.orders(dataset.clouds)


def classify_eval(clf: Classifier, dataset: LabeledDataset, method: SelectionMethod, sizes, orders=None) -> MetricCurve:
    orders = _orders(method, dataset, orders)
    curve = MetricCurve(method.tag, "accuracy")
    for n in sizes:
        subsets = [take_subset(c, o, n) for c, o in zip(dataset.clouds, orders)]
        curve.points.append((int(n), clf.accuracy(subsets, dataset.labels)))
    return curve


def retrieval_map(clf: Classifier, dataset: LabeledDataset, method: SelectionMethod, sizes, orders=None) -> MetricCurve:
    orders = _orders(method, dataset, orders)
    curve = MetricCurve(method.tag, "map")
    for n in sizes:
        subsets = [take_subset(c, o, n) for c, o in zip(dataset.clouds, orders)]
        curve.points.append((int(n), mean_average_precision(clf.features(subsets), dataset.labels)))
    return curve


def reconstruct_eval(ae: AutoEncoder, dataset: LabeledDataset, method: SelectionMethod, sizes, orders=None) -> MetricCurve:
    orders = _orders(method, dataset, orders)
    curve = MetricCurve(method.tag, "chamfer")
    for n in sizes:
        errs = [chamfer(ae.reconstruct(take_subset(c, o, n)), c) for c, o in zip(dataset.clouds, orders)]
        curve.points.append((int(n), float(np.mean(errs))))
    return curve


# ---------------------------------------------------------------------------
# report files

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _check_grid(curves: Sequence[MetricCurve]) -> None:
    if not curves:
        raise ContractError("no curves to report")
    grid = curves[0].sizes
    for c in curves[1:]:
        if c.sizes != grid:
            raise ContractError(f"curve {c.method!r} uses sizes {c.sizes}, expected {grid}")


def curves_csv(curves: Sequence[MetricCurve]) -> str:
    _check_grid(curves)
    lines = ["method,subset_size,metric"]
    for c in curves:
        lines.extend(f"{c.method},{n},{v!r}" for n, v in c.points)
    return "\n".join(lines) + "\n"


def curves_svg(curves: Sequence[MetricCurve], width: int = 480, height: int = 320) -> str:
    """A small hand-written line chart; byte-identical for identical input."""
    _check_grid(curves)
    pad = 48
    sizes = curves[0].sizes
    xs = [math.log2(n) for n in sizes]
    ys = [v for c in curves for _, v in c.points]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
    ]
    for n, x in zip(sizes, xs):
        out.append(f'<text x="{px(x):.2f}" y="{height - pad + 16}" font-size="10" text-anchor="middle">{n}</text>')
    for y in (y0, y1):
        out.append(f'<text x="{pad - 4}" y="{py(y):.2f}" font-size="10" text-anchor="end">{y:.3g}</text>')
    out.append(
        f'<text x="{width / 2:.2f}" y="{height - 8}" font-size="11" text-anchor="middle">points kept</text>'
    )
    out.append(f'<text x="12" y="{pad - 12}" font-size="11">{curves[0].kind}</text>')
    for k, c in enumerate(curves):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{px(x):.2f},{py(v):.2f}" for x, (_, v) in zip(xs, c.points))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - pad + 4}" y="{pad + 14 * k}" font-size="10" fill="{color}">{c.method}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def curve_report(curves: Sequence[MetricCurve], path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.svg``."""
    base = Path(path)
    csv_path = base.with_suffix(".csv")
    svg_path = base.with_suffix(".svg")
    csv_text = curves_csv(curves)
    svg_text = curves_svg(curves)
    try:
        csv_path.write_text(csv_text)
        svg_path.write_text(svg_text)
    except OSError as exc:
        raise OSError(f"cannot write report to {base}: {exc}") from exc
    return csv_path, svg_path
