"""Self-supervised training: batch loss, AdamW, cosine decay, checkpoints."""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import tempfile
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import backbone, hcl, scorer, sorter
from .autodiff import Node
from .backbone import OrderingModel
from .errors import CheckpointError, DimensionError, NonFiniteLossError, ParameterError
from .scorer import ScorerConfig
from .sorter import SinkhornConfig

log = logging.getLogger(__name__)

MAGIC = b"PRNK"
FORMAT_VERSION = 1
META_NAME = "__meta__"
CRC_NAME = "__crc32__"


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 60
    lr0: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    widths: tuple[int, ...] = (3, 64, 128, 256)
    theta: int = 2
    phi: float = 0.7
    share_weights: bool = True
    positives: str = "own-level"
    hard_forward: bool = False
    normalize_embeddings: bool = True
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if isinstance(self.scorer, dict):
            self.scorer = ScorerConfig(**self.scorer)
        if isinstance(self.sinkhorn, dict):
            self.sinkhorn = SinkhornConfig(**self.sinkhorn)
        if self.batch_size < 2:
            raise ParameterError("batch_size must be >= 2 so every cloud has negatives")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if not self.lr0 > 0:
            raise ParameterError("lr0 must be positive")
        if self.positives not in hcl.POSITIVE_MODES:
            raise ParameterError(f"positives must be one of {hcl.POSITIVE_MODES}")

    @classmethod
    def full_scale(cls, **overrides) -> TrainConfig:
        """GPU-scale regime: batch 128, 250 epochs, D = 2048."""
        base = dict(batch_size=128, epochs=250, widths=(3, 64, 64, 64, 128, 2048))
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        return cls(**d)


# ---------------------------------------------------------------------------
# optimisation


def cosine_lr(t: int, total: int, lr0: float) -> float:
    """Cosine decay from ``lr0`` at step 0 to zero at step ``total``."""
    if total <= 0 or t >= total:
        return 0.0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / total))


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place AdamW update with decoupled weight decay and bias correction."""
    if lr < 0:
        raise ParameterError("learning rate must be non-negative")
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# forward pass


def order_cloud(points, model: OrderingModel, cfg: TrainConfig) -> tuple[Node, Node]:
    """Scores and soft-permuted cloud for one point cloud."""
    pts = ad.as_node(points)
    feats = backbone.encode(pts, model.scorer)
    s = scorer.score(feats, cfg.scorer)
    plan = sorter.sinkhorn(sorter.build_cost(s), cfg.sinkhorn)
    if cfg.hard_forward:
        order = sorter.hard_ordering(s, cfg.sinkhorn).order
        return s, ad.Node(pts.value[order])
    return s, sorter.soft_permute(pts, plan)


def level_embeddings(ordered: Node, model: OrderingModel, cfg: TrainConfig) -> Node:
    """``m x 128`` embeddings of the nested prefixes; the last row is the full cloud."""
    sizes = hcl.hierarchy_sizes(ordered.rows, cfg.theta)
    feats = backbone.encode(ordered, model.loss)
    return backbone.project(ad.prefix_maxpool(feats, sizes), model.loss, cfg.normalize_embeddings)


def batch_loss(clouds, model: OrderingModel, cfg: TrainConfig) -> Node:
    per_cloud = []
    for points in clouds:
        _, ordered = order_cloud(points, model, cfg)
        per_cloud.append(level_embeddings(ordered, model, cfg))
    m = per_cloud[0].rows
    if any(z.rows != m for z in per_cloud):
        raise DimensionError("clouds in a batch must share the point count")
    levels = [ad.concat_rows([ad.slice_rows(z, k, k + 1) for z in per_cloud]) for k in range(m)]
    batch = hcl.ContrastBatch(levels[-1], levels, cfg.phi, cfg.positives)
    return hcl.total_loss(batch)


# ---------------------------------------------------------------------------
# loop


def batches_per_epoch(n_clouds: int, batch_size: int) -> int:
    return n_clouds // batch_size


def train_epoch(
    model: OrderingModel,
    clouds: list[np.ndarray],
    cfg: TrainConfig,
    rng: np.random.Generator,
    opt: AdamState,
    epoch: int = 0,
) -> tuple[float, float]:
    """One pass over ``clouds`` in a seeded shuffle; returns ``(mean_loss, last_lr)``.

    The trailing partial batch is dropped.
    """
    nb = batches_per_epoch(len(clouds), cfg.batch_size)
    if nb == 0:
        raise ParameterError(f"dataset of {len(clouds)} clouds is smaller than batch_size={cfg.batch_size}")
    total_steps = nb * cfg.epochs
    perm = rng.permutation(len(clouds))
    params = model.named_parameters()
    losses = []
    lr = cfg.lr0
    for bi in range(nb):
        idx = perm[bi * cfg.batch_size : (bi + 1) * cfg.batch_size]
        loss = batch_loss([clouds[i] for i in idx], model, cfg)
        value = float(loss.value[0, 0])
        if not math.isfinite(value):
            raise NonFiniteLossError(epoch, bi, value)
        ad.backward(loss)
        lr = cosine_lr(opt.step, total_steps, cfg.lr0)
        adamw_step(
            {k: p.value for k, p in params.items()},
            {k: p.grad for k, p in params.items()},
            opt,
            lr,
            cfg.weight_decay,
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
        )
        losses.append(value)
    return float(np.mean(losses)), lr


@dataclass
class TrainState:
    model: OrderingModel
    config: TrainConfig
    opt: AdamState
    epoch: int  # number of completed epochs
    rng: np.random.Generator
    history: list[tuple[int, float, float]] = field(default_factory=list)


def init_state(cfg: TrainConfig) -> TrainState:
    model = OrderingModel.init(cfg.widths, cfg.share_weights, cfg.seed)
    return TrainState(model, cfg, AdamState(), 0, np.random.default_rng([cfg.seed, 0]))


def fit(
    clouds: list[np.ndarray],
    cfg: TrainConfig | None = None,
    state: TrainState | None = None,
    out_dir=None,
    epochs: int | None = None,
) -> TrainState:
    """Train until ``cfg.epochs`` (or ``epochs`` more) epochs are complete.

    With ``out_dir`` a checkpoint is written after every epoch and metrics
    are appended to ``metrics.csv``.
    """
    if state is None:
        state = init_state(cfg or TrainConfig())
    cfg = state.config
    stop = cfg.epochs if epochs is None else min(cfg.epochs, state.epoch + epochs)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics = out / "metrics.csv"
        if not metrics.exists():
            metrics.write_text("epoch,mean_loss,lr\n")
    while state.epoch < stop:
        # the shuffle depends only on (seed, epoch), so a resumed run matches
        state.rng = np.random.default_rng([cfg.seed, state.epoch])
        mean_loss, lr = train_epoch(state.model, clouds, cfg, state.rng, state.opt, state.epoch)
        state.epoch += 1
        state.history.append((state.epoch, mean_loss, lr))
        log.info("epoch %d loss %.6f lr %.3e", state.epoch, mean_loss, lr)
        if out is not None:
            with open(out / "metrics.csv", "a") as fh:
                fh.write(f"{state.epoch},{mean_loss!r},{lr!r}\n")
            save_checkpoint(out / "checkpoint.prnk", state)
    return state


# ---------------------------------------------------------------------------
# checkpoints


def _pack_tensor(name: str, value: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(value, dtype="<f8")
    rows, cols = arr.shape
    return struct.pack("<I", len(raw)) + raw + struct.pack("<II", rows, cols) + arr.tobytes()


def _meta_bytes(state: TrainState) -> bytes:
    meta = {
        "config": state.config.to_dict(),
        "epoch": state.epoch,
        "adam_step": state.opt.step,
        "rng": state.rng.bit_generator.state,
        "history": state.history,
    }
    return json.dumps(meta, sort_keys=True).encode("utf-8")


def checkpoint_tensors(state: TrainState) -> dict[str, np.ndarray]:
    tensors = {name: p.value for name, p in state.model.named_parameters().items()}
    for name in tensors.copy():
        if name in state.opt.m:
            tensors[f"adam.m.{name}"] = state.opt.m[name]
            tensors[f"adam.v.{name}"] = state.opt.v[name]
    meta = np.frombuffer(_meta_bytes(state), dtype=np.uint8).astype(np.float64)[None, :]
    tensors[META_NAME] = meta
    return tensors


def save_checkpoint(path, state: TrainState) -> None:
    """Write atomically: a temp file in the same directory is renamed over ``path``."""
    tensors = checkpoint_tensors(state)
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(tensors) + 1)
    body += b"".join(_pack_tensor(k, v) for k, v in tensors.items())
    body += _pack_tensor(CRC_NAME, np.array([[zlib.crc32(body)]], dtype=np.float64))
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_tensors(path) -> dict[str, np.ndarray]:
    """Parse and verify a checkpoint container into named arrays."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            start = pos
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + nlen].decode("utf-8")
            if len(name.encode()) != nlen:
                raise CheckpointError(f"{path}: truncated tensor name")
            pos += nlen
            rows, cols = struct.unpack_from("<II", data, pos)
            pos += 8
            nbytes = rows * cols * 8
            if pos + nbytes > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            arr = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols)
            pos += nbytes
            if name == CRC_NAME:
                if zlib.crc32(data[:start]) != int(arr[0, 0]):
                    raise CheckpointError(f"{path}: checksum mismatch")
            out[name] = arr.astype(np.float64)
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt ({exc})") from None
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    if CRC_NAME not in out:
        raise CheckpointError(f"{path}: missing checksum")
    return out


def load_checkpoint(path) -> TrainState:
    tensors = read_tensors(path)
    try:
        meta = json.loads(tensors[META_NAME].astype(np.uint8).tobytes().decode("utf-8"))
        cfg = TrainConfig.from_dict(meta["config"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable metadata ({exc})") from None
    model = OrderingModel.init(cfg.widths, cfg.share_weights, cfg.seed)
    params = model.named_parameters()
    opt = AdamState(step=int(meta["adam_step"]))
    for name, p in params.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        if tensors[name].shape != p.shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {tensors[name].shape}, expected {p.shape}")
        p.value = tensors[name].copy()
        if f"adam.m.{name}" in tensors:
            opt.m[name] = tensors[f"adam.m.{name}"].copy()
            opt.v[name] = tensors[f"adam.v.{name}"].copy()
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    history = [tuple(h) for h in meta.get("history", [])]
    return TrainState(model, cfg, opt, int(meta["epoch"]), rng, history)
