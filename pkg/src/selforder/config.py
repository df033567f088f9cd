"""Flat, dotted-key run configuration shared by the command-line tools.

A run configuration is a JSON object such as ``{"train.lr0": 1e-4}``.  Every
key must be one of :data:`DEFAULTS`; values are checked against the type of
the default so that a typo or a wrong type fails early with the key named.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ParameterError

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "data.n_per_class": 40,
    "data.n_points": 256,
    "data.train_fraction": 0.85,
    "data.classes": None,
    "data.zero_shot_classes": None,
    "data.rotate": True,
    "train.batch_size": 32,
    "train.epochs": 60,
    "train.lr0": 1e-4,
    "train.weight_decay": 1e-5,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.adam_eps": 1e-8,
    "train.widths": [3, 64, 128, 256],
    "train.theta": 2,
    "train.phi": 0.7,
    "train.share_weights": True,
    "train.positives": "own-level",
    "train.hard_forward": False,
    "train.normalize_embeddings": True,
    "scorer.mode": "soft",
    "scorer.tau": 0.5,
    "sinkhorn.epsilon": 0.1,
    "sinkhorn.max_iters": 200,
    "sinkhorn.tol": 1e-6,
    "sinkhorn.anneal_eps": 1e-3,
    "eval.sizes": [16, 32, 64, 128, 256],
    "eval.tasks": ["classify"],
    "eval.task_epochs": 30,
    "eval.task_widths": [3, 64, 128, 256],
    "eval.decoder_points": 128,
    "bench.sizes": [32, 64, 128, 256, 512],
    "bench.repeats": 3,
}

# keys whose default is None but which take a list when set
_LIST_OR_NONE = {"data.classes", "data.zero_shot_classes"}
EVAL_TASKS = ("classify", "retrieval", "reconstruct")


class ConfigError(ParameterError):
    """A configuration key is unknown or its value has the wrong type."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key {key!r}: {message}")


def _check(key: str, value):
    if key not in DEFAULTS:
        raise ConfigError(key, "unknown key")
    default = DEFAULTS[key]
    if key in _LIST_OR_NONE:
        if value is None or (isinstance(value, list) and all(isinstance(v, (int, str)) for v in value)):
            return value
        raise ConfigError(key, f"expected null or a list of class names/ids, got {value!r}")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true or false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        kind = type(default[0])
        if not all(isinstance(v, kind) and not isinstance(v, bool) for v in value):
            raise ConfigError(key, f"expected a list of {kind.__name__}, got {value!r}")
    if key == "eval.tasks":
        bad = [t for t in value if t not in EVAL_TASKS]
        if bad:
            raise ConfigError(key, f"unknown task(s) {bad}; expected some of {list(EVAL_TASKS)}")
    return value


def parse_assignment(text: str) -> tuple[str, object]:
    """``key=value`` with the value read as JSON, or as a bare string if that fails."""
    if "=" not in text:
        raise ConfigError(text, "expected KEY=VALUE")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def resolve(path=None, assignments=(), seed: int | None = None) -> dict[str, object]:
    """Defaults, then the JSON file at ``path``, then ``--set`` pairs, then ``seed``."""
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise ParameterError(f"{path}: expected a JSON object of dotted keys")
        for key, value in loaded.items():
            cfg[key] = _check(key, value)
    for text in assignments:
        key, value = parse_assignment(text)
        cfg[key] = _check(key, value)
    if seed is not None:
        cfg["seed"] = _check("seed", seed)
    return cfg


def dumps(cfg: dict[str, object]) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def train_config(cfg: dict[str, object]):
    """Build a :class:`~selforder.train.TrainConfig` from a resolved run config."""
    from .scorer import ScorerConfig
    from .sorter import SinkhornConfig
    from .train import TrainConfig

    fields = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("train.")}
    fields["widths"] = tuple(fields["widths"])
    return TrainConfig(
        seed=cfg["seed"],
        scorer=ScorerConfig(cfg["scorer.mode"], cfg["scorer.tau"]),
        sinkhorn=SinkhornConfig(
            cfg["sinkhorn.epsilon"], cfg["sinkhorn.max_iters"], cfg["sinkhorn.tol"], cfg["sinkhorn.anneal_eps"]
        ),
        **fields,
    )
