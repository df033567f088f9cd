"""Procedural labelled point clouds, XYZ files and dataset manifests."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ParameterError, ParseError

CLASSES = ("sphere", "cube", "cylinder", "torus", "cone", "two-spheres", "plane-with-bump", "helix")
JITTER = 0.01
MIN_POINTS = 8


def class_index(name_or_id) -> int:
    if isinstance(name_or_id, (int, np.integer)):
        if not 0 <= int(name_or_id) < len(CLASSES):
            raise InputError(f"unknown class id {name_or_id}")
        return int(name_or_id)
    try:
        return CLASSES.index(str(name_or_id))
    except ValueError:
        raise InputError(f"unknown class {name_or_id!r}; expected one of {CLASSES}") from None


# ---------------------------------------------------------------------------
# surface samplers; each returns exactly n points on the noiseless surface


def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sphere(rng, n):
    return _unit_vectors(rng, n)


def _cube(rng, n):
    # six faces of [-0.5, 0.5]^3, equal area
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -0.5, 0.5)
    for k in range(3):
        sel = axis == k
        others = [a for a in range(3) if a != k]
        pts[sel, k] = sign[sel]
        pts[np.ix_(sel, others)] = uv[sel]
    return pts


def _cylinder(rng, n):
    radius = 0.5
    height = rng.uniform(1.5, 2.5)
    side = 2 * np.pi * radius * height
    cap = np.pi * radius**2
    part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, size=n)
    r = np.where(part == 0, radius, radius * np.sqrt(rng.uniform(size=n)))
    z = np.where(part == 0, rng.uniform(-height / 2, height / 2, size=n), np.where(part == 1, -height / 2, height / 2))
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z])


def _torus(rng, n):
    big = 1.0
    small = rng.uniform(0.2, 0.4)
    out = []
    while sum(len(o) for o in out) < n:
        u = rng.uniform(0, 2 * np.pi, size=2 * n)
        v = rng.uniform(0, 2 * np.pi, size=2 * n)
        # area element is proportional to big + small * cos(v)
        keep = rng.uniform(0, big + small, size=2 * n) < big + small * np.cos(v)
        u, v = u[keep], v[keep]
        ring = big + small * np.cos(v)
        out.append(np.column_stack([ring * np.cos(u), ring * np.sin(u), small * np.sin(v)]))
    return np.vstack(out)[:n]


def _cone(rng, n):
    radius = 1.0
    height = rng.uniform(1.2, 1.8)
    slant = np.hypot(radius, height)
    lateral = np.pi * radius * slant
    base = np.pi * radius**2
    on_side = rng.uniform(size=n) < lateral / (lateral + base)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    t = np.sqrt(rng.uniform(size=n))  # radial fraction, uniform in area
    r = radius * t
    z = np.where(on_side, height * (1.0 - t), 0.0)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z])


def _two_spheres(rng, n):
    gap = rng.uniform(0.7, 0.9)
    pts = 0.5 * _unit_vectors(rng, n)
    pts[:, 0] += np.where(rng.uniform(size=n) < 0.5, -gap, gap)
    return pts


def _plane_with_bump(rng, n):
    amp = rng.uniform(0.4, 0.7)
    width = 0.3

    def height(x, y):
        return amp * np.exp(-(x**2 + y**2) / (2 * width**2))

    peak_slope = amp / width * np.exp(-0.5)
    bound = np.sqrt(1 + peak_slope**2)
    out = []
    while sum(len(o) for o in out) < n:
        xy = rng.uniform(-1, 1, size=(2 * n, 2))
        h = height(xy[:, 0], xy[:, 1])
        gx = -xy[:, 0] / width**2 * h
        gy = -xy[:, 1] / width**2 * h
        keep = rng.uniform(0, bound, size=2 * n) < np.sqrt(1 + gx**2 + gy**2)
        out.append(np.column_stack([xy[keep], h[keep]]))
    return np.vstack(out)[:n]


def _helix(rng, n):
    turns = rng.uniform(2.5, 3.5)
    tube = 0.08
    t = rng.uniform(0, 2 * np.pi * turns, size=n)
    pitch = 2.0 / (2 * np.pi * turns)
    center = np.column_stack([np.cos(t), np.sin(t), pitch * t - 1.0])
    tangent = np.column_stack([-np.sin(t), np.cos(t), np.full(n, pitch)])
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    normal = np.column_stack([-np.cos(t), -np.sin(t), np.zeros(n)])
    binormal = np.cross(tangent, normal)
    a = rng.uniform(0, 2 * np.pi, size=n)
    return center + tube * (np.cos(a)[:, None] * normal + np.sin(a)[:, None] * binormal)


_SAMPLERS = {
    "sphere": _sphere,
    "cube": _cube,
    "cylinder": _cylinder,
    "torus": _torus,
    "cone": _cone,
    "two-spheres": _two_spheres,
    "plane-with-bump": _plane_with_bump,
    "helix": _helix,
}


def gen_synthetic(class_id, n_points: int, seed: int) -> np.ndarray:
    """Sample ``n_points`` from a class surface plus jitter of norm <= 0.01.

    Deterministic in ``(class_id, n_points, seed)``.  Not normalised.
    """
    idx = class_index(class_id)
    if n_points < MIN_POINTS:
        raise InputError(f"n_points must be >= {MIN_POINTS}, got {n_points}")
    rng = np.random.default_rng([int(seed), idx, int(n_points)])
    pts = _SAMPLERS[CLASSES[idx]](rng, n_points)
    # uniform in the ball of radius JITTER
    jitter = _unit_vectors(rng, n_points) * (JITTER * rng.uniform(size=(n_points, 1)) ** (1 / 3))
    return pts + jitter


def normalize_unit_sphere(cloud) -> np.ndarray:
    """Centre on the mean and scale so the farthest point has norm one."""
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise InputError(f"expected a non-empty N x 3 cloud, got shape {pts.shape}")
    centred = pts - pts.mean(axis=0)
    r = np.sqrt((centred * centred).sum(axis=1)).max()
    if r > 0:
        centred = centred / r
    return centred


# ---------------------------------------------------------------------------
# files


def load_xyz(path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"expected 3 coordinates, got {len(parts)}", lineno, path)
        try:
            xyz = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {line.strip()!r}", lineno, path) from None
        if not all(np.isfinite(xyz)):
            raise ParseError("non-finite coordinate", lineno, path)
        rows.append(xyz)
    if not rows:
        raise InputError(f"{path}: no points")
    return np.array(rows, dtype=np.float64)


def save_xyz(cloud, path) -> None:
    pts = np.asarray(cloud, dtype=np.float64)
    # repr round-trips float64 exactly
    Path(path).write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()))


@dataclass
class LabeledDataset:
    clouds: list[np.ndarray]
    labels: np.ndarray
    split: str = "all"
    class_mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.clouds) != len(self.labels):
            raise InputError("clouds and labels differ in length")

    def __len__(self) -> int:
        return len(self.clouds)

    @property
    def classes(self) -> set[int]:
        return set(int(c) for c in np.unique(self.labels))

    def subset(self, idx, split: str | None = None) -> LabeledDataset:
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset([self.clouds[i] for i in idx], self.labels[idx], split or self.split, self.class_mask)

    def with_classes(self, classes) -> LabeledDataset:
        keep = np.flatnonzero(np.isin(self.labels, list(classes)))
        return self.subset(keep)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed 3x3 rotation matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))  # makes q Haar-distributed on O(3)
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def make_dataset(
    n_per_class: int,
    n_points: int,
    seed: int = 0,
    classes=None,
    normalize: bool = True,
    rotate: bool = True,
) -> LabeledDataset:
    """``n_per_class`` clouds of every class, interleaved by class.

    With ``rotate`` every cloud gets its own random pose, so a class cannot
    be recognised from a handful of points by orientation alone.
    """
    ids = [class_index(c) for c in (classes if classes is not None else range(len(CLASSES)))]
    clouds, labels = [], []
    for k in range(n_per_class):
        for c in ids:
            cloud_seed = seed * 1_000_003 + k
            pts = gen_synthetic(c, n_points, cloud_seed)
            if rotate:
                pts = pts @ random_rotation(np.random.default_rng([cloud_seed, c, 7])).T
            clouds.append(normalize_unit_sphere(pts) if normalize else pts)
            labels.append(c)
    return LabeledDataset(clouds, np.array(labels))


def split_dataset(dataset: LabeledDataset, train_fraction: float = 0.85, seed: int = 0, zero_shot_classes=None):
    """Seeded random split, or a class-disjoint split when ``zero_shot_classes`` is given."""
    if not 0 < train_fraction < 1:
        raise ParameterError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    if zero_shot_classes is not None:
        held = set(int(c) for c in zero_shot_classes)
        mask = np.isin(dataset.labels, list(held))
        test_idx = np.flatnonzero(mask)
        train_idx = np.flatnonzero(~mask)
        if len(test_idx) == 0 or len(train_idx) == 0:
            raise InputError("zero-shot split leaves one side empty")
        train = dataset.subset(train_idx, "train")
        test = dataset.subset(test_idx, "test")
        train.class_mask = test.class_mask = mask
        return train, test
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    return dataset.subset(np.sort(perm[:n_train]), "train"), dataset.subset(np.sort(perm[n_train:]), "test")


def write_dataset(train: LabeledDataset, test: LabeledDataset, root) -> Path:
    """Write one XYZ file per cloud plus ``manifest.txt`` (``path class_id split``)."""
    root = Path(root)
    (root / "clouds").mkdir(parents=True, exist_ok=True)
    lines = []
    k = 0
    for ds, split in ((train, "train"), (test, "test")):
        for cloud, label in zip(ds.clouds, ds.labels):
            rel = f"clouds/{k:05d}.xyz"
            save_xyz(cloud, root / rel)
            lines.append(f"{rel} {int(label)} {split}")
            k += 1
    manifest = root / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(path) -> tuple[LabeledDataset, LabeledDataset]:
    path = Path(path)
    parts: dict[str, tuple[list, list]] = {"train": ([], []), "test": ([], [])}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 3 or fields[2] not in parts:
            raise ParseError(f"expected 'relative_path class_id split', got {line!r}", lineno, path)
        try:
            label = int(fields[1])
        except ValueError:
            raise ParseError(f"bad class id {fields[1]!r}", lineno, path) from None
        clouds, labels = parts[fields[2]]
        clouds.append(load_xyz(path.parent / fields[0]))
        labels.append(label)
    return (
        LabeledDataset(parts["train"][0], np.array(parts["train"][1], dtype=np.int64), "train"),
        LabeledDataset(parts["test"][0], np.array(parts["test"][1], dtype=np.int64), "test"),
    )
