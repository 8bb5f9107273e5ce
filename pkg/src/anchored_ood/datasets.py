"""Seeded synthetic in-distribution / OOD generators and graded corruptions."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Sequence

import numpy as np

CORRUPTIONS = ("gaussian_noise", "smoothing", "scale_shift")


@dataclass
class SyntheticDataset:
    features: np.ndarray
    labels: np.ndarray | None
    generator_id: str
    seed: int
    params: Dict[str, object] = field(default_factory=dict)
    num_classes: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ValueError("labels and features disagree on sample count")
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def with_features(self, features, generator_id=None, **params) -> "SyntheticDataset":
        return SyntheticDataset(
            features,
            None if self.labels is None else self.labels.copy(),
            generator_id or self.generator_id,
            self.seed,
            {**self.params, **params},
            self.num_classes,
        )


def _split_counts(n: int, k: int) -> list:
    return [n // k + (1 if i < n % k else 0) for i in range(k)]


def gen_two_moons(n: int, noise: float = 0.1, seed: int = 0) -> SyntheticDataset:
    """Two interleaved unit half-circles; angles uniform on ``[0, pi]``.

    Class 0 is the upper arc centred at the origin, class 1 the lower arc
    centred at ``(1, 0.5)``.
    """
    if n < 2:
        raise ValueError("two_moons needs n >= 2")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    n0, n1 = _split_counts(n, 2)
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    x = x + noise * rng.standard_normal(x.shape)
    order = rng.permutation(n)
    return SyntheticDataset(x[order], y[order], "two_moons", seed, {"n": n, "noise": noise}, 2)


def gen_gaussian_blobs(n: int, centers, sigma: float = 1.0, seed: int = 0) -> SyntheticDataset:
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] < 2:
        raise ValueError("need at least two centers")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    k, d = centers.shape
    counts = _split_counts(n, k)
    y = np.repeat(np.arange(k), counts)
    x = centers[y] + sigma * rng.standard_normal((n, d))
    order = rng.permutation(n)
    params = {"n": n, "centers": centers.tolist(), "sigma": sigma}
    return SyntheticDataset(x[order], y[order], "gaussian_blobs", seed, params, k)


def gen_ood_ring(
    n: int, radius: float, width: float = 0.0, seed: int = 0, dim: int = 2, center=None
) -> SyntheticDataset:
    """Uniform samples from the shell ``radius - width/2 <= |x - center| <= radius + width/2``."""
    if radius <= 0 or width < 0 or width > 2 * radius:
        raise ValueError("need radius > 0 and 0 <= width <= 2*radius")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal((n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    lo, hi = (radius - width / 2) ** dim, (radius + width / 2) ** dim
    r = rng.uniform(lo, hi, n) ** (1.0 / dim) if width > 0 else np.full(n, float(radius))
    x = direction * r[:, None]
    if center is not None:
        x = x + np.asarray(center, dtype=np.float64)
    return SyntheticDataset(x, None, "ood_ring", seed, {"n": n, "radius": radius, "width": width})


def rotate(dataset: SyntheticDataset, theta: float, center=None) -> SyntheticDataset:
    """Rotate 2-D features by ``theta`` radians about ``center`` (default: feature mean)."""
    if dataset.dim != 2:
        raise ValueError("rotation is defined for 2-D data only")
    x = dataset.features
    c = x.mean(axis=0) if center is None else np.asarray(center, dtype=np.float64)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return dataset.with_features((x - c) @ rot.T + c, f"{dataset.generator_id}+rotated", theta=theta)


def corruption_magnitude(kind: str, level: int) -> float:
    """Linear per-kind schedule; see :func:`corrupt`."""
    if kind not in CORRUPTIONS:
        raise ValueError(f"unknown corruption {kind!r}; choose from {CORRUPTIONS}")
    if int(level) != level or not 1 <= level <= 5:
        raise ValueError("corruption level must be an integer in 1..5")
    return {"gaussian_noise": 0.3, "smoothing": 0.15, "scale_shift": 0.25}[kind] * level


def corrupt(dataset: SyntheticDataset, kind: str, level: int, seed: int = 0) -> SyntheticDataset:
    """Graded vector-space corruption, magnitude ``a = corruption_magnitude(kind, level)``.

    * ``gaussian_noise``: ``x + a * std * z`` with one fixed draw ``z`` per seed
    * ``smoothing``: ``(1 - a) * x + a * mean`` (contraction toward the data mean)
    * ``scale_shift``: ``(1 + a) * x + a * std`` (dilation plus offset)

    ``std``/``mean`` are per-feature statistics of the clean input.
    """
    a = corruption_magnitude(kind, level)
    x = dataset.features
    std = x.std(axis=0) if len(x) > 1 else np.ones(x.shape[1])
    if kind == "gaussian_noise":
        z = np.random.default_rng(seed).standard_normal(x.shape)
        out = x + a * std * z
    elif kind == "smoothing":
        out = (1.0 - a) * x + a * x.mean(axis=0)
    else:
        out = (1.0 + a) * x + a * std
    return dataset.with_features(out, f"{dataset.generator_id}+{kind}", corruption=kind, level=level)


class Normalizer:
    """Per-feature standardization fitted on the ID training set and reused everywhere."""

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, x) -> "Normalizer":
        x = np.asarray(x, dtype=np.float64)
        std = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def apply(self, dataset: SyntheticDataset) -> SyntheticDataset:
        return dataset.with_features(self(dataset.features))


def save_csv(path, dataset: SyntheticDataset) -> None:
    """CSV with a one-line ``# d=..,N=..,n=..,generator_id=..,seed=..`` schema header."""
    d = dataset.dim
    header = (
        f"# d={d},N={dataset.num_classes},n={len(dataset)},"
        f"generator_id={dataset.generator_id},seed={dataset.seed}\n"
    )
    cols = [f"x{i}" for i in range(d)] + ["label"]
    lines = [header, ",".join(cols) + "\n"]
    labels = dataset.labels if dataset.labels is not None else np.full(len(dataset), -1)
    for row, lab in zip(dataset.features, labels):
        lines.append(",".join(repr(float(v)) for v in row) + f",{int(lab)}\n")
    Path(path).write_text("".join(lines))


def load_csv(path) -> SyntheticDataset:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ValueError("missing dataset schema header")
    meta = dict(item.split("=", 1) for item in lines[0][2:].split(","))
    d, n = int(meta["d"]), int(meta["n"])
    rows = [line.split(",") for line in lines[2:] if line]
    if len(rows) != n:
        raise ValueError(f"header declares n={n} but file holds {len(rows)} rows")
    x = np.array([[float(v) for v in r[:d]] for r in rows]).reshape(n, d)
    y = np.array([int(r[d]) for r in rows], dtype=np.int64)
    labels = None if n and np.all(y < 0) else y
    return SyntheticDataset(x, labels, meta["generator_id"], int(meta["seed"]), {}, int(meta["N"]))


def train_test_pair(generator, n_train: int, n_test: int, seed: int, **kw) -> Sequence[SyntheticDataset]:
    """Independent train/test draws from one generator with seeds ``seed`` and ``seed + 1``."""
    return generator(n_train, seed=seed, **kw), generator(n_test, seed=seed + 1, **kw)
