"""Synthetic 2-D classification sets, the bundled digits file, and splitting."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError, EmptyDataError, FormatError

DEFAULT_NOISE = 0.07
BLOB_MAX_CLASSES = 10


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise FormatError(f"features {self.features.shape} do not align with {len(self.labels)} labels")
        if len(self.labels) == 0:
            raise EmptyDataError("dataset has no rows")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise FormatError(f"labels outside [0, {self.class_count})")
        if not np.all(np.isfinite(self.features)):
            raise FormatError("features must be finite")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.class_count)

    def to_csv(self, path) -> None:
        header = ",".join([f"f{i}" for i in range(self.dim)] + ["label"])
        buf = io.StringIO()
        buf.write(header + "\n")
        for row, label in zip(self.features, self.labels):
            buf.write(",".join(repr(float(v)) for v in row))
            buf.write(f",{int(label)}\n")
        Path(path).write_text(buf.getvalue(), encoding="utf-8")

    @classmethod
    def from_csv(cls, path, class_count: int | None = None) -> "Dataset":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise EmptyDataError(f"{path} is empty")
        header = lines[0].split(",")
        if header[-1] != "label":
            raise FormatError(f"{path}: header must end with 'label'", line=1)
        feats, labels = [], []
        for lineno, line in enumerate(lines[1:], start=2):
            parts = line.split(",")
            if len(parts) != len(header):
                raise FormatError(f"{path}: expected {len(header)} fields", line=lineno)
            try:
                feats.append([float(p) for p in parts[:-1]])
                labels.append(int(parts[-1]))
            except ValueError as exc:
                raise FormatError(f"{path}: {exc}", line=lineno) from None
        if not labels:
            raise EmptyDataError(f"{path} has no rows")
        if class_count is None:
            class_count = max(labels) + 1
        return cls(np.array(feats), np.array(labels), class_count)


@dataclass
class SplitDataset:
    train: Dataset
    test: Dataset
    test_fraction: float

    @property
    def class_count(self) -> int:
        return self.train.class_count


def _check_n(n: int) -> None:
    if n < 2:
        raise ConfigError(f"need at least 2 points, got {n}")


def _finish(x: np.ndarray, y: np.ndarray, noise_std: float, rng, class_count: int) -> Dataset:
    if noise_std > 0:
        x = x + rng.normal(0.0, noise_std, size=x.shape)
    order = rng.permutation(len(y))
    return Dataset(x[order], y[order], class_count)


def gen_moons(n: int, noise_std: float = DEFAULT_NOISE, seed: int = 0) -> Dataset:
    """Two interleaving half circles; class 0 on the upper arc."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, math.pi, n0)
    t1 = rng.uniform(0.0, math.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    return _finish(np.vstack([upper, lower]), y, noise_std, rng, 2)


def gen_circles(n: int, noise_std: float = DEFAULT_NOISE, seed: int = 0, factor: float = 0.5) -> Dataset:
    """Outer ring of radius 1 (class 0) around an inner ring of radius ``factor`` (class 1)."""
    _check_n(n)
    if not 0 < factor < 1:
        raise ConfigError(f"inner radius factor must be in (0, 1), got {factor}")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    a0 = rng.uniform(0.0, 2 * math.pi, n0)
    a1 = rng.uniform(0.0, 2 * math.pi, n1)
    outer = np.column_stack([np.cos(a0), np.sin(a0)])
    inner = factor * np.column_stack([np.cos(a1), np.sin(a1)])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    return _finish(np.vstack([outer, inner]), y, noise_std, rng, 2)


def blob_centers(seed: int, count: int = BLOB_MAX_CLASSES, min_separation: float = 6.0,
                 box: tuple[float, float] = (-10.0, 10.0), max_tries: int = 2000) -> np.ndarray:
    """Cluster centers drawn one after another by rejection sampling.

    Each center is redrawn until it keeps ``min_separation`` to all earlier
    ones; if ``max_tries`` draws fail, the draw farthest from its neighbours is
    kept. Centers are generated sequentially from one stream, so the first
    ``k`` centers for any ``count >= k`` coincide.
    """
    rng = np.random.default_rng([seed, 0xB10B])
    centers: list[np.ndarray] = []
    for _ in range(count):
        best, best_gap = None, -1.0
        for _ in range(max_tries):
            c = rng.uniform(box[0], box[1], 2)
            gap = min((np.linalg.norm(c - o) for o in centers), default=np.inf)
            if gap >= min_separation:
                best = c
                break
            if gap > best_gap:
                best, best_gap = c, gap
        centers.append(best)
    return np.array(centers)


def gen_blobs(n: int, class_count: int, seed: int = 0, cluster_std: float = 1.0,
              min_separation: float | None = None) -> Dataset:
    """Isotropic Gaussian clusters labelled by cluster index.

    ``min_separation`` defaults to six cluster standard deviations.
    """
    if not 2 <= class_count <= BLOB_MAX_CLASSES:
        raise ConfigError(f"class_count must be in [2, {BLOB_MAX_CLASSES}], got {class_count}")
    _check_n(n)
    sep = 6.0 * cluster_std if min_separation is None else min_separation
    centers = blob_centers(seed, BLOB_MAX_CLASSES, sep)[:class_count]
    rng = np.random.default_rng([seed, class_count])
    sizes = [n // class_count + (1 if i < n % class_count else 0) for i in range(class_count)]
    x = np.vstack([centers[i] + rng.normal(0.0, cluster_std, (s, 2)) for i, s in enumerate(sizes)])
    y = np.repeat(np.arange(class_count), sizes)
    order = rng.permutation(n)
    return Dataset(x[order], y[order], class_count)


def _digits_path() -> Path:
    return Path(str(resources.files("slt_ga") / "data" / "digits.csv"))


def load_digits(path=None, classes: Iterable[int] | None = None) -> Dataset:
    """Read the 8x8 digits CSV (64 pixel values then the label per line)."""
    path = _digits_path() if path is None else Path(path)
    wanted = set(range(10)) if classes is None else {int(c) for c in classes}
    feats, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 65:
                raise FormatError(f"expected 65 fields, got {len(parts)}", line=lineno)
            try:
                values = [int(p) for p in parts]
            except ValueError as exc:
                raise FormatError(str(exc), line=lineno) from None
            pixels, label = values[:64], values[64]
            if not 0 <= label <= 9 or min(pixels) < 0 or max(pixels) > 16:
                raise FormatError("value out of range", line=lineno)
            if label in wanted:
                feats.append(pixels)
                labels.append(label)
    if not labels:
        raise EmptyDataError(f"no rows with labels in {sorted(wanted)}")
    present = sorted(set(labels))
    remap = {c: i for i, c in enumerate(present)}
    y = np.array([remap[c] for c in labels], dtype=np.int64)
    return Dataset(np.array(feats, dtype=np.float64), y, len(present))


def minmax_normalize(data: Dataset, lo: float = 0.0, hi: float = 1.0) -> Dataset:
    if not hi > lo:
        raise ConfigError(f"need hi > lo, got [{lo}, {hi}]")
    x = data.features
    mn = x.min(axis=0)
    mx = x.max(axis=0)
    span = mx - mn
    const = span == 0
    scale = np.where(const, 0.0, (hi - lo) / np.where(const, 1.0, span))
    out = lo + (x - mn) * scale
    # pin the extremes so a second pass sees exactly [lo, hi]
    out = np.where(x == mn, lo, np.where(x == mx, hi, out))
    out[:, const] = 0.5 * (lo + hi)
    # features already spanning exactly [lo, hi] pass through untouched
    exact = (mn == lo) & (mx == hi)
    out[:, exact] = x[:, exact]
    return Dataset(np.clip(out, lo, hi), data.labels.copy(), data.class_count)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(data: Dataset, test_fraction: float = 0.25, seed: int = 0) -> SplitDataset:
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(data)
    n_test = round_half_up(test_fraction * n)
    if n_test == 0 or n_test == n:
        raise ConfigError(f"split of {n} rows at {test_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return SplitDataset(data.subset(perm[n_test:]), data.subset(perm[:n_test]), test_fraction)
