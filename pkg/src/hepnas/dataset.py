"""Synthetic classification data and the four-way train_w/train_alpha/valid/test split."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError(f"inputs {self.inputs.shape} and labels {self.labels.shape} disagree")
        self.inputs.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.inputs.shape[1])

    def subset(self, idx: np.ndarray) -> Dataset:
        return Dataset(self.inputs[idx].copy(), self.labels[idx].copy(), self.n_classes, self.seed)

    def concat(self, other: Dataset) -> Dataset:
        return Dataset(
            np.concatenate([self.inputs, other.inputs]),
            np.concatenate([self.labels, other.labels]),
            self.n_classes,
            self.seed,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        """Yield (inputs, labels) minibatches, shuffled when ``rng`` is given."""
        n = len(self)
        order = rng.permutation(n) if rng is not None else np.arange(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            yield self.inputs[idx], self.labels[idx]


def _class_sizes(n: int, n_classes: int) -> list[int]:
    return [n // n_classes + (1 if c < n % n_classes else 0) for c in range(n_classes)]


def gen_blobs(seed: int, n: int, d: int, n_classes: int, spread: float) -> Dataset:
    """Isotropic Gaussian clusters around seed-fixed centers."""
    if n_classes < 2 or d < 2 or n < 4 * n_classes or not spread > 0:
        raise DataError(f"gen_blobs needs n >= 4C, d >= 2, C >= 2, spread > 0 (got n={n}, d={d}, C={n_classes}, spread={spread})")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, size=(n_classes, d))
    xs, ys = [], []
    for c, m in enumerate(_class_sizes(n, n_classes)):
        xs.append(centers[c] + spread * rng.normal(size=(m, d)))
        ys.append(np.full(m, c, dtype=np.int64))
    return Dataset(np.concatenate(xs), np.concatenate(ys), n_classes, seed)


def gen_spirals(seed: int, n: int, n_classes: int, noise: float, turns: float = 0.65) -> Dataset:
    """Interleaved 2-D spiral arms, one per class; ``noise`` jitters the angle."""
    if n_classes < 2 or n < 4 * n_classes or noise < 0:
        raise DataError(f"gen_spirals needs n >= 4C, C >= 2, noise >= 0 (got n={n}, C={n_classes}, noise={noise})")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c, m in enumerate(_class_sizes(n, n_classes)):
        r = np.linspace(0.05, 1.0, m)
        theta = 2 * math.pi * (c / n_classes + turns * r) + noise * rng.normal(size=m)
        xs.append(np.stack([r * np.sin(theta), r * np.cos(theta)], axis=1))
        ys.append(np.full(m, c, dtype=np.int64))
    return Dataset(np.concatenate(xs), np.concatenate(ys), n_classes, seed)


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float, float] = (0.35, 0.35, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.fractions) != 4 or any(not f > 0 for f in self.fractions):
            raise DataError(f"split needs four positive fractions, got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise DataError(f"split fractions sum to {sum(self.fractions)}, expected 1")


class Splits(NamedTuple):
    train_w: Dataset
    train_alpha: Dataset
    valid: Dataset
    test: Dataset


def _part_sizes(n: int, fractions) -> list[int]:
    # largest remainder so the parts add up to n exactly
    raw = [f * n for f in fractions]
    sizes = [math.floor(r + 1e-9) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_indices(labels: np.ndarray, spec: SplitSpec) -> list[np.ndarray]:
    """Class-stratified shuffled index sets for the four parts."""
    n = labels.shape[0]
    sizes = _part_sizes(n, spec.fractions)
    if min(sizes) < 1:
        raise DataError(f"split of {n} rows with fractions {spec.fractions} leaves an empty part ({sizes})")
    rng = np.random.default_rng(spec.seed)
    keys = np.empty(n)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(members.size)]
        keys[members] = (np.arange(members.size) + 0.5) / members.size
    # random tiebreak keeps classes from always appearing in label order
    tiebreak = rng.random(n)
    order = np.lexsort((tiebreak, keys))
    cuts = np.cumsum([0, *sizes])
    return [np.sort(order[cuts[i] : cuts[i + 1]]) for i in range(4)]


def split(dataset: Dataset, spec: SplitSpec) -> Splits:
    return Splits(*(dataset.subset(idx) for idx in split_indices(dataset.labels, spec)))


def write_csv(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(dataset.dim)] + ["label"])
        for x, y in zip(dataset.inputs, dataset.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def read_csv(path: str | Path, n_classes: int | None = None) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[-1] != "label" or header[:-1] != [f"f{j}" for j in range(len(header) - 1)]:
        raise DataError(f"{path}: header must be f0,...,f{{d-1}},label")
    x = np.array([[float(v) for v in r[:-1]] for r in body], dtype=np.float64).reshape(len(body), len(header) - 1)
    y = np.array([int(r[-1]) for r in body], dtype=np.int64)
    return Dataset(x, y, n_classes if n_classes is not None else int(y.max()) + 1)
