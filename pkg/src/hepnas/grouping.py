"""Gradient-matching similarity between operations and min-cut grouping."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .numerics import Tape, backward, cross_entropy
from .searchspace import OpKind
from .supernet import RegionError, Supernet

MAX_CUT_OPS = 16


@dataclass(frozen=True)
class GmMatrix:
    edge: int
    ops: tuple[OpKind, ...]
    sim: np.ndarray
    batch_count: int


@dataclass(frozen=True)
class OpSplit:
    edge: int
    group_a: tuple[OpKind, ...]
    group_b: tuple[OpKind, ...]
    cut: float


def shared_param_names(net: Supernet, edge: int) -> list[str]:
    """Every weight except those private to ``edge``'s operations, in global order."""
    prefix = f"e{edge}."
    return [k for k in net.params if not k.startswith(prefix)]


def op_gradient(net: Supernet, edge: int, op: OpKind, batches: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Mean cross-entropy gradient over ``batches`` w.r.t. the shared weights,
    with ``edge`` pinned to ``op`` alone. The supernet is not modified."""
    if op not in net.region.allowed[edge]:
        raise RegionError(f"{op.value} is not allowed on edge {edge}")
    if not batches:
        raise ValueError("op_gradient needs at least one batch")
    names = shared_param_names(net, edge)
    acc = None
    for xb, yb in batches:
        tape = Tape()
        loss = cross_entropy(net.forward(xb, tape=tape, override={edge: op}, with_alpha=False), yb)
        grads = backward(tape, loss)
        flat = np.concatenate([grads[k].reshape(-1) for k in names])
        acc = flat if acc is None else acc + flat
    return acc / len(batches)


def draw_batches(data: Dataset, batch_count: int, batch_size: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(batch_count):
        idx = rng.choice(len(data), size=min(batch_size, len(data)), replace=False)
        out.append((data.inputs[idx], data.labels[idx]))
    return out


def cosine_matrix(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise cosine similarity; two zero vectors score 1, zero vs nonzero scores 0."""
    n = len(vectors)
    norms = [float(np.linalg.norm(v)) for v in vectors]
    sim = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            if norms[i] == 0.0 and norms[j] == 0.0:
                s = 1.0
            elif norms[i] == 0.0 or norms[j] == 0.0:
                s = 0.0
            else:
                s = float(np.dot(vectors[i], vectors[j]) / (norms[i] * norms[j]))
                s = min(1.0, max(-1.0, s))
            sim[i, j] = sim[j, i] = s
    return sim


def gm_vectors(net: Supernet, edge: int, data: Dataset, batch_count: int = 4, seed: int = 0,
               batch_size: int = 64) -> list[np.ndarray]:
    batches = draw_batches(data, batch_count, batch_size, seed)
    return [op_gradient(net, edge, op, batches) for op in net.region.allowed[edge]]


def gm_matrix(net: Supernet, edge: int, data: Dataset, batch_count: int = 4, seed: int = 0,
              batch_size: int = 64) -> GmMatrix:
    ops = net.region.allowed[edge]
    if len(ops) < 2:
        raise ValueError(f"edge {edge} has a single allowed op; nothing to split")
    vecs = gm_vectors(net, edge, data, batch_count, seed, batch_size)
    return GmMatrix(edge, ops, cosine_matrix(vecs), batch_count)


def cut_value(sim: np.ndarray, in_a: Sequence[bool]) -> float:
    a = [i for i, f in enumerate(in_a) if f]
    b = [i for i, f in enumerate(in_a) if not f]
    return float(sum(sim[i, j] for i in a for j in b))


def min_cut_mask(sim: np.ndarray) -> tuple[float, tuple[bool, ...]]:
    """Exhaustive two-way min-cut of a similarity matrix.

    Item 0 is always in group A, so each unordered bipartition is visited
    once. Ties keep the lexicographically smallest A-membership tuple.
    """
    n = sim.shape[0]
    if not 2 <= n <= MAX_CUT_OPS:
        raise ValueError(f"min-cut supports 2..{MAX_CUT_OPS} ops, got {n}")
    best: tuple[float, tuple[bool, ...]] | None = None
    for rest in itertools.product((False, True), repeat=n - 1):
        if all(rest):
            continue
        mask = (True, *rest)
        c = cut_value(sim, mask)
        if best is None or c < best[0]:
            best = (c, mask)
    return best


def min_cut_split(matrix: GmMatrix) -> OpSplit:
    cut, mask = min_cut_mask(matrix.sim)
    return OpSplit(
        matrix.edge,
        tuple(o for o, f in zip(matrix.ops, mask) if f),
        tuple(o for o, f in zip(matrix.ops, mask) if not f),
        cut,
    )


def write_gm_csv(matrices: Sequence[GmMatrix], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["edge", "op_i", "op_j", "similarity"])
        for m in matrices:
            for i, oi in enumerate(m.ops):
                for j, oj in enumerate(m.ops):
                    w.writerow([m.edge, oi.value, oj.value, repr(float(m.sim[i, j]))])
