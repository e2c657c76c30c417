"""Cell DAG model: operations, edges, hierarchies, regions and architectures."""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

DEFAULT_ENUM_CAP = 4096


class OpKind(enum.Enum):
    ZERO = "zero"
    SKIP = "skip"
    AVG_PAIR = "avg_pair"
    AFFINE_RELU = "affine_relu"
    AFFINE_TANH = "affine_tanh"

    @property
    def parametric(self) -> bool:
        return self in (OpKind.AFFINE_RELU, OpKind.AFFINE_TANH)

    @classmethod
    def parse(cls, name: str) -> OpKind:
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown operation {name!r}; expected one of {[o.value for o in cls]}") from None


DEFAULT_PALETTE: tuple[OpKind, ...] = tuple(OpKind)
ORACLE_PALETTE: tuple[OpKind, ...] = (OpKind.ZERO, OpKind.SKIP, OpKind.AFFINE_RELU)

Edge = tuple[int, int]


class SpaceError(ValueError):
    pass


@dataclass(frozen=True)
class CellSpec:
    """Single-input cell: node 0 is the stem output, nodes 1..N-1 are intermediates.

    Node ``k`` receives one edge from every predecessor. The last intermediate
    node feeds the classifier head.
    """

    n_nodes: int = 4
    width: int = 8
    n_classes: int = 3
    in_dim: int = 2
    palette: tuple[OpKind, ...] = DEFAULT_PALETTE

    def __post_init__(self) -> None:
        if self.n_nodes < 2:
            raise SpaceError(f"n_nodes must be >= 2, got {self.n_nodes}")
        if self.width < 1 or self.n_classes < 2 or self.in_dim < 1:
            raise SpaceError("width >= 1, n_classes >= 2 and in_dim >= 1 are required")
        if not self.palette:
            raise SpaceError("palette must contain at least one operation")
        if len(set(self.palette)) != len(self.palette):
            raise SpaceError("palette contains duplicates")
        ordered = tuple(o for o in OpKind if o in self.palette)
        if ordered != tuple(self.palette):
            object.__setattr__(self, "palette", ordered)
        if OpKind.AVG_PAIR in self.palette and self.width % 2:
            raise SpaceError("avg_pair requires an even width")

    @property
    def edges(self) -> tuple[Edge, ...]:
        return tuple((i, k) for k in range(1, self.n_nodes) for i in range(k))

    @property
    def n_intermediate(self) -> int:
        return self.n_nodes - 1

    def edge_index(self, edge: Edge) -> int:
        i, k = edge
        if not (0 <= i < k < self.n_nodes):
            raise SpaceError(f"no edge {edge} in a {self.n_nodes}-node cell")
        return k * (k - 1) // 2 + i

    def full_region(self) -> Region:
        return Region(tuple(self.palette for _ in self.edges))

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "width": self.width,
            "n_classes": self.n_classes,
            "in_dim": self.in_dim,
            "palette": [o.value for o in self.palette],
        }

    @classmethod
    def from_dict(cls, d: dict) -> CellSpec:
        return cls(
            n_nodes=int(d["n_nodes"]),
            width=int(d["width"]),
            n_classes=int(d["n_classes"]),
            in_dim=int(d["in_dim"]),
            palette=tuple(OpKind.parse(o) for o in d["palette"]),
        )


@dataclass(frozen=True)
class Hierarchy:
    end_node: int
    edges: tuple[Edge, ...]

    def __len__(self) -> int:
        return len(self.edges)


def hierarchies(spec: CellSpec) -> list[Hierarchy]:
    """One hierarchy per intermediate node, ascending by end node."""
    return [Hierarchy(k, tuple((i, k) for i in range(k))) for k in range(1, spec.n_nodes)]


def _ordered(ops: Iterable[OpKind]) -> tuple[OpKind, ...]:
    s = set(ops)
    return tuple(o for o in OpKind if o in s)


@dataclass(frozen=True)
class Region:
    """Per-edge allowed operation subsets, in cell edge order."""

    allowed: tuple[tuple[OpKind, ...], ...]

    def __post_init__(self) -> None:
        fixed = tuple(_ordered(ops) for ops in self.allowed)
        for e, ops in enumerate(fixed):
            if not ops:
                raise SpaceError(f"edge {e} has an empty allowed set")
        object.__setattr__(self, "allowed", fixed)

    def __len__(self) -> int:
        return len(self.allowed)

    def size(self) -> int:
        return math.prod(len(ops) for ops in self.allowed)

    def issubset(self, other: Region) -> bool:
        return len(self) == len(other) and all(set(a) <= set(b) for a, b in zip(self.allowed, other.allowed))

    def intersect(self, other: Region) -> Region:
        if len(self) != len(other):
            raise SpaceError("regions over different edge counts")
        return Region(tuple(_ordered(set(a) & set(b)) for a, b in zip(self.allowed, other.allowed)))

    def restrict(self, edge_idx: int, ops: Iterable[OpKind]) -> Region:
        ops = _ordered(ops)
        if not set(ops) <= set(self.allowed[edge_idx]):
            raise SpaceError(f"{[o.value for o in ops]} not allowed on edge {edge_idx}")
        allowed = list(self.allowed)
        allowed[edge_idx] = ops
        return Region(tuple(allowed))

    def contains(self, arch: Architecture) -> bool:
        return len(arch.ops) == len(self) and all(o in ops for o, ops in zip(arch.ops, self.allowed))

    def encode(self) -> str:
        return "|".join("+".join(o.value for o in ops) for ops in self.allowed)

    @classmethod
    def decode(cls, text: str) -> Region:
        return cls(tuple(tuple(OpKind.parse(o) for o in part.split("+")) for part in text.split("|")))


def region_size(region: Region) -> int:
    return region.size()


@dataclass(frozen=True)
class Architecture:
    ops: tuple[OpKind, ...]

    def encode(self) -> str:
        return encode(self)

    def region(self) -> Region:
        return Region(tuple((o,) for o in self.ops))


def encode(arch: Architecture) -> str:
    return "|".join(o.value for o in arch.ops)


def decode(text: str, spec: CellSpec) -> Architecture:
    parts = text.split("|")
    if len(parts) != len(spec.edges):
        raise SpaceError(f"encoding has {len(parts)} ops, cell has {len(spec.edges)} edges")
    return Architecture(tuple(OpKind.parse(p) for p in parts))


def iter_archs(region: Region) -> Iterator[Architecture]:
    for ops in itertools.product(*region.allowed):
        yield Architecture(ops)


def enumerate_archs(region: Region, cap: int = DEFAULT_ENUM_CAP) -> list[Architecture]:
    """All architectures of ``region`` in lexicographic (palette) order."""
    n = region.size()
    if n > cap:
        raise SpaceError(
            f"region holds {n} architectures, above the enumeration cap {cap}; "
            "shrink the oracle space (fewer ops or nodes) or raise the cap"
        )
    return list(iter_archs(region))


def arch_index(arch: Architecture, region: Region) -> int:
    """Position of ``arch`` in :func:`enumerate_archs` order (mixed-radix)."""
    idx = 0
    for o, ops in zip(arch.ops, region.allowed):
        idx = idx * len(ops) + ops.index(o)
    return idx


def ops_of(names: Sequence[str]) -> tuple[OpKind, ...]:
    return tuple(OpKind.parse(n) for n in names)
