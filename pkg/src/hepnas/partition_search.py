"""Hierarchy-wise partitioned search with mutual distillation.

The driver trains the whole supernet, then for each hierarchy (edges sharing
an end node) groups every edge's operations in two by gradient matching,
spawns one child per combination of groups, warms the children up together
under SMD, keeps the best on validation and moves to the next hierarchy.
"""
from __future__ import annotations

import dataclasses
import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Splits
from .grouping import OpSplit, gm_matrix, min_cut_split
from .searchspace import Architecture, CellSpec, Hierarchy, Region, hierarchies
from .smd import SmdWeights, smd_loss
from .supernet import Supernet, TrainConfig, discretize, eval_accuracy, inherit, train_epoch

__all__ = [
    "GmConfig",
    "StageSchedule",
    "StageLog",
    "SearchResult",
    "ScheduleError",
    "SmdWeights",
    "smd_loss",
    "split_hierarchy",
    "select_best",
    "run_search",
    "run_oneshot",
]

log = logging.getLogger(__name__)

SPLIT_ORDERS = ("ascending", "reverse", "random")
BASELINES = ("hepnas", "oneshot", "edgewise")


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class GmConfig:
    batch_count: int = 4
    batch_size: int = 64
    seed: int = 0


@dataclass(frozen=True)
class StageSchedule:
    split_epos: tuple[int, ...]
    warm_epo: int = 5
    warm_decay: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "split_epos", tuple(int(e) for e in self.split_epos))
        if not self.split_epos:
            raise ScheduleError("schedule.split_epos must not be empty")
        if self.split_epos[0] < 0 or any(b <= a for a, b in zip(self.split_epos, self.split_epos[1:])):
            raise ScheduleError(f"schedule.split_epos must be strictly ascending and >= 0, got {list(self.split_epos)}")
        if self.warm_epo < 1:
            raise ScheduleError("schedule.warm_epo must be >= 1")
        if self.warm_decay < 0:
            raise ScheduleError("schedule.warm_decay must be >= 0")

    def warmups(self) -> list[int]:
        return [max(1, self.warm_epo - s * self.warm_decay) for s in range(len(self.split_epos))]

    def horizon(self) -> int:
        """Epochs seen by the surviving lineage: pre-split training plus every warmup."""
        return self.split_epos[-1] + sum(self.warmups())


@dataclass
class StageLog:
    stage: int
    end_node: int
    edges: list[int]
    splits: list[OpSplit]
    parent_region: str
    parent_size: int
    regions: list[str]
    sizes: list[int]
    val_accs: list[float]
    selected: int
    warmup: int

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "end_node": self.end_node,
            "edges": self.edges,
            "splits": [
                {"edge": s.edge, "group_a": [o.value for o in s.group_a], "group_b": [o.value for o in s.group_b], "cut": s.cut}
                for s in self.splits
            ],
            "parent_region": self.parent_region,
            "parent_size": self.parent_size,
            "regions": self.regions,
            "sizes": self.sizes,
            "val_accs": self.val_accs,
            "selected": self.selected,
            "warmup": self.warmup,
        }


@dataclass
class SearchResult:
    architecture: Architecture
    supernet: Supernet
    stages: list[StageLog] = field(default_factory=list)
    weight_losses: list[float] = field(default_factory=list)
    seed: int = 0


def _splittable_edges(parent: Supernet, edges: Sequence[int]) -> list[int]:
    return [e for e in edges if len(parent.region.allowed[e]) >= 2]


def split_edges(parent: Supernet, edges: Sequence[int], data: Splits, gm: GmConfig = GmConfig()) -> tuple[list[Supernet], list[OpSplit]]:
    """Children over the Cartesian product of per-edge two-way groups.

    Edges with one allowed op contribute a single factor. Children are ordered
    with group A before group B on every edge, earlier edges varying slowest.
    """
    splits = []
    factors = []
    for e in edges:
        ops = parent.region.allowed[e]
        if len(ops) < 2:
            factors.append([ops])
            continue
        s = min_cut_split(gm_matrix(parent, e, data.train_w, gm.batch_count, seed=gm.seed + e, batch_size=gm.batch_size))
        splits.append(s)
        factors.append([s.group_a, s.group_b])
    children = []
    for combo in itertools.product(*factors):
        region = parent.region
        for e, ops in zip(edges, combo):
            region = region.restrict(e, ops)
        children.append(inherit(parent, region))
    return children, splits


def split_hierarchy(parent: Supernet, hierarchy: Hierarchy, data: Splits, gm: GmConfig = GmConfig()) -> list[Supernet]:
    edges = [parent.spec.edge_index(edge) for edge in hierarchy.edges]
    return split_edges(parent, edges, data, gm)[0]


def select_best(children: Sequence[Supernet], valid, arch_mode: str = "mixture") -> tuple[int, list[float]]:
    """Index of the child with the highest validation accuracy (lowest index on ties)."""
    if not children:
        raise ValueError("select_best: no children")
    if arch_mode not in ("mixture", "discrete"):
        raise ValueError(f"unknown selection mode {arch_mode!r}")
    accs = []
    for c in children:
        arch = discretize(c) if arch_mode == "discrete" else None
        accs.append(eval_accuracy(c, valid, arch=arch))
    return int(np.argmax(accs)), accs


def _train_for(net: Supernet, epochs: int, data: Splits, cfg: TrainConfig, losses: list[float]) -> None:
    for _ in range(epochs):
        losses.extend(train_epoch(net, data, cfg).weight_losses)


def _stage_groups(spec: CellSpec, order: str, baseline: str, seed: int) -> list[tuple[int, list[int]]]:
    hs = hierarchies(spec)
    if order == "reverse":
        hs = hs[::-1]
    elif order == "random":
        perm = np.random.default_rng([seed, 7919]).permutation(len(hs))
        hs = [hs[i] for i in perm]
    groups = [(h.end_node, [spec.edge_index(e) for e in h.edges]) for h in hs]
    if baseline == "edgewise":
        return [(k, [e]) for k, es in groups for e in es]
    return groups


def run_search(
    spec: CellSpec,
    data: Splits,
    cfg: TrainConfig,
    schedule: StageSchedule,
    smd: SmdWeights = SmdWeights(),
    seed: int = 0,
    *,
    gm: GmConfig = GmConfig(),
    order: str = "ascending",
    baseline: str = "hepnas",
    max_stages: int | None = None,
    select_mode: str = "mixture",
    region: Region | None = None,
) -> SearchResult:
    """Run the full partitioned search and return the derived architecture.

    ``baseline="edgewise"`` splits one edge per stage (every edge of a
    hierarchy in turn, each with that hierarchy's warmup); ``"oneshot"``
    delegates to :func:`run_oneshot` over the same epoch horizon.
    """
    if order not in SPLIT_ORDERS:
        raise ScheduleError(f"unknown split order {order!r}")
    if baseline not in BASELINES:
        raise ScheduleError(f"unknown baseline {baseline!r}")
    if len(schedule.split_epos) != spec.n_intermediate:
        raise ScheduleError(
            f"schedule.split_epos has {len(schedule.split_epos)} entries; the cell has {spec.n_intermediate} intermediate nodes"
        )
    n_stages = spec.n_intermediate if max_stages is None else max_stages
    if not 1 <= n_stages <= spec.n_intermediate:
        raise ScheduleError(f"max_stages must be in 1..{spec.n_intermediate}")
    horizon = schedule.horizon()
    cfg = dataclasses.replace(cfg, horizon=horizon)
    if baseline == "oneshot":
        return run_oneshot(spec, data, cfg, horizon, seed, region=region)

    net = Supernet.create(spec, region, seed=seed)
    net.reset_optimizers(cfg)
    result = SearchResult(architecture=None, supernet=net, seed=seed)  # type: ignore[arg-type]
    warmups = schedule.warmups()
    stage_groups = _stage_groups(spec, order, "hepnas", seed)[:n_stages]
    start = 0
    stage_idx = 0
    for s, (end_node, hier_edges) in enumerate(stage_groups):
        _train_for(net, schedule.split_epos[s] - start, data, cfg, result.weight_losses)
        start = schedule.split_epos[s]
        edge_batches = [[e] for e in hier_edges] if baseline == "edgewise" else [hier_edges]
        for edges in edge_batches:
            net = _split_stage(net, edges, end_node, stage_idx, warmups[s], data, cfg, smd, gm, select_mode, result)
            stage_idx += 1
    result.supernet = net
    result.architecture = discretize(net)
    return result


def _split_stage(net, edges, end_node, stage_idx, warmup, data, cfg, smd, gm, select_mode, result) -> Supernet:
    teacher = net.copy()
    children, splits = split_edges(net, edges, data, gm)
    for c in children:
        c.reset_optimizers(cfg)
    for _ in range(warmup):
        for m, child in enumerate(children):
            peers = children[:m] + children[m + 1 :]
            stats = train_epoch(child, data, cfg, prev=teacher, peers=peers, smd=smd)
            result.weight_losses.extend(stats.weight_losses)
    best, accs = select_best(children, data.valid, select_mode)
    result.stages.append(
        StageLog(
            stage=stage_idx,
            end_node=end_node,
            edges=list(edges),
            splits=splits,
            parent_region=net.region.encode(),
            parent_size=net.region.size(),
            regions=[c.region.encode() for c in children],
            sizes=[c.region.size() for c in children],
            val_accs=accs,
            selected=best,
            warmup=warmup,
        )
    )
    log.info("stage %d node %d: %d children, val %s -> %d", stage_idx, end_node, len(children), accs, best)
    return children[best]


def run_oneshot(spec: CellSpec, data: Splits, cfg: TrainConfig, epochs: int, seed: int = 0,
                region: Region | None = None) -> SearchResult:
    """Plain weight-sharing baseline: train the whole supernet, then discretize."""
    cfg = dataclasses.replace(cfg, horizon=epochs)
    net = Supernet.create(spec, region, seed=seed)
    net.reset_optimizers(cfg)
    result = SearchResult(architecture=None, supernet=net, seed=seed)  # type: ignore[arg-type]
    _train_for(net, epochs, data, cfg, result.weight_losses)
    result.architecture = discretize(net)
    return result
