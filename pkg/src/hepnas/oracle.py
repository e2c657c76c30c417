"""Ground-truth accuracies by standalone training, and ranking metrics."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Splits
from .searchspace import DEFAULT_ENUM_CAP, Architecture, CellSpec, Region, SpaceError, decode, enumerate_archs
from .supernet import Supernet, TrainConfig, eval_accuracy, fit_single_path

ORACLE_HEADER = ["arch_id", "encoding", "seed", "test_acc"]


@dataclass(frozen=True)
class OracleConfig:
    epochs: int = 60
    lr: float = 0.05
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 3e-4
    clip_norm: float = 5.0
    batch_size: int = 64

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr_w=self.lr, lr_w_min=self.lr_min, momentum=self.momentum, weight_decay_w=self.weight_decay,
            clip_norm=self.clip_norm, batch_size=self.batch_size, lr_alpha=0.0,
        )


@dataclass
class OracleTable:
    region: Region
    accuracies: dict[str, float]
    seeds: dict[str, int]
    config: OracleConfig = field(default_factory=OracleConfig)

    def __len__(self) -> int:
        return len(self.accuracies)

    def values(self) -> np.ndarray:
        return np.array(list(self.accuracies.values()))

    def best(self) -> float:
        return max(self.accuracies.values())


def train_standalone(arch: Architecture, spec: CellSpec, data: Splits, cfg: OracleConfig, seed: int) -> float:
    """Train ``arch`` from scratch on train_w + train_alpha; return test accuracy."""
    net = Supernet.create(spec, arch.region(), seed=seed)
    fit_single_path(net, data.train_w.concat(data.train_alpha), cfg.train_config(), cfg.epochs)
    return eval_accuracy(net, data.test, arch=arch)


def arch_seed(base_seed: int, index: int) -> int:
    return base_seed ^ index


def _row_job(args):
    idx, enc, seed, spec, data, cfg = args
    return idx, enc, seed, train_standalone(decode(enc, spec), spec, data, cfg, seed)


def read_table_csv(path: str | Path) -> list[tuple[int, str, int, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ORACLE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(ORACLE_HEADER)}")
        return [(int(r[0]), r[1], int(r[2]), float(r[3])) for r in reader if r]


def _write_rows(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(ORACLE_HEADER)
        for idx, enc, seed, acc in sorted(rows):
            w.writerow([idx, enc, seed, repr(float(acc))])


def build_table(
    spec: CellSpec,
    region: Region,
    data: Splits,
    cfg: OracleConfig = OracleConfig(),
    base_seed: int = 0,
    *,
    path: str | Path | None = None,
    workers: int = 1,
    cap: int = DEFAULT_ENUM_CAP,
    limit: int | None = None,
) -> OracleTable:
    """Standalone-train every architecture of ``region``.

    With ``path`` set, rows already in the CSV are reused and new rows are
    appended as they finish; the file is rewritten sorted by arch id at the
    end. ``limit`` stops after that many new rows (for staged builds).
    """
    archs = enumerate_archs(region, cap)
    done: dict[int, tuple[int, str, int, float]] = {}
    if path is not None and Path(path).exists():
        for row in read_table_csv(path):
            if row[0] >= len(archs) or archs[row[0]].encode() != row[1]:
                raise SpaceError(f"{path}: row {row[0]} ({row[1]}) does not belong to region {region.encode()}")
            done[row[0]] = row
    todo = [(i, a.encode(), arch_seed(base_seed, i), spec, data, cfg) for i, a in enumerate(archs) if i not in done]
    if limit is not None:
        todo = todo[:limit]
    fh = None
    if path is not None:
        path = Path(path)
        fresh = not path.exists()
        fh = open(path, "a", newline="", encoding="utf-8")
        if fresh:
            csv.writer(fh).writerow(ORACLE_HEADER)
    try:
        if workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(_row_job, todo, chunksize=4)
                for row in results:
                    done[row[0]] = row
                    if fh:
                        csv.writer(fh).writerow([row[0], row[1], row[2], repr(float(row[3]))])
                        fh.flush()
        else:
            for job in todo:
                row = _row_job(job)
                done[row[0]] = row
                if fh:
                    csv.writer(fh).writerow([row[0], row[1], row[2], repr(float(row[3]))])
                    fh.flush()
    finally:
        if fh:
            fh.close()
    if path is not None:
        _write_rows(path, done.values())
    rows = [done[i] for i in sorted(done)]
    return OracleTable(region, {r[1]: r[3] for r in rows}, {r[1]: r[2] for r in rows}, cfg)


def load_table(path: str | Path, region: Region, cfg: OracleConfig = OracleConfig()) -> OracleTable:
    rows = read_table_csv(path)
    return OracleTable(region, {r[1]: r[3] for r in rows}, {r[1]: r[2] for r in rows}, cfg)


# ------------------------------------------------------------------ ranking


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties.

    Returns NaN when either input is constant (correlation undefined).
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"spearman: length mismatch {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError("spearman: need at least two points")
    rx, ry = _average_ranks(x), _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = math.sqrt(float((rx * rx).sum()) * float((ry * ry).sum()))
    if den == 0.0:
        return float("nan")
    return max(-1.0, min(1.0, float((rx * ry).sum()) / den))


def estimate_archs(net: Supernet, valid, archs: Sequence[Architecture] | None = None) -> dict[str, float]:
    """Inherited-weight validation accuracy of each architecture, single-path forward."""
    if archs is None:
        archs = enumerate_archs(net.region)
    return {a.encode(): eval_accuracy(net, valid, arch=a) for a in archs}


@dataclass
class RankReport:
    spearman: float | None
    selected: str
    selected_acc: float
    best_acc: float
    regret: float
    percentile: float
    top_fraction: float
    n_estimates: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> RankReport:
        return cls(**d)


def rank_report(selected: Architecture, table: OracleTable, estimates: Mapping[str, float]) -> RankReport:
    """Compare supernet estimates against oracle accuracies.

    ``percentile`` is the share of the table at or below the selected
    architecture; ``top_fraction`` is the share strictly above it.
    """
    missing = [e for e in estimates if e not in table.accuracies]
    if missing or selected.encode() not in table.accuracies:
        raise SpaceError(f"architectures outside the oracle table: {(missing or [selected.encode()])[:3]}")
    encs = list(estimates)
    rho = None
    if len(encs) >= 2:
        r = spearman([estimates[e] for e in encs], [table.accuracies[e] for e in encs])
        rho = None if math.isnan(r) else r
    vals = table.values()
    sel = table.accuracies[selected.encode()]
    best = float(vals.max())
    return RankReport(
        spearman=rho,
        selected=selected.encode(),
        selected_acc=sel,
        best_acc=best,
        regret=best - sel,
        percentile=float((vals <= sel).mean()) * 100.0,
        top_fraction=float((vals > sel).mean()),
        n_estimates=len(encs),
    )


def write_report(report: RankReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> RankReport:
    return RankReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
