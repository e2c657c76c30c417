"""Run configuration: strict JSON loading and cross-field validation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .dataset import DataError, Dataset, SplitSpec, Splits, gen_blobs, gen_spirals, split
from .grouping import MAX_CUT_OPS
from .oracle import OracleConfig
from .partition_search import BASELINES, SPLIT_ORDERS, GmConfig, ScheduleError, StageSchedule
from .searchspace import CellSpec, OpKind, SpaceError
from .smd import SmdWeights
from .supernet import TrainConfig


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str) -> None:
        self.field = field_path
        super().__init__(f"{field_path}: {message}")


@dataclass(frozen=True)
class DatasetBlock:
    generator: str = "spirals"
    seed: int = 0
    n: int = 3000
    n_classes: int = 3
    dim: int = 2
    spread: float = 0.3
    noise: float = 0.15
    turns: float = 1.25
    fractions: tuple[float, float, float, float] = (0.35, 0.35, 0.15, 0.15)
    split_seed: int = 0


@dataclass(frozen=True)
class SpaceBlock:
    n_nodes: int = 4
    width: int = 8
    palette: tuple[str, ...] = ("zero", "skip", "affine_relu")


@dataclass(frozen=True)
class ScheduleBlock:
    split_epos: tuple[int, ...] = (20, 30, 40)
    warm_epo: int = 5
    warm_decay: int = 1


@dataclass(frozen=True)
class GroupingBlock:
    batch_count: int = 4
    batch_size: int = 64


@dataclass(frozen=True)
class ModeBlock:
    split_order: str = "ascending"
    baseline: str = "hepnas"
    # validation accuracy for sub-supernet selection: "mixture" or "discrete"
    select: str = "mixture"


@dataclass(frozen=True)
class OracleBlock:
    epochs: int = 60
    lr: float = 0.05
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 3e-4
    clip_norm: float = 5.0
    batch_size: int = 64
    base_seed: int = 0
    cap: int = 4096


@dataclass(frozen=True)
class TrainBlock:
    lr_w: float = 0.05
    lr_w_min: float = 0.001
    momentum: float = 0.9
    weight_decay_w: float = 3e-4
    clip_norm: float = 5.0
    lr_alpha: float = 3e-3
    betas_alpha: tuple[float, float] = (0.5, 0.999)
    weight_decay_alpha: float = 1e-3
    batch_size: int = 64
    alpha_freeze_epochs: int = 0


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetBlock = field(default_factory=DatasetBlock)
    space: SpaceBlock = field(default_factory=SpaceBlock)
    train: TrainBlock = field(default_factory=TrainBlock)
    schedule: ScheduleBlock = field(default_factory=ScheduleBlock)
    smd: SmdWeights = field(default_factory=SmdWeights)
    grouping: GroupingBlock = field(default_factory=GroupingBlock)
    mode: ModeBlock = field(default_factory=ModeBlock)
    oracle: OracleBlock = field(default_factory=OracleBlock)
    seed: int = 0

    # ------------------------------------------------------------ derived

    def cell_spec(self) -> CellSpec:
        return CellSpec(
            n_nodes=self.space.n_nodes,
            width=self.space.width,
            n_classes=self.dataset.n_classes,
            in_dim=2 if self.dataset.generator == "spirals" else self.dataset.dim,
            palette=tuple(OpKind.parse(o) for o in self.space.palette),
        )

    def make_dataset(self) -> Dataset:
        d = self.dataset
        if d.generator == "spirals":
            return gen_spirals(d.seed, d.n, d.n_classes, d.noise, turns=d.turns)
        return gen_blobs(d.seed, d.n, d.dim, d.n_classes, d.spread)

    def make_splits(self) -> Splits:
        return split(self.make_dataset(), SplitSpec(tuple(self.dataset.fractions), self.dataset.split_seed))

    def train_config(self) -> TrainConfig:
        return TrainConfig(**dataclasses.asdict(self.train))

    def stage_schedule(self) -> StageSchedule:
        s = self.schedule
        return StageSchedule(tuple(s.split_epos), s.warm_epo, s.warm_decay)

    def gm_config(self) -> GmConfig:
        return GmConfig(self.grouping.batch_count, self.grouping.batch_size)

    def oracle_config(self) -> OracleConfig:
        o = dataclasses.asdict(self.oracle)
        o.pop("base_seed")
        o.pop("cap")
        return OracleConfig(**o)

    def to_dict(self) -> dict[str, Any]:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()).hexdigest()


_BLOCKS = {
    "dataset": DatasetBlock,
    "space": SpaceBlock,
    "train": TrainBlock,
    "schedule": ScheduleBlock,
    "smd": SmdWeights,
    "grouping": GroupingBlock,
    "mode": ModeBlock,
    "oracle": OracleBlock,
}


def _coerce(path: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        proto = default[0] if default else value[0] if value else 0
        return tuple(_coerce(f"{path}[{i}]", v, proto) for i, v in enumerate(value))
    return value


def _block(name: str, cls, raw: Any):
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{name}.{key}", f"unknown key (allowed: {', '.join(known)})")
    defaults = cls()
    values = {k: _coerce(f"{name}.{k}", v, getattr(defaults, k)) for k, v in raw.items()}
    try:
        return cls(**{**{k: getattr(defaults, k) for k in known}, **values})
    except ValueError as exc:
        raise ConfigError(name, str(exc)) from None


def parse_config(raw: Any) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for key in raw:
        if key not in _BLOCKS and key != "seed":
            raise ConfigError(key, f"unknown key (allowed: {', '.join([*_BLOCKS, 'seed'])})")
    blocks = {name: _block(name, cls, raw[name]) for name, cls in _BLOCKS.items() if name in raw}
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed", f"expected an integer, got {seed!r}")
    cfg = RunConfig(**blocks, seed=seed)
    validate(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return parse_config(raw)


def validate(cfg: RunConfig) -> None:
    """Every cross-field constraint, checked before any work starts."""
    d = cfg.dataset
    if d.generator not in ("spirals", "blobs"):
        raise ConfigError("dataset.generator", f"expected 'spirals' or 'blobs', got {d.generator!r}")
    if d.n_classes < 2:
        raise ConfigError("dataset.n_classes", "must be >= 2")
    if d.n < 4 * d.n_classes:
        raise ConfigError("dataset.n", f"must be >= 4 * n_classes = {4 * d.n_classes}")
    if d.generator == "blobs" and (d.dim < 2 or not d.spread > 0):
        raise ConfigError("dataset.dim" if d.dim < 2 else "dataset.spread", "blobs need dim >= 2 and spread > 0")
    try:
        SplitSpec(tuple(d.fractions), d.split_seed)
    except DataError as exc:
        raise ConfigError("dataset.fractions", str(exc)) from None
    if min(round(f * d.n) for f in d.fractions) < 1:
        raise ConfigError("dataset.fractions", "a split part would be empty")

    if not cfg.space.palette:
        raise ConfigError("space.palette", "must list at least one operation")
    for i, o in enumerate(cfg.space.palette):
        try:
            OpKind.parse(o)
        except ValueError as exc:
            raise ConfigError(f"space.palette[{i}]", str(exc)) from None
    if len(cfg.space.palette) > MAX_CUT_OPS:
        raise ConfigError("space.palette", f"at most {MAX_CUT_OPS} operations")
    try:
        cfg.cell_spec()
    except SpaceError as exc:
        raise ConfigError("space", str(exc)) from None

    try:
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from None

    try:
        sched = cfg.stage_schedule()
    except ScheduleError as exc:
        raise ConfigError("schedule.split_epos" if "split_epos" in str(exc) else "schedule", str(exc)) from None
    n_inter = cfg.space.n_nodes - 1
    if len(sched.split_epos) != n_inter:
        raise ConfigError("schedule.split_epos", f"needs {n_inter} entries (one per intermediate node), got {len(sched.split_epos)}")

    if cfg.grouping.batch_count < 1 or cfg.grouping.batch_size < 1:
        raise ConfigError("grouping", "batch_count and batch_size must be >= 1")
    if cfg.mode.split_order not in SPLIT_ORDERS:
        raise ConfigError("mode.split_order", f"expected one of {SPLIT_ORDERS}")
    if cfg.mode.baseline not in BASELINES:
        raise ConfigError("mode.baseline", f"expected one of {BASELINES}")
    if cfg.mode.select not in ("mixture", "discrete"):
        raise ConfigError("mode.select", "expected 'mixture' or 'discrete'")
    o = cfg.oracle
    if o.epochs < 1 or o.batch_size < 1 or o.cap < 1 or o.lr < 0:
        raise ConfigError("oracle", "epochs, batch_size and cap must be >= 1 and lr >= 0")
