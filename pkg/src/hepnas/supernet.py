"""Weight-sharing supernet over a region of the cell search space."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset, Splits
from .numerics import (
    AdamState,
    SgdState,
    Tape,
    Tensor,
    adam_step,
    add_n,
    affine,
    avg_pair,
    backward,
    constant,
    cosine_lr,
    cross_entropy,
    relu,
    sgd_step,
    softmax,
    tanh,
    weighted_sum,
)
from .searchspace import Architecture, CellSpec, OpKind, Region, SpaceError
from .smd import SmdWeights, smd_loss

CHECKPOINT_FORMAT = "hepnas-supernet"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
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
    # epochs spanned by the cosine schedule; 0 keeps lr_w constant
    horizon: int = 0
    # second-order alpha updates are not implemented
    first_order: bool = True

    def __post_init__(self) -> None:
        for name in ("lr_w", "lr_w_min", "momentum", "weight_decay_w", "clip_norm", "lr_alpha", "weight_decay_alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"train.{name} must be >= 0")
        if self.batch_size < 1:
            raise ValueError("train.batch_size must be >= 1")
        if self.alpha_freeze_epochs < 0 or self.horizon < 0:
            raise ValueError("train.alpha_freeze_epochs and train.horizon must be >= 0")
        if not self.first_order:
            raise ValueError("train.first_order=false (second-order alpha updates) is not supported")
        object.__setattr__(self, "betas_alpha", tuple(float(b) for b in self.betas_alpha))


class RegionError(SpaceError):
    pass


def _param_name(edge_idx: int, op: OpKind, part: str) -> str:
    return f"e{edge_idx}.{op.value}.{part}"


def apply_op(op: OpKind, x: Tensor, W: Tensor | None = None, b: Tensor | None = None) -> Tensor:
    if op is OpKind.ZERO:
        return constant(np.zeros(x.shape))
    if op is OpKind.SKIP:
        return x
    if op is OpKind.AVG_PAIR:
        return avg_pair(x)
    if op is OpKind.AFFINE_RELU:
        return relu(affine(x, W, b))
    if op is OpKind.AFFINE_TANH:
        return tanh(affine(x, W, b))
    raise ValueError(op)


class Supernet:
    """Shared weights plus per-edge architecture logits over ``region``.

    ``params`` is ordered: stem, then every (edge, parametric op) in edge and
    palette order, then head. That order is the global flattening order used
    by gradient matching.
    """

    def __init__(self, spec: CellSpec, region: Region, params: dict[str, np.ndarray],
                 alpha: list[np.ndarray], seed: int = 0, epoch: int = 0):
        if len(region) != len(spec.edges):
            raise RegionError(f"region has {len(region)} edges, cell has {len(spec.edges)}")
        self.spec = spec
        self.region = region
        self.params = params
        self.alpha = alpha
        self.seed = seed
        self.epoch = epoch
        self.sgd: SgdState | None = None
        self.adam: AdamState | None = None

    # ------------------------------------------------------------ construction

    @classmethod
    def create(cls, spec: CellSpec, region: Region | None = None, seed: int = 0) -> Supernet:
        region = region if region is not None else spec.full_region()
        rng = np.random.default_rng(seed)
        W = spec.width
        params: dict[str, np.ndarray] = {
            "stem.W": rng.normal(0.0, np.sqrt(1.0 / spec.in_dim), size=(spec.in_dim, W)),
            "stem.b": np.zeros(W),
        }
        for e, ops in enumerate(region.allowed):
            for op in ops:
                if op.parametric:
                    gain = 2.0 if op is OpKind.AFFINE_RELU else 1.0
                    params[_param_name(e, op, "W")] = rng.normal(0.0, np.sqrt(gain / W), size=(W, W))
                    params[_param_name(e, op, "b")] = np.zeros(W)
        params["head.W"] = rng.normal(0.0, np.sqrt(1.0 / W), size=(W, spec.n_classes))
        params["head.b"] = np.zeros(spec.n_classes)
        alpha = [1e-3 * rng.normal(size=len(ops)) for ops in region.allowed]
        return cls(spec, region, params, alpha, seed=seed)

    def copy(self) -> Supernet:
        return copy.deepcopy(self)

    def weight_names(self, edge_idx: int | None = None) -> list[str]:
        if edge_idx is None:
            return list(self.params)
        prefix = f"e{edge_idx}."
        return [k for k in self.params if k.startswith(prefix)]

    # ----------------------------------------------------------------- forward

    def _leaves(self, tape: Tape | None, with_alpha: bool):
        if tape is None:
            p = {k: Tensor(v) for k, v in self.params.items()}
            a = [Tensor(v) for v in self.alpha]
        else:
            p = {k: tape.param(v, k) for k, v in self.params.items()}
            a = [tape.param(v, f"alpha.e{e}") for e, v in enumerate(self.alpha)] if with_alpha else [Tensor(v) for v in self.alpha]
        return p, a

    def forward(self, inputs, *, tape: Tape | None = None, arch: Architecture | None = None,
                override: Mapping[int, OpKind] | None = None, with_alpha: bool = True) -> Tensor:
        """Logits for a batch.

        ``arch`` runs the single path it names (mixtures bypassed); ``override``
        pins individual edges to one operation with mixture weight 1.
        """
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise ValueError(f"forward: expected inputs of width {self.spec.in_dim}, got shape {x.shape}")
        if arch is not None and not self.region.contains(arch):
            raise RegionError(f"architecture {arch.encode()} lies outside the supernet region")
        override = dict(override or {})
        for e, op in override.items():
            if op not in self.region.allowed[e]:
                raise RegionError(f"{op.value} is not allowed on edge {e}")
        p, a = self._leaves(tape, with_alpha)
        nodes = [affine(Tensor(x), p["stem.W"], p["stem.b"])]
        e = 0
        for k in range(1, self.spec.n_nodes):
            incoming = []
            for i in range(k):
                if arch is not None:
                    ops: tuple[OpKind, ...] = (arch.ops[e],)
                elif e in override:
                    ops = (override[e],)
                else:
                    ops = self.region.allowed[e]
                outs = [apply_op(op, nodes[i], p.get(_param_name(e, op, "W")), p.get(_param_name(e, op, "b"))) for op in ops]
                incoming.append(outs[0] if len(outs) == 1 else weighted_sum(outs, softmax(a[e])))
                e += 1
            nodes.append(incoming[0] if len(incoming) == 1 else add_n(incoming))
        return affine(nodes[-1], p["head.W"], p["head.b"])

    def predict_proba(self, inputs, arch: Architecture | None = None) -> np.ndarray:
        return softmax(self.forward(inputs, arch=arch)).data

    def mixture_weights(self) -> list[np.ndarray]:
        return [softmax(Tensor(a)).data for a in self.alpha]

    # -------------------------------------------------------------- utilities

    def reset_optimizers(self, cfg: TrainConfig) -> None:
        self.sgd = SgdState(lr=cfg.lr_w, momentum=cfg.momentum, weight_decay=cfg.weight_decay_w, clip_norm=cfg.clip_norm)
        self.adam = AdamState(lr=cfg.lr_alpha, betas=cfg.betas_alpha, weight_decay=cfg.weight_decay_alpha)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, v in self.params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        for v in self.alpha:
            h.update(np.ascontiguousarray(v).tobytes())
        h.update(str(self.epoch).encode())
        return h.hexdigest()


def forward(net: Supernet, inputs, **kw) -> Tensor:
    return net.forward(inputs, **kw)


# ------------------------------------------------------------------ training


@dataclass
class EpochStats:
    epoch: int
    lr_w: float
    weight_losses: list[float] = field(default_factory=list)
    ce_losses: list[float] = field(default_factory=list)
    alpha_losses: list[float] = field(default_factory=list)

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.weight_losses)) if self.weight_losses else float("nan")

    @property
    def mean_ce(self) -> float:
        return float(np.mean(self.ce_losses)) if self.ce_losses else float("nan")


def _batch_rng(net: Supernet, salt: int) -> np.random.Generator:
    return np.random.default_rng([net.seed, net.epoch, salt])


def train_epoch(net: Supernet, data: Splits, cfg: TrainConfig, *, prev: Supernet | None = None,
                peers: Sequence[Supernet] = (), smd: SmdWeights = SmdWeights()) -> EpochStats:
    """One pass over ``train_w`` with interleaved alpha steps on ``train_alpha``.

    Weight steps minimise the SMD loss against the frozen ``prev`` teacher and
    the live ``peers``; alpha steps minimise plain cross-entropy. Teachers are
    evaluated on each batch with their current parameters and no gradient.
    """
    if net.sgd is None or net.adam is None:
        net.reset_optimizers(cfg)
    lr = cosine_lr(cfg.lr_w, cfg.lr_w_min, net.epoch, cfg.horizon) if cfg.horizon else cfg.lr_w
    net.sgd.lr = lr
    net.adam.lr = cfg.lr_alpha
    stats = EpochStats(net.epoch, lr)
    update_alpha = net.epoch >= cfg.alpha_freeze_epochs and any(len(ops) > 1 for ops in net.region.allowed)
    alpha_batches = list(data.train_alpha.batches(cfg.batch_size, _batch_rng(net, 1))) if update_alpha else []
    use_prev = prev is not None and smd.lambda_prev > 0
    use_peers = bool(peers) and smd.lambda_peer > 0

    for step, (xb, yb) in enumerate(data.train_w.batches(cfg.batch_size, _batch_rng(net, 0))):
        if alpha_batches:
            xa, ya = alpha_batches[step % len(alpha_batches)]
            tape = Tape()
            loss = cross_entropy(net.forward(xa, tape=tape), ya)
            grads = backward(tape, loss)
            names = [f"alpha.e{e}" for e in range(len(net.alpha))]
            new = adam_step({n: a for n, a in zip(names, net.alpha)}, {n: grads[n] for n in names}, net.adam)
            net.alpha = [new[n] for n in names]
            stats.alpha_losses.append(loss.item())

        prev_probs = prev.predict_proba(xb) if use_prev else None
        peer_probs = [m.predict_proba(xb) for m in peers] if use_peers else []
        tape = Tape()
        logits = net.forward(xb, tape=tape, with_alpha=False)
        loss = smd_loss(logits, yb, prev_probs, peer_probs, smd)
        grads = backward(tape, loss)
        net.params = sgd_step(net.params, {k: grads[k] for k in net.params}, net.sgd)
        stats.weight_losses.append(loss.item())
        stats.ce_losses.append(cross_entropy(logits, yb).item())
    net.epoch += 1
    return stats


def fit_single_path(net: Supernet, train: Dataset, cfg: TrainConfig, epochs: int) -> None:
    """Plain momentum-SGD training of a supernet over a singleton region."""
    if net.region.size() != 1:
        raise RegionError("fit_single_path needs a single-architecture region")
    net.reset_optimizers(cfg)
    arch = Architecture(tuple(ops[0] for ops in net.region.allowed))
    for _ in range(epochs):
        net.sgd.lr = cosine_lr(cfg.lr_w, cfg.lr_w_min, net.epoch, epochs)
        for xb, yb in train.batches(cfg.batch_size, _batch_rng(net, 0)):
            tape = Tape()
            loss = cross_entropy(net.forward(xb, tape=tape, arch=arch, with_alpha=False), yb)
            grads = backward(tape, loss)
            net.params = sgd_step(net.params, {k: grads[k] for k in net.params}, net.sgd)
        net.epoch += 1


# ----------------------------------------------------- inheritance & readout


def inherit(parent: Supernet, sub_region: Region) -> Supernet:
    """Child supernet over ``sub_region`` with copied weights and restricted alpha.

    Optimizer buffers start from zero.
    """
    if not sub_region.issubset(parent.region):
        raise RegionError(f"region {sub_region.encode()} is not inside parent region {parent.region.encode()}")
    params = {}
    for k, v in parent.params.items():
        head = k.split(".")[0]
        if head.startswith("e"):
            e = int(head[1:])
            op = OpKind(k.split(".")[1])
            if op not in sub_region.allowed[e]:
                continue
        params[k] = v.copy()
    alpha = []
    for a, old, new in zip(parent.alpha, parent.region.allowed, sub_region.allowed):
        alpha.append(np.array([a[old.index(o)] for o in new]))
    return Supernet(parent.spec, sub_region, params, alpha, seed=parent.seed, epoch=parent.epoch)


def discretize(net: Supernet) -> Architecture:
    """Per-edge argmax of alpha; ties go to the palette-first op."""
    return Architecture(tuple(ops[int(np.argmax(a))] for ops, a in zip(net.region.allowed, net.alpha)))


def eval_accuracy(net: Supernet, dataset: Dataset, arch: Architecture | None = None, batch_size: int = 4096) -> float:
    """Top-1 accuracy under the mixture forward, or along ``arch`` when given."""
    if len(dataset) == 0:
        raise ValueError("eval_accuracy: empty dataset")
    correct = 0
    for xb, yb in dataset.batches(batch_size):
        logits = net.forward(xb, arch=arch).data
        correct += int((logits.argmax(axis=1) == yb).sum())
    return correct / len(dataset)


# -------------------------------------------------------------- checkpoints


def _state_to_json(state) -> dict | None:
    if state is None:
        return None
    d = asdict(state)
    for key in ("velocity", "m", "v"):
        if key in d:
            d[key] = {k: v.tolist() for k, v in d[key].items()}
    return d


def _state_from_json(cls, d, shapes: dict[str, tuple]):
    if d is None:
        return None
    d = dict(d)
    for key in ("velocity", "m", "v"):
        if key in d:
            d[key] = {k: np.array(v, dtype=np.float64).reshape(shapes[k]) for k, v in d[key].items()}
    if "betas" in d:
        d["betas"] = tuple(d["betas"])
    return cls(**d)


def to_checkpoint(net: Supernet) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": net.spec.to_dict(),
        "region": net.region.encode(),
        "seed": net.seed,
        "epoch": net.epoch,
        "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in net.params.items()},
        "alpha": [a.tolist() for a in net.alpha],
        "sgd": _state_to_json(net.sgd),
        "adam": _state_to_json(net.adam),
    }


def from_checkpoint(d: dict) -> Supernet:
    if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format {d.get('format')!r} v{d.get('version')!r}")
    spec = CellSpec.from_dict(d["spec"])
    params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["params"].items()}
    alpha = [np.array(a, dtype=np.float64) for a in d["alpha"]]
    net = Supernet(spec, Region.decode(d["region"]), params, alpha, seed=d["seed"], epoch=d["epoch"])
    shapes = {k: v.shape for k, v in params.items()}
    shapes.update({f"alpha.e{e}": a.shape for e, a in enumerate(alpha)})
    net.sgd = _state_from_json(SgdState, d.get("sgd"), shapes)
    net.adam = _state_from_json(AdamState, d.get("adam"), shapes)
    return net


def save_checkpoint(net: Supernet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_checkpoint(net)), encoding="utf-8")


def load_checkpoint(path: str | Path) -> Supernet:
    return from_checkpoint(json.loads(Path(path).read_text(encoding="utf-8")))
