"""Dense float64 tensors with a reverse-mode tape, plus the two optimizers.

Values live in numpy arrays. A :class:`Tensor` either belongs to a
:class:`Tape` (it was produced by a primitive with at least one taped input,
or registered as a parameter) or is a constant. Primitives only record onto
a tape when one of their inputs is taped, so the same forward code serves
both training and gradient-free evaluation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "constant",
    "affine",
    "relu",
    "tanh",
    "avg_pair",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "kl_div",
    "scale",
    "add",
    "add_n",
    "weighted_sum",
    "total",
    "backward",
    "SgdState",
    "AdamState",
    "sgd_step",
    "adam_step",
    "clip_by_global_norm",
    "cosine_lr",
]

_TINY = 1e-300


class ShapeError(ValueError):
    """Raised when a primitive receives operands of incompatible shape."""

    def __init__(self, primitive: str, *shapes: tuple[int, ...]) -> None:
        self.primitive = primitive
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{primitive}: incompatible shapes {joined}")


class Tensor:
    __slots__ = ("data", "tape", "node", "name")

    def __init__(self, data: np.ndarray, tape: Tape | None = None, node: int = -1, name: str | None = None):
        self.data = data
        self.tape = tape
        self.node = node
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, taped={self.tape is not None})"


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class _Record:
    out: int
    inputs: tuple[int | None, ...]
    backward: BackwardFn
    name: str


class Tape:
    """Ordered record of primitive applications.

    Node ids are assigned in creation order, so iterating records backwards is
    a valid reverse topological order.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self.leaves: dict[str, Tensor] = {}
        self._next = 0

    def _new_node(self) -> int:
        node = self._next
        self._next += 1
        return node

    def param(self, value: np.ndarray, name: str) -> Tensor:
        if name in self.leaves:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.asarray(value, dtype=np.float64)
        t = Tensor(arr, self, self._new_node(), name)
        self.leaves[name] = t
        return t


def constant(value) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float64))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _tape_of(*xs: Tensor) -> Tape | None:
    tape = None
    for x in xs:
        if x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise ValueError("operands recorded on different tapes")
            tape = x.tape
    return tape


def _emit(name: str, out: np.ndarray, inputs: Sequence[Tensor], fn: BackwardFn) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(out)
    node = tape._new_node()
    ids = tuple(x.node if x.tape is tape else None for x in inputs)
    tape.records.append(_Record(node, ids, fn, name))
    return Tensor(out, tape, node)


# ---------------------------------------------------------------- primitives


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` for a batch ``x`` of shape (B, d_in)."""
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError("affine", x.shape, W.shape)
    if b.data.shape != (W.shape[1],):
        raise ShapeError("affine", W.shape, b.shape)
    xd, Wd = x.data, W.data
    out = xd @ Wd + b.data

    def bw(g: np.ndarray):
        return g @ Wd.T, xd.T @ g, g.sum(axis=0)

    return _emit("affine", out, (x, W, b), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def avg_pair(x: Tensor) -> Tensor:
    """Average features (0,1), (2,3), ... writing the mean back to both slots."""
    width = x.shape[-1]
    if width % 2:
        raise ShapeError("avg_pair", x.shape)
    lead = x.shape[:-1]

    def pair_mean(a: np.ndarray) -> np.ndarray:
        m = a.reshape(*lead, width // 2, 2).mean(axis=-1, keepdims=True)
        return np.broadcast_to(m, (*lead, width // 2, 2)).reshape(*lead, width)

    # the pair-mean map is symmetric, so it is its own adjoint
    return _emit("avg_pair", pair_mean(x.data), (x,), lambda g: (pair_mean(g),))


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis."""
    p = _softmax_rows(x.data)

    def bw(g: np.ndarray):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", p, (x,), bw)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)

    def bw(g: np.ndarray):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _emit("log_softmax", out, (x,), bw)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"cross_entropy: labels outside [0, {n_classes})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(labels.size)
    batch = labels.size
    loss = float((lse - z[rows, labels]).sum() / batch)

    def bw(g: np.ndarray):
        d = np.exp(z - lse[:, None])
        d[rows, labels] -= 1.0
        return (d * (float(g) / batch),)

    return _emit("cross_entropy", np.array(loss), (logits,), bw)


def kl_div(p: Tensor, q: Tensor) -> Tensor:
    """Batch-mean of ``sum_c p_c log(p_c / q_c)`` over probability rows."""
    if p.shape != q.shape or p.data.ndim != 2:
        raise ShapeError("kl_div", p.shape, q.shape)
    pd = p.data
    lp = np.log(np.maximum(pd, _TINY))
    lq = np.log(np.maximum(q.data, _TINY))
    batch = pd.shape[0]
    val = float((pd * (lp - lq)).sum() / batch)

    def bw(g: np.ndarray):
        s = float(g) / batch
        return (s * (lp - lq + 1.0), -s * pd / np.maximum(q.data, _TINY))

    return _emit("kl_div", np.array(val), (p, q), bw)


def scale(x: Tensor, c) -> Tensor:
    """Multiply by a python scalar or a one-element tensor."""
    if not isinstance(c, Tensor):
        c = float(c)
        return _emit("scale", x.data * c, (x,), lambda g: (g * c,))
    if c.data.size != 1:
        raise ShapeError("scale", x.shape, c.shape)
    cv = float(c.data.reshape(-1)[0])
    xd = x.data
    shape = c.shape

    def bw(g: np.ndarray):
        return g * cv, np.full(shape, float((g * xd).sum()))

    return _emit("scale", xd * cv, (x, c), bw)


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError("add", x.shape, y.shape)
    return _emit("add", x.data + y.data, (x, y), lambda g: (g, g))


def add_n(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ValueError("add_n: empty operand list")
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            raise ShapeError("add_n", shape, x.shape)
    out = xs[0].data.copy()
    for x in xs[1:]:
        out = out + x.data
    return _emit("add_n", out, tuple(xs), lambda g: tuple(g for _ in xs))


def weighted_sum(xs: Sequence[Tensor], w: Tensor) -> Tensor:
    """``sum_o w[o] * xs[o]`` with a 1-D weight tensor (the mixed edge)."""
    if w.data.ndim != 1 or w.shape[0] != len(xs):
        raise ShapeError("weighted_sum", w.shape, (len(xs),))
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            raise ShapeError("weighted_sum", shape, x.shape)
    wd = w.data
    datas = [x.data for x in xs]
    out = datas[0] * wd[0]
    for o in range(1, len(xs)):
        out = out + datas[o] * wd[o]

    def bw(g: np.ndarray):
        grads: list[np.ndarray | None] = [g * wd[o] for o in range(len(xs))]
        grads.append(np.array([float((g * d).sum()) for d in datas]))
        return tuple(grads)

    return _emit("weighted_sum", out, (*xs, w), bw)


def total(x: Tensor) -> Tensor:
    shape = x.shape
    return _emit("total", np.array(float(x.data.sum())), (x,), lambda g: (np.full(shape, float(g)),))


# ------------------------------------------------------------------ backward


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to every parameter on ``tape``.

    Parameters that do not influence the loss get an exact zero array.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[str, np.ndarray] = {n: np.zeros_like(t.data) for n, t in tape.leaves.items()}
    if loss.tape is None:
        return grads
    if loss.tape is not tape:
        raise ValueError("backward: loss was recorded on a different tape")
    adj: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = adj.pop(rec.out, None)
        if g is None:
            continue
        for node, gi in zip(rec.inputs, rec.backward(g)):
            if node is None or gi is None:
                continue
            prev = adj.get(node)
            adj[node] = gi if prev is None else prev + gi
    for name, leaf in tape.leaves.items():
        g = adj.get(leaf.node)
        if g is not None:
            grads[name] = np.asarray(g, dtype=np.float64).reshape(leaf.shape)
    return grads


# ---------------------------------------------------------------- optimizers


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Rescale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm <= 0 or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}, norm


@dataclass
class SgdState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    clip_norm: float = 5.0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class AdamState:
    lr: float
    betas: tuple[float, float] = (0.5, 0.999)
    weight_decay: float = 0.0
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _check_aligned(params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            raise KeyError(f"missing gradient for {k!r}")
        if g.shape != p.shape:
            raise ShapeError("optimizer", p.shape, g.shape)


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: SgdState) -> dict[str, np.ndarray]:
    """Momentum SGD (PyTorch convention) after global-norm clipping."""
    _check_aligned(params, grads)
    grads, _ = clip_by_global_norm({k: grads[k] for k in params}, state.clip_norm)
    out = {}
    for k, p in params.items():
        g = grads[k]
        if state.weight_decay:
            g = g + state.weight_decay * p
        v = state.velocity.get(k)
        if state.momentum:
            v = g.copy() if v is None else state.momentum * v + g
            state.velocity[k] = v
            g = v
        out[k] = p - state.lr * g
    return out


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> dict[str, np.ndarray]:
    _check_aligned(params, grads)
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = {}
    for k, p in params.items():
        g = grads[k]
        if state.weight_decay:
            g = g + state.weight_decay * p
        m = b1 * state.m.get(k, np.zeros_like(p)) + (1 - b1) * g
        v = b2 * state.v.get(k, np.zeros_like(p)) + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        out[k] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


def cosine_lr(base: float, floor: float, epoch: int, horizon: int) -> float:
    """Cosine annealing without restart from ``base`` at epoch 0 to ``floor`` at ``horizon``."""
    if horizon <= 0:
        return base
    t = min(max(epoch, 0), horizon) / horizon
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * t))
