"""Search-space mutual distillation loss.

A student sub-supernet is trained on its classification loss plus KL terms
pulling its predictive distribution toward (a) the optimal supernet of the
previous stage and (b) the mean of its current sibling sub-supernets.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import ShapeError, Tensor, add_n, constant, cross_entropy, kl_div, scale, softmax


@dataclass(frozen=True)
class SmdWeights:
    lambda_prev: float = 1.0
    lambda_peer: float = 1.0

    def __post_init__(self) -> None:
        if self.lambda_prev < 0 or self.lambda_peer < 0:
            raise ValueError(f"SMD weights must be >= 0, got {self}")

    @property
    def active(self) -> bool:
        return self.lambda_prev > 0 or self.lambda_peer > 0


def smd_loss(
    student_logits: Tensor,
    labels,
    prev_probs: np.ndarray | None = None,
    peer_probs: Sequence[np.ndarray] = (),
    weights: SmdWeights = SmdWeights(),
) -> Tensor:
    """Classification loss plus distillation toward frozen teacher distributions.

    ``prev_probs`` is the previous-optimal teacher's probability matrix for the
    batch (or None); ``peer_probs`` holds one matrix per sibling, so the peer
    term averages over ``len(peer_probs)`` = D - 1 siblings.
    """
    shape = student_logits.shape
    for q in ([prev_probs] if prev_probs is not None else []) + list(peer_probs):
        if q.shape != shape:
            raise ShapeError("smd_loss", shape, q.shape)
    terms = [cross_entropy(student_logits, labels)]
    use_prev = prev_probs is not None and weights.lambda_prev > 0
    use_peer = len(peer_probs) > 0 and weights.lambda_peer > 0
    if use_prev or use_peer:
        p = softmax(student_logits)
        if use_prev:
            terms.append(scale(kl_div(p, constant(prev_probs)), weights.lambda_prev))
        if use_peer:
            peer = add_n([kl_div(p, constant(q)) for q in peer_probs])
            terms.append(scale(peer, weights.lambda_peer / len(peer_probs)))
    return terms[0] if len(terms) == 1 else add_n(terms)
