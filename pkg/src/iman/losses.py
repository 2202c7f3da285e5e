"""Classification and mutual-information losses.

The MI loss on a batch of class-probability rows is

    L_M = H[O|X] - gamma * H[O]

with H[O|X] the mean per-row entropy and H[O] the entropy of the
column-mean (marginal) distribution. Minimizing it sharpens per-sample
predictions while spreading mass across classes. Natural logarithms
throughout; 0*log(0) is 0 by the probability floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    as_tensor,
    clip,
    constant,
    div,
    exp,
    l2_normalize_rows,
    log,
    matmul,
    maximum,
    mul,
    sqrt,
    sub,
    tmean,
    tsum,
    transpose,
)
from .errors import DegenerateFeatureError, DimensionError, NumericError

PROB_FLOOR = 1e-12


@dataclass
class LossWeights:
    """Trade-off weights for the joint objective
    loss = classification + alpha * mmd_sum + beta * mi; gamma weighs the
    marginal-entropy term inside the MI loss."""

    alpha: float = 10.0
    beta: float = 5.0
    gamma: float = 0.2

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class ClassifierOutput:
    """Row-stochastic probability matrix over n_classes columns."""

    probs: Tensor
    n_classes: int

    def __post_init__(self):
        self.probs = as_tensor(self.probs)
        p = self.probs.data
        if p.ndim != 2 or p.shape[1] != self.n_classes:
            raise DimensionError(
                f"probability matrix shape {p.shape} does not match "
                f"{self.n_classes} classes"
            )
        if np.any(p < -1e-9) or np.any(p > 1.0 + 1e-9):
            raise NumericError("probabilities outside [0, 1]")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise NumericError("probability rows must sum to 1")

    @property
    def n_samples(self) -> int:
        return self.probs.data.shape[0]


def softmax(logits) -> ClassifierOutput:
    """Row softmax with detached per-row max subtraction for stability."""
    z = as_tensor(logits)
    if not np.all(np.isfinite(z.data)):
        raise NumericError("softmax logits must be finite")
    shift = constant(z.data.max(axis=1, keepdims=True))
    e = exp(sub(z, shift))
    p = div(e, tsum(e, axis=1, keepdims=True))
    return ClassifierOutput(probs=p, n_classes=z.data.shape[1])


def _check_labels(labels: np.ndarray, n_classes: int, n_samples: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n_samples,):
        raise DimensionError(
            f"expected {n_samples} labels, got shape {labels.shape}"
        )
    if labels.min(initial=0) < 0 or (labels.size and labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return labels


def cross_entropy(output: ClassifierOutput, labels) -> Tensor:
    """Mean over samples of -log p(true label), floored at 1e-12."""
    labels = _check_labels(labels, output.n_classes, output.n_samples)
    onehot = np.zeros(output.probs.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    picked = tsum(mul(output.probs, constant(onehot)), axis=1)
    return -tmean(log(maximum(picked, PROB_FLOOR)))


def masked_cross_entropy(output: ClassifierOutput, labels, mask) -> Tensor:
    """Cross-entropy averaged over the rows where mask is true.

    Rows outside the mask contribute nothing; an all-false mask gives 0.
    """
    mask = np.asarray(mask, dtype=bool)
    labels = np.asarray(labels, dtype=np.int64)
    count = int(mask.sum())
    if count == 0:
        return constant(0.0)
    safe_labels = np.where(mask, labels, 0)
    _check_labels(safe_labels, output.n_classes, output.n_samples)
    onehot = np.zeros(output.probs.shape)
    onehot[np.arange(labels.size), safe_labels] = 1.0
    onehot[~mask] = 0.0
    picked = tsum(mul(output.probs, constant(onehot)), axis=1)
    # unmasked rows pick 0, floored to PROB_FLOOR; their weight below is 0
    logs = log(maximum(picked, PROB_FLOOR))
    weights = constant(mask.astype(np.float64) / count)
    return -tsum(mul(logs, weights))


def angular_margin_loss(
    embeddings,
    head_weights,
    labels,
    scale: float = 64.0,
    margin: float = 0.5,
) -> Tensor:
    """Additive angular margin on the true-class angle.

    Logits are scale*cos(theta_y + margin) for the true class and
    scale*cos(theta_j) otherwise, followed by softmax cross-entropy.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    if not 0.0 <= margin < np.pi / 2:
        raise ValueError("margin must lie in [0, pi/2)")
    e = as_tensor(embeddings)
    w = as_tensor(head_weights)
    if e.data.shape[1] != w.data.shape[0]:
        raise DimensionError(
            f"embedding dim {e.data.shape[1]} does not match head rows "
            f"{w.data.shape[0]}"
        )
    if np.any(np.linalg.norm(e.data, axis=1) == 0.0):
        raise DegenerateFeatureError("zero-norm embedding row")
    if np.any(np.linalg.norm(w.data, axis=0) == 0.0):
        raise DegenerateFeatureError("zero-norm head weight column")
    labels = _check_labels(labels, w.data.shape[1], e.data.shape[0])

    cos = matmul(l2_normalize_rows(e), transpose(l2_normalize_rows(transpose(w))))
    cos = clip(cos, -1.0 + 1e-9, 1.0 - 1e-9)
    # cos(theta + m) = cos(theta) cos(m) - sin(theta) sin(m), sin(theta) >= 0
    sin = sqrt(sub(constant(1.0), mul(cos, cos)))
    shifted = sub(mul(cos, float(np.cos(margin))), mul(sin, float(np.sin(margin))))
    onehot = np.zeros(cos.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    logits = mul(
        mul(shifted, constant(onehot)) + mul(cos, constant(1.0 - onehot)),
        scale,
    )
    return cross_entropy(softmax(logits), labels)


def marginal_distribution(output: ClassifierOutput) -> Tensor:
    """Column means of the probability rows: the batch marginal p(O)."""
    if output.n_samples == 0:
        raise DimensionError("marginal_distribution needs at least one sample")
    return tmean(output.probs, axis=0, keepdims=True)


def _entropy_of(p: Tensor, axis: int | None) -> Tensor:
    plogp = mul(p, log(maximum(p, PROB_FLOOR)))
    return -tsum(plogp, axis=axis)


def conditional_entropy(output: ClassifierOutput) -> Tensor:
    """Mean per-row entropy, in [0, ln n_classes]."""
    return tmean(_entropy_of(output.probs, axis=1))


def mi_loss(output: ClassifierOutput, gamma: float) -> Tensor:
    """H[O|X] - gamma * H[O]; bounded in [-gamma*ln C, ln C]."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    marginal = marginal_distribution(output)
    return sub(conditional_entropy(output), mul(_entropy_of(marginal, None), gamma))


def total_loss(classification, mmd_sum, mi, weights: LossWeights):
    """The joint objective: classification + alpha*mmd_sum + beta*mi.

    Works on floats and on Tensors alike.
    """
    for v in (classification, mmd_sum, mi):
        x = float(v) if not isinstance(v, Tensor) else float(v)
        if not np.isfinite(x):
            raise NumericError("total_loss inputs must be finite")
    return classification + weights.alpha * mmd_sum + weights.beta * mi
