"""RBF kernel matrices and multi-kernel maximum mean discrepancy estimators.

MMD^2 between samples X and Y is estimated from kernel means:
mean(K_XX) + mean(K_YY) - 2 mean(K_XY) (biased, nonnegative, used in the
training loss) or the diagonal-excluded U-statistic (unbiased, may be
negative, used for reporting). Bandwidths are squared length scales:
k(x, y) = exp(-||x - y||^2 / (2 * bandwidth)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, exp, maximum, mul, pairwise_sqdist, tmean
from .errors import DegenerateFeatureError, DimensionError


@dataclass(frozen=True)
class KernelSpec:
    """A weighted mixture of RBF kernels; weights default to uniform."""

    bandwidths: tuple[float, ...]
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.bandwidths:
            raise ValueError("at least one bandwidth required")
        if any(b <= 0 for b in self.bandwidths):
            raise ValueError("bandwidths must be positive")
        if self.weights is None:
            uniform = 1.0 / len(self.bandwidths)
            object.__setattr__(self, "weights", (uniform,) * len(self.bandwidths))
        if len(self.weights) != len(self.bandwidths):
            raise ValueError("one weight per bandwidth")
        if any(w < 0 for w in self.weights) or sum(self.weights) == 0:
            raise ValueError("weights must be nonnegative and not all zero")

    @classmethod
    def from_median(
        cls,
        x,
        y,
        factors: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0),
    ) -> "KernelSpec":
        """Median-heuristic mixture: median squared distance times factors."""
        med = median_heuristic(x, y)
        return cls(bandwidths=tuple(med * f for f in factors))


@dataclass(frozen=True)
class AdaptationConfig:
    """Which trunk layers the MMD penalty reads, and their kernels.

    `layers=None` resolves to the last two layers of the trunk;
    `kernels=None` means "derive per layer by the median heuristic at the
    start of each training stage".
    """

    layers: tuple[int, ...] | None = None
    kernels: dict[int, KernelSpec] | None = None

    def resolved_layers(self, n_layers: int) -> tuple[int, ...]:
        layers = self.layers
        if layers is None:
            layers = tuple(range(max(0, n_layers - 2), n_layers))
        if not layers:
            raise ValueError("adaptation layer set must be non-empty")
        for idx in layers:
            if not 0 <= idx < n_layers:
                raise DimensionError(
                    f"adaptation layer {idx} outside trunk with {n_layers} layers"
                )
        return tuple(layers)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def rbf_kernel_matrix(x, y, bandwidth: float) -> Tensor:
    """k(x_i, y_j) = exp(-||x_i - y_j||^2 / (2 * bandwidth)), in (0, 1]."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    d2 = pairwise_sqdist(as_tensor(x), as_tensor(y))
    return exp(mul(d2, -1.0 / (2.0 * bandwidth)))


def median_heuristic(x, y) -> float:
    """Median of pairwise squared distances over the stacked sample."""
    xa, ya = _data(x), _data(y)
    if xa.shape[1] != ya.shape[1]:
        raise DimensionError("samples must share a feature dimension")
    z = np.concatenate([xa, ya], axis=0)
    n = z.shape[0]
    if n < 2:
        raise DimensionError("median heuristic needs at least 2 points")
    sq = (z * z).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    iu = np.triu_indices(n, k=1)
    med = float(np.median(np.maximum(d2[iu], 0.0)))
    if med <= 0.0:
        raise DegenerateFeatureError(
            "all points coincide; median bandwidth is degenerate"
        )
    return med


def _kernel_means(x, y, spec: KernelSpec) -> tuple[Tensor, Tensor, Tensor]:
    kxx = kyy = kxy = None
    for bw, w in zip(spec.bandwidths, spec.weights):
        if w == 0.0:
            continue
        txx = mul(tmean(rbf_kernel_matrix(x, x, bw)), w)
        tyy = mul(tmean(rbf_kernel_matrix(y, y, bw)), w)
        txy = mul(tmean(rbf_kernel_matrix(x, y, bw)), w)
        kxx = txx if kxx is None else kxx + txx
        kyy = tyy if kyy is None else kyy + tyy
        kxy = txy if kxy is None else kxy + txy
    return kxx, kyy, kxy


def mmd2_biased(x, y, spec: KernelSpec) -> Tensor:
    """Biased (V-statistic) multi-kernel MMD^2; nonnegative, differentiable.

    Tiny negative roundoff is clamped to zero.
    """
    xa, ya = _data(x), _data(y)
    if xa.shape[0] == 0 or ya.shape[0] == 0:
        raise DimensionError("mmd2_biased requires non-empty samples")
    if xa.shape[1] != ya.shape[1]:
        raise DimensionError("samples must share a feature dimension")
    kxx, kyy, kxy = _kernel_means(x, y, spec)
    return maximum(kxx + kyy - mul(kxy, 2.0), 0.0)


def mmd2_unbiased(x, y, spec: KernelSpec) -> float:
    """U-statistic MMD^2 (diagonals excluded); zero-mean under H0."""
    xa, ya = _data(x), _data(y)
    m, n = xa.shape[0], ya.shape[0]
    if m < 2 or n < 2:
        raise DimensionError("mmd2_unbiased needs at least 2 rows per sample")
    if xa.shape[1] != ya.shape[1]:
        raise DimensionError("samples must share a feature dimension")

    def sqdist(a, b):
        sa = (a * a).sum(axis=1)[:, None]
        sb = (b * b).sum(axis=1)[None, :]
        return np.maximum(sa + sb - 2.0 * (a @ b.T), 0.0)

    dxx, dyy, dxy = sqdist(xa, xa), sqdist(ya, ya), sqdist(xa, ya)
    total = 0.0
    for bw, w in zip(spec.bandwidths, spec.weights):
        if w == 0.0:
            continue
        kxx = np.exp(-dxx / (2.0 * bw))
        kyy = np.exp(-dyy / (2.0 * bw))
        kxy = np.exp(-dxy / (2.0 * bw))
        np.fill_diagonal(kxx, 0.0)
        np.fill_diagonal(kyy, 0.0)
        total += w * (
            kxx.sum() / (m * (m - 1))
            + kyy.sum() / (n * (n - 1))
            - 2.0 * kxy.mean()
        )
    return float(total)


def mmd2_multilayer(
    activations_s: list,
    activations_t: list,
    layers: tuple[int, ...],
    kernels: dict[int, KernelSpec],
) -> Tensor:
    """Sum of per-layer biased MMD^2 over the adaptation layer set."""
    total = None
    for idx in layers:
        if idx >= len(activations_s) or idx >= len(activations_t):
            raise DimensionError(
                f"adaptation layer {idx} missing from activations "
                f"({len(activations_s)} source / {len(activations_t)} target)"
            )
        if idx not in kernels:
            raise DimensionError(f"no kernel spec for adaptation layer {idx}")
        term = mmd2_biased(activations_s[idx], activations_t[idx], kernels[idx])
        total = term if total is None else total + term
    if total is None:
        raise ValueError("adaptation layer set must be non-empty")
    return total
