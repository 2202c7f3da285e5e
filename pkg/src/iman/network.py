"""Parameter storage, the shared fully-connected trunk, and SGD with momentum.

The trunk replaces a convolutional backbone with a small configurable MLP
(default 2 -> 64 -> 64 -> 16, ReLU on hidden layers, linear final layer);
the adaptation math downstream is architecture-agnostic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor, add, leaf, matmul, relu
from .errors import DimensionError, NumericError, StateError


def make_rng(*key: int) -> np.random.Generator:
    """Deterministic PCG64 generator derived from an integer key path.

    PCG64 is the single PRNG used anywhere in the package, so seeded runs
    reproduce bit-for-bit.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


class ParamStore:
    """Ordered named float64 parameter tensors plus momentum buffers.

    Shapes are fixed at insertion; every parameter owns exactly one
    velocity buffer of the same shape.
    """

    def __init__(self):
        self._params: dict[str, np.ndarray] = {}
        self._velocity: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> None:
        if name in self._params:
            raise StateError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"parameter {name!r} has non-finite entries")
        self._params[name] = arr
        self._velocity[name] = np.zeros_like(arr)

    def names(self) -> list[str]:
        return list(self._params)

    def value(self, name: str) -> np.ndarray:
        return self._params[name]

    def velocity(self, name: str) -> np.ndarray:
        return self._velocity[name]

    def set_value(self, name: str, value: np.ndarray) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._params[name].shape:
            raise DimensionError(
                f"shape {arr.shape} does not match parameter {name!r} "
                f"shape {self._params[name].shape}"
            )
        self._params[name] = arr.copy()

    def tensors(self) -> dict[str, Tensor]:
        """Fresh differentiable leaves over the current values."""
        return {name: leaf(arr) for name, arr in self._params.items()}

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for name, arr in self._params.items():
            dup._params[name] = arr.copy()
            dup._velocity[name] = self._velocity[name].copy()
        return dup

    def reset_velocity(self) -> None:
        for name in self._velocity:
            self._velocity[name][:] = 0.0

    def n_scalars(self) -> int:
        return sum(p.size for p in self._params.values())

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamStore):
            return NotImplemented
        return self.names() == other.names() and all(
            np.array_equal(self._params[n], other._params[n]) for n in self._params
        )


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter: str


def init_trunk(layer_dims: tuple[int, ...], seed: int) -> ParamStore:
    """He-style seeded initialization for an MLP with the given widths."""
    if len(layer_dims) < 2:
        raise DimensionError("trunk needs at least one layer (two dims)")
    rng = make_rng(seed, 1)
    store = ParamStore()
    n_layers = len(layer_dims) - 1
    for i in range(n_layers):
        fan_in, fan_out = layer_dims[i], layer_dims[i + 1]
        scale = np.sqrt(2.0 / fan_in) if i < n_layers - 1 else np.sqrt(1.0 / fan_in)
        store.add(f"w{i}", rng.standard_normal((fan_in, fan_out)) * scale)
        store.add(f"b{i}", np.zeros((1, fan_out)))
    return store


def init_head(embed_dim: int, n_classes: int, seed: int) -> ParamStore:
    """Classifier head: a single weight matrix, logits = emb @ w."""
    rng = make_rng(seed, 2)
    store = ParamStore()
    store.add("w", rng.standard_normal((embed_dim, n_classes)) * 0.01)
    return store


def trunk_layer_count(layer_dims: tuple[int, ...]) -> int:
    return len(layer_dims) - 1


def forward_trunk(
    params: ParamStore | Mapping[str, Tensor],
    inputs,
    layer_dims: tuple[int, ...],
) -> list[Tensor]:
    """Activations of every layer, last one linear (the embedding).

    `params` may be a ParamStore (plain evaluation) or a mapping of leaf
    tensors from `ParamStore.tensors()` (training: gradients flow back).
    """
    tensors = params.tensors() if isinstance(params, ParamStore) else params
    x = inputs if isinstance(inputs, Tensor) else leaf(inputs)
    if x.data.ndim != 2:
        raise DimensionError("trunk inputs must be a 2-D matrix")
    n_layers = trunk_layer_count(layer_dims)
    if x.data.shape[1] != layer_dims[0]:
        raise DimensionError(
            f"inputs have {x.data.shape[1]} columns, layer 0 expects {layer_dims[0]}"
        )
    activations: list[Tensor] = []
    h = x
    for i in range(n_layers):
        w, b = tensors[f"w{i}"], tensors[f"b{i}"]
        if w.data.shape != (layer_dims[i], layer_dims[i + 1]):
            raise DimensionError(
                f"layer {i}: weight shape {w.data.shape} does not match "
                f"dims {(layer_dims[i], layer_dims[i + 1])}"
            )
        h = add(matmul(h, w), b)
        if i < n_layers - 1:
            h = relu(h)
        activations.append(h)
    return activations


def backward(loss: Tensor, tensors: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Run reverse-mode on `loss`; return gradients keyed like `tensors`.

    Leaves the loss does not depend on get zero gradients.
    """
    if not isinstance(loss, Tensor):
        raise StateError("backward needs the Tensor produced by a forward pass")
    loss.backward()
    out = {}
    for name, t in tensors.items():
        out[name] = np.zeros_like(t.data) if t.grad is None else t.grad
    return out


def sgd_step(
    params: ParamStore,
    grads: Mapping[str, np.ndarray],
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
) -> ParamStore:
    """Classic momentum update, weight decay folded into the gradient:

        v <- momentum * v + grad + weight_decay * param
        param <- param - lr * v

    The step aborts (no mutation) if any gradient entry is non-finite.
    """
    if lr < 0:
        raise ValueError("lr must be >= 0")
    for name in params.names():
        g = grads[name]
        if g.shape != params.value(name).shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match parameter {name!r}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    for name in params.names():
        p = params._params[name]
        v = params._velocity[name]
        v *= momentum
        v += grads[name] + weight_decay * p
        p -= lr * v
    return params


def finite_difference_check(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: ParamStore,
    step: float,
) -> GradCheckReport:
    """Compare analytic gradients of `loss_fn` against central differences.

    Relative error per scalar parameter is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|); the report
    carries the maximum and the parameter holding it.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    tensors = params.tensors()
    analytic = backward(loss_fn(tensors), tensors)

    def eval_at(values: dict[str, np.ndarray]) -> float:
        v = float(loss_fn({name: leaf(arr) for name, arr in values.items()}))
        if not np.isfinite(v):
            raise NumericError("loss is non-finite at a perturbed point")
        return v

    values = {name: params.value(name).copy() for name in params.names()}
    worst = 0.0
    worst_name = ""
    for name in params.names():
        flat = values[name].reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = eval_at(values)
            flat[i] = orig - step
            down = eval_at(values)
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(a_flat[i] - numeric) / max(1e-8, abs(a_flat[i]) + abs(numeric))
            if err > worst:
                worst = err
                worst_name = name
    return GradCheckReport(max_relative_error=worst, worst_parameter=worst_name)
