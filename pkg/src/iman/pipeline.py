"""Staged adaptation training.

Stage 1 (pretrain) fits the source classifier while shrinking the
source/target MMD. Stage 2 (pre-adapt) clusters target embeddings into
pseudo-labels and supervises a fresh target head on them. Stage 3
(mi-adapt) optimizes the joint objective

    classification + alpha * sum_l MMD^2(layer l) + beta * MI(target head)

over all target samples, labeled or abandoned. `run_iman` executes stage 1
once, then alternates stages 2-3, re-clustering each round, until the
pseudo-label partition stabilizes (Rand index) or the iteration cap hits.

Source and target batches flow through one set of trunk leaf tensors per
step, so weight sharing holds by construction.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, constant
from .clustering import ClusterConfig, PseudoLabeling, cluster_pipeline, rand_index
from .data import Dataset
from .errors import (
    ClusteringError,
    DimensionError,
    NumericError,
    StageOrderError,
    StateError,
)
from .kernels import AdaptationConfig, KernelSpec, mmd2_multilayer
from .losses import (
    ClassifierOutput,
    LossWeights,
    angular_margin_loss,
    cross_entropy,
    masked_cross_entropy,
    mi_loss,
    softmax,
)
from .network import (
    ParamStore,
    backward,
    forward_trunk,
    init_head,
    init_trunk,
    make_rng,
    sgd_step,
    trunk_layer_count,
)

_STREAM_BATCH = 30

STAGE_INIT = "init"
STAGE_PRETRAIN = "pretrain"
STAGE_PREADAPT = "preadapt"
STAGE_MIADAPT = "miadapt"


@dataclass
class ModelState:
    """Shared trunk plus classifier heads; target head appears after
    the first clustering round."""

    trunk: ParamStore
    source_head: ParamStore
    target_head: ParamStore | None
    layer_dims: tuple[int, ...]
    n_source_classes: int
    n_target_classes: int
    seed: int
    stage: str = STAGE_INIT

    def embedding_dim(self) -> int:
        return self.layer_dims[-1]


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    trunk_dims: tuple[int, ...] = (2, 64, 64, 16)
    source_loss: str = "softmax"  # or "margin"
    margin_scale: float = 64.0
    margin: float = 0.5
    batch_size: int = 200
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_pretrain: float = 0.1
    lr_preadapt: float = 5e-3
    lr_miadapt: float = 1e-3
    epochs_pretrain: int = 30
    epochs_preadapt: int = 10
    epochs_miadapt: int = 10
    max_iterations: int = 3
    convergence_tol: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        for lr in (self.lr_pretrain, self.lr_preadapt, self.lr_miadapt):
            if lr <= 0:
                raise ValueError("learning rates must be positive")
        if self.source_loss not in ("softmax", "margin"):
            raise ValueError("source_loss must be 'softmax' or 'margin'")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 <= self.convergence_tol < 1.0:
            raise ValueError("convergence_tol must lie in [0, 1)")


@dataclass
class EpochStats:
    l_c: float
    mmd_sum: float
    l_m: float
    l_pseudo: float = 0.0


@dataclass
class StageReport:
    stage: str
    epochs: list[EpochStats]
    seed: int
    wall_clock: float = 0.0
    n_clusters: int | None = None
    n_assigned: int | None = None


@dataclass
class RunHistory:
    reports: list[StageReport]
    rand_indices: list[float]
    converged: bool
    iterations: int


def init_model(
    layer_dims: tuple[int, ...], n_source_classes: int, seed: int
) -> ModelState:
    return ModelState(
        trunk=init_trunk(layer_dims, seed),
        source_head=init_head(layer_dims[-1], n_source_classes, seed),
        target_head=None,
        layer_dims=layer_dims,
        n_source_classes=n_source_classes,
        n_target_classes=0,
        seed=seed,
    )


def _source_loss(cfg: TrainConfig, emb: Tensor, head_w: Tensor, labels) -> Tensor:
    if cfg.source_loss == "margin":
        return angular_margin_loss(
            emb, head_w, labels, scale=cfg.margin_scale, margin=cfg.margin
        )
    return cross_entropy(softmax(emb @ head_w), labels)


def _stage_kernels(
    model: ModelState, source: Dataset, target: Dataset, layers: tuple[int, ...]
) -> dict[int, KernelSpec]:
    """Median-heuristic kernels per adaptation layer, frozen for a stage."""
    acts_s = forward_trunk(model.trunk, source.features, model.layer_dims)
    acts_t = forward_trunk(model.trunk, target.features, model.layer_dims)
    return {
        idx: KernelSpec.from_median(acts_s[idx].data, acts_t[idx].data)
        for idx in layers
    }


def _resolve_adaptation(
    model: ModelState, source: Dataset, target: Dataset, cfg: TrainConfig
) -> tuple[tuple[int, ...], dict[int, KernelSpec]]:
    layers = cfg.adaptation.resolved_layers(trunk_layer_count(model.layer_dims))
    kernels = cfg.adaptation.kernels
    if kernels is None:
        kernels = _stage_kernels(model, source, target, layers)
    return layers, kernels


def _epoch_batches(
    n_source: int, n_target: int, half_batch: int, rng: np.random.Generator
):
    """One pass over the source in shuffled chunks; target cycles along."""
    src_order = rng.permutation(n_source)
    tgt_order = rng.permutation(n_target)
    tgt_pos = 0
    half_src = min(half_batch, n_source)
    half_tgt = min(half_batch, n_target)
    for start in range(0, n_source, half_src):
        src_idx = src_order[start : start + half_src]
        if tgt_pos + half_tgt > n_target:
            tgt_order = rng.permutation(n_target)
            tgt_pos = 0
        tgt_idx = tgt_order[tgt_pos : tgt_pos + half_tgt]
        tgt_pos += half_tgt
        yield src_idx, tgt_idx


def _apply_step(model: ModelState, loss: Tensor, leaves, stores, lr, cfg) -> None:
    value = float(loss)
    if not np.isfinite(value):
        raise NumericError(f"training loss became non-finite ({value})")
    grads = backward(loss, leaves)
    for store, prefix in stores:
        sub = {
            name[len(prefix) :]: grads[name]
            for name in grads
            if name.startswith(prefix)
        }
        sgd_step(store, sub, lr, cfg.momentum, cfg.weight_decay)


def _merged_leaves(model: ModelState, with_target_head: bool):
    """One leaf tensor per parameter, names prefixed by owning store."""
    leaves: dict[str, Tensor] = {}
    for prefix, store in (("trunk.", model.trunk), ("src.", model.source_head)):
        for name, t in store.tensors().items():
            leaves[prefix + name] = t
    if with_target_head:
        for name, t in model.target_head.tensors().items():
            leaves["tgt." + name] = t
    return leaves


def _trunk_view(leaves) -> dict[str, Tensor]:
    return {
        name[len("trunk.") :]: t
        for name, t in leaves.items()
        if name.startswith("trunk.")
    }


def pretrain(
    source: Dataset, target: Dataset, model: ModelState, cfg: TrainConfig
) -> tuple[ModelState, StageReport]:
    """Stage 1: source classification plus MMD alignment (no MI term)."""
    if source.labels is None:
        raise StateError("pretrain requires labeled source data")
    if target.labels is not None:
        raise StateError("pretrain expects unlabeled target data")
    start = time.perf_counter()
    layers, kernels = _resolve_adaptation(model, source, target, cfg)
    model.trunk.reset_velocity()
    model.source_head.reset_velocity()
    rng = make_rng(model.seed, _STREAM_BATCH, 1)
    half = max(1, cfg.batch_size // 2)
    epochs: list[EpochStats] = []
    for _ in range(cfg.epochs_pretrain):
        sums = np.zeros(3)
        steps = 0
        for src_idx, tgt_idx in _epoch_batches(
            source.n_samples, target.n_samples, half, rng
        ):
            leaves = _merged_leaves(model, with_target_head=False)
            trunk_t = _trunk_view(leaves)
            acts_s = forward_trunk(trunk_t, source.features[src_idx], model.layer_dims)
            acts_t = forward_trunk(trunk_t, target.features[tgt_idx], model.layer_dims)
            l_c = _source_loss(cfg, acts_s[-1], leaves["src.w"], source.labels[src_idx])
            mmd = mmd2_multilayer(acts_s, acts_t, layers, kernels)
            loss = l_c + cfg.weights.alpha * mmd
            _apply_step(
                model,
                loss,
                leaves,
                [(model.trunk, "trunk."), (model.source_head, "src.")],
                cfg.lr_pretrain,
                cfg,
            )
            sums += (float(l_c), float(mmd), 0.0)
            steps += 1
        sums /= max(1, steps)
        epochs.append(EpochStats(l_c=sums[0], mmd_sum=sums[1], l_m=sums[2]))
    model.stage = STAGE_PRETRAIN
    report = StageReport(
        stage=STAGE_PRETRAIN,
        epochs=epochs,
        seed=model.seed,
        wall_clock=time.perf_counter() - start,
    )
    return model, report


def _target_head_for(
    model: ModelState, pseudo: PseudoLabeling, target_emb: np.ndarray
) -> ParamStore:
    """Rebuild or re-align the target head for a fresh clustering.

    A changed cluster count gets a fresh seeded head; an unchanged count is
    warm-started with unit-norm cluster-mean embedding columns (cluster ids
    permute between rounds, so the columns must re-sync either way).
    """
    n_c = pseudo.n_clusters
    emb_dim = model.embedding_dim()
    if model.target_head is None or model.n_target_classes != n_c:
        head = init_head(emb_dim, n_c, model.seed + 1)
    else:
        head = model.target_head
    w = np.zeros((emb_dim, n_c))
    labels = pseudo.label_vector()
    for cid in range(n_c):
        mean = target_emb[labels == cid].mean(axis=0)
        norm = np.linalg.norm(mean)
        w[:, cid] = mean / norm if norm > 0 else mean
    head.set_value("w", w)
    head.reset_velocity()
    return head


def pre_adapt(
    source: Dataset,
    target: Dataset,
    pseudo: PseudoLabeling,
    model: ModelState,
    cfg: TrainConfig,
) -> tuple[ModelState, StageReport]:
    """Stage 2: supervise the target head on pseudo-labels.

    Abandoned samples are excluded from the target cross-entropy but still
    flow through the MMD term.
    """
    if model.stage == STAGE_INIT:
        raise StageOrderError("pre_adapt requires a pretrained model")
    if pseudo.n_clusters == 0:
        raise ClusteringError(
            "no clusters survive the size filter; lower lambda or min_size"
        )
    if pseudo.n_samples != target.n_samples:
        raise DimensionError("pseudo-labeling covers a different sample count")
    if pseudo.n_clusters == 1:
        warnings.warn(
            "single pseudo-cluster: target cross-entropy is degenerate",
            stacklevel=2,
        )
    start = time.perf_counter()
    from .evaluation import embed  # local import avoids a module cycle

    target_emb = embed(model, target)
    model.target_head = _target_head_for(model, pseudo, target_emb)
    model.n_target_classes = pseudo.n_clusters

    layers, kernels = _resolve_adaptation(model, source, target, cfg)
    model.trunk.reset_velocity()
    model.source_head.reset_velocity()
    rng = make_rng(model.seed, _STREAM_BATCH, 2, model.n_target_classes)
    half = max(1, cfg.batch_size // 2)
    pseudo_labels = pseudo.label_vector()
    epochs: list[EpochStats] = []
    for _ in range(cfg.epochs_preadapt):
        sums = np.zeros(4)
        steps = 0
        for src_idx, tgt_idx in _epoch_batches(
            source.n_samples, target.n_samples, half, rng
        ):
            leaves = _merged_leaves(model, with_target_head=True)
            trunk_t = _trunk_view(leaves)
            acts_s = forward_trunk(trunk_t, source.features[src_idx], model.layer_dims)
            acts_t = forward_trunk(trunk_t, target.features[tgt_idx], model.layer_dims)
            l_c = _source_loss(cfg, acts_s[-1], leaves["src.w"], source.labels[src_idx])
            mmd = mmd2_multilayer(acts_s, acts_t, layers, kernels)
            batch_labels = pseudo_labels[tgt_idx]
            mask = batch_labels >= 0
            probs_t = softmax(acts_t[-1] @ leaves["tgt.w"])
            l_pseudo = masked_cross_entropy(probs_t, batch_labels, mask)
            loss = l_c + cfg.weights.alpha * mmd + l_pseudo
            _apply_step(
                model,
                loss,
                leaves,
                [
                    (model.trunk, "trunk."),
                    (model.source_head, "src."),
                    (model.target_head, "tgt."),
                ],
                cfg.lr_preadapt,
                cfg,
            )
            sums += (float(l_c), float(mmd), 0.0, float(l_pseudo))
            steps += 1
        sums /= max(1, steps)
        epochs.append(
            EpochStats(l_c=sums[0], mmd_sum=sums[1], l_m=sums[2], l_pseudo=sums[3])
        )
    model.stage = STAGE_PREADAPT
    report = StageReport(
        stage=STAGE_PREADAPT,
        epochs=epochs,
        seed=model.seed,
        wall_clock=time.perf_counter() - start,
        n_clusters=pseudo.n_clusters,
        n_assigned=len(pseudo.assignment),
    )
    return model, report


def mi_adapt_loss(
    leaves,
    model: ModelState,
    cfg: TrainConfig,
    src_batch: np.ndarray,
    src_labels: np.ndarray,
    tgt_batch: np.ndarray,
    layers: tuple[int, ...],
    kernels: dict[int, KernelSpec],
) -> tuple[Tensor, float, float, float]:
    """One mi-adapt step's objective and its (l_c, mmd, l_m) parts."""
    trunk_t = _trunk_view(leaves)
    acts_s = forward_trunk(trunk_t, src_batch, model.layer_dims)
    acts_t = forward_trunk(trunk_t, tgt_batch, model.layer_dims)
    l_c = _source_loss(cfg, acts_s[-1], leaves["src.w"], src_labels)
    mmd = mmd2_multilayer(acts_s, acts_t, layers, kernels)
    probs_t = softmax(acts_t[-1] @ leaves["tgt.w"])
    l_m = mi_loss(probs_t, cfg.weights.gamma)
    loss = l_c + cfg.weights.alpha * mmd + cfg.weights.beta * l_m
    return loss, float(l_c), float(mmd), float(l_m)


def mi_adapt(
    source: Dataset, target: Dataset, model: ModelState, cfg: TrainConfig
) -> tuple[ModelState, StageReport]:
    """Stage 3: the full joint objective over all target samples."""
    if model.target_head is None or model.stage not in (
        STAGE_PREADAPT,
        STAGE_MIADAPT,
    ):
        raise StageOrderError("mi_adapt requires pre_adapt to have run")
    start = time.perf_counter()
    layers, kernels = _resolve_adaptation(model, source, target, cfg)
    model.trunk.reset_velocity()
    model.source_head.reset_velocity()
    model.target_head.reset_velocity()
    rng = make_rng(model.seed, _STREAM_BATCH, 3, model.n_target_classes)
    half = max(1, cfg.batch_size // 2)
    epochs: list[EpochStats] = []
    for _ in range(cfg.epochs_miadapt):
        sums = np.zeros(3)
        steps = 0
        for src_idx, tgt_idx in _epoch_batches(
            source.n_samples, target.n_samples, half, rng
        ):
            leaves = _merged_leaves(model, with_target_head=True)
            loss, l_c, mmd, l_m = mi_adapt_loss(
                leaves,
                model,
                cfg,
                source.features[src_idx],
                source.labels[src_idx],
                target.features[tgt_idx],
                layers,
                kernels,
            )
            _apply_step(
                model,
                loss,
                leaves,
                [
                    (model.trunk, "trunk."),
                    (model.source_head, "src."),
                    (model.target_head, "tgt."),
                ],
                cfg.lr_miadapt,
                cfg,
            )
            sums += (l_c, mmd, l_m)
            steps += 1
        sums /= max(1, steps)
        epochs.append(EpochStats(l_c=sums[0], mmd_sum=sums[1], l_m=sums[2]))
    model.stage = STAGE_MIADAPT
    report = StageReport(
        stage=STAGE_MIADAPT,
        epochs=epochs,
        seed=model.seed,
        wall_clock=time.perf_counter() - start,
    )
    return model, report


def run_iman(
    source: Dataset,
    target: Dataset,
    cfg: TrainConfig,
    on_iteration=None,
) -> tuple[ModelState, RunHistory]:
    """Stage 1 once, then alternate stages 2-3 until the pseudo-label
    partition stabilizes (Rand index >= 1 - tol) or max_iterations."""
    if source.labels is None:
        raise StateError("run_iman requires labeled source data")
    from .evaluation import embed

    n_classes = int(np.unique(source.labels).size)
    model = init_model(cfg.trunk_dims, n_classes, cfg.seed)
    model, rep = pretrain(source, target, model, cfg)
    reports = [rep]
    rand_history: list[float] = []
    converged = False
    iterations = 0
    prev_partition: np.ndarray | None = None
    for _ in range(cfg.max_iterations):
        pseudo = cluster_pipeline(embed(model, target), cfg.cluster)
        partition = pseudo.label_vector().copy()
        # abandoned samples count as singletons when comparing partitions
        lone = partition < 0
        partition[lone] = -1 - np.arange(int(lone.sum()))
        if prev_partition is not None:
            ri = rand_index(prev_partition, partition)
            rand_history.append(ri)
            if ri >= 1.0 - cfg.convergence_tol:
                converged = True
                break
        prev_partition = partition
        model, rep2 = pre_adapt(source, target, pseudo, model, cfg)
        model, rep3 = mi_adapt(source, target, model, cfg)
        reports += [rep2, rep3]
        iterations += 1
        if on_iteration is not None:
            on_iteration(iterations, model)
    history = RunHistory(
        reports=reports,
        rand_indices=rand_history,
        converged=converged,
        iterations=iterations,
    )
    return model, history
