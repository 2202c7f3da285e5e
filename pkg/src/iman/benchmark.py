"""Desk-scale benchmark harness: the ablation ladder and its metrics.

Three variants over the same synthetic source/target pair:
 - ``source_only``: stage-1 objective with the MMD weight zeroed
   (plain supervised training on the source);
 - ``no_mi``: pretrain + one clustering/pre-adapt round, no MI stage;
 - ``full``: the complete alternating run.

Verification accuracy is 10-fold thresholded accuracy over a seeded
balanced pair sample of the target domain; domain discrepancy is biased
multi-kernel MMD^2 between full-dataset embeddings with median-heuristic
bandwidths.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import cluster_pipeline
from .data import Dataset, SyntheticSpec, generate_domains
from .evaluation import (
    PairList,
    embed,
    sample_balanced_pairs,
    score_pairs,
    tenfold_accuracy,
)
from .kernels import KernelSpec
from .losses import LossWeights
from .pipeline import (
    ModelState,
    RunHistory,
    TrainConfig,
    mi_adapt,
    pre_adapt,
    pretrain,
    run_iman,
)


def benchmark_spec(seed: int) -> SyntheticSpec:
    return SyntheticSpec(seed=seed)


def benchmark_config(seed: int, **overrides) -> TrainConfig:
    return replace(TrainConfig(seed=seed), **overrides)


def verification_accuracy(
    model: ModelState, target: Dataset, pairs: PairList
) -> float:
    scores = score_pairs(embed(model, target), pairs)
    mean, _, _ = tenfold_accuracy(scores, pairs.same_flags())
    return mean


def domain_discrepancy(
    model: ModelState, source: Dataset, target: Dataset
) -> float:
    emb_s, emb_t = embed(model, source), embed(model, target)
    spec = KernelSpec.from_median(emb_s, emb_t)
    from .evaluation import discrepancy_report

    return discrepancy_report(emb_s, emb_t, spec)


def train_variant(
    variant: str,
    source: Dataset,
    target: Dataset,
    cfg: TrainConfig,
    on_iteration=None,
) -> tuple[ModelState, RunHistory | None]:
    """Train one ablation variant from scratch."""
    from .pipeline import init_model

    if variant == "full":
        return run_iman(source, target, cfg, on_iteration=on_iteration)
    n_classes = int(np.unique(source.labels).size)
    model = init_model(cfg.trunk_dims, n_classes, cfg.seed)
    if variant == "source_only":
        cfg0 = replace(cfg, weights=replace(cfg.weights, alpha=0.0))
        model, _ = pretrain(source, target, model, cfg0)
        return model, None
    if variant == "no_mi":
        model, _ = pretrain(source, target, model, cfg)
        pseudo = cluster_pipeline(embed(model, target), cfg.cluster)
        model, _ = pre_adapt(source, target, pseudo, model, cfg)
        return model, None
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class AblationResult:
    """Per-seed metrics for the three-variant ladder."""

    seeds: list[int]
    accuracy: dict[str, list[float]] = field(default_factory=dict)
    discrepancy: dict[str, list[float]] = field(default_factory=dict)
    iteration_accuracy: list[list[float]] = field(default_factory=list)
    converged: list[bool] = field(default_factory=list)

    def mean_accuracy(self, variant: str) -> float:
        return float(np.mean(self.accuracy[variant]))

    def mean_discrepancy(self, variant: str) -> float:
        return float(np.mean(self.discrepancy[variant]))

    def iteration_means(self) -> list[float]:
        """Mean accuracy per alternation round; finished seeds carry their
        final value forward."""
        width = max(len(tr) for tr in self.iteration_accuracy)
        padded = [tr + [tr[-1]] * (width - len(tr)) for tr in self.iteration_accuracy]
        return [float(np.mean(col)) for col in zip(*padded)]


def run_ablation(
    seeds: tuple[int, ...],
    variants: tuple[str, ...] = ("source_only", "no_mi", "full"),
    config_overrides: dict | None = None,
) -> AblationResult:
    result = AblationResult(seeds=list(seeds))
    for v in variants:
        result.accuracy[v] = []
        result.discrepancy[v] = []
    for seed in seeds:
        source, target, hidden = generate_domains(benchmark_spec(seed))
        pairs = sample_balanced_pairs(hidden, k_pos=300, k_neg=300, seed=seed)
        cfg = benchmark_config(seed, **(config_overrides or {}))
        for v in variants:
            trace: list[float] = []
            if v == "full":

                def record(_it, model):
                    trace.append(verification_accuracy(model, target, pairs))

                model, history = train_variant(v, source, target, cfg, record)
                result.iteration_accuracy.append(trace)
                result.converged.append(history.converged)
            else:
                model, _ = train_variant(v, source, target, cfg)
            result.accuracy[v].append(verification_accuracy(model, target, pairs))
            result.discrepancy[v].append(domain_discrepancy(model, source, target))
    return result
