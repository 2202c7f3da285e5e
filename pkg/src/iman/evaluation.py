"""Verification-protocol evaluation: pair scoring, 10-fold accuracy,
ROC / TAR@FAR, difficult-pair mining, and domain-discrepancy reporting.

Conventions fixed here (several exist in the wild):
 - a pair is accepted as genuine when score >= threshold;
 - folds are contiguous blocks in pair-list order, so the pairs file is
   authoritative for fold structure;
 - TAR@FAR is conservative: the largest TAR whose operating point keeps
   FAR <= the requested value (no interpolation past it).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFeatureError, DimensionError, SchemaError, ParseError
from .kernels import KernelSpec, mmd2_biased
from .network import forward_trunk, make_rng

TAG_ALL = "all-pairs"
TAG_DIFFICULT = "selected-difficult"
TAG_BALANCED = "sampled-balanced"


@dataclass
class PairList:
    """(index_a, index_b, same) triples plus a provenance tag."""

    pairs: list[tuple[int, int, bool]]
    tag: str = TAG_ALL

    def __post_init__(self):
        seen = set()
        for a, b, _ in self.pairs:
            if a == b:
                raise ValueError(f"self-pair ({a}, {a})")
            key = (a, b) if a < b else (b, a)
            if key in seen:
                raise ValueError(f"duplicate pair {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.pairs)

    def same_flags(self) -> np.ndarray:
        return np.array([s for _, _, s in self.pairs], dtype=bool)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["id_a", "id_b", "same"])
            for a, b, same in self.pairs:
                writer.writerow([a, b, int(same)])

    @classmethod
    def load_csv(cls, path, tag: str = TAG_ALL) -> "PairList":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["id_a", "id_b", "same"]:
                raise SchemaError(f"{path}: unexpected header {header!r}")
            pairs = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 3:
                    raise SchemaError(f"{path}:{lineno}: expected 3 columns")
                try:
                    pairs.append((int(row[0]), int(row[1]), bool(int(row[2]))))
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from None
        return cls(pairs=pairs, tag=tag)


@dataclass
class RocCurve:
    """Operating points over all distinct thresholds, FAR ascending."""

    far: np.ndarray
    tar: np.ndarray
    thresholds: np.ndarray

    def tar_at_far(self, far_target: float) -> float:
        ok = self.far <= far_target
        return float(self.tar[ok].max()) if ok.any() else 0.0


@dataclass
class VerificationReport:
    accuracy_mean: float
    accuracy_std: float
    fold_thresholds: list[float]
    best_threshold: float
    tar_at_far: dict[float, float]
    mmd_discrepancy: float


def all_pairs(labels) -> PairList:
    """Every unordered pair, `same` from ground-truth labels."""
    labels = np.asarray(labels)
    n = labels.size
    pairs = [
        (a, b, bool(labels[a] == labels[b]))
        for a in range(n)
        for b in range(a + 1, n)
    ]
    return PairList(pairs=pairs, tag=TAG_ALL)


def sample_balanced_pairs(labels, k_pos: int, k_neg: int, seed: int) -> PairList:
    """Seeded random sample of genuine and impostor pairs (for benchmarks)."""
    labels = np.asarray(labels)
    n = labels.size
    genuine = [
        (a, b) for a in range(n) for b in range(a + 1, n) if labels[a] == labels[b]
    ]
    impostor = [
        (a, b) for a in range(n) for b in range(a + 1, n) if labels[a] != labels[b]
    ]
    if len(genuine) < k_pos or len(impostor) < k_neg:
        raise ValueError("not enough pairs to sample from")
    rng = make_rng(seed, 20)
    gi = rng.choice(len(genuine), size=k_pos, replace=False)
    ii = rng.choice(len(impostor), size=k_neg, replace=False)
    pairs = [(*genuine[i], True) for i in sorted(gi.tolist())]
    pairs += [(*impostor[i], False) for i in sorted(ii.tolist())]
    return PairList(pairs=pairs, tag=TAG_BALANCED)


def embed(model, dataset) -> np.ndarray:
    """Final-layer embeddings of a dataset under a trained model."""
    acts = forward_trunk(model.trunk, dataset.features, model.layer_dims)
    return acts[-1].data


def _check_norms(embeddings: np.ndarray, rows) -> np.ndarray:
    norms = np.linalg.norm(embeddings, axis=1)
    used = np.unique(np.asarray(rows))
    bad = used[norms[used] == 0.0]
    if bad.size:
        raise DegenerateFeatureError(f"zero-norm embedding row {bad[0]}")
    return norms


def score_pairs(embeddings, pairs: PairList) -> np.ndarray:
    """Cosine similarity per pair, in pair-list order."""
    e = np.asarray(embeddings, dtype=np.float64)
    if not pairs.pairs:
        return np.zeros(0)
    a = np.array([p[0] for p in pairs.pairs])
    b = np.array([p[1] for p in pairs.pairs])
    if a.max(initial=0) >= e.shape[0] or b.max(initial=0) >= e.shape[0]:
        raise DimensionError("pair index outside embedding rows")
    norms = _check_norms(e, np.concatenate([a, b]))
    dots = np.einsum("ij,ij->i", e[a], e[b])
    return dots / (norms[a] * norms[b])


def select_difficult_pairs(
    embeddings, labels, k_pos: int, k_neg: int
) -> PairList:
    """Lowest-scoring genuine and highest-scoring impostor pairs.

    Ties break lexicographically on (index_a, index_b) so the selection is
    independent of candidate order.
    """
    labels = np.asarray(labels)
    candidates = all_pairs(labels)
    scores = score_pairs(embeddings, candidates)
    a = np.array([p[0] for p in candidates.pairs])
    b = np.array([p[1] for p in candidates.pairs])
    same = candidates.same_flags()
    if same.sum() < k_pos or (~same).sum() < k_neg:
        raise ValueError(
            f"need {k_pos} genuine / {k_neg} impostor pairs, have "
            f"{int(same.sum())} / {int((~same).sum())}"
        )
    gi = np.flatnonzero(same)
    ii = np.flatnonzero(~same)
    g_order = gi[np.lexsort((b[gi], a[gi], scores[gi]))][:k_pos]
    i_order = ii[np.lexsort((b[ii], a[ii], -scores[ii]))][:k_neg]
    pairs = [(int(a[i]), int(b[i]), True) for i in g_order]
    pairs += [(int(a[i]), int(b[i]), False) for i in i_order]
    return PairList(pairs=pairs, tag=TAG_DIFFICULT)


def _best_threshold(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(threshold, accuracy) maximizing accuracy of `score >= t`.

    Candidates are the distinct scores plus +inf; ties prefer the smallest
    threshold.
    """
    uniq = np.unique(scores)  # ascending
    candidates = np.append(uniq, np.inf)
    n_gen = int(labels.sum())
    # counts per candidate threshold: accepted = scores >= t
    gen_below = np.searchsorted(np.sort(scores[labels]), candidates, side="left")
    imp_below = np.searchsorted(np.sort(scores[~labels]), candidates, side="left")
    tp = n_gen - gen_below
    tn = imp_below
    acc = (tp + tn) / labels.size
    best = int(np.argmax(acc))  # argmax takes the first (smallest) maximizer
    return float(candidates[best]), float(acc[best])


def tenfold_accuracy(
    scores, labels
) -> tuple[float, float, list[float]]:
    """LFW-style 10-fold thresholded accuracy.

    Pairs are split into 10 contiguous folds; each fold is scored with the
    accuracy-maximizing threshold of the other nine. Returns
    (mean, std, per-fold thresholds); std is the population std over folds.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n = scores.size
    if n < 10:
        raise DimensionError("tenfold_accuracy needs at least 10 pairs")
    folds = np.array_split(np.arange(n), 10)
    accs, thresholds = [], []
    for held in folds:
        mask = np.ones(n, dtype=bool)
        mask[held] = False
        t, _ = _best_threshold(scores[mask], labels[mask])
        pred = scores[held] >= t
        accs.append(float(np.mean(pred == labels[held])))
        thresholds.append(t)
    accs = np.asarray(accs)
    return float(accs.mean()), float(accs.std()), thresholds


def roc_and_tar(
    scores, labels, far_list: tuple[float, ...] = ()
) -> tuple[RocCurve, dict[float, float]]:
    """ROC over all distinct thresholds plus TAR at requested FARs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_gen = int(labels.sum())
    n_imp = int((~labels).sum())
    if n_gen == 0 or n_imp == 0:
        raise DimensionError("ROC needs both genuine and impostor pairs")
    uniq = np.unique(scores)[::-1]  # descending
    thresholds = np.concatenate(([np.inf], uniq))
    gen_sorted = np.sort(scores[labels])
    imp_sorted = np.sort(scores[~labels])
    tar = (n_gen - np.searchsorted(gen_sorted, thresholds, side="left")) / n_gen
    far = (n_imp - np.searchsorted(imp_sorted, thresholds, side="left")) / n_imp
    curve = RocCurve(far=far, tar=tar, thresholds=thresholds)
    return curve, {f: curve.tar_at_far(f) for f in far_list}


def discrepancy_report(embeddings_s, embeddings_t, spec: KernelSpec) -> float:
    """Biased multi-kernel MMD^2 between two embedding sets."""
    return float(mmd2_biased(embeddings_s, embeddings_t, spec))


def projection_2d(embeddings) -> tuple[np.ndarray, float]:
    """Top-2 PCA projection and the retained variance fraction.

    Component signs are fixed (largest-magnitude loading positive) so the
    output is reproducible. Zero-variance input projects to zeros with
    retained fraction 1.0.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionError("projection_2d needs at least 2 samples")
    if x.shape[1] < 2:
        raise DimensionError("projection_2d needs at least 2 feature columns")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:2]
    comps = eigvecs[:, order]
    for j in range(comps.shape[1]):
        lead = np.argmax(np.abs(comps[:, j]))
        if comps[lead, j] < 0:
            comps[:, j] = -comps[:, j]
    total = float(eigvals.sum())
    retained = 1.0 if total <= 0.0 else float(eigvals[order].sum() / total)
    return centered @ comps, retained
