"""Synthetic shifted-domain datasets and CSV persistence.

Source and target mixtures share class centers drawn once per seed; the
target sample is then pushed through a rigid transform (rotation of the
first two feature axes plus a translation). The domain gap therefore *is*
the configured transform, and an identity transform yields two independent
samples of the same distribution. Class-id namespaces are disjoint: source
ids are 0..C-1, hidden target ids C..2C-1.

CSV schema: header ``id,label,domain,f0..f{d-1}``; label -1 encodes
unlabeled; floats serialized with 17 significant digits so round trips are
exact. PCG64 is the generator (see network.make_rng).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, ParseError, SchemaError
from .network import make_rng

_STREAM_CENTERS = 10
_STREAM_SOURCE = 11
_STREAM_TARGET = 12


def fmt_float(x: float) -> str:
    return f"{x:.17g}"


@dataclass
class Dataset:
    """Feature rows with optional labels and a domain tag."""

    features: np.ndarray
    labels: np.ndarray | None
    domain: str
    label_space: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DimensionError("features must be a 2-D matrix")
        if not np.all(np.isfinite(self.features)):
            raise NumericError("features contain non-finite entries")
        if self.domain not in ("source", "target"):
            raise ValueError("domain must be 'source' or 'target'")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise DimensionError("one label per feature row required")
        if not self.label_space:
            self.label_space = self.domain

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings for one source/target pair."""

    classes: int = 6
    per_class: int = 60
    dim: int = 2
    spread: float = 2.5
    noise: float = 0.25
    rotation_deg: float = 40.0
    translation: tuple[float, ...] = (2.0, 0.5)
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least 2 classes per domain")
        if self.noise <= 0:
            raise ValueError("noise must be positive")
        if self.per_class < 1:
            raise ValueError("per_class must be >= 1")
        if self.dim < 2:
            raise ValueError("dim must be >= 2 (rotation plane)")
        if len(self.translation) != self.dim:
            raise ValueError("translation length must equal dim")


def _rotation_matrix(dim: int, degrees: float) -> np.ndarray:
    theta = np.deg2rad(degrees)
    rot = np.eye(dim)
    rot[0, 0] = np.cos(theta)
    rot[0, 1] = -np.sin(theta)
    rot[1, 0] = np.sin(theta)
    rot[1, 1] = np.cos(theta)
    return rot


def generate_domains(
    spec: SyntheticSpec,
) -> tuple[Dataset, Dataset, np.ndarray]:
    """Build (source, target, hidden_target_labels) for one seed.

    The target dataset carries no labels; the hidden ground truth is
    returned separately for evaluation only.
    """
    centers = (
        make_rng(spec.seed, _STREAM_CENTERS).standard_normal(
            (spec.classes, spec.dim)
        )
        * spec.spread
    )

    def sample(stream: int) -> tuple[np.ndarray, np.ndarray]:
        rng = make_rng(spec.seed, stream)
        feats = np.empty((spec.classes * spec.per_class, spec.dim))
        labels = np.empty(spec.classes * spec.per_class, dtype=np.int64)
        for c in range(spec.classes):
            lo = c * spec.per_class
            hi = lo + spec.per_class
            feats[lo:hi] = centers[c] + spec.noise * rng.standard_normal(
                (spec.per_class, spec.dim)
            )
            labels[lo:hi] = c
        return feats, labels

    src_feats, src_labels = sample(_STREAM_SOURCE)
    tgt_feats, tgt_labels = sample(_STREAM_TARGET)
    rot = _rotation_matrix(spec.dim, spec.rotation_deg)
    tgt_feats = tgt_feats @ rot.T + np.asarray(spec.translation)

    source = Dataset(src_feats, src_labels, domain="source", label_space="source")
    target = Dataset(tgt_feats, None, domain="target", label_space="target")
    hidden = tgt_labels + spec.classes  # disjoint id namespace
    return source, target, hidden


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(
            ["id", "label", "domain"] + [f"f{i}" for i in range(dataset.dim)]
        )
        labels = (
            dataset.labels
            if dataset.labels is not None
            else np.full(dataset.n_samples, -1, dtype=np.int64)
        )
        for i in range(dataset.n_samples):
            row = [i, int(labels[i]), dataset.domain]
            row += [fmt_float(v) for v in dataset.features[i]]
            writer.writerow(row)


def load_csv(path) -> Dataset:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header") from None
        if header[:3] != ["id", "label", "domain"] or any(
            h != f"f{i}" for i, h in enumerate(header[3:])
        ):
            raise SchemaError(f"{path}: unexpected header {header!r}")
        dim = len(header) - 3
        feats: list[list[float]] = []
        labels: list[int] = []
        domain: str | None = None
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}:{lineno}: expected {len(header)} columns, "
                    f"got {len(row)}"
                )
            try:
                labels.append(int(row[1]))
                feats.append([float(v) for v in row[3:]])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if domain is None:
                domain = row[2]
            elif row[2] != domain:
                raise SchemaError(f"{path}:{lineno}: mixed domain tags")
        if domain is None:
            domain = "source"
        label_arr = np.asarray(labels, dtype=np.int64)
        unlabeled = label_arr.size == 0 or bool(np.all(label_arr == -1))
        return Dataset(
            features=np.asarray(feats, dtype=np.float64).reshape(len(feats), dim),
            labels=None if unlabeled else label_arr,
            domain=domain,
        )


def save_labels(labels: np.ndarray, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", "label"])
        for i, lab in enumerate(np.asarray(labels, dtype=np.int64)):
            writer.writerow([i, int(lab)])


def load_labels(path) -> np.ndarray:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["id", "label"]:
            raise SchemaError(f"{path}: unexpected header {header!r}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise SchemaError(f"{path}:{lineno}: expected 2 columns")
            try:
                out.append(int(row[1]))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
        return np.asarray(out, dtype=np.int64)
