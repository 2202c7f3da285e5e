"""Line-oriented run configuration: ``key = value`` with ``#`` comments.

Keys are dotted (``loss.gamma = 0.2``); unknown keys are rejected. The
config hash is a SHA-256 over the fully resolved key/value map, so
whitespace, comments, key order, and explicitly restating a default all
hash identically.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from .clustering import ClusterConfig
from .data import SyntheticSpec, fmt_float
from .errors import ConfigError
from .kernels import AdaptationConfig
from .losses import LossWeights
from .pipeline import TrainConfig


@dataclass(frozen=True)
class EvalSettings:
    far_list: tuple[float, ...] = (0.001, 0.01, 0.1)
    k_pos: int = 300
    k_neg: int = 300


@dataclass
class RunConfig:
    seed: int = 0
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalSettings = field(default_factory=EvalSettings)

    def with_seed(self, seed: int) -> "RunConfig":
        return RunConfig(
            seed=seed,
            data=replace(self.data, seed=seed),
            train=replace(self.train, seed=seed),
            evaluation=self.evaluation,
        )


def _parse_int(s: str) -> int:
    return int(s)


def _parse_float(s: str) -> float:
    return float(s)


def _parse_floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _parse_choice(*options: str):
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {options}, got {s!r}")
        return s

    return parse


# key -> (getter(cfg), setter spec (section, attr), parser)
_KEYS: dict[str, tuple[str, str, object]] = {
    "seed": ("", "seed", _parse_int),
    "data.classes": ("data", "classes", _parse_int),
    "data.per_class": ("data", "per_class", _parse_int),
    "data.dim": ("data", "dim", _parse_int),
    "data.spread": ("data", "spread", _parse_float),
    "data.noise": ("data", "noise", _parse_float),
    "data.rotation_deg": ("data", "rotation_deg", _parse_float),
    "data.translation": ("data", "translation", _parse_floats),
    "trunk.dims": ("train", "trunk_dims", _parse_ints),
    "loss.alpha": ("loss", "alpha", _parse_float),
    "loss.beta": ("loss", "beta", _parse_float),
    "loss.gamma": ("loss", "gamma", _parse_float),
    "loss.source": ("train", "source_loss", _parse_choice("softmax", "margin")),
    "loss.margin_scale": ("train", "margin_scale", _parse_float),
    "loss.margin": ("train", "margin", _parse_float),
    "cluster.lambda": ("cluster", "lam", _parse_float),
    "cluster.min_size": ("cluster", "min_size", _parse_int),
    "mmd.layers": ("adaptation", "layers", _parse_ints),
    "train.batch_size": ("train", "batch_size", _parse_int),
    "train.momentum": ("train", "momentum", _parse_float),
    "train.weight_decay": ("train", "weight_decay", _parse_float),
    "train.lr_pretrain": ("train", "lr_pretrain", _parse_float),
    "train.lr_preadapt": ("train", "lr_preadapt", _parse_float),
    "train.lr_miadapt": ("train", "lr_miadapt", _parse_float),
    "train.epochs_pretrain": ("train", "epochs_pretrain", _parse_int),
    "train.epochs_preadapt": ("train", "epochs_preadapt", _parse_int),
    "train.epochs_miadapt": ("train", "epochs_miadapt", _parse_int),
    "train.max_iterations": ("train", "max_iterations", _parse_int),
    "train.convergence_tol": ("train", "convergence_tol", _parse_float),
    "eval.far": ("eval", "far_list", _parse_floats),
    "eval.k_pos": ("eval", "k_pos", _parse_int),
    "eval.k_neg": ("eval", "k_neg", _parse_int),
}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse config text into a fully defaulted RunConfig."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value

    sections = {
        "": {},
        "data": {},
        "train": {},
        "loss": {},
        "cluster": {},
        "adaptation": {},
        "eval": {},
    }
    for key, value in raw.items():
        section, attr, parser = _KEYS[key]
        try:
            sections[section][attr] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from None

    try:
        data = SyntheticSpec(**sections["data"], seed=0)
        weights = LossWeights(**sections["loss"])
        cluster = ClusterConfig(**sections["cluster"])
        adaptation = AdaptationConfig(**sections["adaptation"])
        train = TrainConfig(
            weights=weights,
            cluster=cluster,
            adaptation=adaptation,
            **sections["train"],
        )
        evaluation = EvalSettings(**sections["eval"])
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = RunConfig(
        seed=sections[""].get("seed", 0),
        data=data,
        train=train,
        evaluation=evaluation,
    )
    return cfg.with_seed(cfg.seed)


def load_config(path) -> RunConfig:
    with open(path) as f:
        return parse_config(f.read(), source=str(path))


def _canonical_value(value) -> str:
    if isinstance(value, float):
        return fmt_float(value)
    if isinstance(value, tuple):
        return ",".join(_canonical_value(v) for v in value)
    return str(value)


def canonical_items(cfg: RunConfig) -> list[tuple[str, str]]:
    """Every known key with its resolved value, sorted by key."""
    holders = {
        "": cfg,
        "data": cfg.data,
        "train": cfg.train,
        "loss": cfg.train.weights,
        "cluster": cfg.train.cluster,
        "adaptation": cfg.train.adaptation,
        "eval": cfg.evaluation,
    }
    items = []
    for key, (section, attr, _) in sorted(_KEYS.items()):
        value = getattr(holders[section], attr)
        items.append((key, "" if value is None else _canonical_value(value)))
    return items


def config_hash(cfg: RunConfig) -> str:
    digest = hashlib.sha256()
    for key, value in canonical_items(cfg):
        digest.update(f"{key}={value}\n".encode("utf-8"))
    return digest.hexdigest()
