"""Versioned binary checkpoints for model state.

Layout: magic line, one JSON header line (sorted keys), then the raw
little-endian float64 bytes of every parameter in header order. Pure bytes
in, pure bytes out: round trips are bit-exact and repeated saves of the
same state are byte-identical.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import SchemaError
from .network import ParamStore
from .pipeline import ModelState

MAGIC = b"IMAN-CKPT\n"
FORMAT_VERSION = 1


def _entries(model: ModelState) -> list[tuple[str, ParamStore, str]]:
    out = [("trunk", model.trunk, ""), ("src", model.source_head, "")]
    if model.target_head is not None:
        out.append(("tgt", model.target_head, ""))
    return out


def save_checkpoint(model: ModelState, path) -> None:
    params = []
    blobs = []
    for prefix, store, _ in _entries(model):
        for name in store.names():
            arr = store.value(name)
            params.append(
                {"name": f"{prefix}.{name}", "shape": list(arr.shape)}
            )
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "layer_dims": list(model.layer_dims),
        "n_source_classes": model.n_source_classes,
        "n_target_classes": model.n_target_classes,
        "params": params,
        "seed": model.seed,
        "stage": model.stage,
    }
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise SchemaError(f"{path}: not a checkpoint file")
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SchemaError(f"{path}: bad checkpoint header: {exc}") from None
        if header.get("format_version") != FORMAT_VERSION:
            raise SchemaError(
                f"{path}: unsupported checkpoint version "
                f"{header.get('format_version')}"
            )
        stores = {"trunk": ParamStore(), "src": ParamStore(), "tgt": ParamStore()}
        seen_tgt = False
        for entry in header["params"]:
            prefix, name = entry["name"].split(".", 1)
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise SchemaError(f"{path}: truncated parameter data")
            arr = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            stores[prefix].add(name, arr)
            seen_tgt = seen_tgt or prefix == "tgt"
    return ModelState(
        trunk=stores["trunk"],
        source_head=stores["src"],
        target_head=stores["tgt"] if seen_tgt else None,
        layer_dims=tuple(header["layer_dims"]),
        n_source_classes=int(header["n_source_classes"]),
        n_target_classes=int(header["n_target_classes"]),
        seed=int(header["seed"]),
        stage=str(header["stage"]),
    )
