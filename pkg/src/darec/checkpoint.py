"""Self-contained checkpoint directories.

Layout: manifest.json (format version, phase, variant, modality, model config,
vocabulary, tensor listing) plus one raw little-endian float32 file per tensor
under tensors/.  Training math runs in float64; tensors are cast to float32 on
save, so reload-then-save is byte-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .data import Vocabulary
from .errors import ConfigError, DataError, PhaseOrderError
from .models import DanVariant, ModelConfig, build_models

__all__ = ["Checkpoint", "PHASES", "load_checkpoint", "rebuild_models", "save_checkpoint"]

FORMAT_VERSION = 1
PHASES = ("source", "adapted", "finetuned")


@dataclass
class Checkpoint:
    manifest: dict
    tensors: dict   # name -> float64 ndarray

    @property
    def phase(self) -> str:
        return self.manifest["phase"]

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.manifest["model"])

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.from_json(self.manifest["vocabulary"])


def _named_model_tensors(gen_s, gen_t, head, discs) -> list:
    out = [(f"source.{n}", t) for n, t in gen_s.parameters()]
    if gen_t is not None:
        out += [(f"target.{n}", t) for n, t in gen_t.parameters()]
    out += [(f"head.{n}", t) for n, t in head.parameters()]
    for level in sorted(discs):
        out += [(f"disc.{level}.{n}", t) for n, t in discs[level].parameters()]
    return out


def save_checkpoint(path, phase: str, variant: str, modality: str, model_cfg: ModelConfig,
                    vocab: Vocabulary, gen_s, head, gen_t=None, discs=None,
                    max_len: int = 500, extra: dict | None = None) -> None:
    if phase not in PHASES:
        raise ConfigError(f"unknown phase {phase!r}")
    discs = discs or {}
    named = _named_model_tensors(gen_s, gen_t, head, discs)
    os.makedirs(os.path.join(path, "tensors"), exist_ok=True)
    listing = []
    for name, t in sorted(named, key=lambda kv: kv[0]):
        fname = f"{name}.f32"
        data = np.ascontiguousarray(t.data, dtype="<f4")
        tmp = os.path.join(path, "tensors", fname + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(data.tobytes())
        os.replace(tmp, os.path.join(path, "tensors", fname))
        listing.append({"name": name, "shape": list(t.data.shape),
                        "dtype": "float32", "file": f"tensors/{fname}"})
    manifest = {
        "format_version": FORMAT_VERSION,
        "phase": phase,
        "variant": variant,
        "modality": modality,
        "max_len": max_len,
        "model": model_cfg.to_dict(),
        "vocabulary": vocab.to_json(),
        "tensors": listing,
    }
    if extra:
        manifest["extra"] = extra
    tmp = os.path.join(path, "manifest.json.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    os.replace(tmp, os.path.join(path, "manifest.json"))


def load_checkpoint(path) -> Checkpoint:
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
    tensors = {}
    for entry in manifest["tensors"]:
        fpath = os.path.join(path, entry["file"])
        expected = 4 * int(np.prod(entry["shape"])) if entry["shape"] else 4
        raw = open(fpath, "rb").read()
        if len(raw) != expected:
            raise DataError(
                f"tensor file {entry['file']} has {len(raw)} bytes, expected {expected}"
            )
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).astype(np.float64)
        tensors[entry["name"]] = arr
    return Checkpoint(manifest=manifest, tensors=tensors)


def require_phase(ckpt: Checkpoint, minimum: str, command: str) -> None:
    if PHASES.index(ckpt.phase) < PHASES.index(minimum):
        raise PhaseOrderError(
            f"{command} needs a checkpoint from the {minimum!r} phase or later, "
            f"got {ckpt.phase!r}; run the earlier phase first"
        )


def rebuild_models(ckpt: Checkpoint, rng=None):
    """Reconstruct model objects and load checkpointed parameters into them."""
    rng = np.random.default_rng(0) if rng is None else rng
    cfg = ckpt.model_config()
    variant = DanVariant(ckpt.manifest["variant"])
    gen_s, gen_t, head, discs = build_models(cfg, variant, rng)
    groups = {"source": gen_s.parameters(), "target": gen_t.parameters(),
              "head": head.parameters()}
    for level, d in discs.items():
        groups[f"disc.{level}"] = d.parameters()
    loaded = set()
    for prefix, params in groups.items():
        for name, t in params:
            full = f"{prefix}.{name}"
            if full in ckpt.tensors:
                arr = ckpt.tensors[full]
                if arr.shape != t.data.shape:
                    raise DataError(f"checkpoint tensor {full} has shape {arr.shape}, "
                                    f"model expects {t.data.shape}")
                np.copyto(t.data, arr)
                loaded.add(full)
    missing = set(ckpt.tensors) - loaded
    if missing:
        raise DataError(f"checkpoint tensors not consumed: {sorted(missing)[:3]} ...")
    return gen_s, gen_t, head, discs
