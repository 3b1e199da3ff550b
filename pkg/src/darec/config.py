"""Run configuration: a flat dataclass, loadable from key=value files with
CLI-flag overrides (flags win over the file, the file wins over defaults)."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, asdict
from typing import Optional

from .errors import ConfigError
from .models import ModelConfig
from .synth import SynthConfig
from .training import TrainConfig

__all__ = ["RunConfig", "parse_config_file"]


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "."
    variant: str = "ui"
    modality: str = "text"
    schema: str = "canonical"

    # data preparation
    min_count: int = 5
    max_len: int = 500

    # model dimensions
    embed_dim: int = 256
    hidden_dim: int = 256
    interaction_dim: int = 512
    disc_hidden: int = 512
    visual_proj_dim: int = 4096
    dropout_rate: float = 0.5
    share_embedding: bool = False

    # training
    batch_size: int = 512
    lr: float = 1e-4
    finetune_lr_scale: float = 1e-3
    weight_decay: float = 1e-4
    pretrain_epochs: int = 100
    adapt_epochs: int = 300
    finetune_epochs: int = 100
    patience_pretrain: int = 5
    patience_band: int = 10
    acc_band_low: float = 0.4
    acc_band_high: float = 0.6
    non_saturating: bool = False
    log_eps: float = 1e-7
    rep_sample: int = 512
    probe_steps: int = 80
    record_timing: bool = True

    # synthetic corpus generation
    synth_users: int = 120
    synth_items: int = 80
    synth_interactions: int = 2000
    synth_latent_dim: int = 2
    synth_bins: int = 5
    synth_repeats: int = 2
    synth_rotation: float = 0.3
    synth_offset: float = 0.6
    synth_token_remap: bool = False
    synth_shared_users: float = 0.0
    synth_shared_items: float = 0.0
    synth_noise: float = 0.05
    synth_with_features: bool = False
    synth_feature_dim: int = 16

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, lr=self.lr,
            finetune_lr_scale=self.finetune_lr_scale, weight_decay=self.weight_decay,
            pretrain_epochs=self.pretrain_epochs, adapt_epochs=self.adapt_epochs,
            finetune_epochs=self.finetune_epochs, patience_pretrain=self.patience_pretrain,
            patience_band=self.patience_band, acc_band_low=self.acc_band_low,
            acc_band_high=self.acc_band_high, non_saturating=self.non_saturating,
            log_eps=self.log_eps, rep_sample=self.rep_sample,
            probe_steps=self.probe_steps, record_timing=self.record_timing,
        )

    def model_config(self, vocab_size: int, feature_dim: int = 0) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, embed_dim=self.embed_dim, hidden_dim=self.hidden_dim,
            interaction_dim=self.interaction_dim, disc_hidden=self.disc_hidden,
            dropout_rate=self.dropout_rate, modality=self.modality,
            feature_dim=feature_dim, visual_proj_dim=self.visual_proj_dim,
            share_embedding=self.share_embedding,
        )

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_users=self.synth_users, n_items=self.synth_items,
            n_interactions=self.synth_interactions, latent_dim=self.synth_latent_dim,
            n_bins=self.synth_bins, repeats=self.synth_repeats,
            rating_noise=self.synth_noise, rotation=self.synth_rotation,
            offset=self.synth_offset, token_remap=self.synth_token_remap,
            shared_user_frac=self.synth_shared_users,
            shared_item_frac=self.synth_shared_items,
            max_len=self.max_len, min_count=self.min_count,
            with_features=self.synth_with_features, feature_dim=self.synth_feature_dim,
        )

    def to_dict(self) -> dict:
        return asdict(self)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    ftype = _FIELD_TYPES[name]
    raw = raw.strip()
    if ftype in ("bool", bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r} as bool")
    try:
        if ftype in ("int", int):
            return int(raw)
        if ftype in ("float", float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {name!r}: {exc}") from exc
    return raw


def parse_config_file(path) -> dict:
    """Flat UTF-8 key=value file; '#' starts a comment; blank lines ignored."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(key, raw)
    return out


def build_run_config(file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> RunConfig:
    merged = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(merged) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged)
