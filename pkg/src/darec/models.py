"""Generator sets, discriminators, and the scoring head.

A GeneratorSet bundles the user encoder, item encoder, and interaction mapper
for one domain; the source domain additionally owns the scoring head, which is
frozen during adaptation and reused to score target interactions.  Source and
target sets are built shape-identical so that target parameters can be
initialized by a bitwise copy of the source.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .layers import (
    DenseLayer,
    DropoutSpec,
    EmbeddingTable,
    LstmCell,
    dense_forward,
    dropout,
    encode_sequence,
)

__all__ = [
    "DanVariant",
    "Discriminator",
    "GeneratorSet",
    "InteractionMapper",
    "ModelConfig",
    "ScoringHead",
    "TextEncoder",
    "VisualEncoder",
    "build_models",
    "discriminate",
    "predict_rating",
]


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 256
    hidden_dim: int = 256          # user/item representation width
    interaction_dim: int = 512     # interaction representation width
    disc_hidden: int = 512
    dropout_rate: float = 0.5
    modality: str = "text"         # item side: text | visual
    feature_dim: int = 0           # visual modality: input feature width
    visual_proj_dim: int = 4096
    share_embedding: bool = False  # one table for user and item encoders

    def __post_init__(self):
        if self.modality not in ("text", "visual"):
            raise ConfigError(f"modality must be text or visual, got {self.modality!r}")
        if self.modality == "visual" and self.feature_dim <= 0:
            raise ConfigError("visual modality requires feature_dim > 0")

    def to_dict(self) -> dict:
        return asdict(self)


class TextEncoder:
    """Embedding -> LSTM -> masked average pooling."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, name: str,
                 emb: EmbeddingTable | None = None):
        self.name = name
        self.emb = emb if emb is not None else EmbeddingTable(
            cfg.vocab_size, cfg.embed_dim, rng, name=f"{name}.emb")
        self._owns_emb = emb is None
        self.cell = LstmCell(cfg.embed_dim, cfg.hidden_dim, rng, name=f"{name}.lstm")

    def encode(self, token_ids, lengths) -> Tensor:
        return encode_sequence(self.emb, self.cell, token_ids, lengths)

    def parameters(self):
        out = self.emb.parameters() if self._owns_emb else []
        return out + self.cell.parameters()


class VisualEncoder:
    """Projection stack for precomputed item feature vectors."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, name: str):
        self.name = name
        self.proj = DenseLayer(cfg.feature_dim, cfg.visual_proj_dim, activation="relu",
                               rng=rng, name=f"{name}.proj")
        self.out = DenseLayer(cfg.visual_proj_dim, cfg.hidden_dim, activation="none",
                              rng=rng, name=f"{name}.out")

    def encode(self, features: Tensor) -> Tensor:
        return dense_forward(self.out, dense_forward(self.proj, features))

    def parameters(self):
        return self.proj.parameters() + self.out.parameters()


class InteractionMapper:
    """concat(user rep, item rep) -> Dense(relu) -> Dropout."""

    def __init__(self, rep_dim: int, out_dim: int, dropout_rate: float,
                 rng: np.random.Generator, name: str = "fuse"):
        self.rep_dim = rep_dim
        self.out_dim = out_dim
        self.dropout_rate = dropout_rate
        self.dense = DenseLayer(2 * rep_dim, out_dim, activation="relu", rng=rng,
                                name=f"{name}.dense")

    def forward(self, x_u: Tensor, x_v: Tensor, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        if x_u.shape[1] != self.rep_dim or x_v.shape[1] != self.rep_dim:
            raise DimensionError(
                f"interaction mapper expects width {self.rep_dim}, "
                f"got {x_u.shape} and {x_v.shape}"
            )
        y = dense_forward(self.dense, ad.concat_cols(x_u, x_v))
        spec = DropoutSpec(self.dropout_rate, "train" if train else "eval")
        return dropout(y, spec, rng)

    def parameters(self):
        return self.dense.parameters()


class GeneratorSet:
    """All mapping functions of one domain (user, item, interaction)."""

    def __init__(self, cfg: ModelConfig, domain: str, rng: np.random.Generator):
        if domain not in ("source", "target"):
            raise ConfigError(f"domain must be source or target, got {domain!r}")
        self.cfg = cfg
        self.domain = domain
        shared = EmbeddingTable(cfg.vocab_size, cfg.embed_dim, rng, name="shared.emb") \
            if cfg.share_embedding else None
        self.user_encoder = TextEncoder(cfg, rng, name="g_u", emb=shared)
        if cfg.modality == "text":
            self.item_encoder = TextEncoder(cfg, rng, name="g_v", emb=shared)
        else:
            self.item_encoder = VisualEncoder(cfg, rng, name="g_v")
        self.fuse = InteractionMapper(cfg.hidden_dim, cfg.interaction_dim,
                                      cfg.dropout_rate, rng, name="g_f")
        self._shared_emb = shared

    def forward_user(self, token_ids, lengths) -> Tensor:
        return self.user_encoder.encode(token_ids, lengths)

    def forward_item(self, item_input, lengths=None) -> Tensor:
        if self.cfg.modality == "text":
            if lengths is None:
                raise ConfigError("text modality needs token ids with lengths")
            return self.item_encoder.encode(item_input, lengths)
        if lengths is not None:
            raise ConfigError("visual modality takes a feature matrix, not token ids")
        feats = item_input if isinstance(item_input, Tensor) else Tensor(item_input)
        if feats.shape[1] != self.cfg.feature_dim:
            raise ConfigError(
                f"feature width {feats.shape[1]} does not match configured "
                f"feature_dim {self.cfg.feature_dim}"
            )
        return self.item_encoder.encode(feats)

    def forward_interaction(self, x_u: Tensor, x_v: Tensor, train: bool = False,
                            rng: np.random.Generator | None = None) -> Tensor:
        return self.fuse.forward(x_u, x_v, train=train, rng=rng)

    def parameters(self):
        out = []
        if self._shared_emb is not None:
            out.extend(self._shared_emb.parameters())
        out.extend(self.user_encoder.parameters())
        out.extend(self.item_encoder.parameters())
        out.extend(self.fuse.parameters())
        return out


class Discriminator:
    """Two-class domain classifier over a representation level."""

    LEVELS = ("interaction", "user", "item")

    def __init__(self, level: str, in_dim: int, hidden_dim: int, rng: np.random.Generator):
        if level not in self.LEVELS:
            raise ConfigError(f"discriminator level must be one of {self.LEVELS}, got {level!r}")
        self.level = level
        self.in_dim = in_dim
        name = f"d_{level[0]}" if level != "interaction" else "d_f"
        self.h = DenseLayer(in_dim, hidden_dim, activation="relu", rng=rng, name=f"{name}.h")
        self.out = DenseLayer(hidden_dim, 2, activation="none", rng=rng, name=f"{name}.out")

    def probs(self, rep: Tensor) -> Tensor:
        """Rows are [p(source), p(target)], each summing to 1."""
        if rep.shape[1] != self.in_dim:
            raise DimensionError(
                f"discriminator({self.level}) expects width {self.in_dim}, got {rep.shape}"
            )
        return ad.softmax(dense_forward(self.out, dense_forward(self.h, rep)))

    def parameters(self):
        return self.h.parameters() + self.out.parameters()


def discriminate(d: Discriminator, rep: Tensor) -> Tensor:
    return d.probs(rep)


class ScoringHead:
    """Single linear unit mapping the interaction representation to a rating."""

    def __init__(self, in_dim: int, rng: np.random.Generator):
        self.dense = DenseLayer(in_dim, 1, activation="none", rng=rng, name="g_y.dense")

    def predict(self, x_f: Tensor) -> Tensor:
        y = dense_forward(self.dense, x_f)
        return ad.reshape(y, (y.shape[0],))

    def parameters(self):
        return self.dense.parameters()


def predict_rating(head: ScoringHead, x_f: Tensor) -> Tensor:
    return head.predict(x_f)


_VARIANT_LEVELS = {
    "ui": (),
    "u": ("user",),
    "i": ("item",),
    "h": ("user", "item"),
}


@dataclass(frozen=True)
class DanVariant:
    kind: str
    fine_tune_levels: tuple = field(init=False)

    def __post_init__(self):
        if self.kind not in _VARIANT_LEVELS:
            raise ConfigError(f"variant must be one of {sorted(_VARIANT_LEVELS)}, got {self.kind!r}")
        object.__setattr__(self, "fine_tune_levels", _VARIANT_LEVELS[self.kind])

    @property
    def active_discriminators(self) -> tuple:
        return ("interaction",) + self.fine_tune_levels

    @property
    def needs_shared_users(self) -> bool:
        return "user" in self.fine_tune_levels

    @property
    def needs_shared_items(self) -> bool:
        return "item" in self.fine_tune_levels


def build_models(cfg: ModelConfig, variant: DanVariant, rng: np.random.Generator):
    """Construct source/target generator sets, the scoring head, and the
    discriminators active for the chosen variant."""
    gen_s = GeneratorSet(cfg, "source", rng)
    gen_t = GeneratorSet(cfg, "target", rng)
    head = ScoringHead(cfg.interaction_dim, rng)
    discs = {}
    for level in variant.active_discriminators:
        in_dim = cfg.interaction_dim if level == "interaction" else cfg.hidden_dim
        discs[level] = Discriminator(level, in_dim, cfg.disc_hidden, rng)
    return gen_s, gen_t, head, discs
