"""Synthetic source/target corpus generator for desk-scale verification.

A planted bilinear preference model drives both domains: every user and item
carries a latent vector on a fixed quantization grid, a rating is
mean + scale * <p, q> + noise, and each review renders the pair's latent bins
into tokens through a fixed code ("u0b3" marks user dimension 0, bin 3).  The
target domain renders latents through an invertible shift (rotation plus
offset, optionally remapped token surface forms), so its text is
systematically displaced while the underlying preference structure is
isomorphic to the source.  True target ratings are returned separately as
sealed labels and also written to their own file; target records carry a
constant placeholder rating so no truth can leak into training.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from .data import DomainPairDataset, ReviewRecord, assemble_pair
from .errors import ConfigError

__all__ = ["SynthConfig", "SynthResult", "synthesize_domain_pair", "synthesize_records",
           "write_synth_files", "PLACEHOLDER_RATING"]

PLACEHOLDER_RATING = 3.0


@dataclass
class SynthConfig:
    n_users: int = 120
    n_items: int = 80
    n_interactions: int = 2000
    latent_dim: int = 2
    n_bins: int = 5
    bin_skew: float = 0.8       # per-dim skew of bin probabilities (sign alternates)
    repeats: int = 3            # token repetitions per latent dimension
    n_filler_tokens: int = 20
    fillers_per_review: int = 1
    rating_mean: float = 3.0
    rating_linear: float = 0.45   # weight of the additive (bias-like) part
    rating_scale: float = 0.5     # weight of the multiplicative part
    rating_noise: float = 0.05
    rotation: float = 0.0       # radians, applied in the first two latent dims
    offset: float = 0.0         # shift along (1,1,..)/sqrt(L) before re-binning
    token_remap: bool = False   # target uses disjoint surface forms
    shared_user_frac: float = 0.0
    shared_item_frac: float = 0.0
    max_len: int = 96
    min_count: int = 5
    with_features: bool = False
    feature_dim: int = 16

    def __post_init__(self):
        if self.n_interactions > self.n_users * self.n_items:
            raise ConfigError("n_interactions exceeds the number of distinct user-item pairs")
        if self.latent_dim < 1 or self.n_bins < 2:
            raise ConfigError("latent_dim must be >= 1 and n_bins >= 2")

    def to_dict(self):
        return asdict(self)


@dataclass
class SynthResult:
    source_records: list
    target_records: list
    sealed_labels: dict            # (user_id, item_id) -> true rating
    source_features: dict | None
    target_features: dict | None
    config: SynthConfig


def _bin_centers(n_bins: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n_bins)


def _bin_probs(cfg: SynthConfig) -> np.ndarray:
    """Per-dimension bin probabilities.  A nonzero skew makes every
    (dimension, bin) pair occur at a distinctive rate, which anchors the
    domain alignment problem: mirrored or permuted bin assignments no longer
    reproduce the source distribution."""
    grid = np.linspace(-1.0, 1.0, cfg.n_bins)
    probs = np.empty((cfg.latent_dim, cfg.n_bins))
    for d in range(cfg.latent_dim):
        sign = 1.0 if d % 2 == 0 else -1.0
        w = np.exp(cfg.bin_skew * sign * grid) * (1.0 + 0.25 * d)**np.abs(grid)
        probs[d] = w / w.sum()
    return probs


def _quantize(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    idx = np.abs(x[..., None] - centers).argmin(axis=-1)
    return idx


def _rotation_matrix(dim: int, angle: float) -> np.ndarray:
    rot = np.eye(dim)
    if dim >= 2 and angle != 0.0:
        c, s = np.cos(angle), np.sin(angle)
        rot[0, 0], rot[0, 1], rot[1, 0], rot[1, 1] = c, -s, s, c
    return rot


def _render_bins(latents: np.ndarray, cfg: SynthConfig, shifted: bool) -> np.ndarray:
    centers = _bin_centers(cfg.n_bins)
    if not shifted:
        return _quantize(latents, centers)
    rot = _rotation_matrix(cfg.latent_dim, cfg.rotation)
    direction = np.ones(cfg.latent_dim) / np.sqrt(cfg.latent_dim)
    moved = latents @ rot.T + cfg.offset * direction
    return _quantize(moved, centers)


def synthesize_records(cfg: SynthConfig, seed: int) -> SynthResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5717]))
    centers = _bin_centers(cfg.n_bins)

    n_shared_u = int(cfg.n_users * cfg.shared_user_frac)
    n_shared_i = int(cfg.n_items * cfg.shared_item_frac)

    bin_probs = _bin_probs(cfg)

    def draw_latents(n):
        cols = [centers[rng.choice(cfg.n_bins, size=n, p=bin_probs[d])]
                for d in range(cfg.latent_dim)]
        return np.stack(cols, axis=1)

    def make_objects(n, n_shared, tag):
        """ids and latents per domain; the first n_shared are common to both."""
        shared_lat = draw_latents(n_shared)
        ids, lats = {"source": [], "target": []}, {"source": [], "target": []}
        for dom in ("source", "target"):
            own = draw_latents(n - n_shared)
            ids[dom] = [f"s{tag}{k}" for k in range(n_shared)] + \
                       [f"{dom[0]}{tag}{k}" for k in range(n - n_shared)]
            lats[dom] = np.vstack([shared_lat, own]) if n_shared else own
        return ids, lats

    user_ids, user_lat = make_objects(cfg.n_users, n_shared_u, "u")
    item_ids, item_lat = make_objects(cfg.n_items, n_shared_i, "v")

    feature_code = rng.standard_normal((cfg.latent_dim, cfg.feature_dim)) \
        if cfg.with_features else None

    def token(prefix: str, dom: str, dim: int, b: int) -> str:
        remap = "x" if (dom == "target" and cfg.token_remap) else ""
        return f"{remap}{prefix}{dim}b{b}"

    filler_pool = {
        "source": [f"f{k}" for k in range(cfg.n_filler_tokens)],
        "target": [("xf" if cfg.token_remap else "f") + str(k)
                   for k in range(cfg.n_filler_tokens)],
    }

    records = {"source": [], "target": []}
    sealed: dict[tuple[str, str], float] = {}
    features = {"source": {}, "target": {}}
    nonce = 0
    for dom in ("source", "target"):
        shifted = dom == "target"
        u_bins = _render_bins(user_lat[dom], cfg, shifted)
        v_bins = _render_bins(item_lat[dom], cfg, shifted)
        n_pairs = cfg.n_users * cfg.n_items
        chosen = rng.choice(n_pairs, size=cfg.n_interactions, replace=False)
        if cfg.with_features:
            noise = 0.05 * rng.standard_normal((cfg.n_items, cfg.feature_dim))
            vecs = centers[v_bins] @ feature_code + noise
            features[dom] = {f"feat-{item_ids[dom][v]}": vecs[v] for v in range(cfg.n_items)}
        lin_w = np.ones(cfg.latent_dim) / np.sqrt(cfg.latent_dim)
        for pair in chosen:
            u, v = int(pair) // cfg.n_items, int(pair) % cfg.n_items
            p, q = user_lat[dom][u], item_lat[dom][v]
            raw = (cfg.rating_mean
                   + cfg.rating_linear * float(lin_w @ (p + q))
                   + cfg.rating_scale * float(p @ q))
            rating = float(np.clip(raw + cfg.rating_noise * rng.standard_normal(), 1.0, 5.0))
            words = []
            for d in range(cfg.latent_dim):
                words += [token("u", dom, d, int(u_bins[u, d]))] * cfg.repeats
            for d in range(cfg.latent_dim):
                words += [token("v", dom, d, int(v_bins[v, d]))] * cfg.repeats
            words += list(rng.choice(filler_pool[dom], size=cfg.fillers_per_review))
            words.append(f"rv{nonce}")
            nonce += 1
            uid, vid = user_ids[dom][u], item_ids[dom][v]
            stored = rating if dom == "source" else PLACEHOLDER_RATING
            records[dom].append(ReviewRecord(
                uid, vid, stored, " ".join(words),
                image_feature_id=f"feat-{vid}" if cfg.with_features else None,
            ))
            if dom == "target":
                sealed[(uid, vid)] = rating
    return SynthResult(
        source_records=records["source"],
        target_records=records["target"],
        sealed_labels=sealed,
        source_features=features["source"] if cfg.with_features else None,
        target_features=features["target"] if cfg.with_features else None,
        config=cfg,
    )


def synthesize_domain_pair(cfg: SynthConfig, seed: int):
    """Generate both corpora and assemble them; returns (dataset, sealed labels).

    The sealed map is the only place true target ratings exist; the dataset's
    target records carry the constant placeholder."""
    res = synthesize_records(cfg, seed)
    dataset = assemble_pair(
        res.source_records, res.target_records, seed=seed,
        min_count=cfg.min_count, max_len=cfg.max_len,
        source_features=res.source_features, target_features=res.target_features,
    )
    return dataset, res.sealed_labels


def _write_jsonl(rows, path) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    os.replace(tmp, path)


def write_synth_files(res: SynthResult, out_dir) -> dict:
    """Write source.jsonl / target.jsonl / sealed_labels.jsonl (and feature
    files for the visual modality); returns the path map."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "source": os.path.join(out_dir, "source.jsonl"),
        "target": os.path.join(out_dir, "target.jsonl"),
        "sealed": os.path.join(out_dir, "sealed_labels.jsonl"),
    }

    def rec_row(r: ReviewRecord) -> dict:
        row = {"user_id": r.user_id, "item_id": r.item_id, "rating": r.rating,
               "review_text": r.review_text}
        if r.image_feature_id is not None:
            row["image_feature_id"] = r.image_feature_id
        return row

    _write_jsonl([rec_row(r) for r in res.source_records], paths["source"])
    _write_jsonl([rec_row(r) for r in res.target_records], paths["target"])
    _write_jsonl(
        [{"user_id": u, "item_id": v, "rating": r} for (u, v), r in sorted(res.sealed_labels.items())],
        paths["sealed"],
    )
    for dom, feats in (("source", res.source_features), ("target", res.target_features)):
        if feats:
            paths[f"{dom}_features"] = os.path.join(out_dir, f"{dom}_features.jsonl")
            _write_jsonl(
                [{"item_id": k, "features": [float(x) for x in v]} for k, v in sorted(feats.items())],
                paths[f"{dom}_features"],
            )
    return paths


def load_sealed_labels(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out[(str(row["user_id"]), str(row["item_id"]))] = float(row["rating"])
    return out
