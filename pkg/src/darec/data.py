"""Corpus ingestion, vocabulary, review concatenation, splits, and batching.

Review files are UTF-8 JSON Lines with keys user_id, item_id, rating,
review_text, and optional image_feature_id; the 'amazon' schema adapter maps
reviewerID/asin/overall/reviewText onto those keys.  A DomainPairDataset holds
the aligned source/target corpora: 80/10/10 interaction splits, per-user and
per-item concatenated training texts, shared-object subsets with equalized
review counts, and dummy domain labels (1 = source).
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "Batch",
    "CorpusStats",
    "DomainData",
    "DomainPairDataset",
    "ReviewRecord",
    "SharedBatch",
    "Vocabulary",
    "assemble_pair",
    "batches",
    "feature_ingest",
    "ingest_reviews",
    "load_pair",
    "save_pair",
    "tokenize",
]

PAD, UNK = 0, 1

_SCHEMAS = {
    "canonical": {"user_id": "user_id", "item_id": "item_id", "rating": "rating",
                  "review_text": "review_text", "image_feature_id": "image_feature_id"},
    "amazon": {"user_id": "reviewerID", "item_id": "asin", "rating": "overall",
               "review_text": "reviewText", "image_feature_id": "image_feature_id"},
}

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


@dataclass
class ReviewRecord:
    user_id: str
    item_id: str
    rating: float
    review_text: str
    image_feature_id: Optional[str] = None


@dataclass
class CorpusStats:
    n_users: int
    n_items: int
    n_samples: int

    def to_dict(self):
        return {"users": self.n_users, "items": self.n_items, "samples": self.n_samples}


def tokenize(text: str) -> list[str]:
    """Lowercase, replace punctuation with spaces, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def ingest_reviews(path, schema: str = "canonical"):
    """Parse a JSONL review file into records plus corpus statistics."""
    if schema not in _SCHEMAS:
        raise ConfigError(f"unknown schema {schema!r}; choose from {sorted(_SCHEMAS)}")
    keymap = _SCHEMAS[schema]
    records: list[ReviewRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: malformed JSON at line {lineno}: {exc.msg}") from exc
            try:
                user_id = str(obj[keymap["user_id"]])
                item_id = str(obj[keymap["item_id"]])
                rating = float(obj[keymap["rating"]])
                text = str(obj[keymap["review_text"]])
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: missing or invalid field at line {lineno}: {exc}") from exc
            if not user_id or not item_id:
                raise DataError(f"{path}: empty id at line {lineno}")
            if not (1.0 <= rating <= 5.0):
                raise DataError(f"{path}: rating {rating} outside [1, 5] at line {lineno}")
            feat = obj.get(keymap["image_feature_id"])
            records.append(ReviewRecord(user_id, item_id, rating, text,
                                        None if feat is None else str(feat)))
    stats = CorpusStats(
        n_users=len({r.user_id for r in records}),
        n_items=len({r.item_id for r in records}),
        n_samples=len(records),
    )
    return records, stats


def feature_ingest(path) -> dict[str, np.ndarray]:
    """Load {item_id, features} JSONL into an id -> float vector map."""
    out: dict[str, np.ndarray] = {}
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                item_id = str(obj["item_id"])
                vec = np.asarray(obj["features"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: bad feature row at line {lineno}: {exc}") from exc
            if vec.ndim != 1:
                raise DataError(f"{path}: features for {item_id!r} are not a flat vector")
            if width is None:
                width = vec.shape[0]
            elif vec.shape[0] != width:
                raise DataError(
                    f"{path}: ragged feature dimensions: item {item_id!r} has "
                    f"{vec.shape[0]}, expected {width}"
                )
            out[item_id] = vec
    return out


class Vocabulary:
    """Token<->index map; PAD=0, UNK=1, then tokens with count >= min_count
    ordered by descending frequency (ties lexicographic)."""

    def __init__(self, tokens: list[str], min_count: int):
        self.min_count = min_count
        self.id_to_token = ["<pad>", "<unk>"] + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    @classmethod
    def from_texts(cls, texts: Iterable[str], min_count: int = 5) -> "Vocabulary":
        counts: dict[str, int] = {}
        for text in texts:
            for tok in tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
        kept = sorted((t for t, c in counts.items() if c >= min_count),
                      key=lambda t: (-counts[t], t))
        return cls(kept, min_count)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def to_json(self) -> dict:
        return {"min_count": self.min_count, "tokens": self.id_to_token[2:]}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(list(obj["tokens"]), int(obj["min_count"]))


@dataclass
class DomainData:
    """One domain's records plus split assignment (indices into records)."""

    records: list[ReviewRecord]
    train: list[int]
    valid: list[int]
    test: list[int]
    features: Optional[dict[str, np.ndarray]] = None
    # built after splitting: concatenated training review texts
    user_text: dict[str, str] = field(default_factory=dict)
    item_text: dict[str, str] = field(default_factory=dict)

    def split_indices(self, split: str) -> list[int]:
        if split not in ("train", "valid", "test"):
            raise ConfigError(f"unknown split {split!r}")
        return getattr(self, split)


@dataclass
class Batch:
    user_ids: list[str]
    item_ids: list[str]
    user_tokens: np.ndarray      # [B, T] int64
    user_lengths: np.ndarray     # [B]
    item_tokens: Optional[np.ndarray]
    item_lengths: Optional[np.ndarray]
    item_features: Optional[np.ndarray]
    ratings: Optional[np.ndarray]
    domain_label: int            # 1 = source, 0 = target

    @property
    def size(self) -> int:
        return len(self.user_ids)


@dataclass
class SharedBatch:
    """Aligned source-side and target-side encodings of the same shared objects."""

    object_ids: list[str]
    src_tokens: np.ndarray
    src_lengths: np.ndarray
    tgt_tokens: np.ndarray
    tgt_lengths: np.ndarray

    @property
    def size(self) -> int:
        return len(self.object_ids)


def _split_interactions(n: int, rng: np.random.Generator):
    order = rng.permutation(n)
    n_train = int(n * 0.8)
    n_valid = int(n * 0.1)
    train = sorted(order[:n_train].tolist())
    valid = sorted(order[n_train:n_train + n_valid].tolist())
    test = sorted(order[n_train + n_valid:].tolist())
    return train, valid, test


def _concat_training_texts(records, train_idx):
    user_text: dict[str, list[str]] = {}
    item_text: dict[str, list[str]] = {}
    for i in train_idx:
        r = records[i]
        user_text.setdefault(r.user_id, []).append(r.review_text)
        item_text.setdefault(r.item_id, []).append(r.review_text)
    return ({u: " ".join(parts) for u, parts in user_text.items()},
            {v: " ".join(parts) for v, parts in item_text.items()})


def _train_reviews_by(records, train_idx, key):
    out: dict[str, list[int]] = {}
    for i in train_idx:
        out.setdefault(getattr(records[i], key), []).append(i)
    return out


class DomainPairDataset:
    """Aligned source/target corpora with shared-object subsets."""

    def __init__(self, source: DomainData, target: DomainData, vocab: Vocabulary,
                 max_len: int, seed: int):
        self.source = source
        self.target = target
        self.vocab = vocab
        self.max_len = max_len
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11C]))
        self.shared_users = sorted(
            {r.user_id for r in source.records} & {r.user_id for r in target.records})
        self.shared_items = sorted(
            {r.item_id for r in source.records} & {r.item_id for r in target.records})
        self.shared_user_reviews = self._align_shared(rng, "user_id", self.shared_users)
        self.shared_item_reviews = self._align_shared(rng, "item_id", self.shared_items)
        # encoded concatenated texts are static; cache per (domain, side, object)
        self._token_cache: dict = {}

    def _align_shared(self, rng, key, shared_ids):
        """Down-sample the larger side so both domains contribute an equal
        number of training reviews per shared object."""
        src_by = _train_reviews_by(self.source.records, self.source.train, key)
        tgt_by = _train_reviews_by(self.target.records, self.target.train, key)
        aligned = {}
        for oid in shared_ids:
            s, t = src_by.get(oid, []), tgt_by.get(oid, [])
            k = min(len(s), len(t))
            if k == 0:
                continue
            s_keep = sorted(rng.choice(len(s), size=k, replace=False).tolist()) \
                if len(s) > k else range(len(s))
            t_keep = sorted(rng.choice(len(t), size=k, replace=False).tolist()) \
                if len(t) > k else range(len(t))
            aligned[oid] = ([s[i] for i in s_keep], [t[i] for i in t_keep])
        return aligned

    def domain(self, name: str) -> DomainData:
        if name == "source":
            return self.source
        if name == "target":
            return self.target
        raise ConfigError(f"unknown domain {name!r}")

    # ------------------------------------------------------------------
    # text assembly

    def _encode_text(self, text: str) -> tuple[np.ndarray, int]:
        ids = self.vocab.encode(tokenize(text))[: self.max_len]
        if not ids:
            ids = [PAD]
        return np.asarray(ids, dtype=np.int64), len(ids)

    def _context_tokens(self, domain: str, side: str, oid: str,
                        exclude: Optional[str]) -> tuple[np.ndarray, int]:
        dom = self.domain(domain)
        table = dom.user_text if side == "user" else dom.item_text
        text = table.get(oid, "")
        # leave-current-review-out at evaluation time
        if exclude and exclude.strip() and exclude in text:
            return self._encode_text(text.replace(exclude, " "))
        key = (domain, side, oid)
        hit = self._token_cache.get(key)
        if hit is None:
            hit = self._encode_text(text)
            self._token_cache[key] = hit
        return hit

    def make_batch(self, domain: str, indices: list[int], exclude_own: bool) -> Batch:
        """Assemble one batch of interactions.

        With exclude_own=True (evaluation semantics) the review under
        evaluation is removed from its own user and item context texts.
        """
        dom = self.domain(domain)
        user_rows, user_lens, item_rows, item_lens = [], [], [], []
        feats = []
        user_ids, item_ids, ratings = [], [], []
        visual = dom.features is not None
        for i in indices:
            r = dom.records[i]
            own = r.review_text if exclude_own else None
            ids, ln = self._context_tokens(domain, "user", r.user_id, own)
            user_rows.append(ids)
            user_lens.append(ln)
            if visual:
                if r.image_feature_id is None or r.image_feature_id not in dom.features:
                    raise DataError(f"no feature vector for item {r.item_id!r}")
                feats.append(dom.features[r.image_feature_id])
            else:
                ids, ln = self._context_tokens(domain, "item", r.item_id, own)
                item_rows.append(ids)
                item_lens.append(ln)
            user_ids.append(r.user_id)
            item_ids.append(r.item_id)
            ratings.append(r.rating)
        return Batch(
            user_ids=user_ids,
            item_ids=item_ids,
            user_tokens=_pad_rows(user_rows),
            user_lengths=np.asarray(user_lens, dtype=np.int64),
            item_tokens=None if visual else _pad_rows(item_rows),
            item_lengths=None if visual else np.asarray(item_lens, dtype=np.int64),
            item_features=np.stack(feats) if visual else None,
            ratings=np.asarray(ratings, dtype=np.float64) if domain == "source" else None,
            domain_label=1 if domain == "source" else 0,
        )

    def eval_batch(self, domain: str, split: str, indices=None) -> Batch:
        dom = self.domain(domain)
        idx = dom.split_indices(split) if indices is None else list(indices)
        return self.make_batch(domain, idx, exclude_own=(split != "train"))

    def shared_text_batch(self, level: str, object_ids: list[str]) -> SharedBatch:
        """Source-side and target-side concatenated texts for shared objects,
        built from the count-aligned review subsets."""
        aligned = self.shared_user_reviews if level == "user" else self.shared_item_reviews
        src_rows, src_lens, tgt_rows, tgt_lens = [], [], [], []
        for oid in object_ids:
            s_idx, t_idx = aligned[oid]
            s_text = " ".join(self.source.records[i].review_text for i in s_idx)
            t_text = " ".join(self.target.records[i].review_text for i in t_idx)
            ids, ln = self._encode_text(s_text)
            src_rows.append(ids)
            src_lens.append(ln)
            ids, ln = self._encode_text(t_text)
            tgt_rows.append(ids)
            tgt_lens.append(ln)
        return SharedBatch(
            object_ids=list(object_ids),
            src_tokens=_pad_rows(src_rows),
            src_lengths=np.asarray(src_lens, dtype=np.int64),
            tgt_tokens=_pad_rows(tgt_rows),
            tgt_lengths=np.asarray(tgt_lens, dtype=np.int64),
        )

    def shared_ids(self, level: str) -> list[str]:
        aligned = self.shared_user_reviews if level == "user" else self.shared_item_reviews
        return sorted(aligned)

    def ratings_map(self, domain: str) -> dict[tuple[str, str], float]:
        return {(r.user_id, r.item_id): r.rating for r in self.domain(domain).records}


def _pad_rows(rows: list[np.ndarray]) -> np.ndarray:
    t = max(len(r) for r in rows)
    out = np.full((len(rows), t), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def batches(dataset: DomainPairDataset, domain: str, split: str, batch_size: int,
            rng: np.random.Generator) -> list[Batch]:
    """Shuffled-once-per-epoch batching; the last partial batch is kept."""
    dom = dataset.domain(domain)
    idx = dom.split_indices(split)
    if not idx:
        return []
    order = rng.permutation(len(idx))
    shuffled = [idx[i] for i in order]
    exclude_own = split != "train"
    return [
        dataset.make_batch(domain, shuffled[i:i + batch_size], exclude_own)
        for i in range(0, len(shuffled), batch_size)
    ]


def cycle_batches(dataset: DomainPairDataset, domain: str, split: str, batch_size: int,
                  rng: np.random.Generator) -> Iterator[Batch]:
    """Endless batch stream that reshuffles after each full pass; lets target
    batches cycle independently of the source epoch loop."""
    while True:
        for b in batches(dataset, domain, split, batch_size, rng):
            yield b


def assemble_pair(source_records: list[ReviewRecord], target_records: list[ReviewRecord],
                  seed: int, min_count: int = 5, max_len: int = 500,
                  source_features: Optional[dict] = None,
                  target_features: Optional[dict] = None) -> DomainPairDataset:
    """Split both corpora 80/10/10, build the shared vocabulary from training
    text of both domains, concatenate per-user/per-item training reviews, and
    align shared-object review counts."""
    ss = np.random.SeedSequence([seed, 0xDA7A])
    rng_s, rng_t = (np.random.default_rng(c) for c in ss.spawn(2))
    domains = []
    for records, rng, feats in ((source_records, rng_s, source_features),
                                (target_records, rng_t, target_features)):
        if not records:
            raise ConfigError("domain with zero interactions cannot be assembled")
        train, valid, test = _split_interactions(len(records), rng)
        if not train:
            raise ConfigError("domain with zero training interactions")
        dom = DomainData(records=records, train=train, valid=valid, test=test, features=feats)
        dom.user_text, dom.item_text = _concat_training_texts(records, train)
        domains.append(dom)
    source, target = domains
    train_texts = [source.records[i].review_text for i in source.train]
    train_texts += [target.records[i].review_text for i in target.train]
    vocab = Vocabulary.from_texts(train_texts, min_count=min_count)
    return DomainPairDataset(source, target, vocab, max_len=max_len, seed=seed)


# ---------------------------------------------------------------------------
# serialization


def _record_to_json(r: ReviewRecord) -> dict:
    obj = {"user_id": r.user_id, "item_id": r.item_id, "rating": r.rating,
           "review_text": r.review_text}
    if r.image_feature_id is not None:
        obj["image_feature_id"] = r.image_feature_id
    return obj


def save_pair(dataset: DomainPairDataset, path) -> None:
    def dom_json(dom: DomainData):
        obj = {
            "records": [_record_to_json(r) for r in dom.records],
            "train": dom.train, "valid": dom.valid, "test": dom.test,
        }
        if dom.features is not None:
            obj["features"] = {k: v.tolist() for k, v in sorted(dom.features.items())}
        return obj

    payload = {
        "format_version": 1,
        "seed": dataset.seed,
        "max_len": dataset.max_len,
        "vocabulary": dataset.vocab.to_json(),
        "source": dom_json(dataset.source),
        "target": dom_json(dataset.target),
    }
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    import os

    os.replace(tmp, path)


def load_pair(path) -> DomainPairDataset:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)

    def dom_from(obj) -> DomainData:
        records = [ReviewRecord(o["user_id"], o["item_id"], float(o["rating"]),
                                o["review_text"], o.get("image_feature_id"))
                   for o in obj["records"]]
        feats = None
        if "features" in obj:
            feats = {k: np.asarray(v, dtype=np.float64) for k, v in obj["features"].items()}
        dom = DomainData(records=records, train=list(obj["train"]),
                         valid=list(obj["valid"]), test=list(obj["test"]), features=feats)
        dom.user_text, dom.item_text = _concat_training_texts(records, dom.train)
        return dom

    vocab = Vocabulary.from_json(payload["vocabulary"])
    return DomainPairDataset(dom_from(payload["source"]), dom_from(payload["target"]),
                             vocab, max_len=int(payload["max_len"]), seed=int(payload["seed"]))
