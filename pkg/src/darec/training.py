"""Three-phase training: supervised source pre-training, adversarial target
adaptation, and shared-object fine-tuning.

Phase contracts:
  * pre-training minimizes mean squared rating error plus a squared-L2
    penalty over source batches, with patience-based early stopping on
    validation MSE and best-validation parameters retained;
  * adaptation copies the source generators into the target set, freezes the
    source set and scoring head, and alternates one discriminator ascent step
    with one target-generator descent step per batch pair (target batches
    cycle independently of the source epoch loop), stopping once the
    discriminator's epoch accuracy stays inside the configured band;
  * fine-tuning repeats the same alternation per shared-object level at a
    scaled-down learning rate (user loop first, then item loop).

Representations fed to the adversarial objectives are computed in eval mode
on both sides, so a step is a deterministic function of parameters, data and
seed, and any logged step can be replayed exactly from a parameter snapshot.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from typing import Iterable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import Batch, DomainPairDataset, batches, cycle_batches
from .errors import ConfigError, TrainingError
from .evaluate import AlignmentStats, alignment_stats
from .models import DanVariant, Discriminator, GeneratorSet, ScoringHead
from .optim import Adadelta, copy_parameters, freeze, parameter_norm_sq, zero_grads

__all__ = [
    "AdaptResult",
    "EpochRow",
    "FinetuneResult",
    "PhaseReport",
    "TrainConfig",
    "adapt_target",
    "discriminator_objective",
    "generator_objective",
    "finetune_shared",
    "infer",
    "interaction_representations",
    "level_representations",
    "predict_batch",
    "pretrain_source",
    "probe_separability",
]


@dataclass
class TrainConfig:
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
    rep_sample: int = 512       # held-out representations for diagnostics
    probe_steps: int = 300
    record_timing: bool = True

    def __post_init__(self):
        if min(self.batch_size, self.lr, self.pretrain_epochs, self.adapt_epochs) <= 0:
            raise ConfigError("batch_size, lr and epoch caps must be positive")
        if not (0.0 < self.finetune_lr_scale <= 1.0):
            raise ConfigError("finetune_lr_scale must be in (0, 1]")
        if not (0.0 <= self.acc_band_low < self.acc_band_high <= 1.0):
            raise ConfigError("accuracy band must satisfy 0 <= low < high <= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRow:
    phase: str
    epoch: int
    sup_loss: Optional[float] = None
    d_loss: Optional[float] = None
    g_loss: Optional[float] = None
    d_acc: Optional[float] = None
    seconds: Optional[float] = None


class PhaseReport:
    """Per-epoch log rows, streamable as CSV."""

    HEADER = "phase,epoch,sup_loss,d_loss,g_loss,d_acc,seconds"

    def __init__(self, rows: Optional[list[EpochRow]] = None):
        self.rows: list[EpochRow] = rows or []

    def append(self, row: EpochRow) -> None:
        self.rows.append(row)

    def extend(self, other: "PhaseReport") -> None:
        self.rows.extend(other.rows)

    @staticmethod
    def _cell(v) -> str:
        return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)

    def to_csv(self, path) -> None:
        lines = [self.HEADER]
        for r in self.rows:
            lines.append(",".join([
                r.phase, str(r.epoch), self._cell(r.sup_loss), self._cell(r.d_loss),
                self._cell(r.g_loss), self._cell(r.d_acc), self._cell(r.seconds),
            ]))
        import os
        tmp = str(path) + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)


def _timer(cfg: TrainConfig):
    start = time.perf_counter()
    return (lambda: time.perf_counter() - start) if cfg.record_timing else (lambda: None)


# ---------------------------------------------------------------------------
# forward helpers


def _item_rep(gset: GeneratorSet, batch: Batch):
    if batch.item_features is not None:
        return gset.forward_item(batch.item_features)
    return gset.forward_item(batch.item_tokens, batch.item_lengths)


def encode_interactions(gset: GeneratorSet, batch: Batch, train: bool = False,
                        rng: Optional[np.random.Generator] = None) -> Tensor:
    x_u = gset.forward_user(batch.user_tokens, batch.user_lengths)
    x_v = _item_rep(gset, batch)
    return gset.forward_interaction(x_u, x_v, train=train, rng=rng)


def predict_batch(gset: GeneratorSet, head: ScoringHead, batch: Batch) -> np.ndarray:
    """Eval-mode rating predictions (no tape, no dropout)."""
    return head.predict(encode_interactions(gset, batch)).data.copy()


def interaction_representations(gset: GeneratorSet, dataset: DomainPairDataset,
                                domain: str, split: str, limit: int) -> np.ndarray:
    idx = dataset.domain(domain).split_indices(split)[:limit]
    batch = dataset.make_batch(domain, idx, exclude_own=(split != "train"))
    return encode_interactions(gset, batch).data.copy()


def interaction_representations_for(gset: GeneratorSet, dataset: DomainPairDataset,
                                    domain: str, indices) -> np.ndarray:
    batch = dataset.make_batch(domain, list(indices), exclude_own=False)
    return encode_interactions(gset, batch).data.copy()


def level_representations(gset: GeneratorSet, dataset: DomainPairDataset, level: str,
                          object_ids: list[str], side: str) -> np.ndarray:
    """User- or item-level representations of shared objects, one side at a time."""
    sb = dataset.shared_text_batch(level, object_ids)
    tokens = sb.src_tokens if side == "source" else sb.tgt_tokens
    lengths = sb.src_lengths if side == "source" else sb.tgt_lengths
    if level == "user":
        return gset.forward_user(tokens, lengths).data.copy()
    return gset.forward_item(tokens, lengths).data.copy()


# ---------------------------------------------------------------------------
# objectives


def _source_prob(d: Discriminator, reps: Tensor) -> Tensor:
    return ad.slice_cols(d.probs(reps), 0, 1)


def discriminator_objective(d: Discriminator, source_reps: Tensor, target_reps: Tensor,
                            eps: float = 1e-7):
    """mean log D(source) + mean log(1 - D(target)), with the domain-label
    accuracy of the current outputs; the discriminator ascends this."""
    p_src = _source_prob(d, source_reps)
    p_tgt = _source_prob(d, target_reps)
    loss = ad.add(ad.mean(ad.clamped_log(p_src, eps)),
                  ad.mean(ad.clamped_log(ad.affine(p_tgt, -1.0, 1.0), eps)))
    correct = int((p_src.data > 0.5).sum()) + int((p_tgt.data <= 0.5).sum())
    acc = correct / (p_src.data.shape[0] + p_tgt.data.shape[0])
    return loss, acc


def generator_objective(d: Discriminator, target_reps: Tensor, eps: float = 1e-7,
                        non_saturating: bool = False) -> Tensor:
    """mean log(1 - D(target)) for the target generators to descend; the
    non-saturating variant descends -mean log D(target) instead."""
    p_tgt = _source_prob(d, target_reps)
    if non_saturating:
        return ad.scale(ad.mean(ad.clamped_log(p_tgt, eps)), -1.0)
    return ad.mean(ad.clamped_log(ad.affine(p_tgt, -1.0, 1.0), eps))


# ---------------------------------------------------------------------------
# phase 1: supervised source pre-training


def _validation_mse(gset, head, dataset, cfg) -> float:
    idx = dataset.source.split_indices("valid")
    if not idx:
        return float("nan")
    se, n = 0.0, 0
    for lo in range(0, len(idx), cfg.batch_size):
        batch = dataset.make_batch("source", idx[lo:lo + cfg.batch_size], exclude_own=True)
        pred = predict_batch(gset, head, batch)
        se += float(np.sum((pred - batch.ratings) ** 2))
        n += batch.size
    return se / n


def _snapshot(params) -> dict:
    return {name: t.data.copy() for name, t in params}


def _restore(params, snap) -> None:
    for name, t in params:
        np.copyto(t.data, snap[name])


def pretrain_source(gen_s: GeneratorSet, head: ScoringHead, dataset: DomainPairDataset,
                    cfg: TrainConfig, seed: int) -> PhaseReport:
    if not dataset.source.train:
        raise ConfigError("source training split is empty")
    ss = np.random.SeedSequence([seed, 0x50E])
    batch_rng, drop_rng = (np.random.default_rng(c) for c in ss.spawn(2))
    params = gen_s.parameters() + head.parameters()
    opt = Adadelta(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    report = PhaseReport()
    best_val, best_snap, stale = float("inf"), None, 0
    for epoch in range(cfg.pretrain_epochs):
        elapsed = _timer(cfg)
        losses = []
        for batch in batches(dataset, "source", "train", cfg.batch_size, batch_rng):
            tape = Tape()
            with tape:
                rep = encode_interactions(gen_s, batch, train=True, rng=drop_rng)
                loss = ad.mean_squared_error(head.predict(rep), Tensor(batch.ratings))
            objective = loss.item() + cfg.weight_decay * parameter_norm_sq(params)
            if not np.isfinite(objective):
                raise TrainingError(f"supervised loss diverged at epoch {epoch}")
            zero_grads(params)
            tape.backward(loss)
            opt.step()
            losses.append(objective)
        val = _validation_mse(gen_s, head, dataset, cfg)
        if not np.isfinite(val) and dataset.source.valid:
            raise TrainingError(f"validation loss diverged at epoch {epoch}")
        report.append(EpochRow("pretrain", epoch, sup_loss=float(np.mean(losses)),
                               seconds=elapsed()))
        if val < best_val - 1e-12:
            best_val, best_snap, stale = val, _snapshot(params), 0
        else:
            stale += 1
            if stale >= cfg.patience_pretrain:
                break
    if best_snap is not None:
        _restore(params, best_snap)
    return report


# ---------------------------------------------------------------------------
# phase 2: adversarial target adaptation


@dataclass
class AdaptResult:
    report: PhaseReport
    stats_start: AlignmentStats
    stats_end: AlignmentStats
    probe_start_acc: float
    heldout_end_acc: float
    heldout_accs: list
    epochs_run: int


def probe_separability(source_reps: np.ndarray, target_reps: np.ndarray, seed: int,
                       hidden_dim: int = 32, steps: int = 300, lr: float = 1.0) -> float:
    """Train a fresh discriminator on 70% of the rep pairs, report held-out
    accuracy: a measure of how separable the two clouds currently are."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9806]))
    n_s, n_t = len(source_reps), len(target_reps)
    perm_s, perm_t = rng.permutation(n_s), rng.permutation(n_t)
    cut_s, cut_t = max(1, int(0.7 * n_s)), max(1, int(0.7 * n_t))
    tr_s, ho_s = source_reps[perm_s[:cut_s]], source_reps[perm_s[cut_s:]]
    tr_t, ho_t = target_reps[perm_t[:cut_t]], target_reps[perm_t[cut_t:]]
    probe = Discriminator("interaction", source_reps.shape[1], hidden_dim, rng)
    opt = Adadelta(probe.parameters(), lr=lr, direction="ascend")
    src_t, tgt_t = Tensor(tr_s), Tensor(tr_t)
    for _ in range(steps):
        tape = Tape()
        with tape:
            loss, _ = discriminator_objective(probe, src_t, tgt_t)
        zero_grads(probe.parameters())
        tape.backward(loss)
        opt.step()
    p_s = probe.probs(Tensor(ho_s)).data
    p_t = probe.probs(Tensor(ho_t)).data
    correct = int((p_s[:, 0] > 0.5).sum()) + int((p_t[:, 0] <= 0.5).sum())
    return correct / (len(ho_s) + len(ho_t))


def _adversarial_step(gen_t: GeneratorSet, d: Discriminator, src_rep: np.ndarray,
                      tgt_batch: Batch, opt_d: Adadelta, opt_g: Adadelta,
                      cfg: TrainConfig, gen_params, d_params,
                      level: Optional[str] = None):
    """One discriminator-ascent / generator-descent alternation.

    The discriminator update sees target representations computed before the
    generator update (detached copies); the generator update then runs a fresh
    discriminator forward pass through the updated discriminator on the same
    representation graph.
    """
    tape_g = Tape()
    with tape_g:
        if level == "user":
            tgt_rep = gen_t.forward_user(tgt_batch.user_tokens, tgt_batch.user_lengths)
        elif level == "item":
            tgt_rep = _item_rep(gen_t, tgt_batch)
        else:
            tgt_rep = encode_interactions(gen_t, tgt_batch)
    d_tape = Tape()
    with d_tape:
        d_loss, acc = discriminator_objective(d, Tensor(src_rep), Tensor(tgt_rep.data),
                                              eps=cfg.log_eps)
    zero_grads(d_params)
    d_tape.backward(d_loss)
    opt_d.step()

    with tape_g:
        g_loss = generator_objective(d, tgt_rep, eps=cfg.log_eps,
                                     non_saturating=cfg.non_saturating)
    zero_grads(gen_params)
    zero_grads(d_params)
    tape_g.backward(g_loss)
    opt_g.step()
    return d_loss.item(), g_loss.item(), acc, tgt_batch.size + len(src_rep)


def _collect_adapt_reps(gen_s, gen_t, dataset, cfg):
    src = interaction_representations(gen_s, dataset, "source", "valid", cfg.rep_sample)
    tgt = interaction_representations(gen_t, dataset, "target", "valid", cfg.rep_sample)
    return src, tgt


def adapt_target(gen_s: GeneratorSet, gen_t: GeneratorSet, head: ScoringHead,
                 d_f: Discriminator, dataset: DomainPairDataset, cfg: TrainConfig,
                 seed: int) -> AdaptResult:
    """Algorithmic core of the adaptation phase; see the module docstring."""
    if not dataset.target.train:
        raise ConfigError("target training split is empty")
    copy_parameters(gen_s, gen_t)
    freeze(gen_s.parameters())
    freeze(head.parameters())
    ss = np.random.SeedSequence([seed, 0xADA])
    src_rng, tgt_rng, probe_seed_rng = (np.random.default_rng(c) for c in ss.spawn(3))

    src_reps0, tgt_reps0 = _collect_adapt_reps(gen_s, gen_t, dataset, cfg)
    stats_start = alignment_stats(src_reps0, tgt_reps0, d_f)
    probe_start = probe_separability(src_reps0, tgt_reps0,
                                     seed=int(probe_seed_rng.integers(2**31)),
                                     steps=cfg.probe_steps)

    gen_params = gen_t.parameters()
    d_params = d_f.parameters()
    opt_d = Adadelta(d_params, lr=cfg.lr, direction="ascend")
    opt_g = Adadelta(gen_params, lr=cfg.lr, direction="descend")
    target_stream = cycle_batches(dataset, "target", "train", cfg.batch_size, tgt_rng)

    # the source set is frozen for the whole phase, so its representations
    # are constants: encode every source training interaction once up front
    src_train = dataset.source.split_indices("train")
    src_rep_all = np.concatenate([
        interaction_representations_for(gen_s, dataset, "source",
                                        src_train[lo:lo + cfg.batch_size])
        for lo in range(0, len(src_train), cfg.batch_size)
    ])

    # held-out accuracy drives the stopping rule: it is the static
    # discriminator-vs-generator measurement, where the in-loop training
    # accuracy swings with the alternation dynamics
    src_heldout = Tensor(src_reps0)

    def heldout_accuracy() -> float:
        tgt_reps = interaction_representations(gen_t, dataset, "target", "valid",
                                               cfg.rep_sample)
        p_s = d_f.probs(src_heldout).data
        p_t = d_f.probs(Tensor(tgt_reps)).data
        correct = int((p_s[:, 0] > 0.5).sum()) + int((p_t[:, 0] <= 0.5).sum())
        return correct / (len(p_s) + len(p_t))

    report = PhaseReport()
    heldout_accs = []
    in_band = 0
    epochs_run = 0
    for epoch in range(cfg.adapt_epochs):
        elapsed = _timer(cfg)
        d_losses, g_losses, correct_w, total_n = [], [], 0.0, 0
        order = src_rng.permutation(len(src_train))
        for lo in range(0, len(order), cfg.batch_size):
            tgt_batch = next(target_stream)
            src_rep = src_rep_all[order[lo:lo + cfg.batch_size]]
            d_l, g_l, acc, n = _adversarial_step(
                gen_t, d_f, src_rep, tgt_batch, opt_d, opt_g, cfg, gen_params, d_params)
            if not (np.isfinite(d_l) and np.isfinite(g_l)):
                raise TrainingError(f"adversarial loss diverged at epoch {epoch}")
            d_losses.append(d_l)
            g_losses.append(g_l)
            correct_w += acc * n
            total_n += n
        epoch_acc = correct_w / total_n
        report.append(EpochRow("adapt", epoch, d_loss=float(np.mean(d_losses)),
                               g_loss=float(np.mean(g_losses)), d_acc=float(epoch_acc),
                               seconds=elapsed()))
        epochs_run = epoch + 1
        ho_acc = heldout_accuracy()
        heldout_accs.append(ho_acc)
        in_band = in_band + 1 if cfg.acc_band_low <= ho_acc <= cfg.acc_band_high else 0
        if in_band >= cfg.patience_band:
            break

    src_reps1, tgt_reps1 = _collect_adapt_reps(gen_s, gen_t, dataset, cfg)
    stats_end = alignment_stats(src_reps1, tgt_reps1, d_f)
    return AdaptResult(report=report, stats_start=stats_start, stats_end=stats_end,
                       probe_start_acc=probe_start,
                       heldout_end_acc=stats_end.d_acc,
                       heldout_accs=heldout_accs,
                       epochs_run=epochs_run)


# ---------------------------------------------------------------------------
# phase 3: shared-object fine-tuning


@dataclass
class FinetuneResult:
    report: PhaseReport
    acc_before: dict = field(default_factory=dict)  # level -> probe accuracy
    acc_after: dict = field(default_factory=dict)


def _level_encoder_params(gen: GeneratorSet, level: str):
    enc = gen.user_encoder if level == "user" else gen.item_encoder
    return enc.parameters()


def _shared_level_reps(gen_s, gen_t, dataset, level, ids):
    src = level_representations(gen_s, dataset, level, ids, "source")
    tgt = level_representations(gen_t, dataset, level, ids, "target")
    return src, tgt


def finetune_shared(gen_s: GeneratorSet, gen_t: GeneratorSet, head: ScoringHead,
                    discs: dict, dataset: DomainPairDataset, cfg: TrainConfig,
                    variant: DanVariant, seed: int) -> FinetuneResult:
    """Align user/item-level target representations on shared objects."""
    result = FinetuneResult(report=PhaseReport())
    if not variant.fine_tune_levels:
        return result
    if dataset.domain("target").features is not None and "item" in variant.fine_tune_levels:
        raise ConfigError("item-level fine-tuning requires the text modality")
    freeze(gen_s.parameters())
    freeze(head.parameters())
    lr = cfg.lr * cfg.finetune_lr_scale
    ss = np.random.SeedSequence([seed, 0xF17E])
    rngs = dict(zip(("user", "item", "probe"), (np.random.default_rng(c) for c in ss.spawn(3))))
    probe_rng = rngs["probe"]

    for level in variant.fine_tune_levels:
        ids = dataset.shared_ids(level)
        if not ids:
            raise ConfigError(
                f"variant {variant.kind!r} needs shared {level}s but the pair has none"
            )
        d = discs[level]
        gen_params = _level_encoder_params(gen_t, level)
        d_params = d.parameters()
        opt_d = Adadelta(d_params, lr=cfg.lr, direction="ascend")
        opt_g = Adadelta(gen_params, lr=lr, direction="descend")
        rng = rngs[level]

        src0, tgt0 = _shared_level_reps(gen_s, gen_t, dataset, level, ids)
        result.acc_before[level] = probe_separability(
            src0, tgt0, seed=int(probe_rng.integers(2**31)), steps=cfg.probe_steps)

        in_band = 0
        for epoch in range(cfg.finetune_epochs):
            elapsed = _timer(cfg)
            order = rng.permutation(len(ids))
            d_losses, g_losses, correct_w, total_n = [], [], 0.0, 0
            for lo in range(0, len(ids), cfg.batch_size):
                chunk = [ids[i] for i in order[lo:lo + cfg.batch_size]]
                sb = dataset.shared_text_batch(level, chunk)
                tgt_batch = Batch(chunk, chunk, sb.tgt_tokens, sb.tgt_lengths,
                                  None, None, None, None, 0)
                if level == "user":
                    src_rep = gen_s.forward_user(sb.src_tokens, sb.src_lengths).data
                else:
                    src_rep = gen_s.forward_item(sb.src_tokens, sb.src_lengths).data
                d_l, g_l, acc, n = _adversarial_step(
                    gen_t, d, src_rep, tgt_batch, opt_d, opt_g, cfg,
                    gen_params, d_params, level=level)
                if not (np.isfinite(d_l) and np.isfinite(g_l)):
                    raise TrainingError(f"fine-tune loss diverged at epoch {epoch}")
                d_losses.append(d_l)
                g_losses.append(g_l)
                correct_w += acc * n
                total_n += n
            epoch_acc = correct_w / total_n
            result.report.append(EpochRow(f"finetune-{level}", epoch,
                                          d_loss=float(np.mean(d_losses)),
                                          g_loss=float(np.mean(g_losses)),
                                          d_acc=float(epoch_acc), seconds=elapsed()))
            in_band = in_band + 1 if cfg.acc_band_low <= epoch_acc <= cfg.acc_band_high else 0
            if in_band >= cfg.patience_band:
                break

        src1, tgt1 = _shared_level_reps(gen_s, gen_t, dataset, level, ids)
        result.acc_after[level] = probe_separability(
            src1, tgt1, seed=int(probe_rng.integers(2**31)), steps=cfg.probe_steps)
    return result


# ---------------------------------------------------------------------------
# inference


def infer(gen: GeneratorSet, head: ScoringHead, vocab, max_len: int, user_text: str,
          item_text: Optional[str] = None, item_features=None) -> float:
    """Score one user/item pair through the given generator set (eval mode)."""
    from .data import tokenize, PAD

    def encode(text):
        ids = vocab.encode(tokenize(text))[:max_len] or [PAD]
        return np.asarray([ids], dtype=np.int64), np.asarray([len(ids)], dtype=np.int64)

    u_tokens, u_len = encode(user_text)
    x_u = gen.forward_user(u_tokens, u_len)
    if item_features is not None:
        feats = np.asarray(item_features, dtype=np.float64).reshape(1, -1)
        x_v = gen.forward_item(feats)
    elif item_text is not None:
        v_tokens, v_len = encode(item_text)
        x_v = gen.forward_item(v_tokens, v_len)
    else:
        raise ConfigError("predict needs item text or an item feature vector")
    x_f = gen.forward_interaction(x_u, x_v)
    return float(head.predict(x_f).data[0])
