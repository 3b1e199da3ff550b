"""Metrics, the Normal baseline, and representation-alignment diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "AlignmentStats",
    "EvalResult",
    "alignment_stats",
    "delta_metric",
    "evaluate_on_target",
    "normal_baseline",
    "normal_baseline_scores",
    "rmse_mae",
    "source_only_eval",
]


@dataclass
class EvalResult:
    rmse: float
    mae: float
    n: int
    variant: str
    seed: int

    def to_json(self) -> str:
        return json.dumps({"rmse": self.rmse, "mae": self.mae, "n": self.n,
                           "variant": self.variant, "seed": self.seed}, sort_keys=True)


@dataclass
class AlignmentStats:
    d_intra_s: float
    d_intra_t: float
    d_cross: float
    d_acc: Optional[float]

    def to_json(self) -> str:
        return json.dumps({"d_intra_s": self.d_intra_s, "d_intra_t": self.d_intra_t,
                           "d_cross": self.d_cross, "d_acc": self.d_acc}, sort_keys=True)


def rmse_mae(pred, truth) -> tuple[float, float]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(f"rmse_mae needs equal 1-d inputs, got {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("rmse_mae of empty inputs")
    err = pred - truth
    return float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err)))


def delta_metric(ours: float, baseline: float) -> float:
    """Percentage gap 2|a - b| / (a + b) between two positive scores."""
    if ours <= 0 or baseline <= 0:
        raise ValueError(f"delta_metric needs positive inputs, got {ours}, {baseline}")
    return 200.0 * abs(ours - baseline) / (ours + baseline)


def normal_baseline(train_ratings, test_size: int, seed: int) -> np.ndarray:
    """Sample predictions i.i.d. from a normal fit of the training ratings
    (population sigma, unclipped); a degenerate fit predicts the mean."""
    train = np.asarray(train_ratings, dtype=np.float64)
    if train.size < 2:
        raise ValueError("normal_baseline needs at least 2 training ratings")
    mu, sigma = float(train.mean()), float(train.std())
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x42A5]))
    if sigma == 0.0:
        return np.full(test_size, mu)
    return rng.normal(mu, sigma, size=test_size)


def normal_baseline_scores(train_ratings, truth, n_seeds: int = 5, seed: int = 0) -> dict:
    """Mean and std of RMSE/MAE across seeded baseline draws."""
    truth = np.asarray(truth, dtype=np.float64)
    rmses, maes = [], []
    for k in range(n_seeds):
        pred = normal_baseline(train_ratings, truth.size, seed + k)
        r, m = rmse_mae(pred, truth)
        rmses.append(r)
        maes.append(m)
    return {
        "rmse_mean": float(np.mean(rmses)), "rmse_std": float(np.std(rmses)),
        "mae_mean": float(np.mean(maes)), "mae_std": float(np.std(maes)),
        "seeds": n_seeds,
    }


def _pairwise_mean(a: np.ndarray, b: Optional[np.ndarray] = None) -> float:
    """Mean Euclidean distance: across all cross pairs, or all i<j pairs
    within one cloud when b is None."""
    if b is None:
        n = len(a)
        if n < 2:
            return 0.0
        sq = np.sum(a * a, axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (a @ a.T), 0.0)
        iu = np.triu_indices(n, k=1)
        return float(np.mean(np.sqrt(d2[iu])))
    sa = np.sum(a * a, axis=1)
    sb = np.sum(b * b, axis=1)
    d2 = np.maximum(sa[:, None] + sb[None, :] - 2.0 * (a @ b.T), 0.0)
    return float(np.mean(np.sqrt(d2)))


def alignment_stats(source_reps: np.ndarray, target_reps: np.ndarray,
                    disc=None) -> AlignmentStats:
    """Pairwise-distance summary of the two representation clouds plus the
    held-out accuracy of a given frozen discriminator, when supplied."""
    src = np.asarray(source_reps, dtype=np.float64)
    tgt = np.asarray(target_reps, dtype=np.float64)
    if len(src) < 2 or len(tgt) < 2:
        raise ValueError("alignment_stats needs at least 2 representations per domain")
    acc = None
    if disc is not None:
        from .autodiff import Tensor
        p_s = disc.probs(Tensor(src)).data
        p_t = disc.probs(Tensor(tgt)).data
        correct = int((p_s[:, 0] > 0.5).sum()) + int((p_t[:, 0] <= 0.5).sum())
        acc = correct / (len(src) + len(tgt))
    return AlignmentStats(
        d_intra_s=_pairwise_mean(src),
        d_intra_t=_pairwise_mean(tgt),
        d_cross=_pairwise_mean(src, tgt),
        d_acc=acc,
    )


def _lookup_truth(batch, labels) -> np.ndarray:
    truth = []
    for u, v in zip(batch.user_ids, batch.item_ids):
        if (u, v) not in labels:
            raise DataError(f"no reference rating for pair ({u!r}, {v!r})")
        truth.append(labels[(u, v)])
    return np.asarray(truth, dtype=np.float64)


def evaluate_on_target(gset, head, dataset, labels: dict, split: str = "test",
                       variant: str = "ui", seed: int = 0,
                       batch_size: int = 512) -> EvalResult:
    """Score target-domain interactions with the given generator set and the
    frozen head; labels supply the reference ratings (sealed for synthetic
    corpora, record ratings for real ones)."""
    from .training import predict_batch

    idx = dataset.target.split_indices(split)
    if not idx:
        raise ConfigError(f"target {split} split is empty")
    preds, truths = [], []
    for lo in range(0, len(idx), batch_size):
        batch = dataset.make_batch("target", idx[lo:lo + batch_size],
                                   exclude_own=(split != "train"))
        preds.append(predict_batch(gset, head, batch))
        truths.append(_lookup_truth(batch, labels))
    pred = np.concatenate(preds)
    truth = np.concatenate(truths)
    rmse, mae = rmse_mae(pred, truth)
    return EvalResult(rmse=rmse, mae=mae, n=len(pred), variant=variant, seed=seed)


def source_only_eval(gen_s, head, dataset, labels: dict, split: str = "test",
                     seed: int = 0, batch_size: int = 512) -> EvalResult:
    """Run target data through the unadapted source generators: the baseline
    that adaptation must beat.  Shares the forward path with evaluate_on_target
    by construction (only the generator set differs)."""
    return evaluate_on_target(gen_s, head, dataset, labels, split=split,
                              variant="source-only", seed=seed, batch_size=batch_size)
