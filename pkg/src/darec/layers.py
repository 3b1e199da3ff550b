"""Neural building blocks: embeddings, LSTM, dense layers, pooling, dropout.

Initialization conventions: recurrent matrices are orthogonal (QR of a seeded
Gaussian with sign correction), all other weights are Glorot-uniform, biases
start at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, DimensionError

__all__ = [
    "DenseLayer",
    "DropoutSpec",
    "EmbeddingTable",
    "LstmCell",
    "dense_forward",
    "dropout",
    "encode_sequence",
    "glorot_uniform",
    "lstm_step",
    "orthogonal_matrix",
]


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out) if shape is None else shape)


def orthogonal_matrix(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


class EmbeddingTable:
    """Token-id to vector lookup; row count covers PAD/UNK and all kept tokens."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, name: str = "emb"):
        self.vocab_size = vocab_size
        self.dim = dim
        self.name = name
        self.weights = Tensor(glorot_uniform(vocab_size, dim, rng),
                              requires_grad=True, name=f"{name}.weights")

    def parameters(self):
        return [(self.weights.name, self.weights)]


class LstmCell:
    """Single LSTM cell with input/forget/output gates and a tanh candidate."""

    GATES = ("i", "f", "o", "c")

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator, name: str = "lstm"):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.name = name
        for gate in self.GATES:
            wx = Tensor(glorot_uniform(input_dim, hidden_dim, rng),
                        requires_grad=True, name=f"{name}.W_x{gate}")
            wh = Tensor(orthogonal_matrix(hidden_dim, rng),
                        requires_grad=True, name=f"{name}.W_h{gate}")
            bias = Tensor(np.zeros(hidden_dim), requires_grad=True, name=f"{name}.b_{gate}")
            setattr(self, f"W_x{gate}", wx)
            setattr(self, f"W_h{gate}", wh)
            setattr(self, f"b_{gate}", bias)

    def parameters(self):
        out = []
        for gate in self.GATES:
            for prefix in ("W_x", "W_h", "b_"):
                t = getattr(self, f"{prefix}{gate}")
                out.append((t.name, t))
        return out

    def packed(self):
        """Gate-concatenated weights ([x; h] rows, i|f|o|c columns) built on
        the active tape so gradients flow back to the per-gate tensors."""
        wx = ad.concat_cols(self.W_xi, self.W_xf, self.W_xo, self.W_xc)
        wh = ad.concat_cols(self.W_hi, self.W_hf, self.W_ho, self.W_hc)
        w_all = ad.concat_rows(wx, wh)
        b = ad.reshape(
            ad.concat_cols(*(ad.reshape(getattr(self, f"b_{g}"), (1, self.hidden_dim))
                             for g in self.GATES)),
            (4 * self.hidden_dim,),
        )
        return w_all, b


def _gate_outputs(pre: Tensor, c_prev: Tensor, hd: int):
    """Fused gate nonlinearity: one tape node for (h_t, c_t) given the packed
    pre-activations, with the standard hand-derived cell backward."""
    p = pre.data
    i = expit(p[:, :hd])
    f = expit(p[:, hd:2 * hd])
    o = expit(p[:, 2 * hd:3 * hd])
    g = np.tanh(p[:, 3 * hd:])
    cp = c_prev.data
    c = f * cp + i * g
    tc = np.tanh(c)
    h = o * tc

    def backward_fn(gs):
        gh, gc = gs
        if gc is None:
            dc = gh * o * (1.0 - tc * tc)
        elif gh is None:
            dc = gc
        else:
            dc = gc + gh * o * (1.0 - tc * tc)
        do = gh * tc if gh is not None else None
        dpre = np.empty_like(p)
        dpre[:, :hd] = dc * g * i * (1.0 - i)
        dpre[:, hd:2 * hd] = dc * cp * f * (1.0 - f)
        dpre[:, 2 * hd:3 * hd] = do * o * (1.0 - o) if do is not None else 0.0
        dpre[:, 3 * hd:] = dc * i * (1.0 - g * g)
        return dpre, dc * f

    return ad.apply_multi_op((h, c), (pre, c_prev), backward_fn)


def lstm_step(cell: LstmCell, x_t: Tensor, h_prev: Tensor, c_prev: Tensor, packed=None):
    """One recurrence step: gates from x_t and h_prev, new cell and hidden state."""
    if x_t.shape[1] != cell.input_dim or h_prev.shape[1] != cell.hidden_dim:
        raise DimensionError(
            f"lstm_step got x {x_t.shape}, h {h_prev.shape} for cell "
            f"({cell.input_dim} -> {cell.hidden_dim})"
        )
    w_all, b = cell.packed() if packed is None else packed
    pre = ad.add(ad.matmul(ad.concat_cols(x_t, h_prev), w_all), b)
    return _gate_outputs(pre, c_prev, cell.hidden_dim)


def encode_sequence(emb: EmbeddingTable, cell: LstmCell, token_ids, lengths) -> Tensor:
    """Embed, run the LSTM from a zero state, and average hidden states over
    the first lengths[b] steps of each row (padding never enters the mean)."""
    ids = np.asarray(token_ids, dtype=np.int64)
    lens = np.asarray(lengths, dtype=np.int64)
    if ids.ndim != 2 or lens.shape != (ids.shape[0],):
        raise DimensionError(f"encode_sequence got ids {ids.shape}, lengths {lens.shape}")
    batch, t_max = ids.shape
    if np.any(lens < 1) or np.any(lens > t_max):
        raise DataError(f"lengths must lie in [1, {t_max}], got {lens.tolist()}")
    if ids.min() < 0 or ids.max() >= emb.vocab_size:
        rows, cols = np.nonzero((ids < 0) | (ids >= emb.vocab_size))
        raise DataError(
            f"token id {int(ids[rows[0], cols[0]])} out of range "
            f"[0, {emb.vocab_size}) at row {int(rows[0])}, position {int(cols[0])}"
        )

    hd = cell.hidden_dim
    packed = cell.packed()
    h = Tensor(np.zeros((batch, hd)))
    c = Tensor(np.zeros((batch, hd)))
    h_sum = Tensor(np.zeros((batch, hd)))
    steps = int(lens.max())
    lens_min = int(lens.min())
    for t in range(steps):
        x_t = ad.gather_rows(emb.weights, ids[:, t])
        h, c = lstm_step(cell, x_t, h, c, packed=packed)
        if t < lens_min:  # every row still active: masking would be identity
            h_sum = ad.add(h_sum, h)
        else:
            mask = np.broadcast_to((lens > t).astype(np.float64)[:, None], (batch, hd))
            h_sum = ad.add(h_sum, ad.mul(h, Tensor(mask)))
    inv = np.broadcast_to((1.0 / lens.astype(np.float64))[:, None], (batch, hd))
    return ad.mul(h_sum, Tensor(inv))


class DenseLayer:
    def __init__(self, in_dim: int, out_dim: int, activation: str = "none",
                 rng: np.random.Generator | None = None, name: str = "dense"):
        if activation not in ("none", "relu", "tanh"):
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.name = name
        self.W = Tensor(glorot_uniform(in_dim, out_dim, rng), requires_grad=True, name=f"{name}.W")
        self.b = Tensor(np.zeros(out_dim), requires_grad=True, name=f"{name}.b")

    def parameters(self):
        return [(self.W.name, self.W), (self.b.name, self.b)]


def dense_forward(layer: DenseLayer, x: Tensor) -> Tensor:
    if x.shape[1] != layer.in_dim:
        raise DimensionError(f"dense_forward: input width {x.shape[1]} != {layer.in_dim}")
    y = ad.add(ad.matmul(x, layer.W), layer.b)
    if layer.activation == "relu":
        return ad.relu(y)
    if layer.activation == "tanh":
        return ad.tanh(y)
    return y


@dataclass
class DropoutSpec:
    rate: float
    mode: str = "train"  # train | eval

    def __post_init__(self):
        if not (0.0 <= self.rate < 1.0):
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"dropout mode must be train or eval, got {self.mode!r}")


def dropout(x: Tensor, spec: DropoutSpec, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time so
    eval mode is the identity."""
    if spec.mode == "eval" or spec.rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = 1.0 - spec.rate
    mask = (rng.random(x.shape) >= spec.rate) / keep
    return ad.mul(x, Tensor(mask))
