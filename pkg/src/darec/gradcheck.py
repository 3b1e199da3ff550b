"""Central finite-difference verification of analytic gradients.

``grad_check`` compares tape gradients against (f(x+eps) - f(x-eps)) / 2eps
for every entry of every checked parameter.  ``run_gradient_suite`` wires the
checker across all layers and both adversarial objectives and is what the
``gradcheck`` CLI subcommand and the acceptance suite execute.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor

__all__ = ["GradCheckEntry", "GradCheckReport", "grad_check", "run_gradient_suite"]

# below this magnitude the comparison falls back to absolute error
_ABS_FLOOR = 1e-8


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def extend(self, other: "GradCheckReport") -> None:
        self.entries.extend(other.entries)

    def lines(self) -> list[str]:
        return [
            f"{'ok' if e.passed else 'FAIL':4s} {e.name:40s} "
            f"max_rel_err={e.max_rel_error:.3e} tol={e.tolerance:.0e}"
            for e in self.entries
        ]


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(denom < _ABS_FLOOR, diff, diff / np.maximum(denom, _ABS_FLOOR))
    return float(rel.max()) if rel.size else 0.0


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-5,
    tolerance: float = 1e-5,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """Check d f()/d p for each p in params against central differences.

    ``f`` must rebuild its forward pass from scratch on every call (it is
    invoked repeatedly with perturbed parameter entries).
    """
    if not (0.0 < epsilon <= 1e-2):
        raise ValueError(f"epsilon must be in (0, 1e-2], got {epsilon}")
    params = list(params)
    if names is None:
        names = [p.name or f"param{i}" for i, p in enumerate(params)]

    for p in params:
        p.grad = None
    tape = Tape()
    with tape:
        loss = f()
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    report = GradCheckReport()
    for p, a, name in zip(params, analytic, names):
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = f().item()
            flat[i] = orig - epsilon
            f_minus = f().item()
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * epsilon)
        report.entries.append(
            GradCheckEntry(name, _relative_error(a.reshape(-1), numeric), tolerance)
        )
    return report


def _summarize(name: str, report: GradCheckReport, tolerance: float) -> GradCheckEntry:
    return GradCheckEntry(name, report.max_rel_error, tolerance)


def run_gradient_suite(seed: int = 0, epsilon: float = 1e-5, tolerance: float = 1e-5) -> GradCheckReport:
    """Finite-difference suite over every layer and both adversarial losses."""
    from . import autodiff as ad
    from .layers import DenseLayer, EmbeddingTable, LstmCell, dense_forward, encode_sequence, lstm_step
    from .models import Discriminator, InteractionMapper, ScoringHead
    from .training import discriminator_objective, generator_objective

    rng = np.random.default_rng(seed)
    out = GradCheckReport()

    def rand(*shape):
        return rng.uniform(-2.0, 2.0, shape)

    # --- primitives -------------------------------------------------------
    a = Tensor(rand(3, 4), requires_grad=True, name="a")
    b = Tensor(rand(4, 2), requires_grad=True, name="b")
    rep = grad_check(lambda: ad.total(ad.tanh(ad.matmul(a, b))), [a, b], epsilon, tolerance)
    out.entries.append(_summarize("matmul", rep, tolerance))

    x = Tensor(rand(5, 3), requires_grad=True, name="x")
    y = Tensor(rand(5, 3), requires_grad=True, name="y")
    for opname, fn in [
        ("add", lambda: ad.total(ad.square(ad.add(x, y)))),
        ("sub", lambda: ad.total(ad.square(ad.sub(x, y)))),
        ("mul", lambda: ad.total(ad.mul(x, y))),
        ("sigmoid", lambda: ad.total(ad.sigmoid(x))),
        ("tanh", lambda: ad.total(ad.tanh(x))),
        ("square", lambda: ad.total(ad.square(x))),
        ("softmax", lambda: ad.total(ad.mul(ad.softmax(x), y))),
    ]:
        rep = grad_check(fn, [x, y] if opname in ("add", "sub", "mul", "softmax") else [x],
                         epsilon, tolerance)
        out.entries.append(_summarize(opname, rep, tolerance))

    # relu away from the kink, log on positive inputs
    xr = Tensor(rand(5, 3) + np.sign(rand(5, 3)) * 0.5, requires_grad=True, name="xr")
    rep = grad_check(lambda: ad.total(ad.relu(xr)), [xr], epsilon, tolerance)
    out.entries.append(_summarize("relu", rep, tolerance))
    xp = Tensor(rng.uniform(0.5, 2.0, (5, 3)), requires_grad=True, name="xp")
    rep = grad_check(lambda: ad.total(ad.log(xp)), [xp], epsilon, tolerance)
    out.entries.append(_summarize("log", rep, tolerance))

    pred = Tensor(rand(6), requires_grad=True, name="pred")
    truth = Tensor(rand(6), name="truth")
    rep = grad_check(lambda: ad.mean_squared_error(pred, truth), [pred], epsilon, tolerance)
    out.entries.append(_summarize("mean_squared_error", rep, tolerance))

    # --- layers -----------------------------------------------------------
    dense = DenseLayer(4, 3, activation="tanh", rng=rng, name="dense")
    xd = Tensor(rand(2, 4), requires_grad=True, name="xd")
    rep = grad_check(
        lambda: ad.total(dense_forward(dense, xd)),
        [dense.W, dense.b, xd], epsilon, tolerance,
    )
    out.entries.append(_summarize("dense_layer", rep, tolerance))

    cell = LstmCell(4, 8, rng=rng, name="cell")
    xc = Tensor(rand(2, 4), requires_grad=True, name="xc")
    h0 = Tensor(rand(2, 8), requires_grad=True, name="h0")
    c0 = Tensor(rand(2, 8), requires_grad=True, name="c0")

    def lstm_loss():
        h, c = lstm_step(cell, xc, h0, c0)
        return ad.total(ad.add(h, c))

    rep = grad_check(lstm_loss, [t for _, t in cell.parameters()] + [xc, h0, c0],
                     epsilon, tolerance)
    out.entries.append(_summarize("lstm_cell", rep, tolerance))

    emb = EmbeddingTable(6, 4, rng=rng, name="emb")
    cell2 = LstmCell(4, 5, rng=rng, name="cell2")
    token_ids = rng.integers(0, 6, size=(3, 4))
    lengths = np.array([4, 2, 3])

    def encoder_loss():
        return ad.total(encode_sequence(emb, cell2, token_ids, lengths))

    rep = grad_check(encoder_loss, [emb.weights] + [t for _, t in cell2.parameters()],
                     epsilon, tolerance)
    out.entries.append(_summarize("sequence_encoder", rep, tolerance))

    # --- interaction mapper + scoring head --------------------------------
    fuse = InteractionMapper(rep_dim=5, out_dim=8, dropout_rate=0.0, rng=rng)
    head = ScoringHead(8, rng=rng)
    xu = Tensor(rand(3, 5), requires_grad=True, name="xu")
    xv = Tensor(rand(3, 5), requires_grad=True, name="xv")
    truth_r = Tensor(rand(3), name="truth_r")

    def head_loss():
        xf = fuse.forward(xu, xv, train=False)
        return ad.mean_squared_error(head.predict(xf), truth_r)

    rep = grad_check(
        head_loss,
        [t for _, t in fuse.parameters()] + [t for _, t in head.parameters()] + [xu, xv],
        epsilon, tolerance,
    )
    out.entries.append(_summarize("interaction_and_head", rep, tolerance))

    # --- discriminator and both adversarial objectives --------------------
    disc = Discriminator("interaction", in_dim=8, hidden_dim=6, rng=rng)
    rep_in = Tensor(rand(4, 8), requires_grad=True, name="rep_in")
    probe_w = Tensor(rand(4, 2))
    rep = grad_check(
        lambda: ad.total(ad.mul(disc.probs(rep_in), probe_w)),
        [t for _, t in disc.parameters()] + [rep_in], epsilon, tolerance,
    )
    out.entries.append(_summarize("discriminator", rep, tolerance))

    src = Tensor(rand(4, 8), requires_grad=True, name="src_reps")
    tgt = Tensor(rand(4, 8), requires_grad=True, name="tgt_reps")

    def disc_loss():
        loss, _ = discriminator_objective(disc, src, tgt)
        return loss

    rep = grad_check(disc_loss, [t for _, t in disc.parameters()] + [src, tgt],
                     epsilon, tolerance)
    out.entries.append(_summarize("discriminator_objective", rep, tolerance))

    def gen_loss():
        return generator_objective(disc, tgt)

    rep = grad_check(gen_loss, [t for _, t in disc.parameters()] + [tgt],
                     epsilon, tolerance)
    out.entries.append(_summarize("generator_objective", rep, tolerance))

    def gen_loss_ns():
        return generator_objective(disc, tgt, non_saturating=True)

    rep = grad_check(gen_loss_ns, [t for _, t in disc.parameters()] + [tgt],
                     epsilon, tolerance)
    out.entries.append(_summarize("generator_objective_nonsaturating", rep, tolerance))

    return out
