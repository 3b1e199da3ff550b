"""ADADELTA optimization, signed update directions, and parameter lifecycle.

The update follows the accumulator recurrence
    E[g^2]  <- rho E[g^2] + (1 - rho) g^2
    dx      =  -(sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps)) * g
    E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
with a global multiplier lr applied to dx; 'ascend' negates the applied step.
Weight decay adds 2*lambda*theta to the gradient (squared-L2 penalty) and is
used only for the supervised phase.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, OptimizerStateError

__all__ = [
    "Adadelta",
    "copy_parameters",
    "freeze",
    "parameter_checksum",
    "parameter_norm_sq",
    "unfreeze",
    "zero_grads",
]


def _named(params):
    """Normalize a GeneratorSet / (name, Tensor) list / Tensor list to pairs."""
    if hasattr(params, "parameters"):
        return list(params.parameters())
    out = []
    for p in params:
        if isinstance(p, Tensor):
            out.append((p.name or f"param{len(out)}", p))
        else:
            out.append(p)
    return out


class Adadelta:
    def __init__(self, params, lr: float = 1e-4, rho: float = 0.95, eps: float = 1e-6,
                 direction: str = "descend", weight_decay: float = 0.0):
        if direction not in ("descend", "ascend"):
            raise ConfigError(f"direction must be descend or ascend, got {direction!r}")
        self.params = _named(params)
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.direction = direction
        self.weight_decay = weight_decay
        self.reset()

    def reset(self) -> None:
        self._sq_grad = [np.zeros_like(t.data) for _, t in self.params]
        self._sq_delta = [np.zeros_like(t.data) for _, t in self.params]

    def step(self) -> None:
        sign = 1.0 if self.direction == "descend" else -1.0
        for (name, t), eg, ed in zip(self.params, self._sq_grad, self._sq_delta):
            if t.frozen:
                continue
            if t.grad is None:
                raise OptimizerStateError(f"parameter {name!r} has no gradient")
            g = t.grad
            if self.weight_decay:
                g = g + 2.0 * self.weight_decay * t.data
            eg *= self.rho
            eg += (1.0 - self.rho) * g * g
            dx = -(np.sqrt(ed + self.eps) / np.sqrt(eg + self.eps)) * g
            ed *= self.rho
            ed += (1.0 - self.rho) * dx * dx
            t.data += sign * self.lr * dx


def zero_grads(params) -> None:
    for _, t in _named(params):
        t.grad = None


def freeze(params) -> None:
    for _, t in _named(params):
        t.frozen = True


def unfreeze(params) -> None:
    for _, t in _named(params):
        t.frozen = False


def copy_parameters(src, dst) -> None:
    """Bitwise copy src parameters into dst, matched by name and shape."""
    src_pairs, dst_pairs = _named(src), _named(dst)
    if len(src_pairs) != len(dst_pairs):
        raise ConfigError(
            f"parameter count mismatch: {len(src_pairs)} vs {len(dst_pairs)}"
        )
    for (sn, st), (dn, dt) in zip(src_pairs, dst_pairs):
        if sn != dn:
            raise ConfigError(f"parameter name mismatch: {sn!r} vs {dn!r}")
        if st.data.shape != dt.data.shape:
            raise ConfigError(
                f"parameter {sn!r} shape mismatch: {st.data.shape} vs {dt.data.shape}"
            )
        np.copyto(dt.data, st.data)


def parameter_checksum(*param_groups) -> str:
    """SHA-256 over names and raw float64 bytes, in parameter order."""
    h = hashlib.sha256()
    for group in param_groups:
        for name, t in _named(group):
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def parameter_norm_sq(*param_groups) -> float:
    return float(sum(
        float(np.sum(t.data * t.data)) for group in param_groups for _, t in _named(group)
    ))
