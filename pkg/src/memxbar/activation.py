"""Activation functions used after each crossbar, and the output comparator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("sigmoid", "tanh", "hard_sigmoid", "hard_tanh", "linear_relu", "identity")

# kinds whose derivative is computed from the activation output rather than
# the pre-activation
_OUTPUT_DERIV = ("sigmoid", "tanh")


@dataclass(frozen=True)
class ActivationKind:
    tag: str = "sigmoid"
    width: float = 0.2   # transition width of the hard variants, in input units

    def __post_init__(self):
        if self.tag not in KINDS:
            raise ValueError(f"unknown activation {self.tag!r}; expected one of {', '.join(KINDS)}")
        if self.width <= 0:
            raise ValueError("transition width must be positive")

    @property
    def deriv_from_output(self) -> bool:
        return self.tag in _OUTPUT_DERIV

    @property
    def differentiable(self) -> bool:
        return self.tag in ("sigmoid", "tanh", "identity")


def as_kind(kind) -> ActivationKind:
    return kind if isinstance(kind, ActivationKind) else ActivationKind(str(kind))


def sigmoid(z):
    # split by sign so large |z| never overflows exp
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def activate(kind, z):
    kind = as_kind(kind)
    z = np.asarray(z, dtype=float)
    tag = kind.tag
    if tag == "sigmoid":
        return sigmoid(z)
    if tag == "tanh":
        return np.tanh(z)
    if tag == "hard_sigmoid":
        return np.clip(0.5 + z / kind.width, 0.0, 1.0)
    if tag == "hard_tanh":
        return np.clip(2.0 * z / kind.width, -1.0, 1.0)
    if tag == "linear_relu":
        return np.maximum(z, 0.0)
    return z.copy()


def activate_deriv(kind, y_or_z):
    """Derivative of ``activate``.

    Sigmoid and tanh take the activation output ``y``; every other kind takes
    the pre-activation ``z``.
    """
    kind = as_kind(kind)
    a = np.asarray(y_or_z, dtype=float)
    tag = kind.tag
    if tag == "sigmoid":
        return a * (1.0 - a)
    if tag == "tanh":
        return 1.0 - a * a
    half = kind.width / 2.0
    if tag == "hard_sigmoid":
        return np.where(np.abs(a) < half, 1.0 / kind.width, 0.0)
    if tag == "hard_tanh":
        return np.where(np.abs(a) < half, 2.0 / kind.width, 0.0)
    if tag == "linear_relu":
        return (a > 0).astype(float)
    return np.ones_like(a)


def output_threshold(y, theta: float = 0.5):
    """Comparator stage: 1 where ``y >= theta`` else 0."""
    out = (np.asarray(y, dtype=float) >= theta).astype(int)
    return int(out) if out.ndim == 0 else out
