"""Stochastic update errors: programming offset and final-value mismatch.

Both act on the float weight immediately before it is written back to the
devices. Offset scales the increment, ``w + dw (1 + u)``; mismatch scales the
written value, ``(w + dw)(1 + u)``. Clipping to the device range happens
downstream, at encode time.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

DISTRIBUTIONS = ("uniform", "gaussian")
MISMATCH_MODES = ("per_update", "per_device")

# noise refill size: up to BLOCK_STEPS steps, capped at BLOCK_CELLS draws per kind;
# part of the stream definition, do not vary
BLOCK_STEPS = 1024
BLOCK_CELLS = 1 << 20


@dataclass(frozen=True)
class NoiseSpec:
    offset_frac: float = 0.0
    mismatch_frac: float = 0.0
    seed: Optional[int] = None
    distribution: str = "uniform"
    mismatch_mode: str = "per_update"

    def __post_init__(self):
        if self.offset_frac < 0 or self.mismatch_frac < 0:
            raise ValueError("noise fractions must be >= 0")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS}")
        if self.mismatch_mode not in MISMATCH_MODES:
            raise ValueError(f"mismatch_mode must be one of {MISMATCH_MODES}")

    @property
    def is_identity(self) -> bool:
        return self.offset_frac == 0 and self.mismatch_frac == 0


def offset_update(w, dw, spec: NoiseSpec, u):
    return w + dw * (1.0 + u)


def mismatch_update(w, dw, spec: NoiseSpec, u):
    return (w + dw) * (1.0 + u)


def draw(frac: float, distribution: str, rng: np.random.Generator, shape):
    """Relative error samples: uniform on [-frac, frac] or normal with std ``frac``."""
    if frac == 0:
        return np.zeros(shape)
    if distribution == "uniform":
        return rng.uniform(-frac, frac, size=shape)
    return rng.normal(0.0, frac, size=shape)


class NoiseInjector:
    """Applies a :class:`NoiseSpec` to weight writes of a multi-gap network.

    Draws come from one stream per experiment, refilled ``block_steps`` steps at
    a time. Every step consumes one draw per cell of every gap, whether or not
    the cell is written, so the stream position depends only on the step count.
    """

    def __init__(self, spec: NoiseSpec, rng: np.random.Generator, shapes=()):
        self.spec = spec
        self.rng = rng
        self.shapes = [tuple(s) for s in shapes]
        sizes = [int(np.prod(s)) for s in self.shapes]
        self.bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.total = int(self.bounds[-1])
        self.block_steps = max(1, min(BLOCK_STEPS, BLOCK_CELLS // max(self.total, 1)))
        self.fixed = None
        if spec.mismatch_mode == "per_device" and spec.mismatch_frac > 0:
            self.fixed = draw(spec.mismatch_frac, spec.distribution, rng, self.total)
        self.step = -1
        self._off = self._mis = None

    @property
    def per_update_mismatch(self) -> bool:
        return self.spec.mismatch_frac > 0 and self.fixed is None

    def draw_block(self):
        """Offset and mismatch draws for the next ``block_steps`` steps, each
        of shape (block_steps, total cells); unused kinds come back empty."""
        shape = (self.block_steps, self.total)
        off = draw(self.spec.offset_frac, self.spec.distribution, self.rng, shape) \
            if self.spec.offset_frac > 0 else np.zeros((0, 0))
        mis = draw(self.spec.mismatch_frac, self.spec.distribution, self.rng, shape) \
            if self.per_update_mismatch else np.zeros((0, 0))
        return off, mis

    def next_step(self) -> None:
        self.step += 1
        if self.step % self.block_steps == 0:
            self._off, self._mis = self.draw_block()

    def _slice(self, block, gap):
        row = block[self.step % self.block_steps]
        return row[self.bounds[gap]:self.bounds[gap + 1]].reshape(self.shapes[gap])

    def __call__(self, gap: int, w, dw):
        """New weights for gap ``gap`` at the current step; ``w`` and ``dw`` cover the whole grid."""
        spec = self.spec
        if self.step < 0:
            raise RuntimeError("call next_step() before applying noise")
        if spec.offset_frac > 0:
            w = offset_update(w, dw, spec, self._slice(self._off, gap))
        else:
            w = w + dw
        if spec.mismatch_frac > 0:
            if self.fixed is not None:
                u = self.fixed[self.bounds[gap]:self.bounds[gap + 1]].reshape(self.shapes[gap])
            else:
                u = self._slice(self._mis, gap)
            w = mismatch_update(w, 0.0, spec, u)
        return w
