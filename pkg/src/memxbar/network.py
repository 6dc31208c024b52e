"""Multi-layer network stored on memristive crossbars.

Weight magnitude lives in device conductance and weight sign in the sign grid.
A float weight ``w`` in ``[-weight_clip, weight_clip]`` is normalized to
``w / weight_clip`` and stored as ``sign = sign(w)`` plus a state whose
normalized conductance ``(G - G_off) / (G_on - G_off)`` equals ``|w| / weight_clip``.

Layer inputs are applied as read voltages in ``[0, read_voltage]``. Column
currents are converted back to activation inputs after subtracting a
reference read at ``G_off`` (so an all-zero weight column sources no current)
and scaling by the layer gain.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from . import activation as act
from .crossbar import CrossbarArray, PartitionPlan, tiled_backward, tiled_forward
from .device import DeviceParams, MemristorState, conductance_array, snap

MODES = ("ann", "dnn", "bnn")
QUANTIZE_MODES = ("read", "hard")
ROUNDING = ("nearest", "stochastic")


# -- weight <-> device mapping ----------------------------------------------

def encode_weight(w: float, params: DeviceParams):
    """(sign, state) for a normalized weight ``w`` in [-1, 1]."""
    if abs(w) > 1.0:
        raise ValueError(f"normalized weight {w} outside [-1, 1]")
    sign = 1 if w >= 0 else -1
    # conductance is linear in x, so the normalized conductance equals x
    return sign, MemristorState(abs(float(w)))


def decode_weight(sign: int, state: MemristorState, params: DeviceParams) -> float:
    g = float(conductance_array(state.x, params))
    return sign * (g - params.g_off) / (params.g_on - params.g_off)


def encode_array(w):
    w = np.asarray(w, dtype=float)
    signs = np.where(w >= 0, 1, -1).astype(np.int8)
    return signs, np.abs(w)


def decode_array(signs, x, params: DeviceParams):
    g = conductance_array(x, params)
    return signs * (g - params.g_off) / (params.g_on - params.g_off)


# -- configuration -----------------------------------------------------------

@dataclass
class NetworkConfig:
    layer_sizes: Sequence[int]
    activations: Sequence = None
    mode: str = "ann"
    partition: Optional[Sequence] = None   # per gap: None, a PartitionPlan, or a row-tile count
    device: DeviceParams = field(default_factory=DeviceParams)
    weight_clip: float = 1.0
    gains: Optional[Sequence[float]] = None
    read_voltage: float = 0.5
    wire_res: Optional[float] = None
    quantize: str = "read"
    rounding: str = "nearest"

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        gaps = len(self.layer_sizes) - 1
        if gaps < 1:
            raise ValueError("a network needs at least two layers")
        if any(n < 1 for n in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        if self.activations is None:
            self.activations = ["sigmoid"] * gaps
        self.activations = [act.as_kind(a) for a in self.activations]
        if len(self.activations) != gaps:
            raise ValueError(f"{gaps} layer gaps need {gaps} activations, got {len(self.activations)}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "bnn" and self.device.levels != 2:
            self.device = replace(self.device, levels=2)
        if self.quantize not in QUANTIZE_MODES:
            raise ValueError(f"quantize must be one of {QUANTIZE_MODES}")
        if self.rounding not in ROUNDING:
            raise ValueError(f"rounding must be one of {ROUNDING}")
        if self.weight_clip <= 0 or self.read_voltage <= 0:
            raise ValueError("weight_clip and read_voltage must be positive")
        if self.read_voltage > self.device.v_th:
            raise ValueError("read voltage above the device threshold would disturb stored states")
        if self.gains is None:
            # full-scale column current maps to an activation input of 4
            self.gains = [4.0 / (r * self.weight_clip) for r in self.layer_sizes[:-1]]
        self.gains = [float(g) for g in self.gains]
        if len(self.gains) != gaps:
            raise ValueError(f"expected {gaps} gains, got {len(self.gains)}")
        plans = list(self.partition) if self.partition is not None else [None] * gaps
        if len(plans) != gaps:
            raise ValueError(f"expected {gaps} partition entries, got {len(plans)}")
        for k, p in enumerate(plans):
            rows, cols = self.layer_sizes[k], self.layer_sizes[k + 1]
            if isinstance(p, (int, np.integer)) and not isinstance(p, bool):
                p = None if p <= 1 else PartitionPlan.row_split(rows, cols, int(p))
            if p is not None:
                p.validate(rows, cols)
            plans[k] = p
        self.partition = plans

    @property
    def gaps(self) -> int:
        return len(self.layer_sizes) - 1


@dataclass
class Tape:
    """Per-gap layer inputs, pre-activations and outputs from one forward pass."""
    inputs: List[np.ndarray]
    z: List[np.ndarray]
    y: List[np.ndarray]

    @property
    def output(self):
        return self.y[-1]


class MemristiveNetwork:

    def __init__(self, config: NetworkConfig, seed=None, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        sizes = config.layer_sizes
        self.crossbars = [CrossbarArray(sizes[k], sizes[k + 1], config.device, config.wire_res)
                          for k in range(config.gaps)]
        self.tiles = [xb.partition(p) if p is not None else None
                      for xb, p in zip(self.crossbars, config.partition)]
        p = config.device
        self._dg = p.g_on - p.g_off
        # binary devices start from a random level; others from small weights
        span = config.weight_clip if config.mode == "bnn" else 0.5
        for k, xb in enumerate(self.crossbars):
            self.set_weights(k, self.rng.uniform(-span, span, size=xb.shape))

    @property
    def gaps(self) -> int:
        return self.config.gaps

    # -- weights -----------------------------------------------------------

    def weights(self, k: int) -> np.ndarray:
        """Float weights as read from the devices (level grid applied)."""
        xb = self.crossbars[k]
        return self.config.weight_clip * decode_array(xb.signs, xb.x, xb.params)

    def analog_weights(self, k: int) -> np.ndarray:
        """Float weights from the internal analog states, before level snapping."""
        xb = self.crossbars[k]
        return self.config.weight_clip * xb.signs * xb.x

    @property
    def hard_levels(self) -> bool:
        """Whether writes land on the level grid (always so for binary devices)."""
        cfg = self.config
        return cfg.device.levels is not None and (cfg.quantize == "hard" or cfg.mode == "bnn")

    @property
    def stochastic_rounding(self) -> bool:
        return self.hard_levels and self.config.rounding == "stochastic" and self.config.mode != "bnn"

    def set_weights(self, k: int, w, mask=None, u=None) -> None:
        """Encode float weights onto gap ``k``; only cells under ``mask`` are written.

        ``u`` supplies uniform draws for stochastic rounding (drawn from the
        network's generator when omitted).
        """
        cfg = self.config
        xb = self.crossbars[k]
        wn = np.clip(np.asarray(w, dtype=float) / cfg.weight_clip, -1.0, 1.0)
        signs, x = encode_array(wn)
        if self.hard_levels:
            x = self._hard_quantize(x, u)
        if mask is None:
            xb.x[...] = x
            xb.signs[...] = signs
        else:
            xb.x[mask] = x[mask]
            xb.signs[mask] = signs[mask]

    def _hard_quantize(self, x, u=None):
        levels = self.config.device.levels
        if not self.stochastic_rounding:
            return snap(x, levels)
        # round up with probability equal to the fractional position between levels
        n = levels - 1
        lo = np.floor(x * n)
        if u is None:
            u = self.rng.random(np.shape(x))
        return np.minimum(lo + (u < (x * n - lo)), n) / n

    # -- analog reads ------------------------------------------------------

    def _column_currents(self, k: int, v):
        tiles = self.tiles[k]
        if tiles is None:
            return self.crossbars[k].vmm_forward(v)
        return tiled_forward(tiles, v, self.crossbars[k].cols)

    def _row_currents(self, k: int, v):
        tiles = self.tiles[k]
        if tiles is None:
            return self.crossbars[k].vmm_backward(v)
        return tiled_backward(tiles, v, self.crossbars[k].rows)

    def layer_dot(self, k: int, a) -> np.ndarray:
        """``W_k^T a`` computed in the analog domain."""
        cfg = self.config
        xb = self.crossbars[k]
        v = cfg.read_voltage * np.asarray(a, dtype=float)
        current = self._column_currents(k, v)
        reference = xb.params.g_off * (xb.signs.T @ v)
        return cfg.weight_clip * (current - reference) / (self._dg * cfg.read_voltage)

    def layer_back(self, k: int, delta) -> np.ndarray:
        """``W_k delta`` via a backward (row) read, with ``delta`` scaled into the read range."""
        cfg = self.config
        xb = self.crossbars[k]
        delta = np.asarray(delta, dtype=float)
        scale = np.max(np.abs(delta))
        if scale == 0:
            return np.zeros(xb.rows)
        v = cfg.read_voltage * delta / scale
        current = self._row_currents(k, v)
        reference = xb.params.g_off * (xb.signs @ v)
        return scale * cfg.weight_clip * (current - reference) / (self._dg * cfg.read_voltage)

    def forward(self, inputs):
        a = np.asarray(inputs, dtype=float)
        if a.shape != (self.config.layer_sizes[0],):
            raise ValueError(f"expected input of length {self.config.layer_sizes[0]}, got shape {a.shape}")
        tape = Tape([], [], [])
        for k in range(self.gaps):
            z = self.config.gains[k] * self.layer_dot(k, a)
            y = act.activate(self.config.activations[k], z)
            tape.inputs.append(a)
            tape.z.append(z)
            tape.y.append(y)
            a = y
        return a, tape

    def predict(self, inputs) -> np.ndarray:
        return self.forward(inputs)[0]
