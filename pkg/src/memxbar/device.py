"""Single-memristor model.

The device is described by a dimensionless internal state ``x`` in [0, 1].
``x = 1`` is the low-resistance state (R_ON) and ``x = 0`` the high-resistance
state (R_OFF); conductance mixes the two linearly.

State motion is threshold gated: nothing happens while ``|V| <= v_th``.
Above threshold the state drifts at a rate proportional to the overdrive
``|V| - v_th``, shaped by a direction-dependent window that vanishes only at
the boundary being approached, so a fully OFF device can still be switched ON.
Negative amplitudes drive ``x`` toward 1 (R_ON), positive ones toward 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

DEFAULT_STEPS = 1000


def calibrate_dynamics_rate(amplitude: float = -2.0, duration: float = 1.0,
                            v_th: float = 1.0, residual: float = 1e-7) -> float:
    """Rate that switches x from 0 to within ``residual`` of 1 in one pulse.

    Toward R_ON the state obeys dx/dt = k (|V| - v_th) (1 - x^2), whose
    solution from x=0 is tanh(k (|V| - v_th) t).
    """
    overdrive = abs(amplitude) - v_th
    if overdrive <= 0 or duration <= 0:
        raise ValueError("calibration pulse must be super-threshold with positive duration")
    return math.atanh(1.0 - residual) / (overdrive * duration)


DEFAULT_DYNAMICS_RATE = calibrate_dynamics_rate()


@dataclass(frozen=True)
class DeviceParams:
    r_on: float = 3e3
    r_off: float = 62e3
    v_th: float = 1.0
    dynamics_rate: float = DEFAULT_DYNAMICS_RATE
    levels: Optional[int] = None

    def __post_init__(self):
        if not (0 < self.r_on < self.r_off):
            raise ValueError(f"need 0 < r_on < r_off, got r_on={self.r_on}, r_off={self.r_off}")
        if self.v_th <= 0:
            raise ValueError(f"v_th must be positive, got {self.v_th}")
        if self.dynamics_rate <= 0:
            raise ValueError(f"dynamics_rate must be positive, got {self.dynamics_rate}")
        if self.levels is not None and (int(self.levels) != self.levels or self.levels < 2):
            raise ValueError(f"levels must be an integer >= 2, got {self.levels}")

    @property
    def g_on(self) -> float:
        return 1.0 / self.r_on

    @property
    def g_off(self) -> float:
        return 1.0 / self.r_off


@dataclass(frozen=True)
class MemristorState:
    x: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0):
            raise ValueError(f"state must lie in [0, 1], got {self.x}")


@dataclass(frozen=True)
class ProgramPulse:
    amplitude: float
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError(f"pulse duration must be >= 0, got {self.duration}")


# -- array kernels ---------------------------------------------------------

def snap(x, levels: int):
    """Nearest of ``levels`` equispaced points in [0, 1]; ties go up."""
    n = levels - 1
    return np.floor(np.asarray(x, dtype=float) * n + 0.5) / n


def conductance_array(x, params: DeviceParams):
    x = np.asarray(x, dtype=float)
    if params.levels is not None:
        x = snap(x, params.levels)
    return x * params.g_on + (1.0 - x) * params.g_off


def drift_rate(x, amplitude, params: DeviceParams):
    """dx/dt for state(s) ``x`` under constant amplitude(s)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(amplitude, dtype=float)
    overdrive = np.maximum(np.abs(v) - params.v_th, 0.0)
    toward_on = v < 0
    window = np.where(toward_on, 1.0 - x * x, 1.0 - (1.0 - x) ** 2)
    direction = np.where(toward_on, 1.0, -1.0)
    return direction * params.dynamics_rate * overdrive * window


def integrate(x, amplitude, duration, params: DeviceParams, steps: int = DEFAULT_STEPS):
    """Fixed-step RK4 integration of the drift equation, clamped each step.

    Broadcasts over arrays of states, amplitudes and durations. Cells at or
    below threshold are returned unchanged.
    """
    x = np.array(x, dtype=float, copy=True)
    amplitude = np.broadcast_to(np.asarray(amplitude, dtype=float), x.shape)
    h = np.broadcast_to(np.asarray(duration, dtype=float), x.shape) / steps
    active = np.abs(amplitude) > params.v_th
    if not np.any(active & (h > 0)):
        return x
    xa, va, ha = x[active], amplitude[active], h[active]
    for _ in range(steps):
        k1 = drift_rate(xa, va, params)
        k2 = drift_rate(xa + 0.5 * ha * k1, va, params)
        k3 = drift_rate(xa + 0.5 * ha * k2, va, params)
        k4 = drift_rate(xa + ha * k3, va, params)
        xa = np.clip(xa + ha / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), 0.0, 1.0)
    x[active] = xa
    return x


# -- scalar operations -----------------------------------------------------

def conductance(state: MemristorState, params: DeviceParams) -> float:
    """Conductance in siemens, read through the level grid when one is set."""
    return float(conductance_array(state.x, params))


def apply_pulse(state: MemristorState, pulse: ProgramPulse, params: DeviceParams,
                steps: int = DEFAULT_STEPS) -> MemristorState:
    if abs(pulse.amplitude) <= params.v_th or pulse.duration == 0:
        return state
    x = integrate(state.x, pulse.amplitude, pulse.duration, params, steps=steps)
    return MemristorState(float(x))


def quantize(state: MemristorState, params: DeviceParams) -> MemristorState:
    if params.levels is None:
        raise ValueError("quantize requires params.levels to be set")
    return MemristorState(float(snap(state.x, params.levels)))
