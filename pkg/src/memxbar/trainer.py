"""Backpropagation with per-sample gradient descent on a memristive network.

Gradients are formed in float-weight space. The hidden-layer error is obtained
by driving the downstream crossbar backward (a row read), so the same device
grid serves the forward and backward passes. Weight increments are then
written to the devices either directly (``ideal_write``) or as programming
pulses whose realized effect follows the device dynamics (``pulse_write``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import activation as act
from .device import DeviceParams, drift_rate, integrate, snap
from .network import MemristiveNetwork, encode_array
from .nonideal import BLOCK_CELLS, BLOCK_STEPS, NoiseInjector, NoiseSpec

UPDATE_MODELS = ("ideal_write", "pulse_write")
ORDERS = ("random", "epoch")


@dataclass(frozen=True)
class TrainSpec:
    eta: float = 0.5
    iterations: int = 100_000
    seed: Optional[int] = 0
    update_model: str = "ideal_write"
    bnn_accumulate_window: int = 100
    record_every: int = 100
    order: str = "random"
    batch: int = 1

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.update_model not in UPDATE_MODELS:
            raise ValueError(f"update_model must be one of {UPDATE_MODELS}")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")
        if self.batch != 1:
            raise ValueError("training is strictly per-sample; batch must be 1")
        if self.bnn_accumulate_window < 1 or self.record_every < 1:
            raise ValueError("bnn_accumulate_window and record_every must be >= 1")


@dataclass(frozen=True)
class PulseMap:
    """Programming pulse selection. ``amp_neg`` moves a device toward R_ON,
    ``amp_pos`` toward R_OFF. With ``duration_scale`` unset, the duration is
    chosen by linearizing the device drift around the middle of the move."""
    amp_pos: float = 1.5
    amp_neg: float = -2.0
    base_duration: float = 0.0
    duration_scale: Optional[float] = None

    def check(self, params: DeviceParams) -> None:
        if not (self.amp_pos > params.v_th and self.amp_neg < -params.v_th):
            raise ValueError("programming amplitudes must exceed the device threshold "
                             "(amp_pos positive, amp_neg negative)")


@dataclass
class ExperimentResult:
    trace: List[tuple] = field(default_factory=list)   # (iteration, mean error over the window)
    weights: List[np.ndarray] = field(default_factory=list)
    accuracy: dict = field(default_factory=dict)
    cost: Optional[dict] = None
    stopped_at: Optional[int] = None


def loss(y_target, y_real) -> float:
    y_target = np.asarray(y_target, dtype=float)
    y_real = np.asarray(y_real, dtype=float)
    if y_target.shape != y_real.shape:
        raise ValueError(f"target shape {y_target.shape} does not match output shape {y_real.shape}")
    return 0.5 * float(np.sum((y_target - y_real) ** 2))


def backward(net: MemristiveNetwork, tape, y_target) -> List[np.ndarray]:
    """dE/dW for every gap, E being half the summed squared output error."""
    cfg = net.config
    y_target = np.asarray(y_target, dtype=float)
    if len(tape.y) != net.gaps or tape.output.shape != y_target.shape:
        raise ValueError("tape does not belong to this network or target has the wrong length")
    grads = [None] * net.gaps
    de_dy = -(y_target - tape.output)
    for k in range(net.gaps - 1, -1, -1):
        kind = cfg.activations[k]
        if tape.inputs[k].shape != (net.crossbars[k].rows,):
            raise ValueError(f"stale tape: gap {k} input has shape {tape.inputs[k].shape}")
        slope = act.activate_deriv(kind, tape.y[k] if kind.deriv_from_output else tape.z[k])
        de_dz = cfg.gains[k] * de_dy * slope
        grads[k] = np.outer(tape.inputs[k], de_dz)
        if k > 0:
            de_dy = net.layer_back(k, de_dz)
    return grads


def _pulse_write(net: MemristiveNetwork, k: int, w_new, mask, pulse_map: PulseMap, u=None) -> None:
    cfg = net.config
    xb = net.crossbars[k]
    params = xb.params
    signs, x_target = encode_array(np.clip(w_new / cfg.weight_clip, -1.0, 1.0))
    x_now = xb.x[mask]
    dx = x_target[mask] - x_now
    amp = np.where(dx > 0, pulse_map.amp_neg, pulse_map.amp_pos)
    if pulse_map.duration_scale is not None:
        dur = pulse_map.duration_scale * np.abs(dx)
    else:
        rate = np.abs(drift_rate(x_now + 0.5 * dx, amp, params))
        dur = np.abs(dx) / np.maximum(rate, 1e-12)
    dur = np.where(dx == 0, 0.0, pulse_map.base_duration + dur)
    xb.signs[mask] = signs[mask]
    x_new = integrate(x_now, amp, dur, params)
    if net.hard_levels:
        x_new = net._hard_quantize(x_new, None if u is None else u[mask])
    xb.x[mask] = x_new


def apply_update(net: MemristiveNetwork, gradients, spec: TrainSpec,
                 pulse_map: Optional[PulseMap] = None,
                 noise: Optional[NoiseInjector] = None,
                 rounding: Optional["StepStream"] = None) -> None:
    """Gradient step ``dw = -eta dE/dw`` written to every cell with a nonzero gradient.

    ``noise`` and ``rounding`` must already be positioned at the current step.
    """
    if pulse_map is None:
        pulse_map = PulseMap()
    for k, g in enumerate(gradients):
        if g.shape != net.crossbars[k].shape:
            raise ValueError(f"gradient for gap {k} has shape {g.shape}, expected {net.crossbars[k].shape}")
        dw = -spec.eta * g
        mask = dw != 0
        if not mask.any():
            continue
        w = net.analog_weights(k)
        w_new = noise(k, w, dw) if noise is not None else w + dw
        u = rounding.slice(k) if rounding is not None else None
        if spec.update_model == "ideal_write":
            net.set_weights(k, w_new, mask, u)
        else:
            pulse_map.check(net.crossbars[k].params)
            _pulse_write(net, k, w_new, mask, pulse_map, u)


class StepStream:
    """Uniform [0, 1) draws, one per cell of every gap per step, refilled in blocks
    sized as in :class:`NoiseInjector` so the stream position depends only on the step."""

    def __init__(self, rng: np.random.Generator, shapes):
        self.rng = rng
        self.shapes = [tuple(s) for s in shapes]
        sizes = [int(np.prod(s)) for s in self.shapes]
        self.bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.total = int(self.bounds[-1])
        self.block_steps = max(1, min(BLOCK_STEPS, BLOCK_CELLS // max(self.total, 1)))
        self.step = -1
        self._block = None

    def draw_block(self):
        return self.rng.random((self.block_steps, self.total))

    def next_step(self) -> None:
        self.step += 1
        if self.step % self.block_steps == 0:
            self._block = self.draw_block()

    def slice(self, gap: int):
        row = self._block[self.step % self.block_steps]
        return row[self.bounds[gap]:self.bounds[gap + 1]].reshape(self.shapes[gap])


class BnnState:
    """Shadow accumulators for deferred binary updates, in normalized weight units."""

    def __init__(self, net: MemristiveNetwork):
        self.shadow = [np.zeros(xb.shape) for xb in net.crossbars]
        self.steps = 0


def flush_binary(net: MemristiveNetwork, state: BnnState) -> None:
    """Move each cell one binary level toward its shadow sign where the shadow
    exceeds 0.5 in magnitude. All ON->OFF flips run first, then OFF->ON."""
    pending = []
    for xb, s in zip(net.crossbars, state.shadow):
        on = snap(xb.x, 2) == 1
        up, down = s > 0.5, s < -0.5
        turn_off = on & (((xb.signs > 0) & down) | ((xb.signs < 0) & up))
        turn_on = ~on & (up | down)
        pending.append((xb, turn_off, turn_on, s))
    for xb, turn_off, _, _ in pending:         # cycle 1
        xb.x[turn_off] = 0.0
    for xb, _, turn_on, s in pending:          # cycle 2
        xb.signs[turn_on] = np.where(s[turn_on] > 0, 1, -1)
        xb.x[turn_on] = 1.0
    for s in state.shadow:
        s[...] = 0.0


def bnn_step(net: MemristiveNetwork, gradients, spec: TrainSpec, state: BnnState) -> None:
    if net.config.mode != "bnn":
        raise ValueError("bnn_step requires a network in bnn mode")
    for s, g in zip(state.shadow, gradients):
        s -= spec.eta * g / net.config.weight_clip
    state.steps += 1
    if state.steps % spec.bnn_accumulate_window == 0:
        flush_binary(net, state)


def _sample_order(rng: np.random.Generator, indices: np.ndarray, spec: TrainSpec):
    if spec.order == "random":
        picks = rng.integers(0, len(indices), size=spec.iterations)
        return indices[picks]
    epochs = -(-spec.iterations // len(indices))
    return np.concatenate([rng.permutation(indices) for _ in range(epochs)])[:spec.iterations]


def train(net: MemristiveNetwork, dataset, spec: TrainSpec, noise: Optional[NoiseSpec] = None,
          pulse_map: Optional[PulseMap] = None, fused: Optional[bool] = None,
          until: Optional[Callable[[int, MemristiveNetwork], bool]] = None) -> ExperimentResult:
    """Run ``spec.iterations`` single-sample steps; records the mean error of
    each ``record_every``-step window.

    ``fused`` selects the compiled loop (default: whenever the configuration
    allows it); both loops agree to floating-point rounding. ``until`` is
    called at every record point and stops training early by returning True;
    ``result.stopped_at`` then holds that iteration.
    """
    train_idx = np.asarray(dataset.train_idx)
    if len(train_idx) == 0:
        raise ValueError("dataset has no training samples")
    sample_seq, noise_seq, round_seq = np.random.SeedSequence(spec.seed).spawn(3)
    order = _sample_order(np.random.default_rng(sample_seq), train_idx, spec)
    shapes = [xb.shape for xb in net.crossbars]
    injector = None
    if noise is not None and not noise.is_identity:
        noise_rng = np.random.default_rng(noise.seed if noise.seed is not None else noise_seq)
        injector = NoiseInjector(noise, noise_rng, shapes)
    bnn = BnnState(net) if net.config.mode == "bnn" else None
    rounding = StepStream(np.random.default_rng(round_seq), shapes) if net.stochastic_rounding else None

    result = ExperimentResult()
    if fused is None:
        fused = _fused_eligible(net, spec)
    if fused:
        if not _fused_eligible(net, spec):
            raise ValueError("compiled loop needs ideal_write, ideal wires and row-split tiles")
        _fused_loop(net, dataset, spec, order, injector, rounding, bnn, result, until)
        result.weights = [net.weights(k) for k in range(net.gaps)]
        return result
    window = 0.0
    inputs, targets = dataset.inputs, dataset.targets
    for it, idx in enumerate(order, start=1):
        out, tape = net.forward(inputs[idx])
        window += loss(targets[idx], out)
        grads = backward(net, tape, targets[idx])
        if bnn is not None:
            bnn_step(net, grads, spec, bnn)
        else:
            for stream in (injector, rounding):
                if stream is not None:
                    stream.next_step()
            apply_update(net, grads, spec, pulse_map, injector, rounding)
        if it % spec.record_every == 0:
            result.trace.append((it, window / spec.record_every))
            window = 0.0
            if until is not None and until(it, net):
                result.stopped_at = it
                break
    result.weights = [net.weights(k) for k in range(net.gaps)]
    return result



def _row_edges(plan, rows, cols):
    """Tile row boundaries if ``plan`` splits rows only, in row order; else None."""
    if plan is None:
        return np.array([0, rows], dtype=np.int64)
    blocks = sorted(plan.blocks)
    if any(c != (0, cols) for _, c in blocks):
        return None
    return np.array([r[0] for r, _ in blocks] + [rows], dtype=np.int64)


def _fused_eligible(net: MemristiveNetwork, spec: TrainSpec) -> bool:
    cfg = net.config
    return (spec.update_model == "ideal_write" and cfg.wire_res is None
            and all(_row_edges(p, xb.rows, xb.cols) is not None
                    for p, xb in zip(cfg.partition, net.crossbars)))


def _fused_loop(net: MemristiveNetwork, dataset, spec: TrainSpec, order, injector, rounding,
                bnn, result, until=None):
    from . import _kernels as kern

    cfg = net.config
    p = cfg.device
    edges = [_row_edges(pl, xb.rows, xb.cols) for pl, xb in zip(cfg.partition, net.crossbars)]
    empty2, empty1 = np.zeros((0, 0)), np.zeros(0)
    fixed = injector.fixed if injector is not None and injector.fixed is not None else empty1
    bounds = np.concatenate([[0], np.cumsum([xb.rows * xb.cols for xb in net.crossbars])]).astype(np.int64)
    streams = [st for st in (injector, rounding) if st is not None]
    block = streams[0].block_steps if streams else len(order)
    if until is not None:
        # stop checks fall on record points, so blocks must end on them
        if not streams:
            block = spec.record_every
        elif block % spec.record_every:
            raise ValueError("early stopping with noise or stochastic rounding needs "
                             f"record_every dividing {block}")
    shadows = kern.typed_list(bnn.shadow if bnn is not None else [empty2])
    trace = np.zeros(len(order) // spec.record_every)
    args = (kern.typed_list([xb.x for xb in net.crossbars]),
            kern.typed_list([xb.signs for xb in net.crossbars]),
            kern.typed_list(edges),
            np.array(cfg.gains, dtype=float),
            np.array([kern.KIND_CODES[a.tag] for a in cfg.activations], dtype=np.int64),
            np.array([a.width for a in cfg.activations], dtype=float),
            np.ascontiguousarray(dataset.inputs, dtype=float),
            np.ascontiguousarray(dataset.targets, dtype=float))
    window, n_trace = 0.0, 0
    for start in range(0, len(order), block):
        u_off, u_mis = injector.draw_block() if injector is not None else (empty2, empty2)
        u_round = rounding.draw_block() if rounding is not None else empty2
        window, n_trace = kern.train_block(
            *args, np.ascontiguousarray(order[start:start + block], dtype=np.int64), start,
            p.levels or 0, net.hard_levels, u_round,
            cfg.read_voltage, cfg.weight_clip, p.g_on, p.g_off, spec.eta,
            u_off, u_mis, fixed, bounds, spec.record_every, window, trace, n_trace,
            shadows, spec.bnn_accumulate_window if bnn is not None else 0)
        stop = start + min(block, len(order) - start)
        if until is not None and stop % spec.record_every == 0 and until(stop, net):
            result.stopped_at = stop
            break
    result.trace.extend((int((i + 1) * spec.record_every), float(trace[i])) for i in range(n_trace))
