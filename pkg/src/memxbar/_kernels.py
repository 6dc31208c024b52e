"""Compiled per-sample training loop.

Covers ideal_write training on ideal wires with row-split (or no) partitioning,
including deferred binary updates, which is every experiment in the bundled configs. Arithmetic follows the
generic path in network.py/trainer.py; results agree with it to rounding.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit
from numba.typed import List

from .activation import KINDS

KIND_CODES = {tag: i for i, tag in enumerate(KINDS)}


@njit(cache=True)
def _activate(code, width, z, out):
    for j in range(z.size):
        v = z[j]
        if code == 0:
            e = math.exp(-abs(v))
            out[j] = 1.0 / (1.0 + e) if v >= 0 else e / (1.0 + e)
        elif code == 1:
            out[j] = math.tanh(v)
        elif code == 2:
            out[j] = min(max(0.5 + v / width, 0.0), 1.0)
        elif code == 3:
            out[j] = min(max(2.0 * v / width, -1.0), 1.0)
        elif code == 4:
            out[j] = max(v, 0.0)
        else:
            out[j] = v


@njit(cache=True)
def _slope(code, width, y, z):
    if code == 0:
        return y * (1.0 - y)
    if code == 1:
        return 1.0 - y * y
    if code == 2:
        return 1.0 / width if abs(z) < width / 2.0 else 0.0
    if code == 3:
        return 2.0 / width if abs(z) < width / 2.0 else 0.0
    if code == 4:
        return 1.0 if z > 0 else 0.0
    return 1.0


@njit(cache=True)
def _read_x(x, levels):
    if levels > 0:
        n = levels - 1
        return math.floor(x * n + 0.5) / n
    return x


@njit(cache=True)
def train_block(xs, ss, edges, gains, codes, widths, inputs, targets, order, it0,
                levels, hard, u_round, rv, clip, g_on, g_off, eta,
                u_off, u_mis, fixed, bounds, record_every, window, trace, n_trace,
                shadows, bnn_window):
    """Run ``len(order)`` steps starting at iteration ``it0`` (0-based).

    ``xs``/``ss`` are per-gap state and sign grids, updated in place. ``u_off``
    and ``u_mis`` hold one row of draws per step (or are empty); ``fixed`` holds
    per-device mismatch (or is empty). ``u_round`` holds stochastic-rounding
    draws per step, or is empty for nearest rounding. Completed record windows are written to
    ``trace``. Returns (window, n_trace).
    """
    gaps = len(xs)
    dg = g_on - g_off
    ins = List()
    zs = List()
    ys = List()
    for k in range(gaps):
        ins.append(np.zeros(xs[k].shape[0]))
        zs.append(np.zeros(xs[k].shape[1]))
        ys.append(np.zeros(xs[k].shape[1]))
    deltas = List()
    for k in range(gaps):
        deltas.append(np.zeros(xs[k].shape[1]))
    for step in range(order.size):
        idx = order[step]
        # forward
        for i in range(inputs.shape[1]):
            ins[0][i] = inputs[idx, i]
        for k in range(gaps):
            x, s, a, z = xs[k], ss[k], ins[k], zs[k]
            rows, cols = x.shape
            e = edges[k]
            for j in range(cols):
                z[j] = 0.0
            cur = np.empty(cols)
            ref = np.empty(cols)
            for t in range(e.size - 1):
                # one tile: its column currents are summed into z
                cur[:] = 0.0
                ref[:] = 0.0
                for i in range(e[t], e[t + 1]):
                    v = rv * a[i]
                    if v == 0.0:
                        continue
                    for j in range(cols):
                        xr = _read_x(x[i, j], levels)
                        g = xr * g_on + (1.0 - xr) * g_off
                        cur[j] += s[i, j] * g * v
                        ref[j] += s[i, j] * v
                for j in range(cols):
                    z[j] += cur[j] - g_off * ref[j]
            for j in range(cols):
                z[j] = gains[k] * (clip * z[j] / (dg * rv))
            if k + 1 < gaps:
                _activate(codes[k], widths[k], z, ins[k + 1])
                for j in range(cols):
                    ys[k][j] = ins[k + 1][j]
            else:
                _activate(codes[k], widths[k], z, ys[k])
        out = ys[gaps - 1]
        err = 0.0
        for j in range(out.size):
            d = targets[idx, j] - out[j]
            err += d * d
        window += 0.5 * err
        # backward: deltas[k] holds dE/dz for gap k
        de_dy = np.empty(out.size)
        for j in range(out.size):
            de_dy[j] = -(targets[idx, j] - out[j])
        for k in range(gaps - 1, -1, -1):
            dz = deltas[k]
            for j in range(dz.size):
                dz[j] = gains[k] * de_dy[j] * _slope(codes[k], widths[k], ys[k][j], zs[k][j])
            if k > 0:
                x, s = xs[k], ss[k]
                rows, cols = x.shape
                scale = 0.0
                for j in range(cols):
                    scale = max(scale, abs(dz[j]))
                de_dy = np.zeros(rows)
                if scale > 0:
                    for i in range(rows):
                        row_cur = 0.0
                        row_ref = 0.0
                        for j in range(cols):
                            v = rv * dz[j] / scale
                            xr = _read_x(x[i, j], levels)
                            g = xr * g_on + (1.0 - xr) * g_off
                            row_cur += s[i, j] * g * v
                            row_ref += s[i, j] * v
                        de_dy[i] = scale * clip * (row_cur - g_off * row_ref) / (dg * rv)
        if bnn_window > 0:
            for k in range(gaps):
                sh, a, dz = shadows[k], ins[k], deltas[k]
                rows, cols = sh.shape
                for i in range(rows):
                    for j in range(cols):
                        sh[i, j] -= eta * (a[i] * dz[j]) / clip
            if (it0 + step + 1) % bnn_window == 0:
                _flush(xs, ss, shadows)
        else:
            _update(xs, ss, ins, deltas, bounds, step, eta, clip, levels, hard, u_round,
                    u_off, u_mis, fixed)
        if (it0 + step + 1) % record_every == 0:
            trace[n_trace] = window / record_every
            n_trace += 1
            window = 0.0
    return window, n_trace


@njit(cache=True)
def _flush(xs, ss, shadows):
    """Binary flips where |shadow| > 0.5: ON->OFF for every gap first, then OFF->ON."""
    for k in range(len(xs)):
        x, s, sh = xs[k], ss[k], shadows[k]
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                if x[i, j] >= 0.5 and ((s[i, j] > 0 and sh[i, j] < -0.5)
                                       or (s[i, j] < 0 and sh[i, j] > 0.5)):
                    x[i, j] = 2.0   # marks "turned off this flush"
    for k in range(len(xs)):
        x, s, sh = xs[k], ss[k], shadows[k]
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                if x[i, j] == 2.0:
                    x[i, j] = 0.0
                elif x[i, j] < 0.5 and abs(sh[i, j]) > 0.5:
                    s[i, j] = 1 if sh[i, j] > 0 else -1
                    x[i, j] = 1.0
                sh[i, j] = 0.0


@njit(cache=True)
def _update(xs, ss, ins, deltas, bounds, step, eta, clip, levels, hard, u_round,
            u_off, u_mis, fixed):
    for k in range(len(xs)):
        x, s, a, dz = xs[k], ss[k], ins[k], deltas[k]
        rows, cols = x.shape
        base = bounds[k]
        for i in range(rows):
            for j in range(cols):
                dw = -eta * (a[i] * dz[j])
                if dw == 0.0:
                    continue
                w = clip * s[i, j] * x[i, j]
                c = base + i * cols + j
                if u_off.shape[0] > 0:
                    w = w + dw * (1.0 + u_off[step, c])
                else:
                    w = w + dw
                if u_mis.shape[0] > 0:
                    w = (w + 0.0) * (1.0 + u_mis[step, c])
                elif fixed.size > 0:
                    w = (w + 0.0) * (1.0 + fixed[c])
                wn = min(max(w / clip, -1.0), 1.0)
                xn = abs(wn)
                if hard:
                    n = levels - 1
                    if u_round.shape[0] > 0:
                        lo = math.floor(xn * n)
                        up = 1.0 if u_round[step, c] < xn * n - lo else 0.0
                        xn = min(lo + up, n) / n
                    else:
                        xn = math.floor(xn * n + 0.5) / n
                x[i, j] = xn
                s[i, j] = 1 if wn >= 0 else -1


def typed_list(arrays):
    out = List()
    for a in arrays:
        out.append(a)
    return out
