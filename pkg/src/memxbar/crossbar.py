"""Memristive crossbar with a companion sign grid.

Rows carry input voltages, columns collect current. A forward read senses the
column currents; a backward read drives the columns and senses the rows, so
the same device grid computes both ``M^T v`` and ``M v`` where
``M = signs * G``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .device import (DeviceParams, MemristorState, ProgramPulse, apply_pulse,
                     conductance_array)


@dataclass(frozen=True)
class PartitionPlan:
    """Tiles as ``((row_start, row_stop), (col_start, col_stop))`` half-open ranges."""
    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(
            ((int(r0), int(r1)), (int(c0), int(c1))) for (r0, r1), (c0, c1) in self.blocks))

    @classmethod
    def row_split(cls, rows: int, cols: int, n_tiles: int) -> "PartitionPlan":
        """Split the rows into ``n_tiles`` contiguous groups of near-equal size."""
        if not 1 <= n_tiles <= rows:
            raise ValueError(f"cannot split {rows} rows into {n_tiles} tiles")
        edges = np.linspace(0, rows, n_tiles + 1).round().astype(int)
        return cls(tuple(((edges[k], edges[k + 1]), (0, cols)) for k in range(n_tiles)))

    def validate(self, rows: int, cols: int) -> None:
        cover = np.zeros((rows, cols), dtype=int)
        for (r0, r1), (c0, c1) in self.blocks:
            if not (0 <= r0 < r1 <= rows and 0 <= c0 < c1 <= cols):
                raise ValueError(f"tile rows {r0}:{r1}, cols {c0}:{c1} outside a {rows}x{cols} array")
            cover[r0:r1, c0:c1] += 1
        if np.any(cover > 1):
            raise ValueError("partition tiles overlap")
        if np.any(cover == 0):
            raise ValueError("partition leaves cells uncovered")


def _ladder_solve(g_cell, source, g_wire):
    """Column ladder: cells inject from ``source`` into taps chained by wire
    conductance ``g_wire``; the last tap feeds a virtual-ground sense through
    one more segment. Solved by Thomas elimination, vectorized over columns.

    ``g_cell`` and ``source`` are (taps, lines). Returns sensed current per line.
    """
    n = g_cell.shape[0]
    diag = g_cell + 2.0 * g_wire
    diag[0] -= g_wire
    rhs = g_cell * source
    off = -g_wire
    # forward elimination alone yields the last tap voltage, which is all the
    # sense needs
    c = off / diag[0]
    d = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - off * c
        c = off / denom
        d = (rhs[i] - off * d) / denom
    return g_wire * d


class CrossbarArray:
    """rows x cols memristor grid plus a +/-1 sign grid.

    ``x`` and ``signs`` may be views into a parent array (see :meth:`partition`);
    writes through a tile land in the parent.
    """

    def __init__(self, rows: int, cols: int, params: DeviceParams = DeviceParams(),
                 wire_res: Optional[float] = None, x=None, signs=None,
                 origin: tuple = (0, 0)):
        self.rows, self.cols = int(rows), int(cols)
        self.params = params
        if wire_res is not None and wire_res < 0:
            raise ValueError("wire_res must be non-negative")
        self.wire_res = wire_res if wire_res else None
        self.x = np.zeros((rows, cols)) if x is None else x
        self.signs = np.ones((rows, cols), dtype=np.int8) if signs is None else signs
        self.origin = origin
        if self.x.shape != (self.rows, self.cols) or self.signs.shape != (self.rows, self.cols):
            raise ValueError("device and sign grids must both be rows x cols")
        if not np.all(np.abs(self.signs) == 1):
            raise ValueError("every sign must be +1 or -1")

    @property
    def shape(self):
        return (self.rows, self.cols)

    def conductances(self):
        return conductance_array(self.x, self.params)

    def signed_conductances(self):
        return self.signs * self.conductances()

    def vmm_forward(self, v_in) -> np.ndarray:
        """Column currents for row voltages ``v_in``."""
        v_in = np.asarray(v_in, dtype=float)
        if v_in.shape != (self.rows,):
            raise ValueError(f"expected {self.rows} row voltages, got shape {v_in.shape}")
        if self.wire_res is None:
            return self.signed_conductances().T @ v_in
        source = self.signs * v_in[:, None]
        return _ladder_solve(self.conductances(), source, 1.0 / self.wire_res)

    def vmm_backward(self, v_in) -> np.ndarray:
        """Row currents for column voltages ``v_in``."""
        v_in = np.asarray(v_in, dtype=float)
        if v_in.shape != (self.cols,):
            raise ValueError(f"expected {self.cols} column voltages, got shape {v_in.shape}")
        if self.wire_res is None:
            return self.signed_conductances() @ v_in
        source = (self.signs * v_in[None, :]).T
        return _ladder_solve(self.conductances().T, source, 1.0 / self.wire_res)

    def _check_index(self, i, j):
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise IndexError(f"cell ({i}, {j}) outside a {self.rows}x{self.cols} array")

    def state(self, i: int, j: int) -> MemristorState:
        self._check_index(i, j)
        return MemristorState(float(self.x[i, j]))

    def program_cell(self, i: int, j: int, pulse: ProgramPulse) -> None:
        self._check_index(i, j)
        self.x[i, j] = apply_pulse(self.state(i, j), pulse, self.params).x

    def set_sign(self, i: int, j: int, s: int) -> None:
        self._check_index(i, j)
        if s not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {s}")
        self.signs[i, j] = s

    def partition(self, plan: PartitionPlan) -> list:
        plan.validate(self.rows, self.cols)
        tiles = []
        for (r0, r1), (c0, c1) in plan.blocks:
            tiles.append(CrossbarArray(r1 - r0, c1 - c0, self.params, self.wire_res,
                                       x=self.x[r0:r1, c0:c1], signs=self.signs[r0:r1, c0:c1],
                                       origin=(r0, c0)))
        return tiles

    # -- checkpointing ---------------------------------------------------

    def export_csv(self, state_path, sign_path) -> None:
        np.savetxt(state_path, self.x, delimiter=",", fmt="%.17g")
        np.savetxt(sign_path, self.signs, delimiter=",", fmt="%d")

    @classmethod
    def import_csv(cls, state_path, sign_path, params: DeviceParams = DeviceParams(),
                   wire_res: Optional[float] = None) -> "CrossbarArray":
        x = np.atleast_2d(np.loadtxt(state_path, delimiter=",", ndmin=2))
        signs = np.atleast_2d(np.loadtxt(sign_path, delimiter=",", ndmin=2)).astype(np.int8)
        if np.any((x < 0) | (x > 1)):
            raise ValueError(f"{state_path}: states must lie in [0, 1]")
        return cls(x.shape[0], x.shape[1], params, wire_res, x=x, signs=signs)


def tiled_forward(tiles: Sequence[CrossbarArray], v_in, cols: int) -> np.ndarray:
    """Sum of per-tile column currents, accumulated into their column groups."""
    out = np.zeros(cols)
    for t in tiles:
        r0, c0 = t.origin
        out[c0:c0 + t.cols] += t.vmm_forward(v_in[r0:r0 + t.rows])
    return out


def tiled_backward(tiles: Sequence[CrossbarArray], v_in, rows: int) -> np.ndarray:
    out = np.zeros(rows)
    for t in tiles:
        r0, c0 = t.origin
        out[r0:r0 + t.rows] += t.vmm_backward(v_in[c0:c0 + t.cols])
    return out
