import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from memxbar.crossbar import CrossbarArray, PartitionPlan, tiled_backward, tiled_forward
from memxbar.device import DeviceParams, MemristorState, ProgramPulse, apply_pulse

P = DeviceParams()


def random_array(rows, cols, seed=0, wire_res=None, params=P):
    rng = np.random.default_rng(seed)
    xb = CrossbarArray(rows, cols, params, wire_res)
    xb.x[...] = rng.random((rows, cols))
    xb.signs[...] = rng.choice(np.array([-1, 1], dtype=np.int8), size=(rows, cols))
    return xb


def test_zero_input_gives_zero_current():
    xb = CrossbarArray(3, 4)
    xb.x[...] = 1.0
    assert np.all(xb.vmm_forward(np.zeros(3)) == 0)
    assert np.all(xb.vmm_backward(np.zeros(4)) == 0)


def test_ohms_law_single_cell():
    xb = CrossbarArray(1, 1)
    xb.x[0, 0] = 1.0
    assert xb.vmm_forward([0.3])[0] == pytest.approx(1e-4, rel=1e-12)
    assert xb.vmm_backward([0.3])[0] == xb.vmm_forward([0.3])[0]


@pytest.mark.parametrize("seed", range(5))
def test_matches_triple_loop_oracle(seed):
    from oracles import naive_backward, naive_forward

    xb = random_array(4, 5, seed)
    g = xb.conductances().tolist()
    s = xb.signs.tolist()
    rng = np.random.default_rng(100 + seed)
    u, v = rng.uniform(-0.5, 0.5, 4), rng.uniform(-0.5, 0.5, 5)
    assert np.max(np.abs(xb.vmm_forward(u) - naive_forward(g, s, u))) < 1e-12
    assert np.max(np.abs(xb.vmm_backward(v) - naive_backward(g, s, v))) < 1e-12


def test_dimension_errors():
    xb = CrossbarArray(4, 5)
    with pytest.raises(ValueError):
        xb.vmm_forward(np.zeros(5))
    with pytest.raises(ValueError):
        xb.vmm_backward(np.zeros(4))
    with pytest.raises(ValueError):
        CrossbarArray(2, 2, signs=np.zeros((2, 2), dtype=np.int8))
    with pytest.raises(ValueError):
        CrossbarArray(2, 2, x=np.zeros((3, 2)))


@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    xb = random_array(6, 3, seed)
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=6), rng.normal(size=6)
    lhs = xb.vmm_forward(a * u + b * v)
    rhs = a * xb.vmm_forward(u) + b * xb.vmm_forward(v)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-15)


@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 8))
def test_transpose_duality(seed, rows, cols):
    xb = random_array(rows, cols, seed)
    rng = np.random.default_rng(seed + 1)
    u, v = rng.normal(size=rows), rng.normal(size=cols)
    assert np.dot(xb.vmm_forward(u), v) == pytest.approx(np.dot(u, xb.vmm_backward(v)), rel=1e-12, abs=1e-16)


def test_sign_flip_changes_output_by_twice_the_cell_current():
    xb = random_array(4, 5, 3)
    v = np.random.default_rng(3).uniform(0, 0.5, 4)
    before = xb.vmm_forward(v)
    g = xb.conductances()
    i, j = 2, 1
    xb.set_sign(i, j, -int(xb.signs[i, j]))
    after = xb.vmm_forward(v)
    s_new = xb.signs[i, j]
    assert after[j] - before[j] == pytest.approx(2 * s_new * g[i, j] * v[i], rel=1e-12)
    others = [c for c in range(5) if c != j]
    assert np.array_equal(after[others], before[others])


def test_sign_grid_from_float_weights():
    w = np.random.default_rng(0).normal(size=(4, 5))
    xb = CrossbarArray(4, 5)
    for i in range(4):
        for j in range(5):
            xb.set_sign(i, j, 1 if w[i, j] >= 0 else -1)
    assert np.array_equal(xb.signs, np.sign(w))
    xb.set_sign(0, 0, 1)
    assert xb.signs[0, 0] == 1
    with pytest.raises(ValueError):
        xb.set_sign(0, 0, 0)
    with pytest.raises(IndexError):
        xb.set_sign(4, 0, 1)


def test_program_cell():
    xb = random_array(3, 3, 1)
    snapshot = xb.x.copy()
    xb.program_cell(1, 1, ProgramPulse(0.8, 5.0))
    assert np.array_equal(xb.x, snapshot)
    xb.x[0, 0] = 0.0
    snapshot = xb.x.copy()
    xb.program_cell(0, 0, ProgramPulse(-2.0, 3.0))
    assert xb.x[0, 0] == pytest.approx(1.0, abs=1e-12)
    mask = np.ones((3, 3), bool)
    mask[0, 0] = False
    assert np.array_equal(xb.x[mask], snapshot[mask])
    pulse = ProgramPulse(1.7, 0.07)
    expected = apply_pulse(MemristorState(xb.x[2, 1]), pulse, P).x
    xb.program_cell(2, 1, pulse)
    assert xb.x[2, 1] == expected
    with pytest.raises(IndexError):
        xb.program_cell(3, 0, pulse)


def test_trivial_partition():
    xb = random_array(5, 4, 2)
    plan = PartitionPlan((((0, 5), (0, 4)),))
    v = np.linspace(0, 0.5, 5)
    assert np.array_equal(tiled_forward(xb.partition(plan), v, 4), xb.vmm_forward(v))


@pytest.mark.parametrize("tiles, rows_per", [(16, 49), (8, 98), (4, 196)])
def test_mnist_row_partitions(tiles, rows_per):
    xb = random_array(784, 42, 7)
    plan = PartitionPlan.row_split(784, 42, tiles)
    assert all(r1 - r0 == rows_per for (r0, r1), _ in plan.blocks)
    parts = xb.partition(plan)
    rng = np.random.default_rng(8)
    v, d = rng.uniform(0, 0.5, 784), rng.uniform(-0.5, 0.5, 42)
    assert np.max(np.abs(tiled_forward(parts, v, 42) - xb.vmm_forward(v))) < 1e-12
    assert np.max(np.abs(tiled_backward(parts, d, 784) - xb.vmm_backward(d))) < 1e-12


def test_grid_partition_with_column_groups():
    xb = random_array(6, 6, 4)
    plan = PartitionPlan(tuple(((r, r + 3), (c, c + 2)) for r in (0, 3) for c in (0, 2, 4)))
    v = np.random.default_rng(4).uniform(0, 0.5, 6)
    assert np.max(np.abs(tiled_forward(xb.partition(plan), v, 6) - xb.vmm_forward(v))) < 1e-12


def test_tiles_are_views():
    xb = random_array(8, 3, 5)
    tiles = xb.partition(PartitionPlan.row_split(8, 3, 2))
    tiles[1].x[0, 0] = 0.0
    tiles[1].program_cell(0, 1, ProgramPulse(-3.0, 3.0))
    tiles[1].set_sign(0, 2, -1)
    assert xb.x[4, 0] == 0.0
    assert xb.x[4, 1] == pytest.approx(1.0, abs=1e-9)
    assert xb.signs[4, 2] == -1


@pytest.mark.parametrize("blocks", [
    (((0, 3), (0, 2)), ((2, 4), (0, 2))),   # overlap
    (((0, 3), (0, 2)),),                    # gap
    (((0, 5), (0, 2)),),                    # out of range
])
def test_invalid_plans(blocks):
    with pytest.raises(ValueError):
        CrossbarArray(4, 2).partition(PartitionPlan(blocks))


def test_wire_resistance_degrades_with_size():
    rng = np.random.default_rng(0)
    big = CrossbarArray(64, 8, P, wire_res=2.0)
    big.x[...] = rng.random((64, 8))
    v = rng.uniform(0, 0.5, 64)
    deficits = []
    for n in (4, 8, 16, 32, 64):
        ideal = CrossbarArray(n, 8, P, x=big.x[:n].copy())
        wired = CrossbarArray(n, 8, P, wire_res=2.0, x=big.x[:n].copy())
        i_ideal, i_wired = ideal.vmm_forward(v[:n]), wired.vmm_forward(v[:n])
        assert np.all(np.abs(i_wired) <= np.abs(i_ideal) + 1e-18)
        deficits.append(np.sum(i_ideal - i_wired) / np.sum(i_ideal))
    assert all(a < b for a, b in zip(deficits, deficits[1:]))


def test_wire_resistance_limit_is_ideal():
    xb = random_array(5, 4, 9)
    wired = CrossbarArray(5, 4, P, wire_res=1e-9, x=xb.x, signs=xb.signs)
    v = np.linspace(0.1, 0.5, 5)
    assert np.allclose(wired.vmm_forward(v), xb.vmm_forward(v), rtol=1e-6)
    d = np.linspace(-0.5, 0.5, 4)
    assert np.allclose(wired.vmm_backward(d), xb.vmm_backward(d), rtol=1e-6, atol=1e-15)


def test_ladder_two_cells_by_hand():
    # one column, two cells at 1 V with conductance g, segments of conductance gw:
    # solve the node equations with a dense solver as the reference
    xb = CrossbarArray(2, 1, P, wire_res=100.0)
    xb.x[...] = 1.0
    g, gw = P.g_on, 1 / 100.0
    a = np.array([[g + gw, -gw], [-gw, g + 2 * gw]])
    nodes = np.linalg.solve(a, np.array([g * 1.0, g * 1.0]))
    assert xb.vmm_forward(np.array([1.0, 1.0]))[0] == pytest.approx(gw * nodes[1], rel=1e-12)


def test_csv_round_trip(tmp_path):
    xb = random_array(3, 4, 11)
    xb.export_csv(tmp_path / "x.csv", tmp_path / "s.csv")
    back = CrossbarArray.import_csv(tmp_path / "x.csv", tmp_path / "s.csv")
    assert np.array_equal(back.x, xb.x)
    assert np.array_equal(back.signs, xb.signs)
    (tmp_path / "bad.csv").write_text("0.5,1.5\n")
    (tmp_path / "bs.csv").write_text("1,1\n")
    with pytest.raises(ValueError):
        CrossbarArray.import_csv(tmp_path / "bad.csv", tmp_path / "bs.csv")
