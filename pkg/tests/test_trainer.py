import numpy as np
import pytest

from memxbar.data import Dataset, xor_dataset
from memxbar.device import DeviceParams
from memxbar.experiment import evaluate
from memxbar.network import MemristiveNetwork, NetworkConfig
from memxbar.nonideal import NoiseSpec
from memxbar.trainer import (BnnState, PulseMap, TrainSpec, apply_update, backward, bnn_step,
                             flush_binary, loss, train)
from oracles import float_forward, float_sgd, half_sse

XOR_NET = dict(weight_clip=20.0, gains=[1.0, 1.0])


def test_loss_examples():
    assert loss([0.2, 0.7], [0.2, 0.7]) == 0.0
    assert loss([1.0], [0.0]) == 0.5
    rng = np.random.default_rng(0)
    for _ in range(20):
        t, y = rng.normal(size=10), rng.normal(size=10)
        assert abs(loss(t, y) - half_sse(t, y)) < 1e-12
    with pytest.raises(ValueError):
        loss([1.0, 2.0], [1.0])


def test_zero_error_zero_gradient():
    net = MemristiveNetwork(NetworkConfig([3, 4, 2]), seed=0)
    out, tape = net.forward(np.array([0.1, 0.2, 0.3]))
    assert all(np.all(g == 0) for g in backward(net, tape, out.copy()))


def test_single_linear_gap_closed_form():
    net = MemristiveNetwork(NetworkConfig([3, 2], activations=["identity"], gains=[1.0]), seed=0)
    x, t = np.array([0.2, 0.5, 1.0]), np.array([0.3, -0.1])
    y, tape = net.forward(x)
    (g,) = backward(net, tape, t)
    assert np.allclose(g, -np.outer(x, t - y), atol=1e-14)


def test_stale_tape_rejected():
    a = MemristiveNetwork(NetworkConfig([3, 4, 1]), seed=0)
    b = MemristiveNetwork(NetworkConfig([3, 4, 2]), seed=0)
    _, tape = a.forward(np.ones(3))
    with pytest.raises(ValueError):
        backward(b, tape, np.zeros(2))


def _random_net(rng):
    depth = rng.integers(1, 4)
    sizes = [int(n) for n in rng.integers(1, 6, size=depth + 1)]
    acts = [str(rng.choice(["sigmoid", "tanh"])) for _ in range(depth)]
    clip = float(rng.choice([1.0, 2.0, 5.0]))
    gains = list(rng.uniform(0.3, 2.0, size=depth))
    cfg = NetworkConfig(sizes, activations=acts, weight_clip=clip, gains=gains)
    net = MemristiveNetwork(cfg, rng=rng)
    for k in range(depth):
        net.set_weights(k, rng.uniform(-0.8 * clip, 0.8 * clip, net.crossbars[k].shape))
    return net, rng.random(sizes[0]), rng.random(sizes[-1])


def test_gradient_vs_finite_differences_100_nets():
    rng = np.random.default_rng(1234)
    h = 1e-5
    worst = 0.0
    for _ in range(120):
        net, x, t = _random_net(rng)
        _, tape = net.forward(x)
        grads = backward(net, tape, t)
        base = [net.weights(k) for k in range(net.gaps)]
        acts = [a.tag for a in net.config.activations]
        for k in range(net.gaps):
            fd = np.zeros_like(base[k])
            for idx in np.ndindex(base[k].shape):
                plus = [w.copy() for w in base]
                minus = [w.copy() for w in base]
                plus[k][idx] += h
                minus[k][idx] -= h
                ep = half_sse(t, float_forward(plus, net.config.gains, acts, x))
                em = half_sse(t, float_forward(minus, net.config.gains, acts, x))
                fd[idx] = (ep - em) / (2 * h)
            # entries below 1e-6 sit at the difference quotient's rounding floor
            err = np.abs(grads[k] - fd) / np.maximum(np.abs(fd), 1e-6)
            worst = max(worst, float(np.max(err)))
    assert worst < 1e-4


def test_gradient_through_devices_finite_differences():
    # perturbing the stored weights and re-reading the crossbars
    net = MemristiveNetwork(NetworkConfig([2, 4, 1], gains=[1, 1], weight_clip=2.0), seed=5)
    x, t = np.array([0.3, 0.9]), np.array([1.0])
    _, tape = net.forward(x)
    grads = backward(net, tape, t)
    h = 1e-5
    for k in range(2):
        w0 = net.analog_weights(k)
        for idx in np.ndindex(w0.shape):
            errs = []
            for d in (h, -h):
                w = w0.copy()
                w[idx] += d
                net.set_weights(k, w)
                errs.append(loss(t, net.predict(x)))
            net.set_weights(k, w0)
            fd = (errs[0] - errs[1]) / (2 * h)
            assert grads[k][idx] == pytest.approx(fd, rel=1e-4, abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_descent_small_eta(seed):
    rng = np.random.default_rng(seed)
    net, x, t = _random_net(rng)
    out, tape = net.forward(x)
    before = loss(t, out)
    apply_update(net, backward(net, tape, t), TrainSpec(eta=1e-3, iterations=1))
    assert loss(t, net.predict(x)) <= before + 1e-15


def test_zero_gradient_leaves_net_unchanged():
    net = MemristiveNetwork(NetworkConfig([3, 2]), seed=0)
    x0, s0 = net.crossbars[0].x.copy(), net.crossbars[0].signs.copy()
    apply_update(net, [np.zeros((3, 2))], TrainSpec(eta=0.5, iterations=1))
    assert np.array_equal(net.crossbars[0].x, x0) and np.array_equal(net.crossbars[0].signs, s0)


def test_single_cell_arithmetic():
    net = MemristiveNetwork(NetworkConfig([1, 1]), seed=0)
    net.set_weights(0, np.array([[0.2]]))
    apply_update(net, [np.array([[-1.0]])], TrainSpec(eta=0.3, iterations=1))
    assert net.weights(0)[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_update_crosses_zero_and_flips_sign():
    net = MemristiveNetwork(NetworkConfig([1, 1]), seed=0)
    net.set_weights(0, np.array([[0.1]]))
    apply_update(net, [np.array([[1.0]])], TrainSpec(eta=0.4, iterations=1))
    assert net.crossbars[0].signs[0, 0] == -1
    assert net.weights(0)[0, 0] == pytest.approx(-0.3, abs=1e-12)


def test_update_locality():
    net = MemristiveNetwork(NetworkConfig([4, 3, 2]), seed=1)
    x = np.array([0.0, 0.7, 0.0, 0.4])
    _, tape = net.forward(x)
    grads = backward(net, tape, np.array([1.0, 0.0]))
    before = [xb.x.copy() for xb in net.crossbars]
    apply_update(net, grads, TrainSpec(eta=0.5, iterations=1))
    for k in range(2):
        untouched = grads[k] == 0
        assert np.array_equal(net.crossbars[k].x[untouched], before[k][untouched])
    assert np.array_equal(net.crossbars[0].x[[0, 2]], before[0][[0, 2]])


@pytest.mark.parametrize("update_model", ["ideal_write", "pulse_write"])
def test_clipping(update_model):
    net = MemristiveNetwork(NetworkConfig([3, 3], weight_clip=2.0), seed=2)
    g = np.array([[50.0, -50.0, 0.1]] * 3)
    apply_update(net, [g], TrainSpec(eta=1.0, iterations=1, update_model=update_model))
    assert np.all(np.abs(net.weights(0)) <= 2.0 + 1e-12)


def test_pulse_write_tracks_small_requests():
    rng = np.random.default_rng(0)
    net = MemristiveNetwork(NetworkConfig([1, 1]), seed=0)
    spec = TrainSpec(eta=1.0, iterations=1, update_model="pulse_write")
    worst = 0.0
    for _ in range(100):
        w0 = rng.uniform(0.1, 0.9) * rng.choice([-1, 1])
        dw = rng.uniform(-0.05, 0.05)
        if abs(dw) < 1e-4:
            continue
        net.set_weights(0, np.array([[w0]]))
        apply_update(net, [np.array([[-dw]])], spec, PulseMap())
        worst = max(worst, abs((net.weights(0)[0, 0] - w0) - dw) / abs(dw))
    assert worst < 0.05


def test_pulse_map_rejects_subthreshold():
    net = MemristiveNetwork(NetworkConfig([1, 1]), seed=0)
    with pytest.raises(ValueError):
        apply_update(net, [np.array([[1.0]])], TrainSpec(eta=0.1, iterations=1, update_model="pulse_write"),
                     PulseMap(amp_pos=0.8))


def test_single_sample_convergence_matches_float_reference():
    x, t = np.array([[0.2, 0.9]]), np.array([[0.8]])
    data = Dataset(x, t, [0], [0])
    cfg = NetworkConfig([2, 3, 1], gains=[1.0, 1.0], weight_clip=4.0)
    net = MemristiveNetwork(cfg, seed=3)
    w0 = [net.weights(k) for k in range(2)]
    res = train(net, data, TrainSpec(eta=0.5, iterations=400, record_every=1, seed=0), fused=False)
    errs = [e for _, e in res.trace]
    assert errs[-1] < 1e-3
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    ref_w, ref_e = float_sgd(w0, [1.0, 1.0], ["sigmoid"] * 2, x[0], t[0], 0.5, 400, 4.0)
    assert np.max(np.abs(np.array(errs) - np.array(ref_e))) < 1e-9
    for k in range(2):
        assert np.max(np.abs(net.weights(k) - ref_w[k])) < 1e-9


def test_determinism_bit_identical():
    data = xor_dataset()
    traces = []
    for _ in range(2):
        net = MemristiveNetwork(NetworkConfig([2, 4, 1], **XOR_NET), seed=7)
        traces.append(train(net, data, TrainSpec(eta=0.3, iterations=5000, seed=7),
                            noise=NoiseSpec(offset_frac=1.0, mismatch_frac=0.02)).trace)
    assert traces[0] == traces[1]


def _agree(cfg, data, spec, noise=None, seed=0):
    a = MemristiveNetwork(cfg, seed=seed)
    b = MemristiveNetwork(cfg, seed=seed)
    ra = train(a, data, spec, noise=noise, fused=False)
    rb = train(b, data, spec, noise=noise, fused=True)
    ea, eb = np.array([e for _, e in ra.trace]), np.array([e for _, e in rb.trace])
    assert [i for i, _ in ra.trace] == [i for i, _ in rb.trace]
    assert np.max(np.abs(ea - eb)) < 1e-10
    for k in range(a.gaps):
        assert np.max(np.abs(a.weights(k) - b.weights(k))) < 1e-10


@pytest.mark.parametrize("noise", [None, NoiseSpec(offset_frac=2.0),
                                   NoiseSpec(mismatch_frac=0.03),
                                   NoiseSpec(mismatch_frac=0.03, mismatch_mode="per_device",
                                             distribution="gaussian")])
def test_compiled_loop_matches_generic(noise):
    _agree(NetworkConfig([2, 4, 1], **XOR_NET), xor_dataset(), TrainSpec(eta=0.3, iterations=3000, seed=1), noise)


def test_compiled_loop_matches_generic_quantized_partitioned():
    rng = np.random.default_rng(0)
    x = rng.random((30, 12))
    y = np.eye(3)[rng.integers(0, 3, 30)]
    data = Dataset(x, y, np.arange(20), np.arange(20, 30))
    cfg = NetworkConfig([12, 6, 3], activations=["tanh", "sigmoid"], gains=[0.5, 1.0],
                        partition=[3, None], device=DeviceParams(levels=16), quantize="hard",
                        rounding="stochastic")
    _agree(cfg, data, TrainSpec(eta=0.2, iterations=600, seed=4, order="epoch"))


def test_compiled_loop_matches_generic_bnn():
    cfg = NetworkConfig([3, 4, 1], mode="bnn", weight_clip=2.0, gains=[1.0, 1.0])
    _agree(cfg, xor_dataset().with_bias(), TrainSpec(eta=0.3, iterations=5000, seed=2), seed=2)


def test_compiled_loop_refuses_pulse_write():
    net = MemristiveNetwork(NetworkConfig([2, 1]), seed=0)
    with pytest.raises(ValueError):
        train(net, xor_dataset(), TrainSpec(iterations=10, update_model="pulse_write"), fused=True)


def test_early_stop():
    data = xor_dataset()
    net = MemristiveNetwork(NetworkConfig([2, 4, 1], **XOR_NET), seed=0)
    res = train(net, data, TrainSpec(eta=0.5, iterations=100_000, seed=0),
                until=lambda it, n: evaluate(n, data) == 100.0)
    assert res.stopped_at is not None and res.stopped_at % 100 == 0
    assert res.trace[-1][0] == res.stopped_at


def test_xor_eta05_reaches_full_accuracy():
    data = xor_dataset()
    net = MemristiveNetwork(NetworkConfig([2, 4, 1], **XOR_NET), seed=0)
    train(net, data, TrainSpec(eta=0.5, iterations=100_000, seed=0))
    assert evaluate(net, data, thresholded=True) == 100.0


def test_empty_training_set():
    data = Dataset(np.zeros((2, 2)), np.zeros((2, 1)), [], [0, 1])
    with pytest.raises(ValueError):
        train(MemristiveNetwork(NetworkConfig([2, 1]), seed=0), data, TrainSpec(iterations=5))


# -- binary mode -------------------------------------------------------------

def _bnn_net():
    net = MemristiveNetwork(NetworkConfig([2, 2], mode="bnn", weight_clip=1.0), seed=0)
    net.crossbars[0].x[...] = np.array([[0.0, 1.0], [1.0, 0.0]])
    net.crossbars[0].signs[...] = np.array([[1, 1], [-1, 1]], dtype=np.int8)
    return net


def test_bnn_window_not_reached():
    net = _bnn_net()
    state = BnnState(net)
    spec = TrainSpec(eta=1.0, iterations=1, bnn_accumulate_window=5)
    before = net.crossbars[0].x.copy()
    for _ in range(4):
        bnn_step(net, [np.full((2, 2), -10.0)], spec, state)
    assert np.array_equal(net.crossbars[0].x, before)
    assert np.allclose(state.shadow[0], 40.0)


def test_bnn_flush_rules():
    net = _bnn_net()
    state = BnnState(net)
    state.shadow[0][...] = np.array([[0.6, -0.7], [-0.4, 0.3]])
    flush_binary(net, state)
    xb = net.crossbars[0]
    # OFF cell with +0.6 turns ON positive; ON +1 cell pushed negative turns OFF;
    # sub-threshold shadow leaves its cell alone
    assert xb.x[0, 0] == 1.0 and xb.signs[0, 0] == 1
    assert xb.x[0, 1] == 0.0
    assert xb.x[1, 0] == 1.0 and xb.signs[1, 0] == -1
    assert xb.x[1, 1] == 0.0
    assert np.all(state.shadow[0] == 0)


def test_bnn_off_cell_flips_negative():
    net = _bnn_net()
    state = BnnState(net)
    state.shadow[0][1, 1] = -0.9
    flush_binary(net, state)
    assert net.crossbars[0].x[1, 1] == 1.0 and net.crossbars[0].signs[1, 1] == -1


def test_bnn_two_cycles_order():
    # cycle 1 must finish every ON->OFF move before any OFF->ON move starts
    net = _bnn_net()
    state = BnnState(net)
    state.shadow[0][...] = np.array([[0.9, -0.9], [0.9, 0.0]])
    seen = []

    class Spy(np.ndarray):
        def __setitem__(self, key, value):
            seen.append((int(np.count_nonzero(key)), float(value)))
            super().__setitem__(key, value)

    net.crossbars[0].x = net.crossbars[0].x.view(Spy)
    flush_binary(net, state)
    assert seen == [(2, 0.0), (1, 1.0)]


def test_bnn_step_requires_bnn_mode():
    net = MemristiveNetwork(NetworkConfig([2, 2]), seed=0)
    with pytest.raises(ValueError):
        bnn_step(net, [np.zeros((2, 2))], TrainSpec(iterations=1), BnnState(net))


def test_bnn_xor_converges_on_most_seeds():
    data = xor_dataset().with_bias()
    solved = 0
    for seed in range(10):
        net = MemristiveNetwork(NetworkConfig([3, 4, 1], mode="bnn", weight_clip=2.0,
                                              gains=[1.0, 1.0]), seed=seed)
        res = train(net, data, TrainSpec(eta=0.2, iterations=200_000, seed=seed,
                                         bnn_accumulate_window=100),
                    until=lambda it, n: evaluate(n, data) == 100.0)
        solved += res.stopped_at is not None
    assert solved >= 8, f"binary XOR solved on {solved}/10 seeds"
