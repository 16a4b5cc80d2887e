import json

import numpy as np
import pytest

from ratenorm.conversion import (
    ConversionReport,
    block_activations,
    convert_direct,
    convert_max_norm,
    convert_robust_norm,
    nearest_rank,
    relu_equivalent,
    scale_thresholds,
    split_blocks,
)
from ratenorm.core import LayerSpec, Network
from ratenorm.diagnostics import omega
from ratenorm.errors import ConversionError, DegenerateThresholdError
from ratenorm.snn import run


def relu_net(sizes, seed=0, final_activation=True):
    specs = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        specs.append(LayerSpec("affine", in_features=a, out_features=b))
        if final_activation or i < len(sizes) - 2:
            specs.append(LayerSpec("relu"))
    return Network(specs, seed=seed)


def rnl_net(sizes, seed=0):
    specs = []
    for a, b in zip(sizes, sizes[1:]):
        specs += [LayerSpec("affine", in_features=a, out_features=b), LayerSpec("rate-norm")]
    net = Network(specs, seed=seed)
    net.eval()
    return net


def set_affine(net, index, W, b):
    layer = [lay for lay in net.layers if lay.spec.kind == "affine"][index]
    layer.W.data = np.asarray(W, dtype=np.float64)
    layer.b.data = np.asarray(b, dtype=np.float64)


def test_direct_single_neuron_simulation():
    net = rnl_net([1, 1])
    set_affine(net, 0, [[1.0]], [0.0])
    state = net.rate_norm_states()[0]
    state.running_max = 1.0
    state.set_p(0.5)
    assert net.rates(np.array([[0.25]]))[0][0, 0] == pytest.approx(0.5)
    snn, report = convert_direct(net, readout="spikes")
    assert report.v_th == [pytest.approx(0.5)]
    trace = run(snn, np.array([[0.25]]), 2000)
    assert abs(trace.final_counts[0][0, 0] / 2000 - 0.5) <= 1 / 2000


def test_direct_copies_weights_and_thresholds(rng):
    net = rnl_net([4, 5, 3], seed=1)
    for s, m in zip(net.rate_norm_states(), (2.0, 3.5)):
        s.running_max = m
    snn, report = convert_direct(net)
    assert report.v_th == net.thresholds()
    for layer, blk in zip(snn.layers, split_blocks(net)):
        np.testing.assert_array_equal(layer.W, blk.weighted.W.data)
        np.testing.assert_array_equal(layer.b, blk.weighted.b.data)


def test_direct_trailing_linear_readout():
    specs = [LayerSpec("affine", in_features=3, out_features=4), LayerSpec("rate-norm"),
             LayerSpec("affine", in_features=4, out_features=2)]
    snn, report = convert_direct(Network(specs))
    assert [layer.spiking for layer in snn.layers] == [True, False]


def test_direct_rejects_relu_and_degenerate():
    with pytest.raises(ConversionError):
        convert_direct(relu_net([3, 2]))
    net = rnl_net([2, 2])
    net.rate_norm_states()[0].running_max = 0.0
    with pytest.raises(DegenerateThresholdError):
        convert_direct(net)


def test_max_norm_scalar_substitution():
    net = relu_net([1, 1])
    set_affine(net, 0, [[2.0]], [0.0])
    snn, report = convert_max_norm(net, np.array([[1.0], [0.5]]))
    assert report.scale_factors == [2.0]
    assert snn.layers[0].W.tolist() == [[1.0]] and snn.layers[0].b.tolist() == [0.0]
    assert snn.layers[0].v_th == 1.0


def test_max_norm_already_normalized_is_identity():
    net = relu_net([2, 2])
    W = np.array([[0.5, 0.5], [1.0, 0.0]])
    set_affine(net, 0, W, [0.0, 0.0])
    snn, report = convert_max_norm(net, np.array([[1.0, 1.0], [0.0, 0.0]]))
    assert report.scale_factors == [1.0]
    np.testing.assert_array_equal(snn.layers[0].W, W)


def check_scaling_identities(ann, snn, report, input_max=1.0):
    prev = input_max
    for blk, layer, factor in zip(split_blocks(ann), snn.layers, report.scale_factors):
        W, b = blk.weighted.W.data, blk.weighted.b.data
        np.testing.assert_array_equal(layer.W / layer.v_th, W * (prev / factor))
        np.testing.assert_array_equal(layer.b / layer.v_th, b * (1.0 / factor))
        np.testing.assert_allclose(layer.W / layer.v_th, W * prev / factor, rtol=4e-16, atol=0)
        prev = factor


def test_scaling_identities_random_nets(rng):
    for seed in range(20):
        ann = relu_net([6, 8, 7, 4], seed=seed)
        calib = rng.uniform(size=(30, 6))
        snn, report = convert_max_norm(ann, calib)
        check_scaling_identities(ann, snn, report)
        assert report.scale_factors == [float(a.max()) for a in block_activations(ann, calib)]


def test_max_norm_matches_ann(rng):
    ann = relu_net([5, 6, 3], seed=4)
    calib = rng.uniform(size=(40, 5))
    snn, report = convert_max_norm(ann, calib, readout="spikes")
    x = calib[:6]
    trace = run(snn, x, 4000)
    with ann.evaluating():
        ann(x)
    for layer, (act, factor) in enumerate(zip(ann.activations, report.scale_factors)):
        np.testing.assert_allclose(trace.final_counts[layer] / 4000, act.data / factor, atol=0.02)


def test_max_norm_dead_layer():
    net = relu_net([2, 2])
    set_affine(net, 0, -np.ones((2, 2)), [0.0, 0.0])
    with pytest.raises(ConversionError, match="layer 1"):
        convert_max_norm(net, np.ones((3, 2)))


def test_max_norm_empty_calibration():
    with pytest.raises(ConversionError):
        convert_max_norm(relu_net([2, 2]), np.zeros((0, 2)))


def test_nearest_rank():
    values = np.arange(1, 11) / 10
    assert nearest_rank(values, 90) == 0.9
    assert nearest_rank(values, 100) == 1.0
    assert nearest_rank(values, 1) == 0.1
    assert nearest_rank(values, 91) == 1.0


def test_robust_100_equals_max_norm(rng):
    ann = relu_net([4, 5, 3], seed=2)
    calib = rng.uniform(size=(20, 4))
    a, ra = convert_max_norm(ann, calib)
    b, rb = convert_robust_norm(ann, calib, percentile=100)
    assert ra.scale_factors == rb.scale_factors
    for la, lb in zip(a.layers, b.layers):
        np.testing.assert_array_equal(la.W, lb.W)


def test_robust_zero_percentile_value():
    net = relu_net([2, 2])
    set_affine(net, 0, [[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0])
    calib = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ConversionError):
        convert_robust_norm(net, calib, percentile=50)


def test_robust_lower_percentile_omega_not_larger(rng):
    # empirical check on random ReLU activations, not a general guarantee
    ann = relu_net([10, 16], seed=6)
    calib = rng.uniform(size=(200, 10))
    acts = block_activations(ann, calib)[0]
    omegas = []
    for pct in (100, 99.9, 99, 95, 90):
        factor = nearest_rank(acts, pct)
        omegas.append(omega(np.clip(acts / factor, 0, 1)))
    assert all(b <= a + 1e-12 for a, b in zip(omegas, omegas[1:]))


def test_direct_p1_equals_max_norm_rates(rng):
    net = rnl_net([5, 7, 4], seed=3)
    calib = rng.uniform(size=(50, 5))
    # recompute running maxima over the calibration set, layer by layer
    for i, state in enumerate(net.rate_norm_states()):
        with net.evaluating():
            net(calib)
        state.running_max = float(net.preacts[i].data.max())
    direct, _ = convert_direct(net, readout="spikes")
    ann = relu_equivalent(net)
    mn, _ = convert_max_norm(ann, calib, readout="spikes")
    x = calib[:8]
    for T in (1, 7, 50, 300):
        a, b = run(direct, x, T), run(mn, x, T)
        for ca, cb in zip(a.final_counts, b.final_counts):
            assert np.max(np.abs(ca - cb)) / T <= 1 / T


def test_relu_equivalent_reproduces_scaled_activations(rng):
    net = rnl_net([4, 6, 3], seed=5)
    for s, m in zip(net.rate_norm_states(), (5.0, 7.0)):
        s.running_max = m
    x = rng.uniform(size=(5, 4)) * 0.1
    rates = net.rates(x)
    relu = relu_equivalent(net)
    with relu.evaluating():
        relu(x)
    for r, act, theta in zip(rates, relu.activations, net.thresholds()):
        inside = r < 1
        np.testing.assert_allclose(act.data[inside], (r * theta)[inside], rtol=1e-12, atol=1e-12)


def test_scale_thresholds():
    ann = relu_net([2, 3, 2], seed=0)
    snn, _ = convert_max_norm(ann, np.random.default_rng(0).uniform(size=(10, 2)))
    assert scale_thresholds(snn, 1.0).thresholds == snn.thresholds
    twice = scale_thresholds(scale_thresholds(snn, 0.5), 0.5)
    once = scale_thresholds(snn, 0.25)
    assert twice.thresholds == once.thresholds
    np.testing.assert_array_equal(once.layers[0].W, snn.layers[0].W)
    assert snn.thresholds == [1.0, 1.0]
    with pytest.raises(ValueError):
        scale_thresholds(snn, 0.0)


def test_topology_preserved(rng):
    ann = relu_net([4, 5, 3], seed=1)
    calib = rng.uniform(size=(10, 4))
    for snn, _ in (convert_max_norm(ann, calib), convert_robust_norm(ann, calib)):
        assert len(snn.layers) == 2
        assert [layer.W.shape for layer in snn.layers] == [(5, 4), (3, 5)]


def test_report_json(tmp_path):
    report = ConversionReport("max_norm", [1.0], [2.5], 10)
    report.save(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["scale_factors"] == [2.5]
