from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from cenn_forge import oracle
from cenn_forge.netspec import load_network, random_weights, synthetic_dataset
from cenn_forge.nonideal import OtaCurve, QuantSpec, default_curve, identity_curve
from cenn_forge.scheduler import (
    CompileError,
    HardwareConfig,
    MemoryOverflowError,
    TraceError,
    compile_network,
    execute,
    load_hw_config,
    predict,
)
from conftest import small_net

GOLDEN = Path(__file__).parent / "golden"


def _images(net, n, seed=5):
    return synthetic_dataset(net, n, np.random.default_rng(seed)).images


def test_hw_config_presets_and_validation(tmp_path):
    hw = load_hw_config("paper-mnist")
    assert hw == HardwareConfig()
    assert load_hw_config("paper-cifar").array_shape == (32, 32)
    with pytest.raises(ValueError):
        HardwareConfig(n_arrays=0)
    with pytest.raises(ValueError):
        HardwareConfig(array_shape=(0, 4))
    bad = tmp_path / "hw.json"
    bad.write_text('{"n_arrays": 2, "colour": "red"}')
    with pytest.raises(ValueError, match="colour"):
        load_hw_config(bad)
    with pytest.raises(FileNotFoundError):
        load_hw_config("nowhere")


def test_design2_trace_matches_golden():
    prog = compile_network(load_network("mnist_design2"), HardwareConfig())
    assert prog.to_text() == (GOLDEN / "mnist_design2_n4.trace").read_text()


def test_compile_alias():
    from cenn_forge import scheduler

    net = load_network("mnist_design1")
    assert scheduler.compile(net, HardwareConfig()).to_text() == compile_network(net, HardwareConfig()).to_text()


def test_cycles_are_monotone():
    for name in ("mnist_design1", "mnist_design2"):
        for n in (1, 3, 4, 8):
            prog = compile_network(load_network(name), HardwareConfig(n_arrays=n))
            cycles = [e.cycle for e in prog.events]
            assert cycles == sorted(cycles)


def test_conv_counts_design1():
    net = load_network("mnist_design1")
    prog = compile_network(net, HardwareConfig())
    c1, c2 = prog.counts("conv1"), prog.counts("conv2")
    assert c1["template"] == 4 and c1["accumulate"] + c1["mem_accumulate"] == 0
    assert c2["template"] == 16 and c2["accumulate"] + c2["mem_accumulate"] == 12
    assert prog.layer_cycles("conv1") == 1
    # one output map per pass of four arrays, accumulate in the following cycle
    assert prog.layer_cycles("conv2") == 8
    assert prog.layer_cycles("relu1") == 2
    assert prog.layer_cycles("pool1") == 16


def test_shared_templates_read_once_per_layer():
    prog = compile_network(load_network("mnist_design1"), HardwareConfig(n_arrays=2))
    for layer in ("relu1", "pool1"):
        evs = prog.layer_events(layer)
        reads = [e.template for e in evs if e.op == "sram_read"]
        applied = {e.template for e in evs if e.op == "template"}
        assert sorted(reads) == sorted(applied)


def test_final_center_readout_overlaps_accumulates():
    prog = compile_network(load_network("mnist_design2"), HardwareConfig())
    acc = [e for e in prog.layer_events("conv4") if e.op == "accumulate"]
    assert acc and all(e.overlapped and e.cells == 1 for e in acc)
    assert prog.layer_cycles("conv4") == 10
    assert prog.final["kind"] == "center"


def test_memory_overflow_names_requirement():
    with pytest.raises(MemoryOverflowError) as err:
        compile_network(load_network("mnist_design1"), HardwareConfig(mem_slots_per_cell=3))
    assert err.value.available == 3
    assert err.value.required > 3
    prog = compile_network(load_network("mnist_design1"), HardwareConfig())
    assert prog.peak_slots <= 16


def test_tiling_multiplies_events_or_refuses():
    net = load_network("mnist_design1")
    prog = compile_network(net, HardwareConfig(array_shape=(14, 14)))
    assert {e.tiles for e in prog.events if e.op == "template"} == {4}
    with pytest.raises(CompileError):
        compile_network(net, HardwareConfig(array_shape=(14, 14), allow_tiling=False))


@pytest.mark.parametrize("name", ["mnist_design1", "mnist_design2"])
def test_execute_matches_dense_oracle(name, rng):
    net = random_weights(load_network(name), rng)
    ims = _images(net, 6)
    res = predict(net, HardwareConfig(), ims)
    ref = oracle.forward(net, ims)
    assert np.max(np.abs(res.scores - ref)) <= 1e-12
    np.testing.assert_array_equal(res.predictions, np.argmax(ref, axis=1))


def test_mean_readout_matches_oracle(tiny_mean_net):
    ims = _images(tiny_mean_net, 4)
    hw = HardwareConfig(array_shape=(8, 8))
    res = predict(tiny_mean_net, hw, ims)
    assert res.scores.shape == (4, 3)
    assert np.max(np.abs(res.scores - oracle.forward(tiny_mean_net, ims))) <= 1e-12
    prog = compile_network(tiny_mean_net, hw)
    assert prog.counts("readout")["digital_mean"] == 1


@pytest.mark.parametrize("n_arrays", [1, 2, 3, 8])
def test_results_independent_of_array_count(design2, n_arrays):
    ims = _images(design2, 3)
    base = predict(design2, HardwareConfig(), ims).scores
    other = predict(design2, HardwareConfig(n_arrays=n_arrays), ims).scores
    np.testing.assert_array_equal(base, other)


def test_wide_input_groups_match_oracle(rng):
    net = random_weights(small_net([
        {"name": "c1", "kind": "conv", "out_maps": 6},
        {"name": "c2", "kind": "conv", "out_maps": 3, "readout": "center"},
    ], maps=2), rng)
    ims = _images(net, 3)
    for n in (2, 4):
        res = predict(net, HardwareConfig(n_arrays=n, array_shape=(8, 8)), ims)
        assert np.max(np.abs(res.scores - oracle.forward(net, ims))) <= 1e-12


def test_compiled_program_rebinds_weights(rng):
    base = load_network("mnist_design1")
    prog = compile_network(base, HardwareConfig())
    a, b = random_weights(base, rng), random_weights(base, rng)
    ims = _images(base, 2)
    np.testing.assert_allclose(execute(prog, a, ims).scores, oracle.forward(a, ims), atol=1e-12)
    np.testing.assert_allclose(execute(prog, b, ims).scores, oracle.forward(b, ims), atol=1e-12)


def test_execute_rejects_mismatches(design1, design2):
    prog = compile_network(design1, HardwareConfig())
    with pytest.raises(TraceError):
        execute(prog, design2, np.zeros((1, 1, 28, 28)))
    with pytest.raises(TraceError):
        execute(prog, load_network("mnist_design1"), np.zeros((1, 1, 28, 28)))
    with pytest.raises(ValueError):
        execute(prog, design1, np.zeros((1, 1, 14, 14)))
    with pytest.raises(ValueError):
        execute(prog, design1, np.zeros((1, 1, 28, 28)), mode="analog")


def test_single_image_without_batch_axis(design1):
    ims = _images(design1, 1)
    prog = compile_network(design1, HardwareConfig())
    np.testing.assert_array_equal(execute(prog, design1, ims[0]).scores, execute(prog, design1, ims).scores)


def test_quantized_maps_stay_on_grid(design2):
    ims = _images(design2, 3)
    prog = compile_network(design2, HardwareConfig())
    q = QuantSpec(4)
    res = execute(prog, design2, ims, "quantized")
    np.testing.assert_array_equal(res.scores, np.rint(res.scores / q.step) * q.step)
    ideal = execute(prog, design2, ims)
    assert np.max(np.abs(res.scores - ideal.scores)) > 0
    hi = execute(prog, design2, ims, "quantized", bits=8)
    assert np.max(np.abs(hi.scores - ideal.scores)) < np.max(np.abs(res.scores - ideal.scores))


def test_quantized_fc_uses_integer_datapath(design1):
    ims = _images(design1, 2)
    res = predict(design1, HardwareConfig(), ims, mode="quantized")
    q = QuantSpec(4)
    assert res.scores.shape == (2, 10)
    np.testing.assert_allclose(res.scores / (q.step * q.step), np.rint(res.scores / (q.step * q.step)), atol=1e-9)
    assert res.stats.fc_saturations >= 0


def test_nonideal_straight_curve_is_ideal(design2):
    ims = _images(design2, 3)
    prog = compile_network(design2, HardwareConfig())
    ideal = execute(prog, design2, ims).scores
    straight = OtaCurve(np.linspace(-1, 1, 9), np.linspace(-1, 1, 9))
    np.testing.assert_array_equal(execute(prog, design2, ims, "nonideal", curve=straight).scores, ideal)
    np.testing.assert_array_equal(execute(prog, design2, ims, "nonideal", curve=identity_curve()).scores, ideal)
    bent = execute(prog, design2, ims, "nonideal", curve=default_curve()).scores
    assert not np.array_equal(bent, ideal)


def test_execution_stats(design1):
    res = predict(design1, HardwareConfig(), _images(design1, 2))
    assert res.stats.events["template"] == 132
    assert res.stats.settles == 132
    assert 0.0 <= res.stats.clip_rate <= 1.0


def test_nonlinear_variants_compile_and_run(design2):
    net = design2.with_pool_kind("nonlinear", "nonlinear")
    prog = compile_network(net, HardwareConfig())
    assert prog.layer_cycles("pool1") == 1 and prog.layer_cycles("relu1") == 1
    res = execute(prog, net, _images(net, 1))
    assert np.all(np.isfinite(res.scores))
    avg = design2.with_pool_kind("avg")
    ims = _images(avg, 2)
    np.testing.assert_allclose(predict(avg, HardwareConfig(), ims).scores, oracle.forward(avg, ims), atol=1e-12)


def test_cross_pool_neighbourhood_matches_oracle(design2):
    hw = replace(HardwareConfig(), pool_neighborhood="cross")
    ims = _images(design2, 2)
    res = predict(design2, hw, ims)
    np.testing.assert_allclose(res.scores, oracle.forward(design2, ims, "cross"), atol=1e-12)
    assert compile_network(design2, hw).layer_cycles("pool1") == 23
