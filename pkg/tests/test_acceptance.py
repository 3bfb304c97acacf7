"""Release acceptance suite: one PASS/FAIL line per criterion.

Tolerances and reference figures are pinned here rather than imported, so
the package cannot loosen its own bar. Run with ``pytest tests/test_acceptance.py -v``;
the verdict lines print even while pytest captures output.
"""

import time

import pytest

from cenn_forge import verify
from cenn_forge.cost import ModelDomainError, conv_delay_formula, load_cost_params, precision_scale, trace_cost
from cenn_forge.netspec import load_network
from cenn_forge.scheduler import HardwareConfig, compile_network

TOTAL_TOL = 0.03
ROW_TOL = 0.05
STEP_TOL = 0.01
SCALE_TOL = 0.10
CONV_TOL = 1e-6
SCORE_TOL = 1e-5
ODE_TOL = 1e-6
COST_RUNTIME_S = 1.0
E2E_RUNTIME_S = 120.0

# (delay ns, energy pJ) per design at 4 bits, and every per-layer row
TOTALS = {"mnist_design1": (531.6, 19841.0), "mnist_design2": (432.9, 9353.0)}
ROWS = {
    "mnist_design1": {
        "conv1": (5.3, 626), "relu1": (10.7, 536), "pool1": (85.5, 4290), "conv2": (42.8, 2827),
        "relu2": (10.7, 410), "pool2": (85.5, 3277), "fc": (291.1, 7875),
    },
    "mnist_design2": {
        "conv1": (5.3, 626), "relu1": (10.7, 536), "pool1": (85.5, 3398), "conv2": (42.8, 981),
        "relu2": (10.7, 186), "pool2": (85.5, 1489), "conv3": (42.8, 519), "relu3": (10.7, 115),
        "pool3": (85.5, 921), "conv4": (53.4, 582),
    },
}
RELU_NS, POOL_NS, STEP_NS = 10.7, 85.5, 5.34
DESIGN1_8BIT = (1442.0, 104900.0)
ANALYTIC_4X4_N4_NS = 50.8453  # (16/3 + 16/4) * 5.34 + 16/6 * (0.253 + 0.124)


def _rel(a, b):
    return abs(a - b) / abs(b)


@pytest.fixture
def verdict(capsys):
    def emit(criterion: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
        assert ok, detail

    return emit


def test_1_cost_reproduction(verdict):
    params = load_cost_params("paper-4bit-32nm")
    t0 = time.perf_counter()
    reports = {n: trace_cost(compile_network(load_network(n), HardwareConfig()), params) for n in TOTALS}
    runtime = time.perf_counter() - t0
    worst_total = max(max(_rel(r.delay_ns, TOTALS[n][0]), _rel(r.energy_pj, TOTALS[n][1]))
                      for n, r in reports.items())
    worst_row = max(max(_rel(reports[n].layer(l).delay_ns, d), _rel(reports[n].layer(l).energy_pj, e))
                    for n, rows in ROWS.items() for l, (d, e) in rows.items())
    d1, d2 = reports["mnist_design1"], reports["mnist_design2"]
    ok = worst_total <= TOTAL_TOL and worst_row <= ROW_TOL and runtime < COST_RUNTIME_S
    verdict("1 cost reproduction", ok,
            f"design1 {d1.delay_ns:.1f} ns / {d1.energy_pj:.0f} pJ, design2 {d2.delay_ns:.1f} ns / "
            f"{d2.energy_pj:.0f} pJ; worst total {worst_total:.2%} (tol {TOTAL_TOL:.0%}), worst row "
            f"{worst_row:.2%} (tol {ROW_TOL:.0%}), {runtime:.3f} s")


def test_2_per_step_calibration(verdict):
    params = load_cost_params("paper-4bit-32nm")
    rep = trace_cost(compile_network(load_network("mnist_design1"), HardwareConfig()), params)
    step = params.t_cenn_ns + params.t_prog_ns
    relu, pool = rep.layer("relu1").delay_ns, rep.layer("pool1").delay_ns
    errs = [_rel(relu, 2 * step), _rel(pool, 16 * step), _rel(relu, RELU_NS), _rel(pool, POOL_NS),
            _rel(step, STEP_NS)]
    verdict("2 per-step calibration", max(errs) <= STEP_TOL,
            f"step {step:.3f} ns, relu {relu:.2f} ns, linear max-pool {pool:.2f} ns; worst {max(errs):.2%} "
            f"(tol {STEP_TOL:.0%})")


def test_3_precision_scaling(verdict):
    t0 = time.perf_counter()
    p8 = precision_scale(load_cost_params("paper-4bit-32nm"))
    rep = trace_cost(compile_network(load_network("mnist_design1"), HardwareConfig(precision=8)), p8)
    runtime = time.perf_counter() - t0
    err = max(_rel(rep.delay_ns, DESIGN1_8BIT[0]), _rel(rep.energy_pj, DESIGN1_8BIT[1]))
    verdict("3 precision scaling", err <= SCALE_TOL and runtime < COST_RUNTIME_S,
            f"design1 8-bit {rep.delay_ns:.0f} ns / {rep.energy_pj / 1e3:.1f} nJ, worst {err:.2%} "
            f"(tol {SCALE_TOL:.0%}), {runtime:.3f} s")


def test_4a_relu_program(verdict):
    chk = verify.check_relu_exhaustive(2001)
    m = chk.metrics
    verdict("4a relu program", m["points"] == 2001 and m["mismatches"] == 0,
            f"{m['points']} grid values, {m['mismatches']} mismatches")


def test_4b_maxpool_program(verdict):
    chk = verify.check_maxpool(random_grids=10_000, exhaustive=True)
    m = chk.metrics
    ok = (m["random"] >= 10_000 and m["exhaustive"] == 5 ** 9
          and m["cross_mismatches"] == 0 and m["square_mismatches"] == 0)
    verdict("4b max-pool program", ok,
            f"{m['random']} random grids up to 8x8 + {m['exhaustive']} exhaustive 3x3 grids; "
            f"4-neighbour program mismatches {m['cross_mismatches']}, 3x3 program mismatches "
            f"{m['square_mismatches']}")


def test_4c_conv_program(verdict):
    m = verify.check_conv(1000).metrics
    verdict("4c conv program", m["pairs"] >= 1000 and m["max_dev"] <= CONV_TOL,
            f"{m['pairs']} kernel/image pairs, max deviation {m['max_dev']:.2e} (tol {CONV_TOL:g})")


def test_4d_end_to_end(verdict):
    m = verify.check_end_to_end(trials=500).metrics
    ok = m["trials"] >= 1000 and m["argmax_flips"] == 0 and m["max_dev"] <= SCORE_TOL and m["runtime_s"] < E2E_RUNTIME_S
    verdict("4d end-to-end oracle equivalence", ok,
            f"{m['trials']} trials over both designs, {m['argmax_flips']} argmax differences, max score "
            f"deviation {m['max_dev']:.2e} (tol {SCORE_TOL:g}), {m['runtime_s']:.1f} s")


def test_5_dynamics_cross_check(verdict):
    m = verify.check_dynamics(templates=1000, halving=100).metrics
    ok = m["templates"] >= 1000 and m["max_dev"] <= ODE_TOL and m["halving_dev"] < ODE_TOL
    verdict("5 dynamics cross-check", ok,
            f"{m['templates']} templates, ODE vs closed form {m['max_dev']:.2e}, step halving "
            f"{m['halving_dev']:.2e} (tol {ODE_TOL:g})")


def test_6_scheduler_structure(verdict):
    net = load_network("mnist_design1")
    prog = compile_network(net, HardwareConfig(n_arrays=4))
    problems = []
    for layer in net.layers:
        c = prog.counts(layer.name)
        if layer.kind == "conv":
            if c["template"] != layer.out_maps * layer.in_maps:
                problems.append(f"{layer.name}: {c['template']} template applies")
            if c["accumulate"] + c["mem_accumulate"] != layer.out_maps * (layer.in_maps - 1):
                problems.append(f"{layer.name}: {c['accumulate'] + c['mem_accumulate']} accumulates")
        elif layer.kind in ("relu", "pool"):
            evs = prog.layer_events(layer.name)
            reads = [e.template for e in evs if e.op == "sram_read"]
            used = {e.template for e in evs if e.op == "template"}
            if sorted(reads) != sorted(used):
                problems.append(f"{layer.name}: {len(reads)} SRAM reads for {len(used)} shared templates")
    verdict("6 scheduler structure", not problems,
            "; ".join(problems) or "conv template/accumulate counts equal C_l*C_(l-1) and C_l*(C_(l-1)-1); "
                                   "relu/pool read each shared template once per layer")


def test_7_analytic_model(verdict):
    params = load_cost_params("paper-4bit-32nm")
    got = conv_delay_formula(4, 4, 4, params)
    try:
        conv_delay_formula(4, 4, 1, params)
        domain = False
    except ModelDomainError:
        domain = True
    ok = abs(got - ANALYTIC_4X4_N4_NS) <= 1e-4 and domain
    verdict("7 analytic model", ok,
            f"C_l=C_(l-1)=4, N=4: {got:.4f} ns (pinned {ANALYTIC_4X4_N4_NS}); N=1 domain error raised: {domain}")


def test_8_nonideal_sanity(verdict):
    m = verify.check_nonideal().metrics
    verdict("8 non-ideality sanity", m["identical"],
            f"straight-line curve bit-identical to ideal: {m['identical']}; default curve argmax agreement "
            f"{m['agreement']:.1%} over {m['images']} images (reported, not gated)")


def test_9_determinism(verdict):
    m = verify.check_determinism().metrics
    verdict("9 determinism", m.get("identical", False),
            f"{len(m.get('files', []))} report files from two seeded runs byte-identical: {m.get('identical')}")
