"""Release checks: oracle equivalence, calibration and determinism.

Every check returns the quantities it measured alongside its verdict so
callers can apply their own tolerances.
"""

from __future__ import annotations

import itertools
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import oracle
from .calibration import REFERENCE_8BIT, REFERENCE_ROWS, REFERENCE_TOTALS, REFERENCE_VARIANTS
from .core import CeNNArrayState, Template, settle_feedforward, settle_ode
from .cost import (
    CostParams,
    ModelDomainError,
    analytic_delay,
    conv_delay_formula,
    load_cost_params,
    precision_scale,
    trace_cost,
)
from .netspec import load_network, preset_names, random_weights, synthetic_dataset
from .nonideal import OtaCurve, default_curve
from .scheduler import HardwareConfig, compile_network, execute
from .templates import conv_program, maxpool_program, relu_program, run_program

TOTAL_TOL = 0.03
ROW_TOL = 0.05
STEP_TOL = 0.01
SCALE_TOL = 0.10
CONV_TOL = 1e-6
SCORE_TOL = 1e-5
ODE_TOL = 1e-6
COST_RUNTIME_S = 1.0
E2E_RUNTIME_S = 120.0


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b)


def check_cost_reproduction(params: Optional[CostParams] = None) -> Check:
    params = params or load_cost_params("paper-4bit-32nm")
    t0 = time.perf_counter()
    hw = HardwareConfig()
    reports = {n: trace_cost(compile_network(load_network(n), hw), params) for n in REFERENCE_ROWS}
    runtime = time.perf_counter() - t0
    metrics: dict = {"runtime_s": runtime}
    worst_row = 0.0
    worst_total = 0.0
    for name, rows in REFERENCE_ROWS.items():
        rep = reports[name]
        ref_d, ref_e = REFERENCE_TOTALS[name]
        metrics[f"{name}.delay_ns"] = rep.delay_ns
        metrics[f"{name}.energy_pj"] = rep.energy_pj
        worst_total = max(worst_total, _rel(rep.delay_ns, ref_d), _rel(rep.energy_pj, ref_e))
        for layer, d, e in rows:
            lc = rep.layer(layer)
            metrics[f"{name}.{layer}"] = (lc.delay_ns, lc.energy_pj)
            worst_row = max(worst_row, _rel(lc.delay_ns, d), _rel(lc.energy_pj, e))
    metrics["worst_total_rel"] = worst_total
    metrics["worst_row_rel"] = worst_row
    ok = worst_total <= TOTAL_TOL and worst_row <= ROW_TOL and runtime < COST_RUNTIME_S
    d1, d2 = reports["mnist_design1"], reports["mnist_design2"]
    detail = (f"design1 {d1.delay_ns:.1f} ns / {d1.energy_pj:.0f} pJ, design2 {d2.delay_ns:.1f} ns / "
              f"{d2.energy_pj:.0f} pJ; worst total {worst_total:.2%}, worst row {worst_row:.2%}, {runtime:.2f} s")
    return Check("cost reproduction", ok, detail, metrics)


def check_step_calibration(params: Optional[CostParams] = None) -> Check:
    params = params or load_cost_params("paper-4bit-32nm")
    rep = trace_cost(compile_network(load_network("mnist_design1"), HardwareConfig()), params)
    step = params.step_ns
    relu, pool = rep.layer("relu1").delay_ns, rep.layer("pool1").delay_ns
    errs = [_rel(relu, 2 * step), _rel(pool, 16 * step), _rel(relu, 10.7), _rel(pool, 85.5)]
    ok = max(errs) <= STEP_TOL
    return Check("per-step calibration", ok,
                 f"step {step:.3f} ns, relu {relu:.2f} ns, max-pool {pool:.2f} ns, worst {max(errs):.2%}",
                 {"step_ns": step, "relu_ns": relu, "pool_ns": pool, "worst_rel": max(errs)})


def check_precision_scaling(params: Optional[CostParams] = None) -> Check:
    params = params or load_cost_params("paper-4bit-32nm")
    t0 = time.perf_counter()
    p8 = precision_scale(params)
    hw = HardwareConfig(precision=8)
    reps = {n: trace_cost(compile_network(load_network(n), hw), p8) for n in REFERENCE_8BIT}
    runtime = time.perf_counter() - t0
    d1 = reps["mnist_design1"]
    ref_d, ref_e = REFERENCE_8BIT["mnist_design1"]
    err = max(_rel(d1.delay_ns, ref_d), _rel(d1.energy_pj, ref_e))
    d2 = reps["mnist_design2"]
    ok = err <= SCALE_TOL and runtime < COST_RUNTIME_S
    detail = (f"design1 8-bit {d1.delay_ns:.0f} ns / {d1.energy_pj / 1e3:.1f} nJ (worst {err:.2%}); "
              f"design2 8-bit {d2.delay_ns:.0f} ns / {d2.energy_pj / 1e3:.1f} nJ reported only")
    return Check("precision scaling", ok, detail,
                 {"delay_ns": d1.delay_ns, "energy_pj": d1.energy_pj, "worst_rel": err, "runtime_s": runtime,
                  "design2_delay_ns": d2.delay_ns, "design2_energy_pj": d2.energy_pj})


def check_relu_exhaustive(points: int = 2001) -> Check:
    x = np.linspace(-1.0, 1.0, points)
    y = run_program(relu_program(), x.reshape(1, -1)).ravel()
    bad = int(np.count_nonzero(y != np.maximum(x, 0.0)))
    return Check("relu program", bad == 0, f"{points} grid values, {bad} mismatches", {"mismatches": bad,
                                                                                       "points": points})


def _pool_reference(m: np.ndarray, neighborhood: str, down: bool) -> np.ndarray:
    y = oracle.max_filter(m, neighborhood)
    return oracle.subsample(y) if down else y


def check_maxpool(random_grids: int = 10_000, seed: int = 0, exhaustive: bool = True,
                  chunk: int = 200_000) -> Check:
    """Cross-neighbourhood program against the 4-neighbour max oracle, and the
    default square program against the 3x3 oracle, on the same grids."""
    rng = np.random.default_rng(seed)
    shapes = [(int(r), int(c)) for r, c in rng.integers(1, 9, (random_grids, 2))]
    down = rng.random(random_grids) < 0.5
    by_key: dict = {}
    for (r, c), d in zip(shapes, down):
        d = bool(d) and r % 2 == 0 and c % 2 == 0
        by_key[(r, c, d)] = by_key.get((r, c, d), 0) + 1
    mism = {"cross": 0, "square": 0}
    tested = 0
    for (r, c, d), n in sorted(by_key.items()):
        grids = rng.integers(0, 257, (n, r, c)) / 256.0
        for hood in mism:
            got = run_program(maxpool_program(d, hood), grids)
            mism[hood] += int(np.count_nonzero(np.any(got != _pool_reference(grids, hood, d), axis=(-2, -1))))
        tested += n
    exhaustive_count = 0
    if exhaustive:
        alphabet = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
        combos = itertools.product(range(5), repeat=9)
        while True:
            block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
            if not len(block):
                break
            grids = alphabet[block].reshape(-1, 3, 3)
            for hood in mism:
                got = run_program(maxpool_program(False, hood), grids)
                mism[hood] += int(np.count_nonzero(np.any(got != _pool_reference(grids, hood, False), axis=(-2, -1))))
            exhaustive_count += len(grids)
    ok = mism["cross"] == 0 and mism["square"] == 0
    return Check("max-pool program", ok,
                 f"{tested} random grids + {exhaustive_count} exhaustive 3x3 grids; mismatching grids: "
                 f"cross {mism['cross']}, square {mism['square']}",
                 {"random": tested, "exhaustive": exhaustive_count, "cross_mismatches": mism["cross"],
                  "square_mismatches": mism["square"]})


def check_conv(pairs: int = 1000, seed: int = 1) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        r, c = (int(v) for v in rng.integers(3, 9, 2))
        k = rng.uniform(-1, 1, (3, 3))
        bias = float(rng.uniform(-1, 1))
        img = rng.uniform(-1, 1, (r, c))
        got = run_program(conv_program(k, bias), img)
        want = oracle.clamp(oracle.correlate_same(img, k) + bias)
        worst = max(worst, float(np.max(np.abs(got - want))))
    return Check("conv program", worst <= CONV_TOL, f"{pairs} kernel/image pairs, max deviation {worst:.2e}",
                 {"pairs": pairs, "max_dev": worst})


def check_end_to_end(trials: int = 500, images_per_net: int = 10, seed: int = 2) -> Check:
    """``trials`` images per topology, fresh random weights every ``images_per_net`` images."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    flips = 0
    total = 0
    for name in ("mnist_design1", "mnist_design2"):
        base = load_network(name)
        prog = compile_network(base, HardwareConfig())
        done = 0
        while done < trials:
            n = min(images_per_net, trials - done)
            net = random_weights(base, rng)
            images = synthetic_dataset(net, n, rng).images
            res = execute(prog, net, images)
            ref = oracle.forward(net, images)
            worst = max(worst, float(np.max(np.abs(res.scores - ref))))
            flips += int(np.count_nonzero(res.predictions != np.argmax(ref, axis=1)))
            done += n
        total += done
    runtime = time.perf_counter() - t0
    ok = flips == 0 and worst <= SCORE_TOL and runtime < E2E_RUNTIME_S
    return Check("end-to-end oracle equivalence", ok,
                 f"{total} trials, {flips} argmax differences, max score deviation {worst:.2e}, {runtime:.1f} s",
                 {"trials": total, "argmax_flips": flips, "max_dev": worst, "runtime_s": runtime})


def check_dynamics(templates: int = 1000, halving: int = 100, seed: int = 3) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_half = 0.0
    for k in range(templates):
        t = Template(b=rng.uniform(-1, 1, (3, 3)), z=float(rng.uniform(-1, 1)))
        st = CeNNArrayState.from_input(rng.uniform(-1, 1, (5, 5)))
        ode = settle_ode(st, t)
        worst = max(worst, float(np.max(np.abs(ode.y - settle_feedforward(st, t).y))))
        if k < halving:
            fine = settle_ode(st, t, dt=0.005)
            worst_half = max(worst_half, float(np.max(np.abs(ode.y - fine.y))))
    ok = worst <= ODE_TOL and worst_half < ODE_TOL
    return Check("dynamics cross-check", ok,
                 f"{templates} templates, ODE vs closed form {worst:.2e}; step halving on {halving}: {worst_half:.2e}",
                 {"templates": templates, "max_dev": worst, "halving_dev": worst_half})


def check_scheduler_structure(n_arrays: int = 4) -> Check:
    net = load_network("mnist_design1")
    prog = compile_network(net, HardwareConfig(n_arrays=n_arrays))
    problems = []
    for layer in net.layers:
        c = prog.counts(layer.name)
        if layer.kind == "conv":
            if c["template"] != layer.out_maps * layer.in_maps:
                problems.append(f"{layer.name} template applies {c['template']}")
            acc = c["accumulate"] + c["mem_accumulate"]
            if acc != layer.out_maps * (layer.in_maps - 1):
                problems.append(f"{layer.name} accumulates {acc}")
            if c["sram_read"] != layer.out_maps * layer.in_maps:
                problems.append(f"{layer.name} sram reads {c['sram_read']}")
        elif layer.kind in ("relu", "pool"):
            distinct = {e.template for e in prog.layer_events(layer.name) if e.op == "template"}
            if c["sram_read"] != len(distinct):
                problems.append(f"{layer.name} sram reads {c['sram_read']} for {len(distinct)} templates")
    sram = {l.name: prog.counts(l.name)["sram_read"] for l in net.layers if l.kind in ("relu", "pool")}
    return Check("scheduler structure", not problems,
                 "; ".join(problems) or f"conv counts match; shared-template SRAM reads {sram}",
                 {"problems": problems, "sram_reads": sram})


def check_analytic(params: Optional[CostParams] = None) -> Check:
    params = params or load_cost_params("paper-4bit-32nm")
    got = conv_delay_formula(4, 4, 4, params)
    want = (16 / 3 + 16 / 4) * (params.t_cenn_ns + params.t_prog_ns) + 16 / 6 * (
        params.t_mem_read_ns + params.t_mem_write_ns)
    try:
        conv_delay_formula(4, 4, 1, params)
        domain = False
    except ModelDomainError:
        domain = True
    ok = abs(got - want) <= 1e-12 * want and domain
    return Check("analytic model", ok, f"C=4x4, N=4: {got:.4f} ns; N=1 domain error raised: {domain}",
                 {"value_ns": got, "expected_ns": want, "domain_error": domain})


def check_nonideal(trials: int = 20, images: int = 5, seed: int = 4) -> Check:
    rng = np.random.default_rng(seed)
    straight = OtaCurve(np.linspace(-1, 1, 201), np.linspace(-1, 1, 201))
    identical = True
    agree = 0
    total = 0
    for name in ("mnist_design1", "mnist_design2"):
        base = load_network(name)
        prog = compile_network(base, HardwareConfig())
        for _ in range(trials):
            net = random_weights(base, rng)
            ims = synthetic_dataset(net, images, rng).images
            ideal = execute(prog, net, ims, "ideal")
            same = execute(prog, net, ims, "nonideal", curve=straight)
            identical &= bool(np.array_equal(ideal.scores, same.scores))
            bent = execute(prog, net, ims, "nonideal", curve=default_curve())
            agree += int(np.count_nonzero(bent.predictions == ideal.predictions))
            total += len(ims)
    rate = agree / total
    return Check("non-ideality sanity", identical,
                 f"straight-line curve bit-identical: {identical}; default curve argmax agreement "
                 f"{rate:.1%} over {total} images (reported, not gated)",
                 {"identical": identical, "agreement": rate, "images": total})


def check_determinism() -> Check:
    from .cli import main

    with tempfile.TemporaryDirectory() as tmp:
        outs = []
        for k in range(2):
            base = Path(tmp) / f"out{k}"
            code = main(["run", "--network", "mnist_design2", "--weights", "random", "--synthetic", "6",
                         "--seed", "11", "--out", str(base), "--quiet"])
            if code != 0:
                return Check("determinism", False, f"run exited with {code}", {})
            run = base / "run-0001"
            outs.append({p.name: p.read_bytes() for p in sorted(run.iterdir())})
    same = outs[0] == outs[1]
    return Check("determinism", same, f"{len(outs[0])} report files byte-identical: {same}",
                 {"files": sorted(outs[0]), "identical": same})


def check_presets_parse() -> Check:
    bad = []
    for name in preset_names():
        try:
            load_network(name)
        except Exception as exc:  # report every failure, keep going
            bad.append(f"{name}: {exc}")
    return Check("shipped network presets", not bad, "; ".join(bad) or f"{len(preset_names())} presets load",
                 {"failures": bad})


def variant_report(params: Optional[CostParams] = None) -> list:
    """Pooling-variant costs next to their reference values (informational)."""
    params = params or load_cost_params("paper-4bit-32nm")
    rows = []
    for kind, refs in REFERENCE_VARIANTS.items():
        for name, (ref_d, ref_e) in refs.items():
            net = load_network(name).with_pool_kind(kind, "nonlinear" if kind == "nonlinear" else None)
            rep = trace_cost(compile_network(net, HardwareConfig()), params)
            rows.append({"pool_kind": kind, "network": name, "delay_ns": rep.delay_ns, "ref_delay_ns": ref_d,
                         "energy_nj": rep.energy_pj / 1e3, "ref_energy_nj": ref_e})
    return rows


CHECKS: dict = {
    "cost": check_cost_reproduction,
    "steps": check_step_calibration,
    "scaling": check_precision_scaling,
    "relu": check_relu_exhaustive,
    "maxpool": check_maxpool,
    "conv": check_conv,
    "end_to_end": check_end_to_end,
    "dynamics": check_dynamics,
    "scheduler": check_scheduler_structure,
    "analytic": check_analytic,
    "nonideal": check_nonideal,
    "determinism": check_determinism,
    "presets": check_presets_parse,
}
COST_CHECKS = ("cost", "steps", "scaling", "analytic")


def run_checks(names=None, params: Optional[CostParams] = None,
               report: Callable[[Check], None] = lambda c: None) -> list:
    out = []
    for name in names or CHECKS:
        fn = CHECKS[name]
        try:
            chk = fn(params) if (name in COST_CHECKS and params is not None) else fn()
        except Exception as exc:
            chk = Check(name, False, f"raised {type(exc).__name__}: {exc}")
        report(chk)
        out.append(chk)
    return out
