"""Command-line entry point: compile, run, sweep, verify, weights."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import report as rpt
from .cost import CostParams, ModelDomainError, analytic_delay, load_cost_params, precision_scale, trace_cost
from .netspec import (
    Dataset,
    NetworkSpec,
    load_idx_dataset,
    load_network,
    load_weights,
    random_weights,
    save_weights,
    synthetic_dataset,
)
from .nonideal import load_ota_curve
from .scheduler import MODES, HardwareConfig, compile_network, execute, load_hw_config, _layer_program

SWEEP_AXES = {
    "precision": "4,8",
    "n_arrays": "2,4,8",
    "pool_kind": "max_linear,avg,nonlinear",
}
BATCH = 16


class UsageError(ValueError):
    pass


def _threads() -> int:
    raw = os.environ.get("CENN_FORGE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CENN_FORGE_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _hw_for(net: NetworkSpec, args) -> HardwareConfig:
    if args.hw:
        hw = load_hw_config(args.hw)
    elif net.input_shape == (28, 28):
        hw = load_hw_config("paper-mnist")
    elif net.input_shape == (32, 32):
        hw = load_hw_config("paper-cifar")
    else:
        hw = HardwareConfig(array_shape=net.input_shape, mem_slots_per_cell=512)
    if args.bits is not None:
        hw = replace(hw, precision=args.bits)
    if getattr(args, "n_arrays", None):
        hw = replace(hw, n_arrays=args.n_arrays)
    return hw


def _cost_params(args, bits: int) -> CostParams:
    if not args.cost_preset:
        return load_cost_params("paper-8bit-32nm" if bits == 8 else "paper-4bit-32nm")
    params = load_cost_params(args.cost_preset)
    if params.bits == 4 and bits == 8:
        params = precision_scale(params)
    elif params.bits != bits:
        raise UsageError(f"cost preset {params.name!r} is {params.bits}-bit but {bits}-bit costing was requested")
    return params


def _weights(net: NetworkSpec, args) -> Optional[NetworkSpec]:
    if args.weights is None:
        return None
    if args.weights == "random":
        return random_weights(net, np.random.default_rng(args.seed))
    return load_weights(args.weights, net)


def _dataset(net: NetworkSpec, args) -> Optional[Dataset]:
    if args.images or args.labels:
        if not (args.images and args.labels):
            raise UsageError("--images and --labels must be given together")
        return load_idx_dataset(args.images, args.labels, args.limit)
    if args.synthetic:
        ds = synthetic_dataset(net, args.synthetic, np.random.default_rng(args.seed + 1))
        return ds.head(args.limit)
    return None


def _execute_batched(prog, net, images, mode, curve, bits):
    chunks = [images[i : i + BATCH] for i in range(0, len(images), BATCH)]
    threads = min(_threads(), max(1, len(chunks)))
    run = lambda c: execute(prog, net, c, mode, curve=curve, bits=bits)
    if threads == 1:
        results = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    return results


def _structure_summary(prog) -> dict:
    layers = {}
    for name in prog.layer_order:
        counts = prog.counts(name)
        layers[name] = {"cycles": prog.layer_cycles(name), "events": dict(sorted(counts.items()))}
    return {"network": prog.network, "cycles": prog.n_cycles, "peak_memory_slots": prog.peak_slots,
            "hardware": asdict(prog.hw), "layers": layers}


def _cost_files(net, hw, params, prog) -> tuple[dict, dict]:
    tr = trace_cost(prog, params)
    files = {"cost.csv": tr.to_csv(), "trace.txt": prog.to_text()}
    meta = {"cost": tr.summary(), "breakdown": {k: round(v, 6) for k, v in tr.breakdown().items()}}
    try:
        an = analytic_delay(net, hw, params)
        files["analytic.csv"] = rpt.analytic_csv(an)
        files["comparison.csv"] = rpt.comparison_csv(tr, an)
        meta["analytic_delay_ns"] = round(an.delay_ns, 6)
    except ModelDomainError as exc:
        meta["analytic_delay_ns"] = None
        meta["analytic_note"] = str(exc)
    return files, {"trace": tr, "meta": meta}


def _finish(args, out_dir: Path, files: dict, figures: list) -> None:
    rpt.write_files(out_dir, files)
    for fig in figures:
        fig(out_dir)
    if not args.quiet:
        print(str(out_dir))


def cmd_compile(args) -> int:
    net = load_network(args.network)
    hw = _hw_for(net, args)
    prog = compile_network(net, hw)
    params = _cost_params(args, hw.precision)
    files, extra = _cost_files(net, hw, params, prog)
    files["summary.json"] = rpt.dumps_json(_structure_summary(prog))
    out = rpt.next_run_dir(args.out)
    figures = []
    if args.figures:
        from .plotting import layer_cost_figure

        figures.append(lambda d: layer_cost_figure(extra["trace"], d / "cost.png"))
    _finish(args, out, files, figures)
    return 0


def cmd_run(args) -> int:
    net = load_network(args.network)
    hw = _hw_for(net, args)
    prog = compile_network(net, hw)
    params = _cost_params(args, hw.precision)
    files, extra = _cost_files(net, hw, params, prog)
    meta = {
        "command": "run",
        "network": net.name,
        "mode": args.mode,
        "bits": hw.precision,
        "hardware": asdict(hw),
        "cost_params": params.name,
        "seed": args.seed,
        "weights": args.weights,
        **extra["meta"],
    }
    weighted = _weights(net, args)
    data = _dataset(net, args) if weighted is not None else None
    if (args.images or args.synthetic) and weighted is None:
        raise UsageError("running a dataset needs --weights (a manifest path or 'random')")
    if data is not None:
        curve = load_ota_curve(args.curve) if args.curve else None
        results = _execute_batched(prog, weighted, data.images, args.mode, curve, hw.precision)
        scores = np.concatenate([r.scores for r in results]) if results else np.zeros((0, net.class_count))
        preds = np.concatenate([r.predictions for r in results]) if results else np.zeros(0, dtype=int)
        clipped = sum(r.stats.clipped for r in results)
        cells = sum(r.stats.cells for r in results)
        events: dict = {}
        for r in results:
            for k, v in r.stats.events.items():
                events[k] = events.get(k, 0) + v
        files["predictions.csv"] = rpt.predictions_csv(data.labels, preds, scores)
        meta.update({
            "images": int(len(data)),
            "accuracy": round(float(np.mean(preds == data.labels)), 6) if len(data) else None,
            "clip_rate": round(clipped / cells, 9) if cells else 0.0,
            "fc_saturations": int(sum(r.stats.fc_saturations for r in results)),
            "events_executed": dict(sorted(events.items())),
        })
    else:
        meta["images"] = 0
    meta["files"] = sorted(list(files) + ["metadata.json"] + (["cost.png"] if args.figures else []))
    files["metadata.json"] = rpt.dumps_json(meta)
    out = rpt.next_run_dir(args.out)
    figures = []
    if args.figures:
        from .plotting import layer_cost_figure

        figures.append(lambda d: layer_cost_figure(extra["trace"], d / "cost.png"))
    _finish(args, out, files, figures)
    return 0


def _parse_values(axis: str, raw: Optional[str]) -> list:
    text = SWEEP_AXES[axis] if raw is None else raw
    items = [v.strip() for v in text.split(",") if v.strip()]
    if not items:
        raise UsageError(f"sweep axis {axis!r} has no values")
    if axis == "pool_kind":
        return items
    try:
        return [int(v) for v in items]
    except ValueError:
        raise UsageError(f"sweep values for {axis!r} must be integers, got {text!r}") from None


def cmd_sweep(args) -> int:
    base_net = load_network(args.network)
    values = _parse_values(args.axis, args.values)
    weighted = _weights(base_net, args)
    data = _dataset(base_net, args) if weighted is not None else None
    rows = []
    for v in values:
        net, sweep_args = base_net, argparse.Namespace(**vars(args))
        if args.axis == "precision":
            sweep_args.bits = v
        elif args.axis == "n_arrays":
            sweep_args.n_arrays = v
        else:
            net = base_net.with_pool_kind(v, "nonlinear" if v == "nonlinear" else None)
        hw = _hw_for(net, sweep_args)
        prog = compile_network(net, hw)
        params = _cost_params(sweep_args, hw.precision)
        tr = trace_cost(prog, params)
        try:
            an = round(analytic_delay(net, hw, params).delay_ns, 6)
        except ModelDomainError:
            an = "nan"
        pool = next((l for l in net.layers if l.kind == "pool"), None)
        row = {
            "value": v,
            "cycles": prog.n_cycles,
            "pool_steps_per_layer": _layer_program(pool, hw).compute_steps if pool else 0,
            "template_applies": prog.counts()["template"],
            "delay_ns": round(tr.delay_ns, 6),
            "energy_pj": round(tr.energy_pj, 6),
            "edp_ns_pj": round(tr.edp_ns_pj, 6),
            "analytic_delay_ns": an,
        }
        if data is not None:
            w = weighted if args.axis != "pool_kind" else _rebind(net, weighted)
            results = _execute_batched(prog, w, data.images, args.mode, None, hw.precision)
            preds = np.concatenate([r.predictions for r in results])
            row["accuracy"] = round(float(np.mean(preds == data.labels)), 6)
        rows.append(row)
    header = list(rows[0])
    files = {"sweep.csv": rpt.rows_to_csv(header, [[r[h] for h in header] for r in rows]),
             "metadata.json": rpt.dumps_json({"command": "sweep", "axis": args.axis, "network": base_net.name,
                                              "values": values, "seed": args.seed, "mode": args.mode})}
    out = rpt.next_run_dir(args.out)
    figures = []
    if args.figures:
        from .plotting import sweep_figure

        figures.append(lambda d: sweep_figure(args.axis, rows, d / "sweep.png"))
    _finish(args, out, files, figures)
    return 0


def _rebind(net: NetworkSpec, weighted: NetworkSpec) -> NetworkSpec:
    layers = [replace(l, kernel=w.kernel, bias=w.bias, fc_weights=w.fc_weights, fc_bias=w.fc_bias)
              for l, w in zip(net.layers, weighted.layers)]
    return replace(net, layers=layers)


def cmd_verify(args) -> int:
    from . import verify

    params = load_cost_params(args.cost_preset) if args.cost_preset else None
    names = [n.strip() for n in args.checks.split(",")] if args.checks else list(verify.CHECKS)
    unknown = [n for n in names if n not in verify.CHECKS]
    if unknown:
        raise UsageError(f"unknown checks {unknown}; choose from {sorted(verify.CHECKS)}")
    if args.quick:
        quick = {
            "maxpool": lambda: verify.check_maxpool(2000, exhaustive=False),
            "conv": lambda: verify.check_conv(200),
            "end_to_end": lambda: verify.check_end_to_end(50),
            "dynamics": lambda: verify.check_dynamics(100, 10),
            "nonideal": lambda: verify.check_nonideal(4),
        }
    else:
        quick = {}
    results = []
    for name in names:
        fn = quick.get(name)
        if fn is None:
            chk = verify.run_checks([name], params)[0]
        else:
            try:
                chk = fn()
            except Exception as exc:
                chk = verify.Check(name, False, f"raised {type(exc).__name__}: {exc}")
        print(chk.line(), flush=True)
        results.append(chk)
    for path in args.network_files or []:
        try:
            load_network(path)
            chk = verify.Check(f"network file {path}", True, "parses and shape-checks")
        except Exception as exc:
            chk = verify.Check(f"network file {path}", False, f"{type(exc).__name__}: {exc}")
        print(chk.line(), flush=True)
        results.append(chk)
    return 0 if all(c.passed for c in results) else 1


def cmd_weights(args) -> int:
    net = load_network(args.network)
    save_weights(random_weights(net, np.random.default_rng(args.seed)), args.output)
    if not args.quiet:
        print(args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cenn-forge", description="CeNN-based CNN inference simulator and cost model")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data: bool = True):
        sp.add_argument("--network", default="mnist_design1", help="network file or preset name")
        sp.add_argument("--hw", help="hardware config file or preset name")
        sp.add_argument("--bits", type=int, choices=(4, 8), help="operand precision")
        sp.add_argument("--cost-preset", help="cost parameter file or preset name")
        sp.add_argument("--out", default="reports", help="report base directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--figures", action="store_true", help="also render PNG figures")
        sp.add_argument("--quiet", action="store_true")
        if data:
            sp.add_argument("--weights", help="weights manifest, or 'random' for seeded random weights")
            sp.add_argument("--images", help="IDX image file")
            sp.add_argument("--labels", help="IDX label file")
            sp.add_argument("--synthetic", type=int, help="use N seeded random images instead of a dataset")
            sp.add_argument("--limit", type=int, help="use at most this many images")
            sp.add_argument("--mode", choices=MODES, default="ideal")
            sp.add_argument("--curve", help="OTA curve file for nonideal mode")

    sp = sub.add_parser("compile", help="compile a network and write its trace and cost")
    common(sp, data=False)
    sp.add_argument("--n-arrays", type=int)
    sp.set_defaults(func=cmd_compile)

    sp = sub.add_parser("run", help="run inference and/or costing")
    common(sp)
    sp.add_argument("--n-arrays", type=int)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="one report row per value of a design axis")
    common(sp)
    sp.add_argument("--axis", choices=sorted(SWEEP_AXES), required=True)
    sp.add_argument("--values", help="comma-separated axis values")
    sp.set_defaults(func=cmd_sweep, n_arrays=None)

    sp = sub.add_parser("verify", help="run the built-in equivalence and calibration checks")
    sp.add_argument("--checks", help="comma-separated subset of checks")
    sp.add_argument("--cost-preset", help="cost parameters to calibrate against")
    sp.add_argument("--quick", action="store_true", help="smaller sample sizes")
    sp.add_argument("--network-file", dest="network_files", action="append", help="also parse this network file")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("weights", help="write seeded random weights for a network")
    sp.add_argument("--network", default="mnist_design1")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True, help="manifest path; the .bin blob is written beside it")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_weights)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        msg = str(exc).replace("\n", " ")
        print(json.dumps({"error": type(exc).__name__, "message": msg}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
