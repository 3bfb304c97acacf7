"""Lowering of a network onto N CeNN arrays and replay of the resulting trace.

The trace is a list of events, each tagged with the cycle it belongs to.
Events sharing a cycle run concurrently on different arrays; cycles run in
order. Feature maps live in per-cell analog memory slots named
``<layer>:<map>`` and are moved in and out of arrays by MemRead/MemWrite.

Convolution lowering, for a layer with C_in inputs and C_out outputs on N
arrays:

* C_in <= N: P = N // C_in outputs are packed into one pass. A pass is one
  conv cycle (every array applies one kernel) followed by one accumulate
  cycle that chains the C_in partial maps of each output.
* C_in > N: inputs are processed in groups of N. Each group costs a conv
  cycle and an accumulate cycle; the running partial sum waits in memory
  between groups.

Partial sums are always chained in input order, sat(sat(c0 + c1) + c2)...,
so the numeric result does not depend on N or on array assignment.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .core import IDEAL, BoundaryPolicy, Physics, Template
from .fc_digital import FixedPointFormat, argmax, fc_eval
from .netspec import LayerSpec, NetworkSpec
from .nonideal import OtaCurve, QuantSpec, default_curve, from_codes, quantize, to_codes
from .templates import (
    AddFromMem,
    ApplyTemplate,
    Downsample2x2,
    LoadToInput,
    RunStats,
    StoreToMem,
    TemplateProgram,
    WriteBack,
    activation_program,
    add_maps,
    apply_template,
    conv_template,
    downsample_2x2,
    pool_program,
)

MODES = ("ideal", "quantized", "nonideal")
EVENT_OPS = (
    "sram_read", "mem_read", "template", "accumulate", "mem_accumulate", "mem_write",
    "downsample", "adc", "digital_fc", "digital_mean",
)
SETTLE_OPS = ("template", "accumulate", "mem_accumulate")


class CompileError(ValueError):
    pass


class MemoryOverflowError(CompileError):
    def __init__(self, required: int, available: int, where: str):
        super().__init__(f"analog memory overflow at {where}: {required} slots per cell required, "
                         f"{available} available")
        self.required = required
        self.available = available


class TraceError(RuntimeError):
    pass


@dataclass(frozen=True)
class HardwareConfig:
    n_arrays: int = 4
    array_shape: tuple = (28, 28)
    mem_slots_per_cell: int = 16
    precision: int = 4
    allow_tiling: bool = True
    adc_count: int = 4
    pool_neighborhood: str = "square"

    def __post_init__(self):
        if self.n_arrays < 1:
            raise ValueError("n_arrays must be positive")
        if len(self.array_shape) != 2 or min(self.array_shape) < 1:
            raise ValueError(f"array_shape must be two positive integers, got {self.array_shape}")
        if self.mem_slots_per_cell < 1:
            raise ValueError("mem_slots_per_cell must be positive")
        if self.adc_count < 1:
            raise ValueError("adc_count must be positive")
        object.__setattr__(self, "array_shape", tuple(int(v) for v in self.array_shape))


def load_hw_config(path_or_preset) -> HardwareConfig:
    path = Path(path_or_preset)
    if not path.exists() and not path.suffix:
        path = Path(str(resources.files("cenn_forge") / "data" / "hw" / f"{path_or_preset}.json"))
    if not path.exists():
        raise FileNotFoundError(f"hardware config not found: {path_or_preset}")
    doc = json.loads(path.read_text())
    known = {f.name for f in fields(HardwareConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown hardware config keys: {sorted(unknown)}")
    return HardwareConfig(**doc)


@dataclass(frozen=True)
class Event:
    cycle: int
    layer: str
    op: str
    array: int = -1
    template: str = ""
    slot: str = ""
    src: int = -1
    count: int = 0
    cells: int = 0
    tiles: int = 1
    overlapped: bool = False
    pixels: str = ""
    slots: tuple = ()
    crop_odd: bool = False

    def to_line(self) -> str:
        parts = [f"{self.cycle:06d}", self.layer, self.op]
        if self.array >= 0:
            parts.append(f"array={self.array}")
        if self.template:
            parts.append(f"template={self.template}")
        if self.slot:
            parts.append(f"slot={self.slot}")
        if self.src >= 0:
            parts.append(f"src={self.src}")
        if self.count:
            parts.append(f"count={self.count}")
        if self.cells:
            parts.append(f"cells={self.cells}")
        if self.tiles != 1:
            parts.append(f"tiles={self.tiles}")
        if self.overlapped:
            parts.append("overlapped")
        if self.pixels:
            parts.append(f"pixels={self.pixels}")
        if self.slots:
            parts.append(f"slots={','.join(self.slots)}")
        if self.crop_odd:
            parts.append("crop_odd")
        return " ".join(parts)


@dataclass(frozen=True)
class TemplateEntry:
    template: Template
    boundary: BoundaryPolicy = BoundaryPolicy.ZERO
    t_max: float = 20.0
    source: tuple = ()  # (layer, out, in) for trained kernels, bound from the network at execution


@dataclass
class CeNNProgram:
    network: str
    hw: HardwareConfig
    events: list
    templates: dict
    layer_order: list
    input_slots: tuple
    final: dict
    peak_slots: int = 0

    @property
    def n_cycles(self) -> int:
        return self.events[-1].cycle + 1 if self.events else 0

    def layer_events(self, layer: str) -> list:
        return [e for e in self.events if e.layer == layer]

    def counts(self, layer: Optional[str] = None) -> Counter:
        evs = self.events if layer is None else self.layer_events(layer)
        return Counter(e.op for e in evs)

    def layer_cycles(self, layer: str) -> int:
        return len({e.cycle for e in self.layer_events(layer)})

    def to_text(self) -> str:
        head = [f"# network={self.network} n_arrays={self.hw.n_arrays} "
                f"array={self.hw.array_shape[0]}x{self.hw.array_shape[1]} precision={self.hw.precision}"]
        return "\n".join(head + [e.to_line() for e in self.events]) + "\n"


class _Builder:
    def __init__(self, net: NetworkSpec, hw: HardwareConfig):
        self.net = net
        self.hw = hw
        self.events: list[Event] = []
        self.templates: dict[str, TemplateEntry] = {}
        self.cycle = 0

    def tiles_for(self, shape) -> int:
        rows, cols = shape
        ar, ac = self.hw.array_shape
        if rows <= ar and cols <= ac:
            return 1
        if not self.hw.allow_tiling:
            raise CompileError(f"map {rows}x{cols} exceeds the {ar}x{ac} array and tiling is disabled")
        return math.ceil(rows / ar) * math.ceil(cols / ac)

    def emit(self, layer: str, op: str, cycle: Optional[int] = None, **kw) -> None:
        self.events.append(Event(self.cycle if cycle is None else cycle, layer, op, **kw))

    def register(self, tid: str, entry: TemplateEntry) -> str:
        old = self.templates.get(tid)
        if old is not None and old != entry:
            raise CompileError(f"template id {tid!r} bound twice")
        self.templates[tid] = entry
        return tid

    def sram(self, layer: str, tid: str, loaded: set, cycle: Optional[int] = None) -> None:
        if tid not in loaded:
            loaded.add(tid)
            self.emit(layer, "sram_read", cycle, template=tid, count=1)


def _slot(layer: str, m: int) -> str:
    return f"{layer}:{m}"


def _lower_conv(b: _Builder, layer: LayerSpec, in_slots: list, final_readout: bool) -> list:
    n = b.hw.n_arrays
    cin, cout = layer.in_maps, layer.out_maps
    cells = layer.in_shape[0] * layer.in_shape[1]
    tiles = b.tiles_for(layer.in_shape)
    kernel = layer.kernel if layer.kernel is not None else np.zeros((cout, cin, 3, 3))
    bias = layer.bias if layer.bias is not None else np.zeros(cout)
    overlap = final_readout and cin > 1
    acc_cells = 1 if overlap else cells
    loaded: set = set()
    out_slots = [_slot(layer.name, i) for i in range(cout)]

    def kernel_id(i: int, j: int) -> str:
        t = conv_template(kernel[i, j], bias[i] if j == 0 else 0.0, name=f"{layer.name}/k{i}_{j}")
        return b.register(t.name, TemplateEntry(t, BoundaryPolicy.ZERO, source=(layer.name, i, j)))

    def chain(target: int, members: list, psum: Optional[str], dest: str, acc_cycle: int) -> None:
        if psum is not None:
            b.emit(layer.name, "mem_accumulate", acc_cycle, array=target, slot=psum, cells=acc_cells,
                   tiles=tiles, overlapped=overlap)
        for a in members:
            b.emit(layer.name, "accumulate", acc_cycle, array=target, src=a, cells=acc_cells, tiles=tiles,
                   overlapped=overlap)
        b.emit(layer.name, "mem_write", acc_cycle, array=target, slot=dest, cells=cells, tiles=tiles)

    if cin <= n:
        per_pass = n // cin
        for start in range(0, cout, per_pass):
            outs = list(range(start, min(cout, start + per_pass)))
            for k, i in enumerate(outs):
                for j in range(cin):
                    a = k * cin + j
                    tid = kernel_id(i, j)
                    b.sram(layer.name, tid, loaded)
                    b.emit(layer.name, "mem_read", array=a, slot=in_slots[j], cells=cells, tiles=tiles)
                    b.emit(layer.name, "template", array=a, template=tid, cells=cells, tiles=tiles)
            acc_cycle = b.cycle if (overlap or cin == 1) else b.cycle + 1
            for k, i in enumerate(outs):
                chain(k * cin, [k * cin + j for j in range(1, cin)], None, out_slots[i], acc_cycle)
            b.cycle = acc_cycle + 1
    else:
        groups = [list(range(q, min(cin, q + n))) for q in range(0, cin, n)]
        for i in range(cout):
            psum = None
            for g, members in enumerate(groups):
                arrays = [(j - members[0] + i) % n for j in members]
                for j, a in zip(members, arrays):
                    tid = kernel_id(i, j)
                    b.sram(layer.name, tid, loaded)
                    b.emit(layer.name, "mem_read", array=a, slot=in_slots[j], cells=cells, tiles=tiles)
                    b.emit(layer.name, "template", array=a, template=tid, cells=cells, tiles=tiles)
                acc_cycle = b.cycle if overlap else b.cycle + 1
                last = g == len(groups) - 1
                dest = out_slots[i] if last else f"{layer.name}:psum{i}.{g}"
                chain(arrays[0], arrays[1:], psum, dest, acc_cycle)
                psum = dest
                b.cycle = acc_cycle + 1
    return out_slots


def _lower_program(b: _Builder, layer: LayerSpec, prog: TemplateProgram, in_slots: list) -> list:
    """Broadcast a shared program to groups of up to N maps, one map per array."""
    n = b.hw.n_arrays
    cells = layer.in_shape[0] * layer.in_shape[1]
    out_cells = layer.out_shape[0] * layer.out_shape[1]
    tiles = b.tiles_for(layer.in_shape)
    by_template = {}
    for t in prog.distinct_templates:
        # nonlinear templates carry a per-layer t_max, so their ids are layer-scoped
        tid = f"{layer.name}/{t.name}" if t.d != "none" else t.name
        by_template[t] = b.register(tid, TemplateEntry(t, prog.boundary, prog.t_max))
    loaded: set = set()
    out_slots = [_slot(layer.name, m) for m in range(layer.out_maps)]
    for start in range(0, layer.in_maps, n):
        maps = list(range(start, min(layer.in_maps, start + n)))
        for a, m in enumerate(maps):
            b.emit(layer.name, "mem_read", array=a, slot=in_slots[m], cells=cells, tiles=tiles)
        step_cycle = b.cycle
        cur_cells = cells
        for s in prog.steps:
            if isinstance(s, ApplyTemplate):
                tid = by_template[s.template]
                b.sram(layer.name, tid, loaded, step_cycle)
                for a, m in enumerate(maps):
                    b.emit(layer.name, "template", step_cycle, array=a, template=tid, cells=cur_cells, tiles=tiles)
                step_cycle += 1
            elif isinstance(s, AddFromMem):
                for a, m in enumerate(maps):
                    b.emit(layer.name, "mem_accumulate", step_cycle, array=a, slot=f"{layer.name}:{s.slot}{m}",
                           cells=cur_cells, tiles=tiles)
                step_cycle += 1
            elif isinstance(s, StoreToMem):
                for a, m in enumerate(maps):
                    b.emit(layer.name, "mem_write", step_cycle, array=a, slot=f"{layer.name}:{s.slot}{m}",
                           cells=cur_cells, tiles=tiles)
            elif isinstance(s, LoadToInput):
                for a, m in enumerate(maps):
                    b.emit(layer.name, "mem_read", step_cycle, array=a, slot=f"{layer.name}:{s.slot}{m}",
                           cells=cur_cells, tiles=tiles)
            elif isinstance(s, Downsample2x2):
                for a, m in enumerate(maps):
                    b.emit(layer.name, "downsample", max(step_cycle - 1, b.cycle), array=a, crop_odd=s.crop_odd,
                           cells=out_cells)
                cur_cells = out_cells
        last = max(step_cycle - 1, b.cycle)
        for a, m in enumerate(maps):
            b.emit(layer.name, "mem_write", last, array=a, slot=out_slots[m], cells=cur_cells, tiles=tiles)
        b.cycle = last + 1
    return out_slots


def _layer_program(layer: LayerSpec, hw: HardwareConfig) -> TemplateProgram:
    if layer.kind == "relu":
        return activation_program(layer.relu_kind)
    return pool_program(layer.pool_kind, layer.downsample, layer.crop_odd, neighborhood=hw.pool_neighborhood)


def _check_memory(events: list, hw: HardwareConfig, input_slots: tuple) -> int:
    """Replay slot lifetimes; return the peak live-slot count on any array.

    A slot occupies a cell of the array that wrote it from the write until
    its last read. Slots that are never read stay live to the end.
    """
    reads = {"mem_read", "mem_accumulate"}
    last_use: dict = {}
    for k, e in enumerate(events):
        if e.op in reads:
            last_use[e.slot] = k
        elif e.op == "adc":
            for s in e.slots:
                last_use[s] = k
    frees: dict = defaultdict(list)
    for s, k in last_use.items():
        frees[k].append(s)
    written = set(input_slots)
    home: dict = {}
    live: dict = defaultdict(set)
    peak = 0
    for k, e in enumerate(events):
        used = (e.slot,) if e.op in reads else e.slots if e.op == "adc" else ()
        for s in used:
            if s not in written:
                raise TraceError(f"event {k} ({e.layer} {e.op}) reads slot {s!r} before it is written")
        if e.op == "mem_write":
            written.add(e.slot)
            if e.slot in home:
                live[home[e.slot]].discard(e.slot)
            home[e.slot] = e.array
            live[e.array].add(e.slot)
            if len(live[e.array]) > peak:
                peak = len(live[e.array])
                if peak > hw.mem_slots_per_cell:
                    raise MemoryOverflowError(peak, hw.mem_slots_per_cell, f"layer {e.layer} (array {e.array})")
        for s in frees.get(k, ()):
            if s in home and last_use[s] == k:
                live[home[s]].discard(s)
    return peak


def compile_network(net: NetworkSpec, hw: HardwareConfig) -> CeNNProgram:
    """Lower ``net`` onto ``hw`` and validate the resulting trace."""
    b = _Builder(net, hw)
    slots = [f"input:{j}" for j in range(net.input_maps)]
    input_slots = tuple(slots)
    final: dict = {"kind": "maps", "slots": slots}
    for idx, layer in enumerate(net.layers):
        last = idx == len(net.layers) - 1
        if layer.kind == "conv":
            slots = _lower_conv(b, layer, slots, last and layer.readout == "center")
        elif layer.kind in ("relu", "pool"):
            slots = _lower_program(b, layer, _layer_program(layer, hw), slots)
        else:
            count = layer.in_features
            b.emit(layer.name, "adc", count=count, pixels="all", slots=tuple(slots))
            b.cycle += 1
            b.emit(layer.name, "digital_fc", count=layer.out_maps * layer.in_features)
            b.cycle += 1
            final = {"kind": "fc", "layer": layer.name}
            continue
        final = {"kind": "maps", "slots": slots}
        if last and layer.kind == "conv" and layer.readout is not None:
            rows, cols = layer.out_shape
            pixels = "center" if layer.readout == "center" else "all"
            count = len(slots) * (1 if pixels == "center" else rows * cols)
            b.emit("readout", "adc", count=count, pixels=pixels, slots=tuple(slots))
            b.cycle += 1
            if layer.readout == "mean":
                b.emit("readout", "digital_mean", count=len(slots) * (rows * cols - 1))
                b.cycle += 1
            final = {"kind": layer.readout, "slots": slots}
    order = []
    for e in b.events:
        if e.layer not in order:
            order.append(e.layer)
    peak = _check_memory(b.events, hw, input_slots)
    return CeNNProgram(net.name, hw, b.events, b.templates, order, input_slots, final, peak)


compile = compile_network  # noqa: A001


# --- execution ---------------------------------------------------------------------

@dataclass
class ExecutionStats:
    events: Counter = field(default_factory=Counter)
    settles: int = 0
    clipped: int = 0
    cells: int = 0
    fc_saturations: int = 0

    @property
    def clip_rate(self) -> float:
        return self.clipped / self.cells if self.cells else 0.0


@dataclass
class ExecutionResult:
    scores: np.ndarray  # (batch, classes)
    predictions: np.ndarray  # (batch,)
    stats: ExecutionStats


def _bind_entry(entry: TemplateEntry, net: NetworkSpec, q: Optional[QuantSpec]) -> TemplateEntry:
    """Load trained kernels from ``net``; quantize them once if a grid is given."""
    if not entry.source:
        return entry
    name, i, j = entry.source
    layer = net.layer(name)
    kernel = layer.kernel[i, j]
    z = layer.bias[i] if j == 0 else 0.0
    if q is not None:
        kernel, z = quantize(kernel, q), quantize(z, q)
    return replace(entry, template=conv_template(kernel, z, name=entry.template.name))


def make_physics(mode: str, curve: Optional[OtaCurve] = None) -> Physics:
    if mode != "nonideal":
        return IDEAL
    curve = curve if curve is not None else default_curve()
    # a straight-line table is the ideal product; skip the lookup to keep results bit-identical
    if curve.is_identity:
        return IDEAL
    return Physics(transfer=curve)


def execute(prog: CeNNProgram, net: NetworkSpec, images, mode: str = "ideal",
            curve: Optional[OtaCurve] = None, bits: Optional[int] = None) -> ExecutionResult:
    """Replay the trace on a batch of images shaped (batch, maps, rows, cols)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if prog.network != net.name:
        raise TraceError(f"program was compiled for {prog.network!r}, not {net.name!r}")
    if not net.has_weights:
        raise TraceError(f"network {net.name!r} has no weights loaded")
    x = np.asarray(images, dtype=float)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != (net.input_maps, *net.input_shape):
        raise ValueError(f"expected images shaped (batch, {net.input_maps}, {net.input_shape[0]}, "
                         f"{net.input_shape[1]}), got {x.shape}")
    q = None
    if mode == "quantized":
        q = QuantSpec(bits or prog.hw.precision)
        x = quantize(x, q)
    hook = (lambda m: quantize(m, q)) if q is not None else None
    physics = make_physics(mode, curve)
    store = {k: _bind_entry(v, net, q) for k, v in prog.templates.items()}

    mem = {slot: x[:, j] for j, slot in enumerate(prog.input_slots)}
    regs: dict = {}
    stats = ExecutionStats()
    run = RunStats()
    adc_values = None
    scores = None
    for e in prog.events:
        stats.events[e.op] += 1
        op = e.op
        if op == "mem_read":
            regs[e.array] = mem[e.slot]
        elif op == "template":
            entry = store[e.template]
            out = apply_template(regs[e.array], entry.template, entry.boundary, physics, entry.t_max, stats=run)
            regs[e.array] = hook(out) if hook else out
        elif op == "accumulate":
            out = add_maps(regs[e.array], regs[e.src])
            regs[e.array] = hook(out) if hook else out
        elif op == "mem_accumulate":
            out = add_maps(regs[e.array], mem[e.slot])
            regs[e.array] = hook(out) if hook else out
        elif op == "mem_write":
            mem[e.slot] = regs[e.array]
        elif op == "downsample":
            regs[e.array] = downsample_2x2(regs[e.array], e.crop_odd)
        elif op == "adc":
            maps = [mem[s] for s in e.slots]
            if e.pixels == "center":
                adc_values = np.stack([m[:, m.shape[-2] // 2, m.shape[-1] // 2] for m in maps], axis=1)
            else:
                adc_values = np.stack(maps, axis=1).reshape(len(x), -1)
            if q is not None:
                adc_values = quantize(adc_values, q)
            scores = adc_values
        elif op == "digital_fc":
            layer = net.layer(e.layer)
            scores, sats = _fc_scores(adc_values, layer, q)
            stats.fc_saturations += sats
        elif op == "digital_mean":
            rows_cols = adc_values.shape[1] // len(prog.final["slots"])
            scores = adc_values.reshape(len(x), -1, rows_cols).mean(axis=2)
    if scores is None:
        scores = np.stack([mem[s] for s in prog.final["slots"]], axis=1).reshape(len(x), -1)
    stats.settles, stats.clipped, stats.cells = run.settles, run.clipped, run.cells
    preds = np.array([argmax(s) for s in scores], dtype=np.int64)
    return ExecutionResult(np.asarray(scores, dtype=float), preds, stats)


def _fc_scores(values: np.ndarray, layer: LayerSpec, q: Optional[QuantSpec]) -> tuple[np.ndarray, int]:
    w, bias = layer.fc_weights, layer.fc_bias
    if q is None:
        return values @ w.T + bias, 0
    fmt = FixedPointFormat(q.bits)
    wc = to_codes(w, q)
    bias_codes = np.rint(bias / (q.step * q.step)).astype(np.int64)
    out = []
    sats = 0
    for row in to_codes(values, q):
        res = fc_eval(row, wc, fmt)
        sats += res.saturations
        out.append((res.scores + bias_codes) * (q.step * q.step))
    return np.array(out), sats


def predict(net: NetworkSpec, hw: HardwareConfig, images, mode: str = "ideal", **kw) -> ExecutionResult:
    return execute(compile_network(net, hw), net, images, mode, **kw)
