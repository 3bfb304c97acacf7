"""Delay, energy and EDP: a closed-form model and a trace-driven accounting.

Units throughout: nanoseconds and picojoules. EDP is reported in ns*pJ and
in J*s.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

from .netspec import NetworkSpec
from .scheduler import SETTLE_OPS, CeNNProgram, HardwareConfig, _layer_program

DELAY_PARTS = ("cenn", "prog", "mem", "adc", "fc")
ENERGY_PARTS = ("cenn", "sram", "mem", "adc", "fc")
TEMPLATE_VALUES = 10  # nine B entries plus the bias


class CostModelError(ValueError):
    pass


class ModelDomainError(CostModelError):
    pass


@dataclass(frozen=True)
class CostParams:
    name: str = "custom"
    bits: int = 4
    t_cenn_ns: float = 4.34
    t_prog_ns: float = 1.0
    t_mem_read_ns: float = 0.253
    t_mem_write_ns: float = 0.124
    e_array_step_pj: float = 0.0
    e_cell_step_pj: float = 0.0
    e_cell_overrides: dict = field(default_factory=dict)  # "network/layer" -> pJ per cell step
    e_mem_read_pj: float = 0.055  # per cell
    e_mem_write_pj: float = 0.055  # per cell
    sram_word_bits: int = 40
    sram_read_pj: float = 2.0  # per word
    adc: dict = field(default_factory=dict)  # "bits" -> {"slot_ns": .., "sample_pj": ..}
    fa_delay_ns: float = 0.038875
    fa_energy_pj: float = 0.0053691
    fc_lanes: int = 196
    note: str = ""

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and (v < 0 or not math.isfinite(v)):
                raise CostModelError(f"cost parameter {f.name} must be finite and nonnegative, got {v}")
        for k, v in self.e_cell_overrides.items():
            if v < 0:
                raise CostModelError(f"energy override {k} is negative")
        if str(self.bits) not in self.adc:
            raise CostModelError(f"no ADC constants for {self.bits}-bit operation")
        if self.fc_lanes < 1 or self.sram_word_bits < 1:
            raise CostModelError("fc_lanes and sram_word_bits must be positive")

    @property
    def step_ns(self) -> float:
        return self.t_cenn_ns + self.t_prog_ns

    @property
    def adc_slot_ns(self) -> float:
        return self.adc[str(self.bits)]["slot_ns"]

    @property
    def adc_sample_pj(self) -> float:
        return self.adc[str(self.bits)]["sample_pj"]

    @property
    def sram_words_per_template(self) -> int:
        return math.ceil(TEMPLATE_VALUES * self.bits / self.sram_word_bits)

    @property
    def mac_depth(self) -> int:
        """Full-adder delays of one array multiply followed by one ripple add."""
        return 2 * self.bits + 3 * self.bits

    @property
    def mac_adders(self) -> int:
        return self.bits * (self.bits - 1) + 3 * self.bits

    def e_cell(self, network: str, layer: str) -> float:
        return self.e_cell_overrides.get(f"{network}/{layer}", self.e_cell_step_pj)

    def to_dict(self) -> dict:
        return asdict(self)


def params_from_dict(doc: dict) -> CostParams:
    known = {f.name for f in fields(CostParams)}
    unknown = set(doc) - known
    if unknown:
        raise CostModelError(f"unknown cost parameters: {sorted(unknown)}")
    return CostParams(**doc)


def cost_preset_path(name: str) -> Path:
    return Path(str(resources.files("cenn_forge") / "data" / "cost" / f"{name}.json"))


def load_cost_params(path_or_preset) -> CostParams:
    path = Path(path_or_preset)
    if not path.exists() and not path.suffix:
        path = cost_preset_path(str(path_or_preset))
    if not path.exists():
        raise FileNotFoundError(f"cost preset not found: {path_or_preset}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CostModelError(f"cannot parse cost preset {path}: {exc}") from None
    return params_from_dict(doc)


def save_cost_params(params: CostParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2, sort_keys=True) + "\n")


def precision_scale(params: CostParams, delay_factor: float = 4.3, power_factor: float = 7.5,
                    bits: int = 8, name: Optional[str] = None) -> CostParams:
    """Re-target analog constants to another bit width.

    Settle and reprogramming delays scale by ``delay_factor``; analog step
    energies scale by ``power_factor``. SRAM traffic follows the template
    word width and the digital FC is re-derived from the operand width, so
    both change through ``bits`` alone. ADC constants are looked up for the
    new width.
    """
    return replace(
        params,
        name=name or (params.name if bits == params.bits else f"{params.name}-scaled-{bits}bit"),
        bits=bits,
        t_cenn_ns=params.t_cenn_ns * delay_factor,
        t_prog_ns=params.t_prog_ns * delay_factor,
        e_array_step_pj=params.e_array_step_pj * power_factor,
        e_cell_step_pj=params.e_cell_step_pj * power_factor,
        e_cell_overrides={k: v * power_factor for k, v in params.e_cell_overrides.items()},
    )


@dataclass
class LayerCost:
    layer: str
    cycles: int
    delay: dict
    energy: dict

    @property
    def delay_ns(self) -> float:
        return sum(self.delay.values())

    @property
    def energy_pj(self) -> float:
        return sum(self.energy.values())


@dataclass
class CostReport:
    network: str
    params: str
    layers: list

    @property
    def delay_ns(self) -> float:
        return sum(l.delay_ns for l in self.layers)

    @property
    def energy_pj(self) -> float:
        return sum(l.energy_pj for l in self.layers)

    @property
    def edp_ns_pj(self) -> float:
        return self.delay_ns * self.energy_pj

    @property
    def edp_js(self) -> float:
        return self.delay_ns * 1e-9 * self.energy_pj * 1e-12

    def layer(self, name: str) -> LayerCost:
        for l in self.layers:
            if l.layer == name:
                return l
        raise KeyError(name)

    def breakdown(self) -> dict:
        out = {f"{p}_ns": sum(l.delay[p] for l in self.layers) for p in DELAY_PARTS}
        out.update({f"{p}_pj": sum(l.energy[p] for l in self.layers) for p in ENERGY_PARTS})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "cycles", "delay_ns", "energy_pj"] + [f"{p}_ns" for p in DELAY_PARTS]
                   + [f"{p}_pj" for p in ENERGY_PARTS])
        for l in self.layers:
            w.writerow([l.layer, l.cycles, f"{l.delay_ns:.6f}", f"{l.energy_pj:.6f}"]
                       + [f"{l.delay[p]:.6f}" for p in DELAY_PARTS] + [f"{l.energy[p]:.6f}" for p in ENERGY_PARTS])
        b = self.breakdown()
        w.writerow(["total", sum(l.cycles for l in self.layers), f"{self.delay_ns:.6f}", f"{self.energy_pj:.6f}"]
                   + [f"{b[p + '_ns']:.6f}" for p in DELAY_PARTS] + [f"{b[p + '_pj']:.6f}" for p in ENERGY_PARTS])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "network": self.network,
            "cost_params": self.params,
            "delay_ns": round(self.delay_ns, 6),
            "energy_pj": round(self.energy_pj, 6),
            "edp_ns_pj": round(self.edp_ns_pj, 6),
            "edp_js": float(f"{self.edp_js:.9e}"),
        }


def _cycle_cost(events: list, params: CostParams, network: str, adc_count: int) -> tuple[dict, dict]:
    delay = dict.fromkeys(DELAY_PARTS, 0.0)
    energy = dict.fromkeys(ENERGY_PARTS, 0.0)
    tiles = max(e.tiles for e in events)
    settles = [e for e in events if e.op in SETTLE_OPS]
    has_read = any(e.op in ("mem_read", "mem_accumulate") for e in events)
    has_write = any(e.op == "mem_write" for e in events)
    mem_ns = (params.t_mem_read_ns if has_read else 0.0) + (params.t_mem_write_ns if has_write else 0.0)
    if settles:
        delay["cenn"] = tiles * params.t_cenn_ns
        delay["prog"] = tiles * params.t_prog_ns
        # memory traffic overlaps template reprogramming; only the excess shows
        delay["mem"] = tiles * max(0.0, mem_ns - params.t_prog_ns)
    elif mem_ns:
        delay["mem"] = tiles * mem_ns
    for e in events:
        if e.op in SETTLE_OPS:
            if e.cells <= 0:
                raise CostModelError(f"missing active-cell count for {e.layer} {e.op} at cycle {e.cycle}")
            energy["cenn"] += e.tiles * params.e_array_step_pj + e.cells * params.e_cell(network, e.layer)
        if e.op in ("mem_read", "mem_accumulate"):
            energy["mem"] += e.cells * params.e_mem_read_pj
        elif e.op == "mem_write":
            energy["mem"] += e.cells * params.e_mem_write_pj
        elif e.op == "sram_read":
            energy["sram"] += e.count * params.sram_words_per_template * params.sram_read_pj
        elif e.op == "adc":
            delay["adc"] += math.ceil(e.count / adc_count) * params.adc_slot_ns
            energy["adc"] += e.count * params.adc_sample_pj
        elif e.op == "digital_fc":
            delay["fc"] += math.ceil(e.count / params.fc_lanes) * params.mac_depth * params.fa_delay_ns
            energy["fc"] += e.count * params.mac_adders * params.fa_energy_pj
        elif e.op == "digital_mean":
            delay["fc"] += math.ceil(e.count / params.fc_lanes) * 3 * params.bits * params.fa_delay_ns
            energy["fc"] += e.count * 3 * params.bits * params.fa_energy_pj
    return delay, energy


def trace_cost(prog: CeNNProgram, params: CostParams) -> CostReport:
    """Charge every trace cycle once; cycles never overlap."""
    by_cycle: dict = {}
    for e in prog.events:
        by_cycle.setdefault(e.cycle, []).append(e)
    rows: dict = {}
    for cycle in sorted(by_cycle):
        evs = by_cycle[cycle]
        layer = evs[0].layer
        d, en = _cycle_cost(evs, params, prog.network, prog.hw.adc_count)
        row = rows.setdefault(layer, LayerCost(layer, 0, dict.fromkeys(DELAY_PARTS, 0.0),
                                               dict.fromkeys(ENERGY_PARTS, 0.0)))
        row.cycles += 1
        for k, v in d.items():
            row.delay[k] += v
        for k, v in en.items():
            row.energy[k] += v
    return CostReport(prog.network, params.name, [rows[l] for l in prog.layer_order])


# --- closed-form model ------------------------------------------------------------

@dataclass
class AnalyticReport:
    network: str
    layers: list  # (layer, delay_ns)

    @property
    def delay_ns(self) -> float:
        return sum(d for _, d in self.layers)

    def layer(self, name: str) -> float:
        return dict(self.layers)[name]


def conv_delay_formula(c_out: int, c_in: int, n: int, params: CostParams) -> float:
    if n == 1:
        raise ModelDomainError("the closed-form conv delay divides by N - 1 and is undefined for a single "
                               "array; use trace_cost instead")
    cc = c_out * c_in
    return ((cc / (n - 1) + cc / n) * params.step_ns
            + cc / (2 * (n - 1)) * params.t_mem_read_ns
            + cc / (2 * (n - 1)) * params.t_mem_write_ns)


def analytic_delay(net: NetworkSpec, hw: HardwareConfig, params: CostParams) -> AnalyticReport:
    """Closed-form per-layer delay.

    Conv layers follow the literal formula; ReLU and pooling charge their
    program step count for every group of N maps; ADC and FC use the same
    per-sample and per-MAC constants as the trace model.
    """
    n = hw.n_arrays
    rows = []
    for idx, layer in enumerate(net.layers):
        groups = math.ceil(layer.in_maps / n)
        if layer.kind == "conv":
            d = conv_delay_formula(layer.out_maps, layer.in_maps, n, params)
        elif layer.kind in ("relu", "pool"):
            d = _layer_program(layer, hw).compute_steps * groups * params.step_ns
        else:
            samples = layer.in_features
            macs = layer.out_maps * layer.in_features
            d = (math.ceil(samples / hw.adc_count) * params.adc_slot_ns
                 + math.ceil(macs / params.fc_lanes) * params.mac_depth * params.fa_delay_ns)
        rows.append((layer.name, d))
        last = idx == len(net.layers) - 1
        if last and layer.kind == "conv" and layer.readout is not None:
            cells = 1 if layer.readout == "center" else layer.out_shape[0] * layer.out_shape[1]
            samples = layer.out_maps * cells
            d = math.ceil(samples / hw.adc_count) * params.adc_slot_ns
            if layer.readout == "mean":
                d += math.ceil(layer.out_maps * (cells - 1) / params.fc_lanes) * 3 * params.bits * params.fa_delay_ns
            rows.append(("readout", d))
    return AnalyticReport(net.name, rows)
