"""Template programs that realize CNN layer math as sequences of CeNN steps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import (
    IDEAL,
    BoundaryPolicy,
    CeNNArrayState,
    Physics,
    PreconditionError,
    Template,
    center_template,
    settle,
)

DIRECTIONS = {"N": (0, 1), "S": (2, 1), "E": (1, 2), "W": (1, 0)}
POOL_NEIGHBORHOODS = ("square", "cross")
GLOBMAX_T_MAX = 24.0


class ShapeError(ValueError):
    pass


class ProgramError(ValueError):
    pass


@dataclass(frozen=True)
class ApplyTemplate:
    template: Template


@dataclass(frozen=True)
class StoreToMem:
    slot: str


@dataclass(frozen=True)
class LoadToInput:
    slot: str


@dataclass(frozen=True)
class AddFromMem:
    slot: str


@dataclass(frozen=True)
class Downsample2x2:
    crop_odd: bool = False


@dataclass(frozen=True)
class WriteBack:
    """Marks the working map as the program result; no data movement."""


Step = Union[ApplyTemplate, StoreToMem, LoadToInput, AddFromMem, Downsample2x2, WriteBack]


@dataclass(frozen=True)
class TemplateProgram:
    steps: tuple
    boundary: BoundaryPolicy = BoundaryPolicy.ZERO
    inputs: tuple = ()
    name: str = ""
    t_max: float = 20.0

    def __post_init__(self):
        steps = tuple(self.steps)
        if not steps:
            raise ProgramError("a template program needs at least one step")
        written = set(self.inputs)
        for k, s in enumerate(steps):
            if isinstance(s, StoreToMem):
                written.add(s.slot)
            elif isinstance(s, (LoadToInput, AddFromMem)) and s.slot not in written:
                raise ProgramError(f"step {k} reads slot {s.slot!r} before it is written")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "boundary", BoundaryPolicy(self.boundary))

    @property
    def templates(self) -> list[Template]:
        return [s.template for s in self.steps if isinstance(s, ApplyTemplate)]

    @property
    def distinct_templates(self) -> list[Template]:
        seen: list[Template] = []
        for t in self.templates:
            if t not in seen:
                seen.append(t)
        return seen

    @property
    def compute_steps(self) -> int:
        """Template settles plus memory accumulates, each one array step."""
        return sum(isinstance(s, (ApplyTemplate, AddFromMem)) for s in self.steps)

    @property
    def downsamples(self) -> bool:
        return any(isinstance(s, Downsample2x2) for s in self.steps)

    @property
    def slots(self) -> list[str]:
        out: list[str] = []
        for s in self.steps:
            if isinstance(s, StoreToMem) and s.slot not in out:
                out.append(s.slot)
        return out

    def __add__(self, other: "TemplateProgram") -> "TemplateProgram":
        return TemplateProgram(self.steps + other.steps, self.boundary, self.inputs,
                               self.name or other.name, max(self.t_max, other.t_max))


def add_maps(a, b):
    """Elementwise saturated sum used for partial-sum accumulation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"cannot add maps of shapes {a.shape} and {b.shape}")
    return np.clip(a + b, -1.0, 1.0)


def downsample_2x2(m: np.ndarray, crop_odd: bool = False) -> np.ndarray:
    """Keep the top-left cell of every 2x2 group."""
    rows, cols = m.shape[-2:]
    if (rows % 2 or cols % 2) and not crop_odd:
        raise ShapeError(f"2x2 downsampling needs even dimensions, got {rows}x{cols}")
    return m[..., 0 : rows - rows % 2 : 2, 0 : cols - cols % 2 : 2]


def downsampled_shape(shape: tuple[int, int], crop_odd: bool = False) -> tuple[int, int]:
    rows, cols = shape
    if (rows % 2 or cols % 2) and not crop_odd:
        raise ShapeError(f"2x2 downsampling needs even dimensions, got {rows}x{cols}")
    return rows // 2, cols // 2


# --- template constructors -------------------------------------------------

def conv_template(kernel, bias: float = 0.0, name: str = "conv") -> Template:
    """Kernel in correlation orientation, as ML frameworks store it.

    The cell neighbour sum is already a correlation, so the kernel maps onto
    B unchanged.
    """
    k = np.asarray(kernel, dtype=float)
    if k.shape != (3, 3):
        raise ShapeError(f"conv kernels must be 3x3, got {k.shape}")
    return Template(b=k, z=bias, name=name)


RELU_DEC = center_template(1.0, -1.0, "relu_dec")
RELU_INC = center_template(1.0, 1.0, "relu_inc")
INC = center_template(1.0, 1.0, "inc")
MULT = center_template(2.0, 0.0, "mult")
SHIFT_DOWN = center_template(1.0, -1.0, "shift_down")
HALF = center_template(0.5, 0.0, "half")
NEG_HALF = center_template(-0.5, 0.0, "neg_half")


def diff_template(direction: str) -> Template:
    """0.5 * neighbour - 0.5 * self - 1."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {sorted(DIRECTIONS)}, got {direction!r}")
    b = np.zeros((3, 3))
    b[1, 1] = -0.5
    b[DIRECTIONS[direction]] = 0.5
    return Template(b=b, z=-1.0, name=f"diff_{direction}")


def avg_template(window: str) -> Template:
    b = np.zeros((3, 3))
    if window == "2x2":
        # anchor is the top-left cell of the window: self, east, south, south-east
        b[1:, 1:] = 0.25
    elif window == "3x3":
        b[:] = 1.0 / 9.0
    else:
        raise ValueError(f"window must be '2x2' or '3x3', got {window!r}")
    return Template(b=b, name=f"avg_{window}")


def relu_like_template() -> Template:
    b = np.zeros((3, 3))
    b[1, 1] = 1.0
    return Template(b=b, d="relu_like", name="relu_nl")


def globmax_template() -> Template:
    a = np.zeros((3, 3))
    a[1, 1] = 1.0
    return Template(a=a, d="globmax_like", name="globmax")


# --- programs ----------------------------------------------------------------

def conv_program(kernel, bias: float = 0.0) -> TemplateProgram:
    return TemplateProgram((ApplyTemplate(conv_template(kernel, bias)),), name="conv")


def relu_program() -> TemplateProgram:
    return TemplateProgram((ApplyTemplate(RELU_DEC), ApplyTemplate(RELU_INC)), name="relu")


def maxpool_compare_step(direction: str, slot: str = "pre") -> TemplateProgram:
    """Replace each pixel by max(self, neighbour in ``direction``).

    Exact when the two values differ by at most 1, which holds for maps in
    [0, 1] such as ReLU outputs.
    """
    steps = (
        StoreToMem(slot),
        ApplyTemplate(diff_template(direction)),
        ApplyTemplate(INC),
        ApplyTemplate(MULT),
        AddFromMem(slot),
    )
    return TemplateProgram(steps, BoundaryPolicy.REPLICATE, name=f"max_{direction}")


def _max_merge(other: str, tmp: str) -> tuple:
    """Working map H, slot ``other`` holding V: leave max(V, H) in the working map."""
    return (
        StoreToMem("h"),
        ApplyTemplate(NEG_HALF),
        StoreToMem(tmp),
        LoadToInput(other),
        ApplyTemplate(HALF),
        AddFromMem(tmp),
        ApplyTemplate(SHIFT_DOWN),
        ApplyTemplate(INC),
        ApplyTemplate(MULT),
        AddFromMem("h"),
    )


def maxpool_program(downsample: bool = False, neighborhood: str = "square",
                    crop_odd: bool = False) -> TemplateProgram:
    """Linear-template max pooling.

    ``square`` runs the four directional compares in place, 16 array steps;
    because each compare sees the previous one's result the window grows to
    the full 3x3 square. ``cross`` keeps vertical and horizontal passes
    apart and merges them, giving the exact 4-neighbour max in 23 steps.
    """
    if neighborhood == "square":
        steps: tuple = ()
        for d in "NSEW":
            steps += maxpool_compare_step(d).steps
    elif neighborhood == "cross":
        steps = (StoreToMem("x"),)
        steps += maxpool_compare_step("N").steps + maxpool_compare_step("S").steps
        steps += (StoreToMem("v"), LoadToInput("x"))
        steps += maxpool_compare_step("E").steps + maxpool_compare_step("W").steps
        steps += _max_merge("v", "t")
    else:
        raise ValueError(f"neighborhood must be one of {POOL_NEIGHBORHOODS}, got {neighborhood!r}")
    if downsample:
        steps += (Downsample2x2(crop_odd),)
    return TemplateProgram(steps + (WriteBack(),), BoundaryPolicy.REPLICATE, name=f"maxpool_{neighborhood}")


def avgpool_program(window: str = "2x2", downsample: bool = False, crop_odd: bool = False) -> TemplateProgram:
    steps: tuple = (ApplyTemplate(avg_template(window)),)
    if downsample:
        steps += (Downsample2x2(crop_odd),)
    return TemplateProgram(steps + (WriteBack(),), BoundaryPolicy.REPLICATE, name=f"avgpool_{window}")


def nonlinear_relu_program() -> TemplateProgram:
    return TemplateProgram((ApplyTemplate(relu_like_template()),), name="relu_nl")


def nonlinear_pool_program(t_max: float = GLOBMAX_T_MAX, downsample: bool = False,
                           crop_odd: bool = False) -> TemplateProgram:
    steps: tuple = (ApplyTemplate(globmax_template()),)
    if downsample:
        steps += (Downsample2x2(crop_odd),)
    return TemplateProgram(steps + (WriteBack(),), BoundaryPolicy.REPLICATE, name="globmax", t_max=t_max)


# --- execution -----------------------------------------------------------------

MapHook = Callable[[np.ndarray], np.ndarray]


@dataclass
class RunStats:
    settles: int = 0
    clipped: int = 0
    cells: int = 0
    mem_reads: int = 0
    mem_writes: int = 0

    def merge(self, other: "RunStats") -> None:
        self.settles += other.settles
        self.clipped += other.clipped
        self.cells += other.cells
        self.mem_reads += other.mem_reads
        self.mem_writes += other.mem_writes


def apply_template(u: np.ndarray, t: Template, boundary=BoundaryPolicy.ZERO, physics: Physics = IDEAL,
                   t_max: float = 20.0, active=None, stats: Optional[RunStats] = None) -> np.ndarray:
    """One array settle on input map(s) ``u``; returns the output plane."""
    u = np.asarray(u, dtype=float)
    if active is None:
        active = np.ones(u.shape[-2:], dtype=bool)
    state = CeNNArrayState(u=np.where(active, u, 0.0), x=np.zeros_like(u), y=np.zeros_like(u), active=active)
    out = settle(state, t, boundary, t_max=t_max, physics=physics)
    if stats is not None:
        act = np.broadcast_to(active, out.x.shape)
        stats.settles += 1
        stats.clipped += int(np.count_nonzero((np.abs(out.x) > 1.0) & act))
        stats.cells += int(np.count_nonzero(act))
    return out.y


def run_program(prog: TemplateProgram, u, *, physics: Physics = IDEAL, map_hook: Optional[MapHook] = None,
                memory: Optional[dict] = None, stats: Optional[RunStats] = None, active=None) -> np.ndarray:
    """Execute ``prog`` on the working map ``u`` (leading batch axes allowed).

    ``map_hook`` post-processes every map the array produces, e.g. to
    quantize it to the hardware bit width.
    """
    cur = np.asarray(u, dtype=float)
    mem = {} if memory is None else memory
    for slot in prog.inputs:
        if slot not in mem:
            raise ProgramError(f"external input slot {slot!r} not provided")
    hook = map_hook or (lambda m: m)
    for s in prog.steps:
        if isinstance(s, ApplyTemplate):
            cur = hook(apply_template(cur, s.template, prog.boundary, physics, prog.t_max, active, stats))
        elif isinstance(s, StoreToMem):
            mem[s.slot] = cur
            if stats is not None:
                stats.mem_writes += 1
        elif isinstance(s, LoadToInput):
            cur = mem[s.slot]
            if stats is not None:
                stats.mem_reads += 1
        elif isinstance(s, AddFromMem):
            cur = hook(add_maps(cur, mem[s.slot]))
            if stats is not None:
                stats.mem_reads += 1
        elif isinstance(s, Downsample2x2):
            cur = downsample_2x2(cur, s.crop_odd)
            if active is not None:
                active = downsample_2x2(active, s.crop_odd)
        elif isinstance(s, WriteBack):
            pass
        else:  # pragma: no cover
            raise ProgramError(f"unknown step {s!r}")
    return cur


def pool_program(kind: str, downsample: bool = False, crop_odd: bool = False, window: str = "2x2",
                 neighborhood: str = "square", t_max: float = GLOBMAX_T_MAX) -> TemplateProgram:
    if kind == "max_linear":
        return maxpool_program(downsample, neighborhood, crop_odd)
    if kind == "avg":
        return avgpool_program(window, downsample, crop_odd)
    if kind == "nonlinear":
        return nonlinear_pool_program(t_max, downsample, crop_odd)
    raise ValueError(f"unknown pool kind {kind!r}")


def activation_program(kind: str) -> TemplateProgram:
    if kind == "linear":
        return relu_program()
    if kind == "nonlinear":
        return nonlinear_relu_program()
    raise ValueError(f"unknown relu kind {kind!r}")
