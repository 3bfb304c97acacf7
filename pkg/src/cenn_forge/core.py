"""Single CeNN array dynamics.

A cell grid evolves under

    dx/dt = -x + sum(a * y_nbr) + sum(b * u_nbr) + z,    y = sat(x)

in normalized units (R_cell = C_cell = 1, time in cell time constants).
Feed-forward templates (a == 0) have the closed-form steady state
x = B*u + z, which :func:`settle_feedforward` evaluates directly.

Every settle function accepts grids with arbitrary leading batch axes; the
stencil always runs over the last two axes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

#: nonlinear cell-interaction functions understood by the simulator
D_KINDS = ("none", "relu_like", "globmax_like")


class CeNNError(Exception):
    """Base class for simulator errors."""


class TemplateError(CeNNError, ValueError):
    pass


class PreconditionError(CeNNError, ValueError):
    pass


class InstabilityError(CeNNError, ArithmeticError):
    """Raised when the integrated state leaves the blow-up bound."""

    def __init__(self, step: int, peak: float):
        super().__init__(f"state diverged at integration step {step} (|x| = {peak:.3g})")
        self.step = step
        self.peak = peak


class BoundaryPolicy(str, enum.Enum):
    """Virtual cells outside the grid: all-zero, or a copy of the edge cell."""

    ZERO = "zero"
    REPLICATE = "replicate"


def sat(x):
    """Piecewise-linear output nonlinearity 0.5|x+1| - 0.5|x-1|.

    Works on scalars and arrays. Non-finite input raises ``ValueError``.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("sat() requires finite input")
    out = np.clip(arr, -1.0, 1.0)
    if np.ndim(x) == 0:
        return float(out)
    return out


def _as_3x3(m, name: str) -> np.ndarray:
    arr = np.array(m, dtype=float)
    if arr.shape != (3, 3):
        raise TemplateError(f"{name} template must be 3x3 (radius 1), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise TemplateError(f"{name} template has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Template:
    """One CeNN operation: feedback ``a``, feed-forward ``b``, bias ``z``.

    Template matrices are indexed so that ``b[1 + di, 1 + dj]`` weights the
    neighbour at row offset ``di`` and column offset ``dj``; ``b[0, 1]`` is
    the north neighbour. With this layout the neighbour sum is a plain
    2-D cross-correlation.
    """

    a: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    b: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    z: float = 0.0
    d: str = "none"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "a", _as_3x3(self.a, "A"))
        object.__setattr__(self, "b", _as_3x3(self.b, "B"))
        z = float(self.z)
        if not math.isfinite(z):
            raise TemplateError("bias Z must be finite")
        object.__setattr__(self, "z", z)
        if self.d not in D_KINDS:
            raise TemplateError(f"unknown nonlinear template kind {self.d!r}")

    @property
    def is_feedforward(self) -> bool:
        return self.d == "none" and not np.any(self.a)

    def __eq__(self, other):
        if not isinstance(other, Template):
            return NotImplemented
        return (
            np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
            and self.z == other.z
            and self.d == other.d
        )

    def __hash__(self):
        return hash((self.a.tobytes(), self.b.tobytes(), self.z, self.d))

    def renamed(self, name: str) -> "Template":
        return replace(self, name=name)


def center_template(gain: float, z: float = 0.0, name: str = "") -> Template:
    b = np.zeros((3, 3))
    b[1, 1] = gain
    return Template(b=b, z=z, name=name)


@dataclass
class CeNNArrayState:
    """Input, state and output planes of one array plus its power-gating mask."""

    u: np.ndarray
    x: np.ndarray
    y: np.ndarray
    active: np.ndarray

    @classmethod
    def from_input(cls, u, active=None, x0=None) -> "CeNNArrayState":
        u = np.array(u, dtype=float)
        if u.ndim < 2 or u.shape[-1] < 1 or u.shape[-2] < 1:
            raise PreconditionError(f"input grid must be at least 2-D, got shape {u.shape}")
        if np.any(np.abs(u) > 1.0):
            raise PreconditionError("input voltages must lie in [-1, 1]")
        if active is None:
            active = np.ones(u.shape[-2:], dtype=bool)
        active = np.asarray(active, dtype=bool)
        x = np.zeros_like(u) if x0 is None else np.array(x0, dtype=float)
        x = np.where(active, x, 0.0)
        u = np.where(active, u, 0.0)
        return cls(u=u, x=x, y=np.clip(x, -1.0, 1.0), active=active)

    @property
    def rows(self) -> int:
        return self.u.shape[-2]

    @property
    def cols(self) -> int:
        return self.u.shape[-1]


def neighbor_sum(plane: np.ndarray, weights: np.ndarray, boundary=BoundaryPolicy.ZERO) -> np.ndarray:
    """Radius-1 cross-correlation of ``plane`` with the 3x3 ``weights``."""
    boundary = BoundaryPolicy(boundary)
    pad = [(0, 0)] * (plane.ndim - 2) + [(1, 1), (1, 1)]
    if boundary is BoundaryPolicy.ZERO:
        padded = np.pad(plane, pad)
    else:
        padded = np.pad(plane, pad, mode="edge")
    rows, cols = plane.shape[-2:]
    out = np.zeros(plane.shape, dtype=float)
    for di in range(3):
        for dj in range(3):
            w = weights[di, dj]
            if w != 0.0:
                out = out + w * padded[..., di : di + rows, dj : dj + cols]
    return out


@dataclass(frozen=True)
class Physics:
    """How template products are realized while settling.

    ``transfer`` replaces the ideal linear OTA (product gain * v becomes
    gain * transfer(v)); ``None`` keeps the ideal path.
    """

    transfer: Optional[Callable[[np.ndarray], np.ndarray]] = None
    blowup: float = 1e3

    def drive(self, plane: np.ndarray) -> np.ndarray:
        if self.transfer is None:
            return plane
        return self.transfer(plane)


IDEAL = Physics()


def _masked(plane, active):
    return np.where(active, plane, 0.0)


def settle_feedforward(state: CeNNArrayState, t: Template, boundary=BoundaryPolicy.ZERO,
                       physics: Physics = IDEAL) -> CeNNArrayState:
    """Algebraic steady state of a feed-forward template."""
    if np.any(t.a):
        raise PreconditionError("settle_feedforward requires an all-zero A template")
    if t.d != "none":
        raise PreconditionError("settle_feedforward does not handle nonlinear D templates")
    u = _masked(state.u, state.active)
    x = neighbor_sum(physics.drive(u), t.b, boundary) + t.z
    x = _masked(x, state.active)
    return CeNNArrayState(u=state.u, x=x, y=np.clip(x, -1.0, 1.0), active=state.active)


def globmax_current(x: np.ndarray, boundary=BoundaryPolicy.ZERO, active=None) -> np.ndarray:
    """Summed D-hat contributions over the 8 neighbours.

    Each neighbour contributes D(x_self - x_nbr) with D(v) = -v/8 for v <= 0
    and 0 otherwise, so only larger neighbours pull the cell upward.
    """
    boundary = BoundaryPolicy(boundary)
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)]
    # virtual cells never win a max: replicate copies self (difference 0);
    # zero padding uses -inf so the edge stays isolated instead of pulling toward 0
    if boundary is BoundaryPolicy.REPLICATE:
        padded = np.pad(x, pad, mode="edge")
    else:
        padded = np.pad(x, pad, constant_values=-np.inf)
    if active is not None:
        inactive = np.pad(~np.asarray(active, dtype=bool), [(1, 1), (1, 1)], constant_values=False)
        padded = np.where(inactive, -np.inf, padded)
    rows, cols = x.shape[-2:]
    total = np.zeros(x.shape, dtype=float)
    for di in range(3):
        for dj in range(3):
            if di == 1 and dj == 1:
                continue
            nbr = padded[..., di : di + rows, dj : dj + cols]
            v = x - nbr
            total = total + np.where(v <= 0, -v / 8.0, 0.0)
    return total


def settle_ode(state: CeNNArrayState, t: Template, boundary=BoundaryPolicy.ZERO, dt: float = 0.01,
               t_max: float = 20.0, eps: float = 1e-6, physics: Physics = IDEAL,
               run_to_t_max: bool = False) -> CeNNArrayState:
    """Forward-Euler integration of the cell equation until |dx/dt| < eps.

    The state is left unbounded; outputs are re-saturated after every step.
    With ``run_to_t_max`` the early-convergence exit is skipped, which is how
    propagation templates are timed.
    """
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    if not t_max >= dt:
        raise PreconditionError("t_max must be at least dt")
    if not eps > 0:
        raise PreconditionError("eps must be positive")
    active = state.active
    gate = None if bool(np.all(active)) else active.astype(float)
    u = _masked(state.u, active)
    drive = _masked(neighbor_sum(physics.drive(u), t.b, boundary) + t.z, active)
    has_feedback = bool(np.any(t.a))
    globmax = t.d == "globmax_like"
    x = _masked(np.array(state.x, dtype=float), active)
    y = np.clip(x, -1.0, 1.0)
    n_steps = int(round(t_max / dt))
    for step in range(1, n_steps + 1):
        f = drive - x
        if has_feedback:
            f += neighbor_sum(physics.drive(y), t.a, boundary)
        if globmax:
            f += globmax_current(x, boundary, None if gate is None else active)
        if gate is not None:
            f *= gate
        x = x + dt * f
        peak = float(np.max(np.abs(x))) if x.size else 0.0
        if not peak <= physics.blowup:
            raise InstabilityError(step, peak)
        if has_feedback or globmax:
            y = np.clip(x, -1.0, 1.0)
        # |dx| < eps * dt  <=>  |f| < eps
        if not run_to_t_max and float(np.max(np.abs(f))) < eps:
            break
    y = np.clip(x, -1.0, 1.0)
    return CeNNArrayState(u=state.u, x=x, y=y, active=active)


def settle_nonlinear_d(state: CeNNArrayState, t: Template, boundary=BoundaryPolicy.ZERO,
                       dt: float = 0.01, t_max: float = 20.0, eps: float = 1e-6,
                       physics: Physics = IDEAL) -> CeNNArrayState:
    """Settle a template carrying a nonlinear D-hat interaction.

    ``relu_like``: the linear settle followed by an output stage max(0, y).
    ``globmax_like``: the state starts at the input and larger neighbours
    pull it upward; the unit self-feedback cancels the leak so values do not
    decay, and ``t_max`` sets how far a maximum spreads.
    """
    if t.d == "none":
        raise PreconditionError("settle_nonlinear_d requires a nonlinear D template")
    if t.d == "relu_like":
        lin = replace(t, d="none")
        if lin.is_feedforward:
            out = settle_feedforward(state, lin, boundary, physics)
        else:
            out = settle_ode(state, lin, boundary, dt, t_max, eps, physics)
        y = np.maximum(out.y, 0.0)
        return CeNNArrayState(u=out.u, x=out.x, y=y, active=out.active)
    start = CeNNArrayState(u=state.u, x=_masked(state.u, state.active), y=state.u, active=state.active)
    return settle_ode(start, t, boundary, dt, t_max, eps, physics, run_to_t_max=True)


def settle(state: CeNNArrayState, t: Template, boundary=BoundaryPolicy.ZERO, *, dt: float = 0.01,
           t_max: float = 20.0, eps: float = 1e-6, physics: Physics = IDEAL,
           use_ode: bool = False) -> CeNNArrayState:
    """Dispatch to the fast feed-forward path, the ODE, or the D-hat settle."""
    if t.d != "none":
        return settle_nonlinear_d(state, t, boundary, dt, t_max, eps, physics)
    if t.is_feedforward and not use_ode:
        return settle_feedforward(state, t, boundary, physics)
    return settle_ode(state, t, boundary, dt, t_max, eps, physics)


def clip_count(state: CeNNArrayState) -> tuple[int, int]:
    """(clipped cells, active cells) for the clip-rate statistic."""
    act = np.broadcast_to(state.active, state.x.shape)
    clipped = int(np.count_nonzero((np.abs(state.x) > 1.0) & act))
    return clipped, int(np.count_nonzero(act))
