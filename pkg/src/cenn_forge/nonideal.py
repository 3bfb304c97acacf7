"""Fixed-point quantization and OTA transfer-curve substitution."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

CURVE_SYMMETRY_TOL = 1e-3
CURVE_SLOPE_TOL = 0.01
LINEAR_EDGE = 0.2
KNEE_SCALE = 0.3


class CurveError(ValueError):
    pass


@dataclass(frozen=True)
class QuantSpec:
    """Signed Nb-bit grid over [-1, 1 - 2/2**Nb], round half to even."""

    bits: int

    def __post_init__(self):
        if not isinstance(self.bits, (int, np.integer)) or not 2 <= self.bits <= 16:
            raise ValueError(f"bit width must be an integer in [2, 16], got {self.bits!r}")

    @property
    def step(self) -> float:
        return 2.0 ** (1 - self.bits)

    @property
    def lo(self) -> float:
        return -1.0

    @property
    def hi(self) -> float:
        return 1.0 - self.step

    @property
    def code_min(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def code_max(self) -> int:
        return (1 << (self.bits - 1)) - 1


def quantize(x, q: QuantSpec):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("quantize() requires finite input")
    out = np.rint(np.clip(arr, q.lo, q.hi) / q.step) * q.step
    return float(out) if np.ndim(x) == 0 else out


def to_codes(x, q: QuantSpec) -> np.ndarray:
    """Integer codes of the nearest grid levels."""
    arr = np.asarray(x, dtype=float)
    return np.rint(np.clip(arr, q.lo, q.hi) / q.step).astype(np.int64)


def from_codes(codes, q: QuantSpec) -> np.ndarray:
    return np.asarray(codes, dtype=np.int64) * q.step


@dataclass(frozen=True, eq=False)
class OtaCurve:
    """Piecewise-linear normalized OTA response sampled at increasing v."""

    v: np.ndarray
    i: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        i = np.array(self.i, dtype=float)
        if v.ndim != 1 or v.shape != i.shape or v.size < 2:
            raise CurveError("curve needs two equal-length columns with at least 2 rows")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(i))):
            raise CurveError("curve contains non-finite values")
        dv = np.diff(v)
        if np.any(dv <= 0):
            raise CurveError(f"v column must be strictly increasing (row {int(np.argmax(dv <= 0)) + 1})")
        di = np.diff(i)
        if np.any(di < 0):
            raise CurveError(f"curve must be non-decreasing (row {int(np.argmax(di < 0)) + 1})")
        mirror = -np.interp(-v, v, i)
        asym = np.abs(mirror - i)
        if np.any(asym > CURVE_SYMMETRY_TOL):
            raise CurveError(f"curve is not odd-symmetric (row {int(np.argmax(asym > CURVE_SYMMETRY_TOL))})")
        for arr in (v, i):
            arr.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "i", i)
        slope = self.slope_at_zero()
        if abs(slope - 1.0) > CURVE_SLOPE_TOL:
            raise CurveError(f"small-signal slope {slope:.4f} differs from the ideal gain by more than 1%")

    def slope_at_zero(self, h: float = 1e-3) -> float:
        return float((np.interp(h, self.v, self.i) - np.interp(-h, self.v, self.i)) / (2 * h))

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.v, self.i))

    def __call__(self, v):
        # np.interp clamps to the end values outside the table
        return np.interp(v, self.v, self.i)

    def __eq__(self, other):
        if not isinstance(other, OtaCurve):
            return NotImplemented
        return np.array_equal(self.v, other.v) and np.array_equal(self.i, other.i)

    def __hash__(self):
        return hash((self.v.tobytes(), self.i.tobytes()))


def apply_ota_curve(template_gain: float, v_diff, curve: OtaCurve):
    """Gain-scaled table lookup replacing the ideal product gain * v."""
    out = template_gain * curve(v_diff)
    return float(out) if np.ndim(v_diff) == 0 else out


def knee_response(v):
    """Linear to +-0.2, then a tanh knee that saturates at +-0.5."""
    v = np.asarray(v, dtype=float)
    mag = np.abs(v)
    bent = LINEAR_EDGE + KNEE_SCALE * np.tanh((mag - LINEAR_EDGE) / KNEE_SCALE)
    return np.sign(v) * np.where(mag <= LINEAR_EDGE, mag, bent)


def default_curve() -> OtaCurve:
    v = np.round(np.arange(-100, 101) * 0.01, 10)
    return OtaCurve(v, knee_response(v))


def identity_curve() -> OtaCurve:
    v = np.array([-1.0, 0.0, 1.0])
    return OtaCurve(v, v.copy())


def save_ota_curve(curve: OtaCurve, path) -> None:
    np.savetxt(path, np.column_stack([curve.v, curve.i]), fmt="%.17g")


def load_ota_curve(path) -> OtaCurve:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"curve file not found: {path}")
    try:
        table = np.loadtxt(path, dtype=float, ndmin=2)
    except ValueError as exc:
        raise CurveError(f"cannot parse curve file {path}: {exc}") from None
    if table.shape[1] != 2:
        raise CurveError(f"curve file {path} must have exactly two columns")
    return OtaCurve(table[:, 0], table[:, 1])


def shipped_curve_path() -> Path:
    return Path(str(resources.files("cenn_forge") / "data" / "default_ota.txt"))
