import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cenn_forge.nonideal import (
    CurveError,
    OtaCurve,
    QuantSpec,
    apply_ota_curve,
    default_curve,
    from_codes,
    identity_curve,
    knee_response,
    load_ota_curve,
    quantize,
    save_ota_curve,
    shipped_curve_path,
    to_codes,
)


def test_quant_grid_4bit():
    q = QuantSpec(4)
    assert q.step == 0.125
    assert (q.lo, q.hi) == (-1.0, 0.875)
    assert (q.code_min, q.code_max) == (-8, 7)


@pytest.mark.parametrize("bits", [1, 17, 4.0, "8"])
def test_quant_rejects_bad_widths(bits):
    with pytest.raises(ValueError):
        QuantSpec(bits)


def test_quantize_rounds_half_to_even_and_clamps():
    q = QuantSpec(4)
    # 0.0625 sits halfway between codes 0 and 1; 0.1875 between 1 and 2
    assert quantize(0.0625, q) == 0.0
    assert quantize(0.1875, q) == 0.25
    assert quantize(1.0, q) == 0.875
    assert quantize(-3.0, q) == -1.0
    assert isinstance(quantize(0.3, q), float)
    with pytest.raises(ValueError):
        quantize(np.array([np.nan]), q)


@given(st.integers(2, 16), st.lists(st.floats(-2, 2), min_size=1, max_size=20))
def test_quantize_lands_on_grid(bits, xs):
    q = QuantSpec(bits)
    y = quantize(np.array(xs), q)
    codes = to_codes(y, q)
    np.testing.assert_array_equal(from_codes(codes, q), y)
    assert codes.min() >= q.code_min and codes.max() <= q.code_max
    inside = (np.array(xs) >= q.lo) & (np.array(xs) <= q.hi)
    assert np.all(np.abs(y - np.array(xs))[inside] <= q.step / 2 + 1e-15)


def test_quantize_idempotent():
    q = QuantSpec(8)
    x = np.linspace(-1, 1, 1001)
    once = quantize(x, q)
    np.testing.assert_array_equal(quantize(once, q), once)


def test_curve_validation():
    v = np.linspace(-1, 1, 5)
    with pytest.raises(CurveError):
        OtaCurve(v[::-1], v)
    with pytest.raises(CurveError):
        OtaCurve(v, -v)
    with pytest.raises(CurveError):
        OtaCurve(v, v + 0.1)  # not odd
    with pytest.raises(CurveError):
        OtaCurve(v, 0.9 * v)  # small-signal gain off by 10%
    with pytest.raises(CurveError):
        OtaCurve(v[:1], v[:1])
    with pytest.raises(CurveError):
        OtaCurve(v, np.where(v > 0.9, np.inf, v))


def test_default_curve_shape():
    c = default_curve()
    assert c(0.1) == pytest.approx(0.1)
    assert c(0.2) == pytest.approx(0.2)
    assert 0.45 < c(1.0) < 0.5
    assert c(-0.5) == pytest.approx(-c(0.5))
    assert abs(c.slope_at_zero() - 1.0) < 0.01
    assert not c.is_identity
    assert identity_curve().is_identity


def test_curve_clamps_outside_table():
    c = default_curve()
    assert c(3.0) == c(1.0)
    assert c(-3.0) == c(-1.0)


def test_knee_response_continuous_at_edge():
    eps = 1e-9
    assert knee_response(0.2 - eps) == pytest.approx(knee_response(0.2 + eps), abs=1e-8)


def test_apply_curve_scales_by_gain():
    c = default_curve()
    assert apply_ota_curve(2.0, 0.1, c) == pytest.approx(0.2)
    np.testing.assert_allclose(apply_ota_curve(-1.0, np.array([0.5]), c), -c(np.array([0.5])))


def test_curve_file_roundtrip(tmp_path):
    c = default_curve()
    path = tmp_path / "curve.txt"
    save_ota_curve(c, path)
    assert load_ota_curve(path) == c
    assert load_ota_curve(shipped_curve_path()) == c


def test_curve_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_ota_curve(tmp_path / "none.txt")
    bad = tmp_path / "bad.txt"
    bad.write_text("-1 -1 0\n0 0 0\n1 1 0\n")
    with pytest.raises(CurveError):
        load_ota_curve(bad)
    junk = tmp_path / "junk.txt"
    junk.write_text("a b\n")
    with pytest.raises(CurveError):
        load_ota_curve(junk)
