import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from numstab.softfloat import (
    BFLOAT16,
    BINARY16,
    BINARY32,
    BINARY64,
    decompose,
    get_format,
    representable,
    round_to,
    rounded_binop,
)

from oracles import exact_product, half_value, round_half_oracle


def all_half_values():
    return np.array([half_value(b) for b in range(1 << 16)])


def test_format_constants():
    assert BINARY16.unit_roundoff == 2.0**-11
    assert BFLOAT16.unit_roundoff == 2.0**-8
    assert BINARY32.unit_roundoff == 2.0**-24
    assert BINARY16.max_finite == 65504.0
    assert BINARY16.min_positive_normal == 2.0**-14
    assert BINARY16.min_positive_subnormal == 2.0**-24
    assert BFLOAT16.max_finite == float(np.float32(3.3895313892515355e38))
    assert BINARY32.max_finite == float(np.finfo(np.float32).max)


@pytest.mark.parametrize("name,fmt", [("binary16", BINARY16), ("half", BINARY16), ("bf16", BFLOAT16),
                                      ("BINARY32", BINARY32), ("float64", BINARY64)])
def test_get_format_names(name, fmt):
    assert get_format(name) is fmt


def test_get_format_unknown():
    with pytest.raises(ValueError, match="unknown float format"):
        get_format("binary8")


def test_every_half_pattern_round_trips():
    vals = all_half_values()
    r = round_to(BINARY16, vals)
    nan = np.isnan(vals)
    assert np.array_equal(r[~nan], vals[~nan])
    assert np.isnan(r[nan]).all()
    # signed zeros keep their sign
    assert math.copysign(1.0, round_to(BINARY16, -0.0)) == -1.0


def test_matches_bit_oracle_on_random_doubles():
    rng = np.random.default_rng(2024)
    mags = np.exp(rng.uniform(math.log(2.0**-27), math.log(7e4), 20_000))
    xs = np.concatenate([mags * rng.choice([-1, 1], mags.size),
                         [0.0, -0.0, np.inf, -np.inf, 65504.0, 65519.99, 65520.0, 2.0**-24, 2.0**-25,
                          3 * 2.0**-26, 2.0**-14 - 2.0**-25]])
    got = round_to(BINARY16, xs)
    want = np.array([round_half_oracle(float(x)) for x in xs])
    assert np.array_equal(got.view(np.uint64), want.view(np.uint64))


def test_matches_numpy_casts():
    rng = np.random.default_rng(7)
    xs = rng.standard_normal(50_000) * np.exp(rng.uniform(-40, 40, 50_000))
    with np.errstate(over="ignore"):
        assert np.array_equal(round_to(BINARY16, xs), xs.astype(np.float16).astype(np.float64))
    assert np.array_equal(round_to(BINARY32, xs), xs.astype(np.float32).astype(np.float64))


def test_ties_to_even_on_midpoints():
    vals = all_half_values()
    finite = vals[np.isfinite(vals) & (vals >= 0)]
    finite = np.unique(finite)
    lo, hi = finite[:-1], finite[1:]
    mid = (lo + hi) / 2  # exact in binary64
    r = round_to(BINARY16, mid)
    lo_bits = np.array([struct.unpack("<H", np.float16(v).tobytes())[0] for v in lo])
    want = np.where(lo_bits & 1, hi, lo)
    assert mid.size > 1000
    assert np.array_equal(r, want)


def test_midpoint_above_max_finite_overflows():
    assert round_to(BINARY16, 65520.0) == math.inf
    assert round_to(BINARY16, 65519.99) == 65504.0
    assert round_to(BINARY16, -1e6) == -math.inf


def test_subnormals_and_flush_to_zero():
    tiny = 3 * 2.0**-25
    assert round_to(BINARY16, tiny) == 2.0**-23
    ftz = BINARY16.flush_to_zero()
    assert round_to(ftz, tiny) == 0.0
    assert round_to(ftz, 2.0**-14) == 2.0**-14
    # values just below min normal that round up into the normal range survive
    assert round_to(ftz, 2.0**-14 - 2.0**-30) == 2.0**-14


def test_nan_is_canonical():
    payload = struct.unpack("<d", struct.pack("<Q", 0x7FF0000000000123))[0]
    r = round_to(BINARY16, np.array([payload]))
    assert np.isnan(r[0])
    assert r.view(np.uint64)[0] == np.array([np.nan]).view(np.uint64)[0]


def test_scalar_and_array_return_types():
    assert isinstance(round_to(BINARY16, 0.1), float)
    out = round_to(BINARY16, [0.1, 0.2])
    assert isinstance(out, np.ndarray) and out.dtype == np.float64


def test_carrier_is_identity():
    xs = np.random.default_rng(0).standard_normal(100)
    assert np.array_equal(round_to(BINARY64, xs), xs)


def test_absorption():
    assert rounded_binop(BINARY16, "add", 2048.0, 1.0) == 2048.0
    assert rounded_binop(BINARY16, "add", 2048.0, 2.0) == 2050.0
    assert rounded_binop(BINARY32, "add", 2048.0, 1.0) == 2049.0


def test_rounded_binop_matches_exact_product():
    rng = np.random.default_rng(3)
    a = round_to(BINARY16, rng.uniform(-200, 200, 2000))
    b = round_to(BINARY16, rng.uniform(-200, 200, 2000))
    got = rounded_binop(BINARY16, "mul", a, b)
    for x, y, r in zip(a, b, got):
        assert r == round_half_oracle(float(exact_product(float(x), float(y))))


def test_rounded_binop_unknown_op():
    with pytest.raises(ValueError):
        rounded_binop(BINARY16, "pow", 1.0, 2.0)


def test_decompose_example():
    d = decompose(BINARY16, 0.1)
    assert d.rounded == 0.0999755859375
    assert d.relative_term == pytest.approx(-0.000244140625, rel=1e-6)
    assert decompose(BINARY16, 0.0) == (0.0, 0.0, True)
    assert not decompose(BINARY16, 1e-6).in_normal_range


@pytest.mark.parametrize("fmt,bound", [(BINARY16, 2.0**-11), (BFLOAT16, 2.0**-8), (BINARY32, 2.0**-24)])
def test_unit_roundoff_model(fmt, bound):
    rng = np.random.default_rng(11)
    lo, hi = math.log(fmt.min_positive_normal), math.log(fmt.max_finite)
    xs = np.exp(rng.uniform(lo, hi, 100_000))
    r = round_to(fmt, xs)
    k = r / xs - 1.0
    assert np.all(np.abs(k) <= bound)


def test_representable():
    assert representable(BINARY16, [0.5, 2048.0, 65504.0])
    assert not representable(BINARY16, 0.1)
    assert representable(BINARY16, np.nan)


@settings(max_examples=300, deadline=None)
@given(st.floats(allow_nan=False, width=64), st.floats(allow_nan=False, width=64))
def test_monotone(x, y):
    if x > y:
        x, y = y, x
    for fmt in (BINARY16, BFLOAT16, BINARY32):
        assert round_to(fmt, x) <= round_to(fmt, y)


@settings(max_examples=300, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_idempotent_and_relative_error(x):
    for fmt in (BINARY16, BFLOAT16, BINARY32):
        r = round_to(fmt, x)
        assert round_to(fmt, r) == r
        if fmt.min_positive_normal <= abs(x) <= fmt.max_finite:
            assert abs(r - x) <= fmt.unit_roundoff * abs(x)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-1e5, max_value=1e5, allow_nan=False))
def test_half_oracle_agreement(x):
    assert round_to(BINARY16, x) == round_half_oracle(x) or (
        math.isinf(round_to(BINARY16, x)) and math.isinf(round_half_oracle(x)))
