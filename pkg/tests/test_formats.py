"""Number formats: construction, descriptors, encode/decode, rounding."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixedquant.formats import (
    FixedFormat,
    FormatError,
    MiniFloatFormat,
    NEAREST,
    RoundingMode,
    decode,
    decode_array,
    enumerate_codes,
    enumerate_values,
    format_from_mantissa_exponent,
    format_width_bits,
    parse_format,
    quantize_array,
    quantize_fixed,
    quantize_minifloat,
    quantize_value,
    stochastic,
)

from oracles import nearest_value, small_format_family, sorted_values

F85 = FixedFormat(8, 5)
F87 = FixedFormat(8, 7)
F34 = MiniFloatFormat(3, 4)


# ── construction and validation ──────────────────────────────────────────────


@pytest.mark.parametrize(
    "total,frac",
    [(1, 0), (33, 0), (8, 8), (8, -1), (0, 0)],
)
def test_fixed_rejects_bad_geometry(total, frac):
    with pytest.raises(FormatError):
        FixedFormat(total, frac)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(mantissa_bits=-1, exponent_bits=2),
        dict(mantissa_bits=24, exponent_bits=2),
        dict(mantissa_bits=0, exponent_bits=0),
        dict(mantissa_bits=2, exponent_bits=9),
        dict(mantissa_bits=2, exponent_bits=2, exponent_range=5),
        dict(mantissa_bits=2, exponent_bits=2, exponent_range=0),
        dict(mantissa_bits=2, exponent_bits=0, exponent_range=2),
    ],
)
def test_minifloat_rejects_bad_geometry(kwargs):
    with pytest.raises(FormatError):
        MiniFloatFormat(**kwargs)


def test_default_bias_covers_unit_interval():
    # bias = 2^e - 1 puts the top binade at E = 0, so max < 2
    assert F34.bias == 15
    assert F34.e_min == -15 and F34.e_max == 0
    assert F34.max_value == 1.875
    assert MiniFloatFormat(1, 1).bias == 1


def test_exponent_range_cap_overrides_bias_window():
    capped = MiniFloatFormat(3, 4, exponent_range=4)
    assert capped.e_min == -3 and capped.e_max == 0
    assert capped.field_max == 3


def test_with_exponent_range_derives_exponent_bits():
    assert MiniFloatFormat.with_exponent_range(3, 4).exponent_bits == 2
    assert MiniFloatFormat.with_exponent_range(3, 5).exponent_bits == 3
    assert MiniFloatFormat.with_exponent_range(3, 1).exponent_bits == 0
    assert MiniFloatFormat.with_exponent_range(3, 16).exponent_bits == 4
    with pytest.raises(FormatError):
        MiniFloatFormat.with_exponent_range(3, 0)


def test_format_width_bits():
    assert format_width_bits(MiniFloatFormat(3, 4)) == 8
    assert format_width_bits(FixedFormat(11, 10)) == 11
    assert format_width_bits(MiniFloatFormat(3, 3)) == 7


def test_mantissa_exponent_notation_maps_e0_to_fixed():
    fmt = format_from_mantissa_exponent(7, 0)
    assert fmt == FixedFormat(8, 7)
    assert format_from_mantissa_exponent(3, 4) == MiniFloatFormat(3, 4)


# ── descriptor grammar ───────────────────────────────────────────────────────


def test_descriptor_round_trip():
    for fmt in (
        FixedFormat(8, 7),
        FixedFormat(2, 0),
        MiniFloatFormat(3, 4),
        MiniFloatFormat(3, 4, implicit_bit=False),
        MiniFloatFormat(2, 3, exponent_range=4),
        MiniFloatFormat(0, 2),
    ):
        assert parse_format(fmt.descriptor()) == fmt


def test_parse_is_case_insensitive():
    assert parse_format("FIXED:8F7") == FixedFormat(8, 7)
    assert parse_format("Float:3M4E+I") == MiniFloatFormat(3, 4)
    assert parse_format("float:3m4e") == MiniFloatFormat(3, 4)  # implicit default
    assert parse_format("float:3m4e-ir4") == MiniFloatFormat(
        3, 4, implicit_bit=False, exponent_range=4
    )


@pytest.mark.parametrize(
    "text",
    ["", "fixed:8", "fixed:8f7x", "float:3m4e*i", "int:8", "float:m4e", "fixed:8f7 junk"],
)
def test_parse_rejects_unknown_descriptors(text):
    with pytest.raises(FormatError):
        parse_format(text)


# ── fixed-point encode/decode ────────────────────────────────────────────────


def test_quantize_fixed_known_codes():
    assert quantize_fixed(1.0, F85) == 32
    assert quantize_fixed(0.0, F85) == 0
    code = quantize_fixed(0.3, F85)
    assert code == 10
    assert decode(code, F85) == 0.3125


def test_quantize_fixed_saturates():
    assert quantize_fixed(100.0, F85) == F85.max_code == 127
    assert quantize_fixed(-100.0, F85) == F85.min_code == -128
    assert decode(-128, F87) == -1.0


def test_quantize_fixed_ties_to_even_code():
    # scaled values 1.5 and 2.5 both round to code 2
    assert quantize_fixed(3 / 64, F85) == 2
    assert quantize_fixed(5 / 64, F85) == 2
    assert quantize_fixed(-3 / 64, F85) == -2


def test_fixed_decode_rejects_out_of_range_codes():
    with pytest.raises(FormatError):
        decode(128, F85)
    with pytest.raises(FormatError):
        decode(-129, F85)


def test_quantize_rejects_non_finite():
    for bad in (math.nan, math.inf, -math.inf):
        with pytest.raises(FormatError):
            quantize_fixed(bad, F85)
        with pytest.raises(FormatError):
            quantize_minifloat(bad, F34)


# ── minifloat encode/decode ──────────────────────────────────────────────────


def test_quantize_minifloat_known_codes():
    # 1.0 = 1.000 * 2^0: sign 0, field 15, f 0
    assert quantize_minifloat(1.0, F34) == 120
    # 0.7 -> 0.6875 = 1.375 * 2^-1: field 14, f 3
    code = quantize_minifloat(0.7, F34)
    assert code == 115
    assert decode(code, F34) == 0.6875
    # sign symmetry
    assert quantize_minifloat(-1.0, F34) == 248


def test_minifloat_decode_formula():
    assert decode(0, F34) == 0.0
    assert decode(0, F85) == 0.0
    # field 0, f 1: (1 + 1/8) * 2^-15
    assert decode(1, F34) == math.ldexp(9, -18)


def test_negative_zero_decodes_to_zero_but_is_never_produced():
    m, e = F34.mantissa_bits, F34.exponent_bits
    neg_zero = 1 << (m + e)
    assert decode(neg_zero, F34) == 0.0
    assert quantize_minifloat(-0.0, F34) == 0
    assert quantize_minifloat(-1e-12, F34) == 0


def test_minifloat_rejects_bad_patterns():
    capped = MiniFloatFormat(2, 3, exponent_range=4)
    # field 4 > field_max 3, magnitude code (4 << 2)
    with pytest.raises(FormatError):
        decode(4 << 2, capped)
    with pytest.raises(FormatError):
        decode(-1, F34)
    with pytest.raises(FormatError):
        decode(1 << F34.width_bits, F34)


def test_small_values_flush_to_zero():
    # below half the smallest nonzero magnitude
    assert F34.min_nonzero == math.ldexp(9, -18)
    assert quantize_minifloat(F34.min_nonzero / 2 * 0.999, F34) == 0
    assert decode(quantize_minifloat(F34.min_nonzero, F34), F34) == F34.min_nonzero


# ── enumeration ──────────────────────────────────────────────────────────────


def test_enumerate_values_fixed_3f1():
    got = enumerate_values(FixedFormat(3, 1)).tolist()
    assert got == [-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5]


def test_enumerate_values_float_1m1e():
    # the smallest normal (E=-1, f=0) is sacrificed to the reserved zero
    got = enumerate_values(MiniFloatFormat(1, 1)).tolist()
    assert got == [-1.5, -1.0, -0.75, 0.0, 0.75, 1.0, 1.5]


def test_enumerate_values_contains_zero_and_is_symmetric():
    for fmt in (F34, MiniFloatFormat(2, 2, implicit_bit=False), FixedFormat(5, 3)):
        vals = enumerate_values(fmt)
        assert 0.0 in vals
        assert np.all(np.diff(vals) > 0)
        pos = vals[vals > 0]
        neg = -vals[vals < 0]
        if isinstance(fmt, FixedFormat):
            # two's complement: one extra negative value
            assert set(pos) < set(neg)
            assert len(neg) == len(pos) + 1
        else:
            assert set(pos) == set(neg)


def test_enumerate_refuses_wide_formats():
    with pytest.raises(FormatError):
        enumerate_values(FixedFormat(17, 0))
    with pytest.raises(FormatError):
        enumerate_codes(MiniFloatFormat(8, 8))


def test_enumerate_codes_skips_capped_fields():
    capped = MiniFloatFormat(1, 2, exponent_range=2)
    codes = enumerate_codes(capped)
    fields = (codes >> 1) & 0b11
    assert np.all(fields <= capped.field_max)
    # sign x field(0..1) x frac(0..1)
    assert len(codes) == 8


# ── rounding modes ───────────────────────────────────────────────────────────


def test_rounding_mode_validation():
    with pytest.raises(FormatError):
        RoundingMode("stochastic")
    with pytest.raises(FormatError):
        RoundingMode("weird")
    assert not NEAREST.is_stochastic
    assert stochastic(7).is_stochastic


def test_stochastic_is_reproducible_and_bracketed():
    rng_x = np.random.default_rng(3)
    x = rng_x.uniform(-2.0, 2.0, 512)
    for fmt in (F85, F34, MiniFloatFormat(2, 2, implicit_bit=False)):
        a = quantize_array(x, fmt, stochastic(99))
        b = quantize_array(x, fmt, stochastic(99))
        assert np.array_equal(a, b)
        vals = sorted_values(fmt)
        got = decode_array(a, fmt)
        for xi, gi in zip(x, got):
            lo = max((v for v in vals if v <= xi), default=vals[0])
            hi = min((v for v in vals if v >= xi), default=vals[-1])
            assert gi in (lo, hi)


def test_stochastic_mean_converges():
    # P(up) = distance fraction; binomial 3-sigma band
    fmt = MiniFloatFormat(2, 2)
    x = 0.3
    vals = sorted_values(fmt)
    lo = max(v for v in vals if v <= x)
    hi = min(v for v in vals if v >= x)
    p = (x - lo) / (hi - lo)
    n = 4096
    codes = quantize_array(np.full(n, x), fmt, stochastic(1234))
    p_hat = float(np.mean(decode_array(codes, fmt) == hi))
    sigma = math.sqrt(p * (1 - p) / n)
    assert abs(p_hat - p) <= 3 * sigma


# ── nearest rounding vs the exhaustive oracle ────────────────────────────────


@pytest.mark.parametrize("fmt", small_format_family(7), ids=lambda f: f.descriptor())
def test_nearest_matches_oracle_on_dense_probes(fmt):
    vals = np.asarray(sorted_values(fmt))
    rng = np.random.default_rng(11)
    probes = [vals, (vals[:-1] + vals[1:]) / 2.0, np.array([0.0, vals[0] * 3, vals[-1] * 3])]
    if vals[-1] > 0:
        probes.append(rng.uniform(vals[0] * 1.5, vals[-1] * 1.5, 64))
    for x in np.concatenate(probes):
        want = nearest_value(float(x), fmt)
        assert decode(quantize_value(float(x), fmt), fmt) == want, (
            f"{fmt.descriptor()} at {x!r}"
        )


def test_one_bit_mantissa_tie_rounds_to_the_even_step():
    # adjacent values are consecutive powers of two whose canonical codes are
    # both odd; the tie falls to the value that is an even multiple of the gap
    fmt = MiniFloatFormat(1, 2, implicit_bit=False)
    assert decode(quantize_value(0.1875, fmt), fmt) == 0.25
    assert decode(quantize_value(-0.1875, fmt), fmt) == -0.25


@settings(max_examples=200, deadline=None)
@given(
    x=st.floats(min_value=-4.0, max_value=4.0),
    total=st.integers(min_value=2, max_value=12),
)
def test_fixed_idempotence_and_monotone_neighborhood(x, total):
    fmt = FixedFormat(total, total - 1)
    code = quantize_fixed(x, fmt)
    v = decode(code, fmt)
    assert quantize_fixed(v, fmt) == code
    eps = math.ldexp(1, -fmt.frac_bits)
    assert decode(quantize_fixed(x + eps, fmt), fmt) >= v


@settings(max_examples=200, deadline=None)
@given(
    x=st.floats(min_value=-2.0, max_value=2.0),
    m=st.integers(min_value=0, max_value=4),
    e=st.integers(min_value=1, max_value=4),
    implicit=st.booleans(),
)
def test_minifloat_idempotence(x, m, e, implicit):
    fmt = MiniFloatFormat(m, e, implicit_bit=implicit)
    code = quantize_minifloat(x, fmt)
    v = decode(code, fmt)
    assert decode(quantize_minifloat(v, fmt), fmt) == v
