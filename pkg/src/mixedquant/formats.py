"""Weight and activation number formats: fixed-point and minifloat.

Two value systems are emulated bit-exactly:

* ``FixedFormat`` -- signed fixed-point. The code is a two's-complement
  integer scaled by ``2**-frac_bits``; out-of-range values saturate to the
  extreme codes, they never wrap.
* ``MiniFloatFormat`` -- sign-magnitude minifloat with ``m`` mantissa bits
  and ``e`` exponent bits. The default bias is ``2**e - 1`` so the unbiased
  exponent spans ``{-(2**e - 1), ..., 0}``; an optional ``exponent_range``
  cap ``R`` restricts it to ``{-(R - 1), ..., 0}``. With the implicit bit
  the significand reads ``1 + f/2**m`` and the all-zero code is reserved
  for exact zero (the smallest normal is sacrificed); without it the
  significand reads ``f/2**m`` and zero is encoded naturally. There are no
  NaNs, infinities, or subnormal extensions.

Codes are plain Python integers: signed for fixed-point, unsigned bit
patterns ``[sign | exponent field | fraction]`` for minifloat. The exponent
field is stored relative to the smallest allowed exponent, so code 0
decodes to 0.0 for every format and out-of-cap fields are invalid patterns.

Rounding is either round-to-nearest with ties to the even code, or
stochastic (reproducible for a given seed). Both saturate on overflow.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FormatError",
    "FixedFormat",
    "MiniFloatFormat",
    "WeightFormat",
    "RoundingMode",
    "NEAREST",
    "stochastic",
    "format_from_mantissa_exponent",
    "format_width_bits",
    "parse_format",
    "quantize_fixed",
    "quantize_fixed_array",
    "quantize_minifloat",
    "quantize_minifloat_array",
    "quantize_value",
    "quantize_array",
    "decode",
    "decode_array",
    "enumerate_values",
]


class FormatError(ValueError):
    """Malformed descriptor, invalid format parameters, or bad bit pattern."""


# ── format definitions ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class FixedFormat:
    """Signed fixed-point format: ``value = code * 2**-frac_bits``."""

    total_bits: int
    frac_bits: int

    def __post_init__(self) -> None:
        if not 2 <= self.total_bits <= 32:
            raise FormatError(f"fixed total_bits must be in [2, 32], got {self.total_bits}")
        if not 0 <= self.frac_bits <= self.total_bits - 1:
            raise FormatError(
                f"fixed frac_bits must be in [0, total_bits-1], got {self.frac_bits}"
            )

    @property
    def width_bits(self) -> int:
        return self.total_bits

    @property
    def min_code(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def max_code(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def min_value(self) -> float:
        return math.ldexp(self.min_code, -self.frac_bits)

    @property
    def max_value(self) -> float:
        return math.ldexp(self.max_code, -self.frac_bits)

    def descriptor(self) -> str:
        return f"fixed:{self.total_bits}f{self.frac_bits}"


@dataclass(frozen=True)
class MiniFloatFormat:
    """Sign-magnitude minifloat format ``1 + exponent_bits + mantissa_bits`` wide."""

    mantissa_bits: int
    exponent_bits: int
    implicit_bit: bool = True
    exponent_range: int | None = None
    bias: int | None = None

    def __post_init__(self) -> None:
        m, e = self.mantissa_bits, self.exponent_bits
        if not 0 <= m <= 23:
            raise FormatError(f"mantissa_bits must be in [0, 23], got {m}")
        if not 0 <= e <= 8:
            raise FormatError(f"exponent_bits must be in [0, 8], got {e}")
        if m + e < 1:
            raise FormatError("mantissa_bits + exponent_bits must be at least 1")
        r = self.exponent_range
        if r is not None:
            if r < 1:
                raise FormatError(f"exponent_range must be positive, got {r}")
            if e > 0 and r > (1 << e):
                raise FormatError(f"exponent_range {r} does not fit in {e} exponent bits")
            if e == 0 and r != 1:
                raise FormatError("exponent_range > 1 requires exponent bits")
        if self.bias is None:
            object.__setattr__(self, "bias", (1 << e) - 1)

    @classmethod
    def with_exponent_range(
        cls, mantissa_bits: int, exponent_range: int, implicit_bit: bool = True
    ) -> "MiniFloatFormat":
        """Standalone range-cap constructor; derives ``e = ceil(log2(R))``."""
        if exponent_range < 1:
            raise FormatError(f"exponent_range must be positive, got {exponent_range}")
        e = (exponent_range - 1).bit_length()
        return cls(mantissa_bits, e, implicit_bit, exponent_range=exponent_range)

    # Unbiased exponent limits. A cap replaces the bias-derived range.
    @property
    def e_min(self) -> int:
        if self.exponent_range is not None:
            return -(self.exponent_range - 1)
        return -self.bias

    @property
    def e_max(self) -> int:
        if self.exponent_range is not None:
            return 0
        return (1 << self.exponent_bits) - 1 - self.bias

    @property
    def field_max(self) -> int:
        return self.e_max - self.e_min

    @property
    def width_bits(self) -> int:
        return 1 + self.exponent_bits + self.mantissa_bits

    @property
    def sig_max(self) -> int:
        """Largest significand integer (value is ``sig * 2**(E - m)``)."""
        m = self.mantissa_bits
        return (2 << m) - 1 if self.implicit_bit else (1 << m) - 1

    @property
    def max_value(self) -> float:
        return math.ldexp(self.sig_max, self.e_max - self.mantissa_bits)

    @property
    def min_nonzero(self) -> float | None:
        """Smallest positive representable value, or None for the all-zero format."""
        m = self.mantissa_bits
        if self.implicit_bit:
            if m > 0:
                return math.ldexp((1 << m) + 1, self.e_min - m)
            # m == 0: the only value in the bottom binade is the reserved zero
            if self.e_max > self.e_min:
                return math.ldexp(1, self.e_min + 1)
            return None
        if m > 0:
            return math.ldexp(1, self.e_min - m)
        return None

    @property
    def max_code(self) -> int:
        """Magnitude code of the largest value (sign bit clear)."""
        return (self.field_max << self.mantissa_bits) | ((1 << self.mantissa_bits) - 1)

    def descriptor(self) -> str:
        text = (
            f"float:{self.mantissa_bits}m{self.exponent_bits}e"
            f"{'+i' if self.implicit_bit else '-i'}"
        )
        if self.exponent_range is not None:
            text += f"r{self.exponent_range}"
        return text


WeightFormat = FixedFormat | MiniFloatFormat


def format_from_mantissa_exponent(
    m: int, e: int, implicit_bit: bool = True
) -> WeightFormat:
    """Build a format from (m, e) notation; e = 0 means fixed-point.

    The fixed-point reading of (m, 0) is a sign bit plus m magnitude bits,
    i.e. total_bits = m + 1 with frac_bits = m.
    """
    if e == 0:
        return FixedFormat(total_bits=m + 1, frac_bits=m)
    return MiniFloatFormat(m, e, implicit_bit)


def format_width_bits(fmt: WeightFormat) -> int:
    """Stored bits per weight, sign included."""
    return fmt.width_bits


# ── descriptor grammar ───────────────────────────────────────────────────────

_FIXED_RE = re.compile(r"^fixed:(\d+)f(\d+)$", re.IGNORECASE)
_FLOAT_RE = re.compile(r"^float:(\d+)m(\d+)e([+-]i)?(?:r(\d+))?$", re.IGNORECASE)


def parse_format(text: str) -> WeightFormat:
    """Parse a format descriptor.

    Grammar (case-insensitive): ``fixed:<total>f<frac>`` or
    ``float:<m>m<e>e[+i|-i][r<R>]``. The implicit bit defaults to on.
    """
    s = text.strip()
    match = _FIXED_RE.match(s)
    if match:
        return FixedFormat(int(match.group(1)), int(match.group(2)))
    match = _FLOAT_RE.match(s)
    if match:
        m, e, imp, cap = match.groups()
        return MiniFloatFormat(
            int(m),
            int(e),
            implicit_bit=(imp is None or imp.lower() == "+i"),
            exponent_range=None if cap is None else int(cap),
        )
    raise FormatError(f"unrecognized format descriptor: {text!r}")


# ── rounding modes ───────────────────────────────────────────────────────────


@dataclass(frozen=True)
class RoundingMode:
    """Nearest-ties-to-even-code, or seeded stochastic rounding."""

    kind: str
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("nearest", "stochastic"):
            raise FormatError(f"unknown rounding kind: {self.kind!r}")
        if self.kind == "stochastic" and self.seed is None:
            raise FormatError("stochastic rounding requires a seed")

    @property
    def is_stochastic(self) -> bool:
        return self.kind == "stochastic"


NEAREST = RoundingMode("nearest")


def stochastic(seed: int) -> RoundingMode:
    return RoundingMode("stochastic", seed)


def _require_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise FormatError("quantization input must be finite")


def _resolve_rng(mode: RoundingMode, rng: np.random.Generator | None) -> np.random.Generator:
    return np.random.default_rng(mode.seed) if rng is None else rng


# ── fixed-point encode/decode ────────────────────────────────────────────────


def quantize_fixed_array(
    x: np.ndarray,
    fmt: FixedFormat,
    mode: RoundingMode = NEAREST,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Vectorized fixed-point encode; returns int64 codes."""
    a = np.asarray(x, dtype=np.float64)
    _require_finite(a)
    scaled = np.ldexp(a, fmt.frac_bits)  # exact: power-of-two scaling
    if mode.is_stochastic:
        lo = np.floor(scaled)
        u = _resolve_rng(mode, rng).random(a.shape)
        codes = lo + (u < (scaled - lo))
    else:
        codes = np.rint(scaled)  # ties to the even code
    codes = np.clip(codes, float(fmt.min_code), float(fmt.max_code))
    return codes.astype(np.int64)


def quantize_fixed(x: float, fmt: FixedFormat, mode: RoundingMode = NEAREST) -> int:
    """Code of the representable value nearest to ``x`` (saturating)."""
    return int(quantize_fixed_array(np.float64(x), fmt, mode))


def _decode_fixed_array(codes: np.ndarray, fmt: FixedFormat) -> np.ndarray:
    c = np.asarray(codes, dtype=np.int64)
    if np.any(c < fmt.min_code) or np.any(c > fmt.max_code):
        raise FormatError(f"code out of range for {fmt.descriptor()}")
    return np.ldexp(c.astype(np.float64), -fmt.frac_bits)


# ── minifloat encode/decode ──────────────────────────────────────────────────


def _minifloat_fields(codes: np.ndarray, fmt: MiniFloatFormat) -> tuple[np.ndarray, ...]:
    m, e = fmt.mantissa_bits, fmt.exponent_bits
    c = np.asarray(codes, dtype=np.int64)
    if np.any(c < 0) or np.any(c >= (1 << fmt.width_bits)):
        raise FormatError(f"code out of range for {fmt.descriptor()}")
    frac = c & ((1 << m) - 1)
    field = (c >> m) & ((1 << e) - 1)
    sign = c >> (m + e)
    if np.any(field > fmt.field_max):
        raise FormatError(f"exponent field exceeds range cap for {fmt.descriptor()}")
    return sign, field, frac


def _decode_minifloat_array(codes: np.ndarray, fmt: MiniFloatFormat) -> np.ndarray:
    sign, field, frac = _minifloat_fields(codes, fmt)
    m = fmt.mantissa_bits
    exp = field + fmt.e_min
    if fmt.implicit_bit:
        sig = (1 << m) + frac
        # the all-zero magnitude is reserved for exact zero (either sign)
        zero = (field == 0) & (frac == 0)
    else:
        sig = frac
        zero = frac == 0
    values = np.ldexp(sig.astype(np.float64), (exp - m))
    values = np.where(zero, 0.0, values)
    return np.where(sign == 1, -values, values)


def _nearest_magnitude_codes(a: np.ndarray, fmt: MiniFloatFormat) -> np.ndarray:
    """Nearest-value magnitude codes for nonnegative finite input."""
    m, emin, emax = fmt.mantissa_bits, fmt.e_min, fmt.e_max
    two_m = 1 << m
    if fmt.min_nonzero is None:  # no nonzero value representable
        return np.zeros(np.shape(a), dtype=np.int64)

    _, binade = np.frexp(a)  # a = frac * 2**binade with frac in [0.5, 1)
    if fmt.implicit_bit:
        exp = np.clip(binade - 1, emin, emax).astype(np.int64)
        rel = np.ldexp(a, -exp)  # exact
        if m > 0:
            # rel - 1 is exact (Sterbenz), the shift by m is exact, so ties are real
            f = np.rint(np.ldexp(rel - 1.0, m))
        else:
            # tie at rel == 1.5 goes to the even exponent-field code
            f = np.where(rel < 1.5, 0.0, 1.0)
            tie = rel == 1.5
            if np.any(tie):
                f = np.where(tie, ((exp - emin) & 1).astype(np.float64), f)
        f = np.maximum(f, 0.0)
        carry = f >= two_m
        exp = exp + carry
        f = np.where(carry, 0.0, f)
        over = exp > emax
        exp = np.where(over, emax, exp)
        f = np.where(over, float(two_m - 1), f)
        codes = ((exp - emin) << m) | f.astype(np.int64)
        # bottom of the range: the naive (e_min, 0) slot is the reserved zero,
        # so decide between zero and the smallest nonzero value; the exact tie
        # keeps zero (code 0 is even, the smallest-nonzero code 1 is odd)
        at_floor = (codes == 0) & (a > 0)
        if np.any(at_floor):
            promote = at_floor & (a > 0.5 * fmt.min_nonzero)
            codes = np.where(promote, np.int64(1), codes)
        return np.where(a == 0.0, np.int64(0), codes)

    # No implicit bit: semi-logarithmic grid with a linear region below
    # 2**e_min. The minimal-exponent normal form is canonical, and its code
    # parity equals the significand parity, so ties-to-even applies directly.
    exp = np.clip(binade, emin, emax).astype(np.int64)
    f = np.rint(np.ldexp(a, m - exp))
    carry = f >= two_m
    if m >= 1:
        exp = exp + carry
        f = np.where(carry, float(two_m >> 1), f)
    over = exp > emax
    exp = np.where(over, emax, exp)
    f = np.where(over, float(two_m - 1), f)
    fi = f.astype(np.int64)
    codes = ((exp - emin) << m) | fi
    return np.where(fi == 0, np.int64(0), codes)


def _next_up_magnitude(codes: np.ndarray, fmt: MiniFloatFormat) -> np.ndarray:
    """Magnitude code of the next larger representable value (saturating)."""
    m = fmt.mantissa_bits
    two_m = 1 << m
    if fmt.implicit_bit:
        # implicit-bit magnitude codes are monotone in value
        nxt = codes + 1
    else:
        frac = codes & (two_m - 1)
        top = frac == two_m - 1 if m >= 1 else np.ones(codes.shape, dtype=bool)
        field = codes >> m
        nxt = np.where(top, ((field + 1) << m) | (two_m >> 1), codes + 1)
        nxt = np.where(codes == 0, np.int64(1), nxt)
    return np.minimum(nxt, fmt.max_code)


def _floor_magnitude_codes(a: np.ndarray, fmt: MiniFloatFormat) -> np.ndarray:
    """Largest representable magnitude <= a (clamped to the top of the range)."""
    m, emin, emax = fmt.mantissa_bits, fmt.e_min, fmt.e_max
    two_m = 1 << m
    if fmt.min_nonzero is None:
        return np.zeros(np.shape(a), dtype=np.int64)
    _, binade = np.frexp(a)
    if fmt.implicit_bit:
        exp = np.clip(binade - 1, emin, emax).astype(np.int64)
        rel = np.ldexp(a, -exp)
        f = np.floor(np.ldexp(rel - 1.0, m)) if m > 0 else np.where(rel >= 2.0, 1.0, 0.0)
        f = np.maximum(f, 0.0)
        carry = f >= two_m
        exp = exp + carry
        f = np.where(carry, 0.0, f)
        over = exp > emax
        exp = np.where(over, emax, exp)
        f = np.where(over, float(two_m - 1), f)
        codes = ((exp - emin) << m) | f.astype(np.int64)
        # the naive (e_min, 0) slot is the reserved zero, which is the correct
        # floor below min_nonzero; zero input lands there explicitly
        return np.where(a == 0.0, np.int64(0), codes)
    exp = np.clip(binade, emin, emax).astype(np.int64)
    f = np.floor(np.ldexp(a, m - exp))
    carry = f >= two_m
    if m >= 1:
        exp = exp + carry
        f = np.where(carry, float(two_m >> 1), f)
    over = exp > emax
    exp = np.where(over, emax, exp)
    f = np.where(over, float(two_m - 1), f)
    fi = f.astype(np.int64)
    codes = ((exp - emin) << m) | fi
    return np.where(fi == 0, np.int64(0), codes)


def quantize_minifloat_array(
    x: np.ndarray,
    fmt: MiniFloatFormat,
    mode: RoundingMode = NEAREST,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Vectorized minifloat encode; returns canonical int64 bit patterns."""
    v = np.asarray(x, dtype=np.float64)
    _require_finite(v)
    sign = (np.signbit(v)).astype(np.int64)
    a = np.abs(v)
    if mode.is_stochastic:
        lo = _floor_magnitude_codes(a, fmt)
        hi = _next_up_magnitude(lo, fmt)
        lo_val = _decode_minifloat_array(lo, fmt)
        hi_val = _decode_minifloat_array(hi, fmt)
        gap = hi_val - lo_val
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(gap > 0, (a - lo_val) / np.where(gap > 0, gap, 1.0), 0.0)
        p = np.clip(p, 0.0, 1.0)
        u = _resolve_rng(mode, rng).random(a.shape)
        mag = np.where(u < p, hi, lo)
    else:
        mag = _nearest_magnitude_codes(a, fmt)
    shift = fmt.mantissa_bits + fmt.exponent_bits
    codes = np.where(mag == 0, np.int64(0), (sign << shift) | mag)
    return codes.astype(np.int64)


def quantize_minifloat(x: float, fmt: MiniFloatFormat, mode: RoundingMode = NEAREST) -> int:
    """Code of the nearest representable value, zero code included."""
    return int(quantize_minifloat_array(np.float64(x), fmt, mode))


# ── dispatch over the weight-format union ────────────────────────────────────


def quantize_array(
    x: np.ndarray,
    fmt: WeightFormat,
    mode: RoundingMode = NEAREST,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    if isinstance(fmt, FixedFormat):
        return quantize_fixed_array(x, fmt, mode, rng)
    return quantize_minifloat_array(x, fmt, mode, rng)


def quantize_value(x: float, fmt: WeightFormat, mode: RoundingMode = NEAREST) -> int:
    if isinstance(fmt, FixedFormat):
        return quantize_fixed(x, fmt, mode)
    return quantize_minifloat(x, fmt, mode)


def decode_array(codes: np.ndarray, fmt: WeightFormat) -> np.ndarray:
    if isinstance(fmt, FixedFormat):
        return _decode_fixed_array(codes, fmt)
    return _decode_minifloat_array(codes, fmt)


def decode(code: int, fmt: WeightFormat) -> float:
    """Exact real value of a code; raises FormatError on invalid patterns."""
    return float(decode_array(np.int64(code), fmt))


def enumerate_codes(fmt: WeightFormat) -> np.ndarray:
    """All valid bit patterns, in ascending pattern order.

    Distinct patterns may decode to the same value (negative zero, and the
    redundant encodings of formats without the implicit bit). Guarded to
    formats at most 16 bits wide.
    """
    if fmt.width_bits > 16:
        raise FormatError(f"enumerate_codes limited to width <= 16, got {fmt.width_bits}")
    if isinstance(fmt, FixedFormat):
        return np.arange(fmt.min_code, fmt.max_code + 1, dtype=np.int64)
    all_codes = np.arange(1 << fmt.width_bits, dtype=np.int64)
    field = (all_codes >> fmt.mantissa_bits) & ((1 << fmt.exponent_bits) - 1)
    return all_codes[field <= fmt.field_max]


def enumerate_values(fmt: WeightFormat) -> np.ndarray:
    """Strictly increasing array of all distinct representable values.

    Guarded to formats at most 16 bits wide; wider enumerations are refused.
    """
    codes = enumerate_codes(fmt)
    if isinstance(fmt, FixedFormat):
        return _decode_fixed_array(codes, fmt)
    return np.unique(_decode_minifloat_array(codes, fmt))
