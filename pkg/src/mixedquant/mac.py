"""Bit-exact multiply-accumulate datapath for mixed-format inner products.

A fixed-point activation code and a minifloat weight code multiply exactly
as integers: the activation integer times the significand integer, shifted
by the weight exponent. Products are aligned to a single accumulator scale
(``2**-acc_frac_bits``) at multiply time, so accumulation is plain integer
addition and every intermediate value is exact until requantization.

The default accumulator scale ``act.frac_bits + m + (2**e - 1)`` makes the
worst-case downshift nonnegative, which is the exactness guarantee. Configs
that would force truncation are rejected. Overflow beyond ``acc_bits``
either saturates with a sticky flag or raises, per ``saturate``.

Fixed-point weights ride the same datapath as the constant-shift special
case, which is what the (m, 0) sweep notation produces.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .formats import (
    NEAREST,
    FixedFormat,
    FormatError,
    RoundingMode,
    WeightFormat,
    quantize_fixed,
)

__all__ = [
    "MacConfig",
    "AccValue",
    "mixed_multiply",
    "accumulate",
    "dot_product",
    "requantize",
    "required_acc_bits",
]


def _default_acc_frac_bits(act_fmt: FixedFormat, w_fmt: WeightFormat) -> int:
    if isinstance(w_fmt, FixedFormat):
        return act_fmt.frac_bits + w_fmt.frac_bits
    return act_fmt.frac_bits + w_fmt.mantissa_bits + (1 << w_fmt.exponent_bits) - 1


def _min_exact_acc_frac_bits(act_fmt: FixedFormat, w_fmt: WeightFormat) -> int:
    """Smallest accumulator scale at which every product is exact."""
    if isinstance(w_fmt, FixedFormat):
        return act_fmt.frac_bits + w_fmt.frac_bits
    return act_fmt.frac_bits + w_fmt.mantissa_bits - w_fmt.e_min


@dataclass(frozen=True)
class MacConfig:
    """Datapath configuration: operand formats and accumulator geometry."""

    act_fmt: FixedFormat
    w_fmt: WeightFormat
    acc_bits: int = 32
    acc_frac_bits: int | None = None
    saturate: bool = True

    def __post_init__(self) -> None:
        if self.acc_frac_bits is None:
            object.__setattr__(
                self, "acc_frac_bits", _default_acc_frac_bits(self.act_fmt, self.w_fmt)
            )
        if not 2 <= self.acc_bits <= 64:
            raise FormatError(f"acc_bits must be in [2, 64], got {self.acc_bits}")
        m_equiv = (
            self.w_fmt.frac_bits
            if isinstance(self.w_fmt, FixedFormat)
            else self.w_fmt.mantissa_bits
        )
        if self.acc_bits < self.act_fmt.total_bits + m_equiv + 2:
            raise FormatError(
                "acc_bits too small: need at least "
                f"{self.act_fmt.total_bits + m_equiv + 2} for these formats"
            )
        floor = _min_exact_acc_frac_bits(self.act_fmt, self.w_fmt)
        if self.acc_frac_bits < floor:
            raise FormatError(
                f"acc_frac_bits {self.acc_frac_bits} would truncate products; "
                f"exactness needs at least {floor}"
            )

    @property
    def acc_min(self) -> int:
        return -(1 << (self.acc_bits - 1))

    @property
    def acc_max(self) -> int:
        return (1 << (self.acc_bits - 1)) - 1


@dataclass(frozen=True)
class AccValue:
    """Accumulator word: integer at scale ``2**-frac_bits`` plus sticky overflow."""

    value: int
    frac_bits: int
    overflowed: bool = False

    def to_fraction(self) -> Fraction:
        """Exact real value."""
        return Fraction(self.value, 1 << self.frac_bits)

    def to_real(self) -> float:
        """Real value as a double; exact while |value| stays below 2**53."""
        return float(self.to_fraction())


def _clamp(raw: int, cfg: MacConfig, sticky: bool) -> AccValue:
    if raw > cfg.acc_max or raw < cfg.acc_min:
        if not cfg.saturate:
            raise OverflowError(
                f"accumulator overflow: {raw} outside [{cfg.acc_min}, {cfg.acc_max}]"
            )
        return AccValue(min(max(raw, cfg.acc_min), cfg.acc_max), cfg.acc_frac_bits, True)
    return AccValue(raw, cfg.acc_frac_bits, sticky)


def _weight_product_int(w_code: int, cfg: MacConfig) -> int:
    """Weight as an integer at scale ``2**-(acc_frac_bits - act.frac_bits)``."""
    w_fmt = cfg.w_fmt
    if isinstance(w_fmt, FixedFormat):
        if not w_fmt.min_code <= w_code <= w_fmt.max_code:
            raise FormatError(f"weight code out of range for {w_fmt.descriptor()}")
        return w_code << (cfg.acc_frac_bits - cfg.act_fmt.frac_bits - w_fmt.frac_bits)
    m, e = w_fmt.mantissa_bits, w_fmt.exponent_bits
    if not 0 <= w_code < (1 << w_fmt.width_bits):
        raise FormatError(f"weight code out of range for {w_fmt.descriptor()}")
    frac = w_code & ((1 << m) - 1)
    fld = (w_code >> m) & ((1 << e) - 1)
    sign = w_code >> (m + e)
    if fld > w_fmt.field_max:
        raise FormatError(f"exponent field exceeds range cap for {w_fmt.descriptor()}")
    if w_fmt.implicit_bit:
        if fld == 0 and frac == 0:
            return 0
        sig = (1 << m) + frac
    else:
        if frac == 0:
            return 0
        sig = frac
    shift = cfg.acc_frac_bits - cfg.act_fmt.frac_bits - m + (fld + w_fmt.e_min)
    # shift >= 0 is the config-level exactness guarantee
    sig <<= shift
    return -sig if sign else sig


def mixed_multiply(act_code: int, w_code: int, cfg: MacConfig) -> AccValue:
    """Exact product of an activation code and a weight code at the acc scale."""
    act = cfg.act_fmt
    if not act.min_code <= act_code <= act.max_code:
        raise FormatError(f"activation code out of range for {act.descriptor()}")
    raw = act_code * _weight_product_int(w_code, cfg)
    return _clamp(raw, cfg, False)


def accumulate(acc: AccValue, product: AccValue, cfg: MacConfig) -> AccValue:
    """Saturating integer add; the overflow flag is sticky."""
    if acc.frac_bits != product.frac_bits or acc.frac_bits != cfg.acc_frac_bits:
        raise FormatError("accumulator scales do not match")
    return _clamp(acc.value + product.value, cfg, acc.overflowed or product.overflowed)


def dot_product(
    act_codes: Sequence[int], w_codes: Sequence[int], cfg: MacConfig
) -> AccValue:
    """Fold of mixed_multiply/accumulate over paired codes; empty input is 0."""
    if len(act_codes) != len(w_codes):
        raise FormatError("dot_product operands must have equal length")
    acc = AccValue(0, cfg.acc_frac_bits)
    for a, w in zip(act_codes, w_codes):
        acc = accumulate(acc, mixed_multiply(a, w, cfg), cfg)
    return acc


def requantize(
    acc: AccValue,
    layer_scale: float,
    out_fmt: FixedFormat,
    mode: RoundingMode = NEAREST,
) -> int:
    """Scale the accumulator back to real weights and encode as fixed-point.

    The nearest path rounds the exact rational ``acc * layer_scale`` with
    ties to the even code, so no precision is lost even for wide
    accumulators. Stochastic rounding draws on the double-precision value.
    """
    if mode.is_stochastic:
        return quantize_fixed(acc.to_real() * layer_scale, out_fmt, mode)
    t = acc.to_fraction() * Fraction(layer_scale) * (1 << out_fmt.frac_bits)
    q, r = divmod(t.numerator, t.denominator)
    double_rem = 2 * r
    if double_rem > t.denominator or (double_rem == t.denominator and q % 2 != 0):
        q += 1
    return min(max(q, out_fmt.min_code), out_fmt.max_code)


def required_acc_bits(
    act_fmt: FixedFormat,
    w_fmt: WeightFormat,
    fan_in: int,
    acc_frac_bits: int | None = None,
) -> int:
    """Accumulator width that provably holds ``fan_in`` extreme products.

    Worst case: every operand at maximum magnitude, all products of one
    sign. The bound makes saturation impossible for any input, so summation
    order cannot matter.
    """
    if acc_frac_bits is None:
        acc_frac_bits = _default_acc_frac_bits(act_fmt, w_fmt)
    a_max = 1 << (act_fmt.total_bits - 1)
    if isinstance(w_fmt, FixedFormat):
        w_max = (1 << (w_fmt.total_bits - 1)) << (
            acc_frac_bits - act_fmt.frac_bits - w_fmt.frac_bits
        )
    else:
        shift = acc_frac_bits - act_fmt.frac_bits - w_fmt.mantissa_bits + w_fmt.e_max
        w_max = w_fmt.sig_max << shift
    return (fan_in * a_max * w_max).bit_length() + 1
