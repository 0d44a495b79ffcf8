"""Reduced-precision IEEE 754 binary formats emulated on a binary64 carrier.

Every format here has at most 53 significand bits, so a value rounded into it
is exactly representable as a Python float / ``np.float64``.  Rounding is
round-to-nearest, ties-to-even.  For ``+ - * /`` on representable operands the
carrier result is either exact (binary16, bfloat16) or rounded once at 53 bits
before the final rounding; since 53 >= 2p + 2 for every p <= 24 that double
rounding is innocuous and the final result is correctly rounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "FloatFormat",
    "RoundingDecomposition",
    "BINARY16",
    "BFLOAT16",
    "BINARY32",
    "BINARY64",
    "FORMATS",
    "get_format",
    "round_to",
    "decompose",
    "rounded_binop",
    "representable",
]


@dataclass(frozen=True)
class FloatFormat:
    """A binary floating-point format with ``mantissa_bits`` stored fraction bits."""

    name: str
    exponent_bits: int
    mantissa_bits: int
    subnormals_enabled: bool = True

    @property
    def precision(self) -> int:
        return self.mantissa_bits + 1

    @property
    def emax(self) -> int:
        return (1 << (self.exponent_bits - 1)) - 1

    @property
    def emin(self) -> int:
        return 1 - self.emax

    @property
    def unit_roundoff(self) -> float:
        return math.ldexp(1.0, -(self.mantissa_bits + 1))

    @property
    def max_finite(self) -> float:
        return math.ldexp(2.0 - math.ldexp(1.0, -self.mantissa_bits), self.emax)

    @property
    def min_positive_normal(self) -> float:
        return math.ldexp(1.0, self.emin)

    @property
    def min_positive_subnormal(self) -> float:
        return math.ldexp(1.0, self.emin - self.mantissa_bits)

    @property
    def is_carrier(self) -> bool:
        return self.exponent_bits == 11 and self.mantissa_bits == 52

    def flush_to_zero(self) -> "FloatFormat":
        return FloatFormat(self.name, self.exponent_bits, self.mantissa_bits, False)

    def __str__(self) -> str:
        return self.name


BINARY16 = FloatFormat("binary16", 5, 10)
BFLOAT16 = FloatFormat("bfloat16", 8, 7)
BINARY32 = FloatFormat("binary32", 8, 23)
BINARY64 = FloatFormat("binary64", 11, 52)

FORMATS: dict[str, FloatFormat] = {f.name: f for f in (BINARY16, BFLOAT16, BINARY32, BINARY64)}
_ALIASES = {"float16": "binary16", "half": "binary16", "float32": "binary32",
            "single": "binary32", "float64": "binary64", "double": "binary64", "bf16": "bfloat16"}


def get_format(fmt: str | FloatFormat) -> FloatFormat:
    if isinstance(fmt, FloatFormat):
        return fmt
    key = _ALIASES.get(fmt.lower(), fmt.lower())
    try:
        return FORMATS[key]
    except KeyError:
        raise ValueError(f"unknown float format {fmt!r}; expected one of {sorted(FORMATS)}") from None


def round_to(fmt: FloatFormat, x):
    """Round ``x`` (scalar or array) to the nearest value of ``fmt``.

    Returns a Python float for scalar input and a float64 array otherwise.
    NaN inputs give the canonical quiet NaN.
    """
    scalar = np.ndim(x) == 0 and not isinstance(x, np.ndarray)
    a = np.asarray(x, dtype=np.float64)
    if fmt.is_carrier:
        out = a.copy()
    else:
        out = _round_array(fmt, a)
    out[np.isnan(out)] = np.nan
    return out.item() if scalar else out


def _round_array(fmt: FloatFormat, a: np.ndarray) -> np.ndarray:
    # Round-to-nearest-even on the binary64 bit pattern: add half an ulp minus
    # one plus the kept lsb, then truncate.  Carries ripple into the exponent
    # field, which is exactly the binade change of IEEE rounding.
    shape = a.shape
    a = np.ascontiguousarray(a).reshape(-1)
    drop = np.uint64(52 - fmt.mantissa_bits)
    bits = a.view(np.uint64)
    lsb = (bits >> drop) & np.uint64(1)
    bits = (bits + (np.uint64((1 << (52 - fmt.mantissa_bits - 1)) - 1) + lsb)) & ~np.uint64(
        (1 << (52 - fmt.mantissa_bits)) - 1
    )
    r = bits.view(np.float64)
    mag = np.abs(a)
    tiny = mag < fmt.min_positive_normal
    if tiny.any():
        if fmt.subnormals_enabled:
            # below 2^emin the quantum is fixed; adding 2^52 quanta makes the
            # FPU round at exactly that quantum (ties to even)
            big = math.ldexp(1.0, 52 + fmt.emin - fmt.mantissa_bits)
            with np.errstate(invalid="ignore"):
                sub = np.copysign((mag + big) - big, a)
            r = np.where(tiny, sub, r)
        else:
            r = np.where(tiny & (np.abs(r) < fmt.min_positive_normal), np.copysign(0.0, a), r)
    with np.errstate(invalid="ignore"):
        r = np.where(np.abs(r) > fmt.max_finite, np.copysign(np.inf, a), r)
    # truncation would turn a NaN with only low payload bits into infinity
    r = np.where(np.isnan(a), np.nan, r)
    return r.reshape(shape)


def representable(fmt: FloatFormat, x) -> bool:
    """True when every element of ``x`` is fixed under rounding into ``fmt``."""
    a = np.asarray(x, dtype=np.float64)
    r = round_to(fmt, a)
    return bool(np.all((r == a) | (np.isnan(r) & np.isnan(a))))


class RoundingDecomposition(NamedTuple):
    rounded: float
    relative_term: float
    # False when |x| is below the normal range, where |k| <= u need not hold
    in_normal_range: bool = True


def decompose(fmt: FloatFormat, x: float) -> RoundingDecomposition:
    """Write ``fl(x) = x * (1 + k)`` and return ``(fl(x), k)``.

    >>> decompose(BINARY16, 0.1).relative_term
    -0.000244140625
    """
    x = float(x)
    r = round_to(fmt, x)
    if x == 0.0:
        return RoundingDecomposition(r, 0.0, True)
    normal = abs(x) >= fmt.min_positive_normal and math.isfinite(r)
    return RoundingDecomposition(r, r / x - 1.0, normal)


_BINOPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}


def rounded_binop(fmt: FloatFormat, op: str, a, b):
    """Correctly rounded ``a op b`` in ``fmt``; operands must already be representable."""
    try:
        fn = _BINOPS[op]
    except KeyError:
        raise ValueError(f"unknown operation {op!r}") from None
    with np.errstate(all="ignore"):
        exact = fn(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    out = round_to(fmt, exact)
    if np.ndim(a) == 0 and np.ndim(b) == 0 and not isinstance(a, np.ndarray):
        return float(out)
    return out
