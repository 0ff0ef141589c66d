"""Mixed-precision number formats: fixed-point and minifloat round-to-nearest.

Two storage formats are supported at bit widths {4, 6, 8, 12, 16, 24, 32}:

* Fixed point: signed integer codes in [-2^(b-1), 2^(b-1)-1] times a
  per-tensor step size (``scale``). The default scale is dynamic,
  ``max|x| / (2^(b-1)-1)``, carried at full precision; a fixed-range mode
  pins the representable bound instead.
* Minifloat: a sign/exponent/mantissa layout packed into an integer code.
  Widths map to E4M3 (8), E5M6 (12), E5M10 (16), E8M15 (24) and E8M23 (32,
  the standard single-precision layout). The top exponent field is reserved
  as in IEEE formats, subnormals are supported, and values beyond the
  largest finite representable saturate to it. Minifloat is only offered at
  8 bits and above; below that the dynamic range is too small to train.

All rounding is round-to-nearest with ties to even, which avoids the bias
a fixed tie direction would accumulate over many encode/decode cycles.
Every operation here is a pure function; tensors are immutable once built.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from math import prod

import numpy as np

from .errors import ConfigurationError, NumericInputError

ALLOWED_BITS = (4, 6, 8, 12, 16, 24, 32)

#: exponent/mantissa split used when a float layout is requested per width
MINIFLOAT_LAYOUTS: dict[int, tuple[int, int]] = {
    8: (4, 3),
    12: (5, 6),
    16: (5, 10),
    24: (8, 15),
    32: (8, 23),
}

MIN_FLOAT_BITS = 8


class NumberFormat(Enum):
    FIXED_POINT = "fx"
    MINIFLOAT = "mf"


class ScalingMode(Enum):
    PER_TENSOR_DYNAMIC = "dynamic"
    FIXED_RANGE = "fixed-range"


_SPEC_RE = re.compile(
    r"^(?P<fmt>fx|mf)(?P<bits>\d+)"
    r"(?:e(?P<exp>\d+)m(?P<mant>\d+))?"
    r"(?:@(?P<bound>[0-9.eE+-]+))?$"
)


@dataclass(frozen=True)
class QuantSpec:
    """A numeric format: bit width, layout, and scale policy."""

    bits: int
    format: NumberFormat
    exp_bits: int = 0
    mant_bits: int = 0
    scaling: ScalingMode = ScalingMode.PER_TENSOR_DYNAMIC
    range_bound: float | None = None

    def __post_init__(self):
        if self.bits not in ALLOWED_BITS:
            raise ConfigurationError(
                f"unsupported bit width {self.bits}; allowed widths are {ALLOWED_BITS}"
            )
        if self.format is NumberFormat.MINIFLOAT:
            if self.bits < MIN_FLOAT_BITS:
                raise ConfigurationError(
                    f"minifloat needs at least {MIN_FLOAT_BITS} bits, got {self.bits}"
                )
            if 1 + self.exp_bits + self.mant_bits != self.bits:
                raise ConfigurationError(
                    f"minifloat layout 1+{self.exp_bits}+{self.mant_bits} "
                    f"does not fill {self.bits} bits"
                )
            if self.exp_bits < 2 or self.mant_bits < 1:
                raise ConfigurationError(
                    f"degenerate minifloat layout e{self.exp_bits}m{self.mant_bits}"
                )
        else:
            if self.exp_bits or self.mant_bits:
                raise ConfigurationError("fixed-point specs carry no exponent/mantissa split")
        if self.scaling is ScalingMode.FIXED_RANGE:
            if self.range_bound is None or not self.range_bound > 0:
                raise ConfigurationError("fixed-range scaling needs a positive bound")
        elif self.range_bound is not None:
            raise ConfigurationError("range_bound is only meaningful with fixed-range scaling")

    @property
    def max_code(self) -> int:
        return 2 ** (self.bits - 1) - 1

    @property
    def min_code(self) -> int:
        return -(2 ** (self.bits - 1))

    def to_string(self) -> str:
        """Short config/CSV form: ``fx4``, ``mf8e4m3``, ``fx8@1.5``."""
        if self.format is NumberFormat.FIXED_POINT:
            base = f"fx{self.bits}"
        else:
            base = f"mf{self.bits}e{self.exp_bits}m{self.mant_bits}"
        if self.scaling is ScalingMode.FIXED_RANGE:
            base += f"@{self.range_bound!r}"
        return base

    @classmethod
    def from_string(cls, text: str) -> "QuantSpec":
        """Parse the short form (case-insensitive). Round-trips :meth:`to_string`."""
        m = _SPEC_RE.match(text.strip().lower())
        if not m:
            raise ConfigurationError(f"unrecognized format string {text!r}")
        bits = int(m.group("bits"))
        fmt = NumberFormat.FIXED_POINT if m.group("fmt") == "fx" else NumberFormat.MINIFLOAT
        exp = int(m.group("exp")) if m.group("exp") else 0
        mant = int(m.group("mant")) if m.group("mant") else 0
        if fmt is NumberFormat.MINIFLOAT and not m.group("exp"):
            exp, mant = MINIFLOAT_LAYOUTS.get(bits, (0, 0))
        if fmt is NumberFormat.FIXED_POINT and m.group("exp"):
            raise ConfigurationError(f"fixed-point string {text!r} carries a float layout")
        scaling = ScalingMode.PER_TENSOR_DYNAMIC
        bound = None
        if m.group("bound"):
            scaling = ScalingMode.FIXED_RANGE
            bound = float(m.group("bound"))
        return cls(bits=bits, format=fmt, exp_bits=exp, mant_bits=mant,
                   scaling=scaling, range_bound=bound)


def make_spec(bits: int, prefer_float: bool = False, *,
              range_bound: float | None = None) -> QuantSpec:
    """Build the format used at a given width.

    Below 8 bits only fixed point exists; at 8 bits and above
    ``prefer_float`` selects the designated minifloat layout for that width.
    """
    if bits not in ALLOWED_BITS:
        raise ConfigurationError(
            f"unsupported bit width {bits}; allowed widths are {ALLOWED_BITS}"
        )
    scaling = ScalingMode.FIXED_RANGE if range_bound is not None else ScalingMode.PER_TENSOR_DYNAMIC
    if prefer_float and bits >= MIN_FLOAT_BITS:
        exp, mant = MINIFLOAT_LAYOUTS[bits]
        return QuantSpec(bits=bits, format=NumberFormat.MINIFLOAT,
                         exp_bits=exp, mant_bits=mant)
    return QuantSpec(bits=bits, format=NumberFormat.FIXED_POINT,
                     scaling=scaling, range_bound=range_bound)


# ---------------------------------------------------------------------------
# Minifloat codec
# ---------------------------------------------------------------------------

def minifloat_max_finite(exp_bits: int, mant_bits: int) -> float:
    """Largest finite value of the layout (top exponent field is reserved)."""
    bias = (1 << (exp_bits - 1)) - 1
    max_exp = ((1 << exp_bits) - 2) - bias
    return float(np.ldexp(2.0 - 2.0 ** -mant_bits, max_exp))


def encode_minifloat(x: np.ndarray, exp_bits: int, mant_bits: int) -> np.ndarray:
    """Round finite values to the nearest representable minifloat code.

    Ties go to the even mantissa; overflow saturates to the largest finite
    value; -0.0 encodes as +0. Returns int64 bit patterns.
    """
    x = np.asarray(x, dtype=np.float64)
    bias = (1 << (exp_bits - 1)) - 1
    m_scale = 1 << mant_bits
    e_top = (1 << exp_bits) - 1
    min_exp = 1 - bias

    sign = (x < 0).astype(np.int64)
    a = np.abs(x)

    # a = f * 2**e2 with f in [0.5, 1); subnormals share the lowest binade's step
    _, e2 = np.frexp(a)
    e_unb = np.maximum(e2.astype(np.int64) - 1, min_exp)

    # power-of-two rescale is exact, so np.round performs true ties-to-even RTN
    q = np.round(np.ldexp(a, mant_bits - e_unb)).astype(np.int64)

    carry = q >= 2 * m_scale
    e_unb = np.where(carry, e_unb + 1, e_unb)
    q = np.where(carry, m_scale, q)

    normal = q >= m_scale
    e_field = np.where(normal, e_unb + bias, 0)
    m_field = np.where(normal, q - m_scale, q)

    over = e_field > e_top - 1
    e_field = np.where(over, e_top - 1, e_field)
    m_field = np.where(over, m_scale - 1, m_field)

    # values that round to zero lose their sign: +0 is the only zero emitted
    sign = np.where((e_field == 0) & (m_field == 0), 0, sign)

    return (sign << (exp_bits + mant_bits)) | (e_field << mant_bits) | m_field


def decode_minifloat(codes: np.ndarray, exp_bits: int, mant_bits: int) -> np.ndarray:
    """Exact values of minifloat bit patterns (inf/NaN patterns decode faithfully)."""
    codes = np.asarray(codes, dtype=np.int64)
    bias = (1 << (exp_bits - 1)) - 1
    m_scale = 1 << mant_bits
    e_top = (1 << exp_bits) - 1

    sign = (codes >> (exp_bits + mant_bits)) & 1
    e_field = (codes >> mant_bits) & e_top
    m_field = codes & (m_scale - 1)

    normal = e_field > 0
    mant = np.where(normal, m_field + m_scale, m_field).astype(np.float64)
    e_unb = np.where(normal, e_field - bias, 1 - bias)
    value = np.ldexp(mant, e_unb - mant_bits)

    special = e_field == e_top
    if np.any(special):
        value = np.where(special, np.where(m_field == 0, np.inf, np.nan), value)
    return np.where(sign == 1, -value, value)


# ---------------------------------------------------------------------------
# Tensors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantizedTensor:
    """Integer codes plus a step size; immutable and safe to share."""

    codes: np.ndarray
    scale: float
    spec: QuantSpec
    shape: tuple[int, ...]

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes, dtype=np.int64)
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if prod(self.shape) != self.codes.size:
            raise NumericInputError(
                f"shape {self.shape} does not match {self.codes.size} codes"
            )
        if not self.scale > 0:
            raise NumericInputError(f"scale must be positive, got {self.scale}")
        spec = self.spec
        if spec.format is NumberFormat.FIXED_POINT:
            if codes.size and (codes.min() < spec.min_code or codes.max() > spec.max_code):
                raise NumericInputError(
                    f"codes outside [{spec.min_code}, {spec.max_code}] for {spec.to_string()}"
                )
        else:
            if codes.size and (codes.min() < 0 or codes.max() >= (1 << spec.bits)):
                raise NumericInputError(f"codes are not {spec.bits}-bit patterns")
            e_top = (1 << spec.exp_bits) - 1
            e_field = (codes >> spec.mant_bits) & e_top
            if np.any(e_field == e_top):
                raise NumericInputError("non-finite minifloat patterns are not storable")

    @property
    def size(self) -> int:
        return self.codes.size


def quantize_tensor(x: np.ndarray, spec: QuantSpec) -> QuantizedTensor:
    """Round-to-nearest encoding of a real tensor under ``spec``.

    Fixed point with dynamic scaling sets ``scale = max|x| / max_code``
    (1.0 for an all-zero tensor) so no value clips; fixed-range mode clamps
    to the configured bound. Minifloat saturates overflow and keeps
    ``scale = 1.0``.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        raise NumericInputError("cannot quantize an empty tensor")
    if not np.all(np.isfinite(arr)):
        raise NumericInputError("input contains NaN or infinite values")
    flat = arr.reshape(-1)

    if spec.format is NumberFormat.FIXED_POINT:
        if spec.scaling is ScalingMode.FIXED_RANGE:
            scale = spec.range_bound / spec.max_code
        else:
            peak = float(np.max(np.abs(flat)))
            scale = peak / spec.max_code if peak > 0.0 else 1.0
        codes = np.clip(np.round(flat / scale), spec.min_code, spec.max_code)
        codes = codes.astype(np.int64)
    else:
        codes = encode_minifloat(flat, spec.exp_bits, spec.mant_bits)
        scale = 1.0
    return QuantizedTensor(codes=codes, scale=float(scale), spec=spec, shape=arr.shape)


def dequantize(t: QuantizedTensor) -> np.ndarray:
    """Exact real values of a quantized tensor, original shape restored."""
    if t.spec.format is NumberFormat.FIXED_POINT:
        values = t.codes.astype(np.float64) * t.scale
    else:
        values = decode_minifloat(t.codes, t.spec.exp_bits, t.spec.mant_bits)
    return values.reshape(t.shape)


def requantize(t: QuantizedTensor, target: QuantSpec) -> QuantizedTensor:
    """Convert between formats by decoding and re-encoding under ``target``."""
    return quantize_tensor(dequantize(t), target)
