"""Why digital constellations cannot aggregate over the air.

Square-QAM maps a b-bit code to a point on a 2^(b/2) x 2^(b/2) grid with
Gray-labeled axes. That map is not linear in the encoded value, so the
sample-wise sum of two transmitted constellations does not demodulate to
the sum of the values: superposing a 16-QAM and a 256-QAM signal lands
between the wider grid's points almost everywhere. Amplitude modulation, by
contrast, transmits the values themselves and superposes exactly.

The demo quantifies both effects on the same pair of tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelState, NoiseSpec, ota_superpose
from .errors import ConfigurationError, ProtocolError
from .quantize import (
    NumberFormat,
    QuantSpec,
    QuantizedTensor,
    decode_minifloat,
    dequantize,
    encode_minifloat,
)

#: square constellations exist only at these widths
QAM_WIDTHS = (4, 8, 12, 16)


def gray_encode(index: np.ndarray) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    return index ^ (index >> 1)


def gray_decode(code: np.ndarray) -> np.ndarray:
    value = np.asarray(code, dtype=np.int64).copy()
    shift = 1
    while np.any(value >> shift):
        value ^= value >> shift
        shift <<= 1
    return value


def _check_width(bits: int) -> int:
    if bits not in QAM_WIDTHS:
        raise ConfigurationError(
            f"square QAM needs an even width in {QAM_WIDTHS}, got {bits}"
        )
    return bits // 2


def qam_modulate(codes: np.ndarray, bits: int) -> np.ndarray:
    """Map b-bit code patterns to Gray-labeled square constellation points.

    The high half of the pattern selects the in-phase level, the low half
    the quadrature level; levels sit at odd integers -(M-1), ..., (M-1).
    """
    half = _check_width(bits)
    m = 1 << half
    patterns = np.asarray(codes, dtype=np.int64) & ((1 << bits) - 1)
    i_level = gray_decode(patterns >> half)
    q_level = gray_decode(patterns & (m - 1))
    return (2 * i_level - (m - 1)) + 1j * (2 * q_level - (m - 1))


def qam_demodulate(points: np.ndarray, bits: int) -> np.ndarray:
    """Nearest-point decision on the b-bit constellation, back to code patterns."""
    half = _check_width(bits)
    m = 1 << half
    points = np.asarray(points, dtype=np.complex128)
    i_level = np.clip(np.round((points.real + (m - 1)) / 2.0), 0, m - 1).astype(np.int64)
    q_level = np.clip(np.round((points.imag + (m - 1)) / 2.0), 0, m - 1).astype(np.int64)
    return (gray_encode(i_level) << half) | gray_encode(q_level)


def constellation_has_origin(bits: int) -> bool:
    """Whether any code maps to the point 0+0j (square QAM: never)."""
    codes = np.arange(1 << bits, dtype=np.int64)
    return bool(np.any(qam_modulate(codes, bits) == 0))


def _pattern_to_code(patterns: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Unsigned bit patterns back to the spec's code domain (two's complement)."""
    patterns = np.asarray(patterns, dtype=np.int64)
    if spec.format is NumberFormat.FIXED_POINT:
        wrap = 1 << spec.bits
        return np.where(patterns >= wrap // 2, patterns - wrap, patterns)
    return patterns


def _value_on_grid(values: np.ndarray, spec: QuantSpec, scale: float) -> np.ndarray:
    """Nearest code of ``values`` on a fixed grid (no rescaling)."""
    if spec.format is NumberFormat.FIXED_POINT:
        return np.clip(np.round(values / scale), spec.min_code, spec.max_code
                       ).astype(np.int64)
    return encode_minifloat(values, spec.exp_bits, spec.mant_bits)


def _code_values(codes: np.ndarray, spec: QuantSpec, scale: float) -> np.ndarray:
    if spec.format is NumberFormat.FIXED_POINT:
        return codes.astype(np.float64) * scale
    return decode_minifloat(codes, spec.exp_bits, spec.mant_bits)


@dataclass(frozen=True)
class SuperpositionDemoReport:
    """Outcome of superposing two tensors digitally (QAM) and in amplitude."""

    digital_sum_decoded: np.ndarray
    true_sum: np.ndarray
    mismatch_fraction: float
    analog_mismatch_fraction: float
    #: square QAM has no origin point, so even zero + zero demodulates off tune
    origin_offset: bool


def qam_superposition_demo(a: QuantizedTensor, b: QuantizedTensor
                           ) -> SuperpositionDemoReport:
    """Superpose two (possibly different-width) tensors both ways and compare.

    The reference is the wider format's best representation of the genuine
    value sum, on the wider tensor's own step size. The digital path adds
    raw constellation points sample-wise and demodulates against the wider
    constellation; the analog path runs the actual amplitude superposition
    (unit channels, no noise) and quantizes the received sum onto the same
    grid. Mismatch fractions count samples whose decoded code differs from
    the reference code.
    """
    if a.shape != b.shape:
        raise ProtocolError(f"shape mismatch: {a.shape} vs {b.shape}")
    _check_width(a.spec.bits)
    _check_width(b.spec.bits)

    wider, narrower = (a, b) if a.spec.bits >= b.spec.bits else (b, a)
    wspec, wscale = wider.spec, wider.scale

    va = dequantize(a).reshape(-1)
    vb = dequantize(b).reshape(-1)
    true_codes = _value_on_grid(va + vb, wspec, wscale)
    true_sum = _code_values(true_codes, wspec, wscale)

    summed_points = (qam_modulate(a.codes, a.spec.bits)
                     + qam_modulate(b.codes, b.spec.bits))
    digital_patterns = qam_demodulate(summed_points, wspec.bits)
    digital_codes = _pattern_to_code(digital_patterns, wspec)
    digital_values = _code_values(digital_codes, wspec, wscale)
    mismatch = float(np.mean(digital_codes != true_codes))

    unit = ChannelState(h=1.0 + 0.0j)
    received = ota_superpose([va.astype(np.complex128), vb.astype(np.complex128)],
                             [unit, unit], NoiseSpec.noiseless(),
                             np.random.default_rng(0))
    analog_codes = _value_on_grid(np.real(received.samples), wspec, wscale)
    analog_mismatch = float(np.mean(analog_codes != true_codes))

    return SuperpositionDemoReport(
        digital_sum_decoded=digital_values.reshape(wider.shape),
        true_sum=true_sum.reshape(wider.shape),
        mismatch_fraction=mismatch,
        analog_mismatch_fraction=analog_mismatch,
        origin_offset=not constellation_has_origin(narrower.spec.bits),
    )


def exhaustive_code_pair_tensors(bits_a: int, bits_b: int, *, scale: float = 1.0
                                 ) -> tuple[QuantizedTensor, QuantizedTensor]:
    """All (code_a, code_b) pairs as two aligned fixed-point tensors.

    Both tensors share one step size so the comparison isolates the
    modulation effect rather than a scale disagreement.
    """
    spec_a = QuantSpec(bits=bits_a, format=NumberFormat.FIXED_POINT)
    spec_b = QuantSpec(bits=bits_b, format=NumberFormat.FIXED_POINT)
    codes_a = np.arange(spec_a.min_code, spec_a.max_code + 1, dtype=np.int64)
    codes_b = np.arange(spec_b.min_code, spec_b.max_code + 1, dtype=np.int64)
    grid_a, grid_b = np.meshgrid(codes_a, codes_b, indexing="ij")
    shape = (codes_a.size * codes_b.size,)
    return (
        QuantizedTensor(codes=grid_a.reshape(-1), scale=scale, spec=spec_a, shape=shape),
        QuantizedTensor(codes=grid_b.reshape(-1), scale=scale, spec=spec_b, shape=shape),
    )
