"""Digital-vs-analog superposition demo tests."""

import numpy as np
import pytest

from airfed.errors import ConfigurationError, ProtocolError
from airfed.qam import (
    constellation_has_origin,
    exhaustive_code_pair_tensors,
    gray_decode,
    gray_encode,
    qam_demodulate,
    qam_modulate,
    qam_superposition_demo,
)
from airfed.quantize import QuantizedTensor, make_spec, quantize_tensor

# fraction of mismatching (4-bit, 8-bit) code pairs, frozen from an
# independent scalar enumeration of all 16 x 256 pairs
EXHAUSTIVE_4x8_FRACTION = 4059 / 4096


def reference_gray_table(width: int) -> list[int]:
    """Binary-reflected Gray sequence built by the textbook reflection rule."""
    seq = ["0", "1"]
    while len(seq[0]) < width:
        seq = ["0" + s for s in seq] + ["1" + s for s in reversed(seq)]
    return [int(s, 2) for s in seq]


class TestGrayCode:
    def test_round_trip(self):
        values = np.arange(256)
        assert np.array_equal(gray_decode(gray_encode(values)), values)

    def test_matches_reflection_construction(self):
        table = reference_gray_table(4)
        assert gray_encode(np.arange(16)).tolist() == table

    def test_adjacent_labels_differ_by_one_bit(self):
        labels = gray_encode(np.arange(64))
        diffs = labels[1:] ^ labels[:-1]
        assert all(bin(int(d)).count("1") == 1 for d in diffs)


class TestConstellation:
    def test_demodulate_inverts_modulate(self):
        for bits in (4, 8, 12):
            codes = np.arange(1 << bits, dtype=np.int64)
            points = qam_modulate(codes, bits)
            assert np.array_equal(qam_demodulate(points, bits), codes)

    def test_levels_are_odd_integers(self):
        points = qam_modulate(np.arange(16), 4)
        assert set(points.real.tolist()) == {-3.0, -1.0, 1.0, 3.0}
        assert set(points.imag.tolist()) == {-3.0, -1.0, 1.0, 3.0}

    def test_no_origin_point(self):
        for bits in (4, 8):
            assert not constellation_has_origin(bits)

    def test_unsupported_width_rejected(self):
        with pytest.raises(ConfigurationError):
            qam_modulate(np.zeros(1, dtype=np.int64), 6)


class TestSuperpositionDemo:
    def test_zero_tensors_flag_the_offset(self):
        spec4, spec8 = make_spec(4), make_spec(8)
        a = QuantizedTensor(np.zeros(8, dtype=np.int64), 1.0, spec4, (8,))
        b = QuantizedTensor(np.zeros(8, dtype=np.int64), 1.0, spec8, (8,))
        report = qam_superposition_demo(a, b)
        assert report.mismatch_fraction == 0.0
        assert report.origin_offset  # no constellation point sits at the origin

    def test_exhaustive_4x8_matches_frozen_fraction(self):
        a, b = exhaustive_code_pair_tensors(4, 8)
        report = qam_superposition_demo(a, b)
        assert report.mismatch_fraction == pytest.approx(EXHAUSTIVE_4x8_FRACTION)
        assert report.mismatch_fraction > 0.5
        assert report.analog_mismatch_fraction == 0.0

    def test_random_mixed_precision_tensors(self):
        rng = np.random.default_rng(17)
        x = rng.uniform(-1, 1, size=512)
        a = quantize_tensor(x, make_spec(4, range_bound=1.0))
        b = quantize_tensor(rng.uniform(-1, 1, size=512), make_spec(8, range_bound=1.0))
        report = qam_superposition_demo(a, b)
        assert report.mismatch_fraction > 0.5
        assert report.analog_mismatch_fraction == 0.0
        assert report.digital_sum_decoded.shape == (512,)
        assert report.true_sum.shape == (512,)

    def test_equal_width_pairs(self):
        rng = np.random.default_rng(18)
        a = quantize_tensor(rng.uniform(-1, 1, 256), make_spec(4, range_bound=1.0))
        b = quantize_tensor(rng.uniform(-1, 1, 256), make_spec(4, range_bound=1.0))
        report = qam_superposition_demo(a, b)
        assert report.mismatch_fraction > report.analog_mismatch_fraction

    def test_true_sum_is_wider_grid_quantization(self):
        a, b = exhaustive_code_pair_tensors(4, 8)
        report = qam_superposition_demo(a, b)
        from airfed.quantize import dequantize
        sums = dequantize(a) + dequantize(b)
        expected = np.clip(np.round(sums), -128, 127)
        assert np.array_equal(report.true_sum, expected)

    def test_shape_mismatch_rejected(self):
        a = QuantizedTensor(np.zeros(4, dtype=np.int64), 1.0, make_spec(4), (4,))
        b = QuantizedTensor(np.zeros(5, dtype=np.int64), 1.0, make_spec(8), (5,))
        with pytest.raises(ProtocolError):
            qam_superposition_demo(a, b)

    def test_odd_width_rejected(self):
        a = QuantizedTensor(np.zeros(4, dtype=np.int64), 1.0, make_spec(6), (4,))
        b = QuantizedTensor(np.zeros(4, dtype=np.int64), 1.0, make_spec(8), (4,))
        with pytest.raises(ConfigurationError):
            qam_superposition_demo(a, b)
