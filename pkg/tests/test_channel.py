"""Physical-layer tests: fading statistics, estimation, superposition."""

import numpy as np
import pytest
from scipy import stats

from airfed.channel import (
    ChannelEstimate,
    ChannelState,
    NoiseReference,
    NoiseSpec,
    PilotSequence,
    ReceivedSignal,
    complex_noise,
    downlink_recover,
    estimate_channel,
    inversion_gain,
    modulate_amplitude,
    ota_superpose,
    precode,
    sample_channel,
)
from airfed.errors import ProtocolError
from airfed.quantize import QuantizedTensor, make_spec, quantize_tensor


class TestFading:
    def test_deterministic_per_seed(self):
        a = sample_channel(np.random.default_rng(4))
        b = sample_channel(np.random.default_rng(4))
        assert a.h == b.h

    def test_unit_average_power(self):
        rng = np.random.default_rng(100)
        power = np.mean([abs(sample_channel(rng).h) ** 2 for _ in range(10_000)])
        assert 0.95 <= power <= 1.05

    def test_magnitude_is_rayleigh(self):
        rng = np.random.default_rng(101)
        mags = np.array([abs(sample_channel(rng).h) for _ in range(8000)])
        result = stats.kstest(mags, "rayleigh", args=(0, 1 / np.sqrt(2)))
        assert result.pvalue > 0.01


class TestNoiseSpec:
    def test_sigma2_from_snr(self):
        assert NoiseSpec(snr_db=20.0).sigma2() == pytest.approx(1e-2)
        assert NoiseSpec(snr_db=30.0).sigma2() == pytest.approx(1e-3)

    def test_noiseless_is_exact_zero(self):
        assert NoiseSpec.noiseless().sigma2() == 0.0

    def test_measured_reference_scales_with_signal(self):
        spec = NoiseSpec(snr_db=20.0, reference=NoiseReference.MEASURED_SIGNAL)
        assert spec.sigma2(4.0) == pytest.approx(4e-2)

    def test_sample_noise_power_matches_sigma2(self):
        rng = np.random.default_rng(55)
        sigma2 = 0.37
        samples = complex_noise(rng, 100_000, sigma2)
        measured = np.mean(np.abs(samples) ** 2)
        assert abs(measured - sigma2) / sigma2 < 0.05


class TestEstimation:
    def test_noiseless_estimate_is_exact(self):
        rng = np.random.default_rng(0)
        h = sample_channel(rng)
        for length in (1, 4, 8):
            est = estimate_channel(h, PilotSequence.unit(length),
                                   NoiseSpec.noiseless(), rng)
            assert est.h_hat == h.h

    def test_single_symbol_closed_form(self):
        # y = h*1 + n, estimate = y; with h = 1 the estimate is 1 + n
        h = ChannelState(h=1.0 + 0.0j)
        noise = NoiseSpec(snr_db=10.0)
        rng = np.random.default_rng(21)
        expected_noise = complex_noise(np.random.default_rng(21), 1,
                                       noise.sigma2(1.0))[0]
        est = estimate_channel(h, PilotSequence.unit(1), noise, rng)
        assert est.h_hat == pytest.approx(1.0 + expected_noise)

    def test_estimator_variance_scaling(self):
        # MSE should be sigma^2 / (L * P); allow factor-3 slack
        rng = np.random.default_rng(22)
        pilot = PilotSequence.unit(8)
        noise = NoiseSpec(snr_db=30.0)
        errors = []
        powers = []
        for _ in range(10_000):
            h = sample_channel(rng)
            est = estimate_channel(h, pilot, noise, rng)
            errors.append(abs(est.h_hat - h.h) ** 2)
            powers.append(abs(h.h) ** 2)
        ratio = np.mean(errors) / np.mean(powers)
        assert ratio <= 1e-3 * (1 / 8) * 3

    def test_mse_decreases_with_pilot_snr(self):
        rng = np.random.default_rng(23)
        pilot = PilotSequence.unit(8)
        mses = []
        for snr in (5.0, 10.0, 20.0, 30.0):
            noise = NoiseSpec(snr_db=snr)
            errs = []
            for _ in range(4000):
                h = sample_channel(rng)
                est = estimate_channel(h, pilot, noise, rng)
                errs.append(abs(est.h_hat - h.h) ** 2)
            mses.append(np.mean(errs))
        assert mses[0] > mses[1] > mses[2] > mses[3]

    def test_zero_energy_pilot_rejected(self):
        with pytest.raises(ProtocolError):
            estimate_channel(ChannelState(1 + 0j),
                             PilotSequence(np.zeros(4, dtype=complex)),
                             NoiseSpec.noiseless(), np.random.default_rng(0))


class TestPrecoding:
    def test_identity_channel(self):
        x = np.array([1.0, -2.0, 0.5])
        out = precode(x, ChannelEstimate(1.0 + 0.0j), gain_cap=10.0)
        assert np.allclose(out, x)

    def test_direct_inverse(self):
        out = precode(np.array([1.0]), ChannelEstimate(0.5 + 0.0j), gain_cap=10.0)
        assert out[0] == pytest.approx(2.0)

    def test_magnitude_clips_at_cap(self):
        gain, clipped = inversion_gain(ChannelEstimate(0.01 + 0.0j), gain_cap=10.0)
        assert clipped
        assert abs(gain) == pytest.approx(10.0)

    def test_phase_preserved_when_clipping(self):
        est = ChannelEstimate(0.001j)
        gain, clipped = inversion_gain(est, gain_cap=10.0)
        assert clipped
        inv = 1.0 / est.h_hat
        assert np.angle(gain) == pytest.approx(np.angle(inv))

    def test_deep_fade_fixed_phase(self):
        gain, clipped = inversion_gain(ChannelEstimate(0.0j), gain_cap=10.0)
        assert clipped
        assert gain == 10.0 + 0.0j


class TestModulateAmplitude:
    def test_zero_tensor(self):
        t = quantize_tensor(np.zeros(6), make_spec(4))
        assert np.all(modulate_amplitude(t) == 0.0)

    def test_decodes_codes(self):
        t = QuantizedTensor(codes=np.array([7, -7]), scale=1.0 / 7.0,
                            spec=make_spec(4), shape=(2,))
        assert modulate_amplitude(t).tolist() == [1.0, -1.0]


class TestSuperposition:
    def test_single_ideal_link_is_identity(self):
        x = np.array([1.0 + 0j, -0.5 + 0j, 3.25 + 0j])
        got = ota_superpose([x], [ChannelState(1.0 + 0j)], NoiseSpec.noiseless(),
                            np.random.default_rng(0))
        assert np.array_equal(got.samples, x)

    def test_three_clients_sum_exactly(self):
        states = [sample_channel(np.random.default_rng(i)) for i in range(3)]
        vectors = []
        for value, state in zip((1.0, 2.0, 3.0), states):
            gain, _ = inversion_gain(ChannelEstimate(state.h), gain_cap=np.inf)
            vectors.append(gain * np.full(10, value))
        got = ota_superpose(vectors, states, NoiseSpec.noiseless(),
                            np.random.default_rng(9))
        assert np.allclose(np.real(got.samples), 6.0, atol=1e-9)

    def test_fifteen_clients_match_digital_sum(self):
        rng = np.random.default_rng(77)
        thetas = [rng.normal(size=200) for _ in range(15)]
        states, vectors = [], []
        for theta in thetas:
            state = sample_channel(rng)
            gain, _ = inversion_gain(ChannelEstimate(state.h), gain_cap=np.inf)
            states.append(state)
            vectors.append(gain * theta)
        got = ota_superpose(vectors, states, NoiseSpec.noiseless(), rng)
        digital = np.sum(thetas, axis=0)
        rel = np.abs(np.real(got.samples) - digital) / np.maximum(np.abs(digital), 1e-9)
        assert np.max(rel) < 1e-6

    def test_linearity(self):
        rng = np.random.default_rng(31)
        states = [sample_channel(rng) for _ in range(4)]
        xs = [rng.normal(size=32) + 1j * rng.normal(size=32) for _ in range(4)]
        ys = [rng.normal(size=32) + 1j * rng.normal(size=32) for _ in range(4)]
        noiseless = NoiseSpec.noiseless()
        rng0 = np.random.default_rng(0)
        lhs = ota_superpose([2.0 * x + y for x, y in zip(xs, ys)], states,
                            noiseless, rng0).samples
        rhs = (2.0 * ota_superpose(xs, states, noiseless, rng0).samples
               + ota_superpose(ys, states, noiseless, rng0).samples)
        assert np.max(np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-12)) < 1e-9

    def test_noise_power_accounting(self):
        rng = np.random.default_rng(8)
        n = 100_000
        clean = np.ones(n, dtype=complex)
        noise = NoiseSpec(snr_db=20.0)
        got = ota_superpose([clean], [ChannelState(1.0 + 0j)], noise, rng)
        measured = np.mean(np.abs(got.samples - clean) ** 2)
        assert abs(measured - noise.sigma2()) / noise.sigma2() < 0.05

    def test_length_mismatch_names_client(self):
        with pytest.raises(ProtocolError, match="client 1"):
            ota_superpose([np.zeros(3, dtype=complex), np.zeros(4, dtype=complex)],
                          [ChannelState(1 + 0j), ChannelState(1 + 0j)],
                          NoiseSpec.noiseless(), np.random.default_rng(0))


class TestDownlink:
    def test_single_client_identity(self):
        r_s = ReceivedSignal(np.array([2.0 + 0j, -1.0 + 0j]))
        got = downlink_recover(r_s, 1, ChannelState(1.0 + 0j),
                               NoiseSpec.noiseless(), np.random.default_rng(0))
        assert np.allclose(got, [2.0, -1.0])

    def test_division_by_client_count(self):
        r_s = ReceivedSignal(np.full(5, 10.0 + 0j))
        got = downlink_recover(r_s, 5, ChannelState(1.0 + 0j),
                               NoiseSpec.noiseless(), np.random.default_rng(0))
        assert np.allclose(got, 2.0)

    def test_uplink_downlink_round_trip_noiseless(self):
        rng = np.random.default_rng(3)
        thetas = [rng.normal(size=64) for _ in range(5)]
        states, vectors = [], []
        for theta in thetas:
            state = sample_channel(rng)
            gain, _ = inversion_gain(ChannelEstimate(state.h), gain_cap=np.inf)
            states.append(state)
            vectors.append(gain * theta)
        received = ota_superpose(vectors, states, NoiseSpec.noiseless(), rng)
        mean = np.mean(thetas, axis=0)
        for state in states:
            got = downlink_recover(received, 5, state, NoiseSpec.noiseless(),
                                   rng, gain_cap=np.inf)
            rel = np.abs(got - mean) / np.maximum(np.abs(mean), 1e-9)
            assert np.max(rel) < 1e-6
