"""Physical layer: block fading, pilot estimation, precoding, superposition.

The link is simulated at complex baseband with one sample per model
parameter; the passband carrier cancels under coherent demodulation and is
never sampled. Each client-server link has a single complex gain per round
(block fading), estimated once from pilots and compensated by truncated
channel inversion. Simultaneous uplink transmissions add sample-wise in the
channel, which is what lets the air compute the parameter sum.

All functions draw randomness only from the generators they are handed, so
callers control reproducibility completely.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from math import sqrt

import numpy as np

from .errors import ProtocolError
from .quantize import QuantizedTensor, dequantize

#: default ceiling on the inversion gain magnitude in deep fades
DEFAULT_GAIN_CAP = 10.0
#: default number of unit-power pilot symbols
DEFAULT_PILOT_LEN = 8


@dataclass(frozen=True)
class ChannelState:
    """Complex gain of one client-server link, constant within a round."""

    h: complex


@dataclass(frozen=True)
class ChannelEstimate:
    """Pilot-based estimate of a link's gain."""

    h_hat: complex


@dataclass(frozen=True)
class PilotSequence:
    """Known symbols broadcast so receivers can estimate the channel."""

    symbols: np.ndarray

    def __post_init__(self):
        symbols = np.ascontiguousarray(self.symbols, dtype=np.complex128)
        symbols.setflags(write=False)
        object.__setattr__(self, "symbols", symbols)
        if symbols.size < 1:
            raise ProtocolError("pilot sequence must contain at least one symbol")

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.symbols) ** 2))

    @property
    def symbol_power(self) -> float:
        return self.energy / self.symbols.size

    @classmethod
    def unit(cls, length: int = DEFAULT_PILOT_LEN) -> "PilotSequence":
        return cls(symbols=np.ones(length, dtype=np.complex128))


class NoiseReference(Enum):
    #: sigma^2 relative to unit signal power
    UNIT_SIGNAL = "unit"
    #: sigma^2 relative to the empirical power of the signal at hand
    MEASURED_SIGNAL = "measured"


@dataclass(frozen=True)
class NoiseSpec:
    """Receiver noise level as an SNR against a reference power.

    ``snr_db`` is typically in [5, 30]; ``inf`` turns noise off entirely,
    which the exactness tests rely on.
    """

    snr_db: float = 20.0
    reference: NoiseReference = NoiseReference.UNIT_SIGNAL

    @classmethod
    def noiseless(cls) -> "NoiseSpec":
        return cls(snr_db=np.inf)

    def sigma2(self, signal_power: float = 1.0) -> float:
        """Total variance of the complex noise for the given signal power."""
        if np.isinf(self.snr_db):
            return 0.0
        ref = signal_power if self.reference is NoiseReference.MEASURED_SIGNAL else 1.0
        return ref * 10.0 ** (-self.snr_db / 10.0)


@dataclass(frozen=True)
class ReceivedSignal:
    """Baseband samples at a receiver, one per transmitted parameter."""

    samples: np.ndarray

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.complex128)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)


def complex_noise(rng: np.random.Generator, n: int, sigma2: float) -> np.ndarray:
    """Circular complex Gaussian samples with total variance ``sigma2``."""
    if sigma2 == 0.0:
        return np.zeros(n, dtype=np.complex128)
    std = sqrt(sigma2 / 2.0)
    return std * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def sample_channel(rng: np.random.Generator) -> ChannelState:
    """Unit-average-power Rayleigh fading: h = (a + ib)/sqrt(2), a,b ~ N(0,1)."""
    a, b = rng.standard_normal(2)
    return ChannelState(h=complex(a, b) / sqrt(2.0))


def estimate_channel(h: ChannelState, pilot: PilotSequence, noise: NoiseSpec,
                     rng: np.random.Generator) -> ChannelEstimate:
    """Least-squares estimate from the received pilots.

    The receiver observes ``y = h * u + n`` and correlates with the known
    symbols: ``h_hat = sum(conj(u) * y) / sum(|u|^2)``. Exact when the noise
    is off.
    """
    if pilot.energy == 0.0:
        raise ProtocolError("pilot sequence has zero energy")
    sigma2 = noise.sigma2(pilot.symbol_power)
    y = h.h * pilot.symbols + complex_noise(rng, pilot.symbols.size, sigma2)
    h_hat = np.vdot(pilot.symbols, y) / pilot.energy
    return ChannelEstimate(h_hat=complex(h_hat))


def inversion_gain(est: ChannelEstimate, gain_cap: float = DEFAULT_GAIN_CAP
                   ) -> tuple[complex, bool]:
    """Truncated channel inversion: 1/h_hat, magnitude clipped at ``gain_cap``.

    A zero estimate is a deep fade; the gain falls back to ``gain_cap`` along
    a fixed phase. The boolean reports whether clipping occurred so round
    records can count fade events.
    """
    if est.h_hat == 0:
        return complex(gain_cap), True
    g = 1.0 / est.h_hat
    mag = abs(g)
    if mag <= gain_cap:
        return g, False
    return gain_cap * g / mag, True


def precode(theta_values: np.ndarray, est: ChannelEstimate,
            gain_cap: float = DEFAULT_GAIN_CAP) -> np.ndarray:
    """Pre-scale a transmit vector by the truncated inverse of the estimate."""
    gain, _ = inversion_gain(est, gain_cap)
    return gain * np.asarray(theta_values, dtype=np.float64)


def modulate_amplitude(t: QuantizedTensor) -> np.ndarray:
    """Baseband-equivalent amplitudes of a quantized tensor.

    Amplitude modulation carries the decoded parameter values directly;
    the carrier itself cancels under coherent demodulation.
    """
    return dequantize(t).reshape(-1)


def ota_superpose(precoded: list[np.ndarray], channels: list[ChannelState],
                  noise: NoiseSpec, rng: np.random.Generator) -> ReceivedSignal:
    """Sample-wise sum of faded transmissions plus receiver noise.

    The sum runs in list order (callers fix client-id order), so the result
    is independent of any parallel preparation of the inputs.
    """
    if len(precoded) != len(channels) or len(precoded) == 0:
        raise ProtocolError(
            f"{len(precoded)} transmit vectors for {len(channels)} channels"
        )
    n = np.asarray(precoded[0]).size
    total = np.zeros(n, dtype=np.complex128)
    for idx, (vec, state) in enumerate(zip(precoded, channels)):
        arr = np.asarray(vec, dtype=np.complex128).reshape(-1)
        if arr.size != n:
            raise ProtocolError(
                f"client {idx} sends {arr.size} samples, expected {n}"
            )
        total += state.h * arr
    sigma2 = noise.sigma2(float(np.mean(np.abs(total) ** 2)) if total.size else 1.0)
    return ReceivedSignal(samples=total + complex_noise(rng, n, sigma2))


def downlink_recover_flagged(r_s: ReceivedSignal, n_clients: int, h: ChannelState,
                             noise: NoiseSpec, rng: np.random.Generator,
                             est: ChannelEstimate | None = None,
                             gain_cap: float = DEFAULT_GAIN_CAP
                             ) -> tuple[np.ndarray, bool]:
    """Like :func:`downlink_recover` but also reports whether the gain clipped."""
    if n_clients < 1:
        raise ProtocolError(f"need at least one client, got {n_clients}")
    scaled = (h.h / n_clients) * r_s.samples
    sigma2 = noise.sigma2(float(np.mean(np.abs(scaled) ** 2)) if scaled.size else 1.0)
    received = scaled + complex_noise(rng, scaled.size, sigma2)
    if est is None:
        est = ChannelEstimate(h_hat=h.h)
    gain, clipped = inversion_gain(est, gain_cap)
    return np.real(gain * received), clipped


def downlink_recover(r_s: ReceivedSignal, n_clients: int, h: ChannelState,
                     noise: NoiseSpec, rng: np.random.Generator,
                     est: ChannelEstimate | None = None,
                     gain_cap: float = DEFAULT_GAIN_CAP) -> np.ndarray:
    """Client-side recovery of the broadcast mean.

    The server broadcasts its received vector scaled by 1/N; the client sees
    it through its own channel plus noise, inverts with the same truncation
    rule as the uplink (using its pilot estimate when given), and keeps the
    real part.
    """
    values, _ = downlink_recover_flagged(r_s, n_clients, h, noise, rng,
                                         est=est, gain_cap=gain_cap)
    return values
