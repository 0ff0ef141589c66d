"""Round orchestration: local training, analog uplink, averaging, downlink.

One round runs the three-step protocol for every client:

1. local training at the client's own precision (quantized-weight SGD),
2. analog uplink: amplitude-modulate the parameters, precode with the
   truncated inverse of the pilot estimate, superpose over the fading
   channel at the server,
3. server averaging at full precision, broadcast, client-side recovery and
   re-quantization to each client's own format.

Channels are redrawn per client per round and estimated once per round;
the same link serves the uplink and the downlink. Every random stream is
derived from the run seed by (round, client, purpose), and the
superposition always sums in ascending client-id order, so a run is
bit-reproducible regardless of how the per-client work is scheduled.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, replace

import numpy as np

from .channel import (
    DEFAULT_GAIN_CAP,
    ChannelEstimate,
    ChannelState,
    NoiseSpec,
    PilotSequence,
    ReceivedSignal,
    downlink_recover_flagged,
    estimate_channel,
    inversion_gain,
    modulate_amplitude,
    ota_superpose,
    sample_channel,
)
from .datasets import Dataset, ShardPlan
from .errors import ConfigurationError, ProtocolError, TrainingDivergenceError
from .model import Architecture, ModelParams, evaluate, init_params, train_step
from .quantize import QuantSpec, QuantizedTensor, dequantize, make_spec, quantize_tensor
from .seeds import derive_rng

HIGH_LEVELS = (32, 24, 16, 12)
LOW_LEVELS = (8, 6, 4)

# calibrated so that 4-bit round-to-nearest training still crawls upward at
# desk scale; smaller rates leave updates inside the quantizer's dead zone
DEFAULT_LR = 0.125
DEFAULT_EPOCHS = 2
DEFAULT_BATCH_SIZE = 32
DEFAULT_CLIENTS_PER_LEVEL = 5

_SCHEME_RE = re.compile(r"^\[\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\]$")


@dataclass(frozen=True)
class SchemeConfig:
    """A precision assignment: three bit levels, each given to a block of clients.

    Valid schemes are either uniform (a baseline) or contain exactly one
    level from the high list (32/24/16/12) and two from the low list
    (8/6/4), in any order.
    """

    levels: tuple[int, int, int]
    clients_per_level: int = DEFAULT_CLIENTS_PER_LEVEL
    prefer_float: bool = False

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(b) for b in self.levels))
        if len(self.levels) != 3:
            raise ConfigurationError(f"a scheme holds exactly three levels, got {self.levels}")
        allowed = HIGH_LEVELS + LOW_LEVELS
        for level in self.levels:
            if level not in allowed:
                raise ConfigurationError(
                    f"level {level} not in the allowed list {sorted(allowed)}"
                )
        uniform = len(set(self.levels)) == 1
        n_high = sum(1 for b in self.levels if b in HIGH_LEVELS)
        if not uniform and n_high != 1:
            raise ConfigurationError(
                f"scheme {list(self.levels)} must be uniform or combine one level "
                f"from {list(HIGH_LEVELS)} with two from {list(LOW_LEVELS)}"
            )
        if self.clients_per_level < 1:
            raise ConfigurationError("clients_per_level must be at least 1")

    @classmethod
    def parse(cls, text: str, clients_per_level: int = DEFAULT_CLIENTS_PER_LEVEL,
              prefer_float: bool = False) -> "SchemeConfig":
        m = _SCHEME_RE.match(text.strip())
        if not m:
            raise ConfigurationError(
                f"scheme {text!r} is not of the form [b1,b2,b3] with levels from "
                f"{sorted(HIGH_LEVELS + LOW_LEVELS)}"
            )
        return cls(levels=tuple(int(g) for g in m.groups()),
                   clients_per_level=clients_per_level, prefer_float=prefer_float)

    @property
    def n_clients(self) -> int:
        return 3 * self.clients_per_level

    @property
    def label(self) -> str:
        return "[" + ",".join(str(b) for b in self.levels) + "]"

    def client_specs(self) -> list[QuantSpec]:
        """Per-client formats: each level expanded to a block of clients."""
        specs = []
        for level in self.levels:
            spec = make_spec(level, prefer_float=self.prefer_float)
            specs.extend([spec] * self.clients_per_level)
        return specs


@dataclass(frozen=True)
class Shard:
    """A client's slice of the training data."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0] or self.features.shape[0] == 0:
            raise ProtocolError("shard must contain matching, non-empty rows")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class ClientState:
    """One participant: its format, current quantized model, and data slice."""

    id: int
    spec: QuantSpec
    arch: Architecture
    params: QuantizedTensor
    shard: Shard
    weight: float

    def model(self) -> ModelParams:
        return ModelParams(flat=dequantize(self.params), arch=self.arch)


@dataclass(frozen=True)
class ChannelLink:
    """A round's channel draw and pilot estimate for one client."""

    state: ChannelState
    estimate: ChannelEstimate


@dataclass(frozen=True)
class RoundRecord:
    """Everything measured in one communication round."""

    round_index: int
    server_accuracy: float
    per_client_accuracy: tuple[float, ...]
    clip_events: int
    snr_db: float
    wall_time: float


@dataclass(frozen=True)
class RunSetup:
    """Hyper-parameters and data a federation run needs besides the scheme."""

    arch: Architecture
    test_set: Dataset
    lr: float = DEFAULT_LR
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    gain_cap: float = DEFAULT_GAIN_CAP
    pilot: PilotSequence = None
    run_seed: int = 0

    def __post_init__(self):
        if self.pilot is None:
            object.__setattr__(self, "pilot", PilotSequence.unit())


def build_clients(scheme: SchemeConfig, arch: Architecture, train: Dataset,
                  plan: ShardPlan, init: ModelParams) -> list[ClientState]:
    """Expand a scheme over shards, all clients starting from one global model."""
    if plan.n_clients != scheme.n_clients:
        raise ConfigurationError(
            f"shard plan covers {plan.n_clients} clients, scheme needs {scheme.n_clients}"
        )
    specs = scheme.client_specs()
    weight = 1.0 / scheme.n_clients
    clients = []
    for client_id, spec in enumerate(specs):
        idx = plan.indices_for(client_id)
        shard = Shard(features=train.features[idx], labels=train.labels[idx])
        params = quantize_tensor(init.flat, spec)
        clients.append(ClientState(id=client_id, spec=spec, arch=arch,
                                   params=params, shard=shard, weight=weight))
    return clients


def local_round(client: ClientState, epochs: int, lr: float,
                rng: np.random.Generator,
                batch_size: int = DEFAULT_BATCH_SIZE) -> ClientState:
    """Advance a client by full epochs of quantized-weight SGD on its shard."""
    if epochs < 1:
        raise ConfigurationError(f"epochs must be at least 1, got {epochs}")
    params = client.model()
    n = client.shard.n_samples
    try:
        for _ in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                batch_idx = order[start:start + batch_size]
                params = train_step(params,
                                    client.shard.features[batch_idx],
                                    client.shard.labels[batch_idx],
                                    lr, client.spec)
    except TrainingDivergenceError as err:
        raise err.with_context(client_id=client.id) from err
    return replace(client, params=quantize_tensor(params.flat, client.spec))


def establish_links(clients: list[ClientState], noise: NoiseSpec,
                    pilot: PilotSequence,
                    channel_rngs: list[np.random.Generator],
                    pilot_rngs: list[np.random.Generator]) -> list[ChannelLink]:
    """Draw each client's fading state and estimate it once from pilots."""
    links = []
    for client, ch_rng, p_rng in zip(clients, channel_rngs, pilot_rngs):
        state = sample_channel(ch_rng)
        estimate = estimate_channel(state, pilot, noise, p_rng)
        links.append(ChannelLink(state=state, estimate=estimate))
    return links


def _uplink_detail(clients: list[ClientState], noise: NoiseSpec, gain_cap: float,
                   rng: np.random.Generator, links: list[ChannelLink] | None,
                   pilot: PilotSequence | None = None
                   ) -> tuple[np.ndarray, ReceivedSignal, int]:
    if not clients:
        raise ProtocolError("need at least one client")
    ordered = sorted(clients, key=lambda c: c.id)
    sizes = {c.params.size for c in ordered}
    if len(sizes) != 1:
        counts = {c.id: c.params.size for c in ordered}
        raise ProtocolError(f"clients disagree on parameter count: {counts}")
    if links is None:
        links = establish_links(ordered, noise, pilot or PilotSequence.unit(),
                                [rng] * len(ordered), [rng] * len(ordered))
    clip_events = 0
    transmissions = []
    states = []
    for client, link in zip(ordered, links):
        gain, clipped = inversion_gain(link.estimate, gain_cap)
        clip_events += int(clipped)
        transmissions.append(gain * modulate_amplitude(client.params))
        states.append(link.state)
    received = ota_superpose(transmissions, states, noise, rng)
    return np.real(received.samples), received, clip_events


def uplink_aggregate(clients: list[ClientState], noise: NoiseSpec,
                     gain_cap: float = DEFAULT_GAIN_CAP,
                     rng: np.random.Generator | None = None,
                     links: list[ChannelLink] | None = None,
                     pilot: PilotSequence | None = None) -> np.ndarray:
    """The server's received sample vector for one uplink phase.

    With the noise off and perfect estimates this equals the element-wise
    sum of the clients' decoded parameters.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    total, _, _ = _uplink_detail(clients, noise, gain_cap, rng, links, pilot)
    return total


def server_update(received: np.ndarray, n_clients: int, arch: Architecture) -> ModelParams:
    """Full-precision global model: the received sum scaled to a mean."""
    if n_clients < 1:
        raise ProtocolError(f"need at least one client, got {n_clients}")
    return ModelParams(flat=np.asarray(received, dtype=np.float64) / n_clients, arch=arch)


def _downlink_detail(global_params: ModelParams, clients: list[ClientState],
                     noise: NoiseSpec, gain_cap: float,
                     links: list[ChannelLink],
                     noise_rngs: list[np.random.Generator]
                     ) -> tuple[list[ClientState], int]:
    n = len(clients)
    broadcast = ReceivedSignal(samples=global_params.flat.astype(np.complex128) * n)
    updated = []
    clip_events = 0
    for client, link, rng in zip(clients, links, noise_rngs):
        recovered, clipped = downlink_recover_flagged(
            broadcast, n, link.state, noise, rng,
            est=link.estimate, gain_cap=gain_cap)
        clip_events += int(clipped)
        params = quantize_tensor(recovered, client.spec)
        updated.append(replace(client, params=params))
    return updated, clip_events


def downlink_update(global_params: ModelParams, clients: list[ClientState],
                    noise: NoiseSpec, gain_cap: float = DEFAULT_GAIN_CAP,
                    rng: np.random.Generator | None = None,
                    links: list[ChannelLink] | None = None,
                    pilot: PilotSequence | None = None) -> list[ClientState]:
    """Broadcast the global model; every client recovers and re-quantizes it."""
    rng = rng if rng is not None else np.random.default_rng(0)
    ordered = sorted(clients, key=lambda c: c.id)
    if links is None:
        links = establish_links(ordered, noise, pilot or PilotSequence.unit(),
                                [rng] * len(ordered), [rng] * len(ordered))
    updated, _ = _downlink_detail(global_params, ordered, noise, gain_cap,
                                  links, [rng] * len(ordered))
    return updated


def run_federation(scheme: SchemeConfig, rounds: int, noise: NoiseSpec,
                   setup: RunSetup, clients: list[ClientState]) -> list[RoundRecord]:
    """Run the full three-step protocol for ``rounds`` rounds.

    Stream derivation per round k and client i, from ``setup.run_seed``:
    ("round", k, "client", i, purpose) with purposes "train", "channel" and
    "pilot"; server-side noise uses ("round", k, "server", phase).
    """
    if rounds < 1:
        raise ConfigurationError(f"rounds must be at least 1, got {rounds}")
    if len(clients) != scheme.n_clients:
        raise ConfigurationError(
            f"{len(clients)} clients supplied for a {scheme.n_clients}-client scheme"
        )
    clients = sorted(clients, key=lambda c: c.id)
    records = []
    for k in range(1, rounds + 1):
        started = time.perf_counter()
        try:
            trained = [
                local_round(c, setup.epochs, setup.lr,
                            derive_rng(setup.run_seed, "round", k, "client", c.id, "train"),
                            setup.batch_size)
                for c in clients
            ]
            links = establish_links(
                trained, noise, setup.pilot,
                [derive_rng(setup.run_seed, "round", k, "client", c.id, "channel")
                 for c in trained],
                [derive_rng(setup.run_seed, "round", k, "client", c.id, "pilot")
                 for c in trained],
            )
            received_sum, _, up_clips = _uplink_detail(
                trained, noise, setup.gain_cap,
                derive_rng(setup.run_seed, "round", k, "server", "uplink"),
                links)
            global_params = server_update(received_sum, len(trained), setup.arch)
            clients, down_clips = _downlink_detail(
                global_params, trained, noise, setup.gain_cap, links,
                [derive_rng(setup.run_seed, "round", k, "client", c.id, "downlink")
                 for c in trained])
        except TrainingDivergenceError as err:
            raise err.with_context(round_index=k) from err
        except (ProtocolError, ConfigurationError) as err:
            raise type(err)(f"round {k}: {err}") from err

        server_accuracy = evaluate(global_params, setup.test_set)
        client_accuracy = tuple(evaluate(c.model(), setup.test_set) for c in clients)
        records.append(RoundRecord(
            round_index=k,
            server_accuracy=server_accuracy,
            per_client_accuracy=client_accuracy,
            clip_events=up_clips + down_clips,
            snr_db=float(noise.snr_db),
            wall_time=time.perf_counter() - started,
        ))
    return records


def detect_convergence(records: list[RoundRecord], window: int = 5,
                       fraction: float = 0.95) -> int | None:
    """First round whose trailing accuracy average reaches the final plateau.

    The trailing moving average of width ``window`` over server accuracy is
    compared against ``fraction`` times its final value; returns the
    1-based round index, or None when there are fewer records than the
    window.
    """
    if window < 1:
        raise ConfigurationError(f"window must be at least 1, got {window}")
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"fraction must be in (0, 1], got {fraction}")
    accs = np.asarray([r.server_accuracy for r in records], dtype=np.float64)
    if accs.size < window:
        return None
    moving = np.convolve(accs, np.ones(window) / window, mode="valid")
    target = fraction * moving[-1]
    hits = np.nonzero(moving >= target)[0]
    return int(hits[0]) + window if hits.size else None


def build_initial_model(arch: Architecture, seed: int) -> ModelParams:
    """Shared starting point for every client of a run."""
    return init_params(arch, derive_rng(seed, "init"))
