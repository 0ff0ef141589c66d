"""Acceptance suite: one test per gate criterion, one PASS/FAIL line each.

The trend gates run a shared 3-scheme x 5-seed x 50-round experiment at
20 dB (a few minutes); everything else finishes in seconds. Run with
``pytest tests/test_acceptance.py -v -s`` to see the per-criterion lines.
"""

import dataclasses
import json
import subprocess
import sys

import numpy as np
import pytest

from airfed.channel import NoiseSpec, PilotSequence, estimate_channel, sample_channel
from airfed.datasets import generate_synthetic, shard_uniform
from airfed.federation import (
    RunSetup,
    SchemeConfig,
    build_clients,
    build_initial_model,
    detect_convergence,
    downlink_update,
    establish_links,
    local_round,
    server_update,
    uplink_aggregate,
)
from airfed.harness import ExperimentConfig, run_experiment, write_metrics
from airfed.model import Architecture
from airfed.quantize import ALLOWED_BITS, dequantize, make_spec, quantize_tensor
from airfed.seeds import derive_rng

NOISELESS = NoiseSpec.noiseless()


def report(name: str, passed: bool, detail: str) -> None:
    print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    assert passed, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# Shared trend experiment (criteria on convergence, free lunch, returns)
# ---------------------------------------------------------------------------

TREND_SCHEMES = ("[32,4,4]", "[16,4,4]", "[4,4,4]")


@pytest.fixture(scope="module")
def trend_table():
    cfg = ExperimentConfig(schemes=TREND_SCHEMES, rounds=50, snr_db=(20.0,),
                           seeds=5, n_train=3000, n_test=1000)
    return run_experiment(cfg)


def server_traces(table, scheme):
    """Per-seed server-accuracy series plus the detected convergence round."""
    out = []
    seeds = sorted({r.seed for r in table.rows})
    for seed in seeds:
        rows = [r for r in table.rows
                if r.scheme == scheme and r.seed == seed and r.client_id is None]
        rows.sort(key=lambda r: r.round_index)
        accs = np.array([r.server_acc for r in rows])
        out.append((accs, rows[0].converged_round))
    return out


def final_4bit_mean(table, scheme):
    vals = []
    for seed in sorted({r.seed for r in table.rows}):
        rows = [r for r in table.rows if r.scheme == scheme and r.seed == seed]
        final = max(r.round_index for r in rows)
        accs = [r.client_acc for r in rows
                if r.client_bits == 4 and r.round_index == final]
        vals.append(np.mean(accs))
    return float(np.mean(vals))


def post_convergence_jitter(accs, conv_round):
    """Round-to-round std from the convergence round on (at least 10 rounds)."""
    start = min(conv_round - 1, len(accs) - 10)
    return float(np.std(np.diff(accs[start:])))


# ---------------------------------------------------------------------------
# Criterion: analog aggregation equals digital federated averaging
# ---------------------------------------------------------------------------

class TestOtaDigitalEquivalence:
    @pytest.mark.parametrize("scheme_text", ["[16,4,4]", "[4,4,4]"])
    def test_ota_matches_digital_oracle(self, scheme_text):
        """Noise off, perfect pilots, uncapped inversion: the air computes
        exactly the mean the digital oracle computes, every round."""
        scheme = SchemeConfig.parse(scheme_text)
        train, test = generate_synthetic(404, 1500, 300, 10, 48)
        arch = Architecture((48, 64, 32, 10))
        plan = shard_uniform(train, scheme.n_clients, np.random.default_rng(1))
        init = build_initial_model(arch, 77)
        clients = build_clients(scheme, arch, train, plan, init)
        setup = RunSetup(arch=arch, test_set=test, gain_cap=np.inf, run_seed=505)

        ota_clients, dig_clients = clients, clients
        worst = 0.0
        for k in range(1, 11):
            ota_trained = [
                local_round(c, setup.epochs, setup.lr,
                            derive_rng(setup.run_seed, "round", k, "client", c.id, "train"),
                            setup.batch_size)
                for c in ota_clients]
            dig_trained = [
                local_round(c, setup.epochs, setup.lr,
                            derive_rng(setup.run_seed, "round", k, "client", c.id, "train"),
                            setup.batch_size)
                for c in dig_clients]

            links = establish_links(
                ota_trained, NOISELESS, setup.pilot,
                [derive_rng(setup.run_seed, "round", k, "client", c.id, "channel")
                 for c in ota_trained],
                [derive_rng(setup.run_seed, "round", k, "client", c.id, "pilot")
                 for c in ota_trained])
            received = uplink_aggregate(
                ota_trained, NOISELESS, np.inf,
                derive_rng(setup.run_seed, "round", k, "server", "uplink"),
                links=links)
            ota_global = server_update(received, scheme.n_clients, arch)
            ota_clients = downlink_update(ota_global, ota_trained, NOISELESS,
                                          np.inf, np.random.default_rng(0),
                                          links=links)

            # the oracle never touches the channel: plain mean + requantize
            dig_global = np.mean([dequantize(c.params) for c in dig_trained], axis=0)
            dig_clients = [dataclasses.replace(
                c, params=quantize_tensor(dig_global, c.spec)) for c in dig_trained]

            rel = np.max(np.abs(ota_global.flat - dig_global)
                         / np.maximum(np.abs(dig_global), 1e-9))
            worst = max(worst, rel)
            assert all(np.array_equal(oc.params.codes, dc.params.codes)
                       for oc, dc in zip(ota_clients, dig_clients))
        report(f"OTA/digital equivalence {scheme_text}", worst < 1e-6,
               f"max relative deviation over 10 rounds = {worst:.3e}")


# ---------------------------------------------------------------------------
# Criterion: quantizer matches exhaustive search; round trips are exact
# ---------------------------------------------------------------------------

class TestQuantizerOracles:
    def test_rtn_matches_exhaustive_search(self):
        total_mismatches = 0
        for bits in (4, 6, 8):
            rng = np.random.default_rng(1000 + bits)
            x = rng.uniform(-1.0, 1.0, size=100_000)
            t = quantize_tensor(x, make_spec(bits))
            codes = np.arange(-(2 ** (bits - 1)), 2 ** (bits - 1), dtype=np.int64)
            dist = np.abs(x[:, None] - codes[None, :] * t.scale)
            best = dist.min(axis=1)
            is_min = dist == best[:, None]
            # among minimal-distance codes the even one wins the tie
            penalty = np.where(is_min, (codes % 2 != 0).astype(np.int64), 2)
            rank = penalty * (2 ** (bits + 1)) + np.abs(codes)[None, :]
            expected = codes[np.argmin(rank, axis=1)]
            total_mismatches += int(np.sum(expected != t.codes))
        report("quantizer vs exhaustive search", total_mismatches == 0,
               f"{total_mismatches} mismatches over 3x100000 scalars")

    def test_round_trip_idempotence(self):
        specs = [make_spec(b) for b in ALLOWED_BITS] + \
                [make_spec(b, prefer_float=True) for b in ALLOWED_BITS if b >= 8]
        rng = np.random.default_rng(2024)
        bad = 0
        for i in range(1000):
            spec = specs[i % len(specs)]
            x = rng.normal(0.0, rng.uniform(0.01, 5.0), size=48)
            t = quantize_tensor(x, spec)
            again = quantize_tensor(dequantize(t), spec)
            bad += not np.array_equal(again.codes, t.codes)
        report("round-trip idempotence", bad == 0,
               f"{bad} of 1000 random tensors failed across {len(specs)} formats")


# ---------------------------------------------------------------------------
# Criterion: the demo command shows digital superposition breaking
# ---------------------------------------------------------------------------

class TestSuperpositionDemoCommand:
    def test_demo_eq3_cli(self, tmp_path):
        out = tmp_path / "demo.json"
        result = subprocess.run(
            [sys.executable, "-m", "airfed.cli", "demo-eq3", "--json", str(out)],
            capture_output=True, text=True)
        assert result.returncode == 0, result.stderr
        payload = json.loads(out.read_text())
        ok = (payload["pairs"] == 16 * 256
              and payload["digital_mismatch_fraction"] > payload["analog_mismatch_fraction"]
              and payload["analog_mismatch_fraction"] == 0.0)
        report("digital vs analog superposition demo", ok,
               f"digital mismatch {payload['digital_mismatch_fraction']:.4f} vs "
               f"analog {payload['analog_mismatch_fraction']:.4f} on exhaustive pairs")


# ---------------------------------------------------------------------------
# Criterion: pilot estimation error scales with noise power
# ---------------------------------------------------------------------------

class TestChannelEstimationConsistency:
    def test_mse_ratio_between_snrs(self):
        pilot = PilotSequence.unit(8)
        mses = {}
        for snr in (10.0, 30.0):
            rng = np.random.default_rng(int(snr))
            noise = NoiseSpec(snr_db=snr)
            errs = np.empty(10_000)
            for i in range(errs.size):
                h = sample_channel(rng)
                est = estimate_channel(h, pilot, noise, rng)
                errs[i] = abs(est.h_hat - h.h) ** 2
            mses[snr] = float(np.mean(errs))
        ok = mses[30.0] <= mses[10.0] / 10.0
        report("channel estimation consistency", ok,
               f"MSE 30dB = {mses[30.0]:.3e} vs 10dB/10 = {mses[10.0] / 10.0:.3e}")


# ---------------------------------------------------------------------------
# Criteria over the shared trend experiment
# ---------------------------------------------------------------------------

class TestConvergenceSpeedTrend:
    def test_mixed_precision_converges_earlier_and_smoother(self, trend_table):
        convs, jitters = {}, {}
        for scheme in ("[16,4,4]", "[4,4,4]"):
            traces = server_traces(trend_table, scheme)
            convs[scheme] = float(np.mean([c for _, c in traces]))
            jitters[scheme] = float(np.mean(
                [post_convergence_jitter(a, c) for a, c in traces]))
        faster = convs["[16,4,4]"] < convs["[4,4,4]"]
        smoother = jitters["[16,4,4]"] < jitters["[4,4,4]"]
        report("convergence speed trend", faster,
               f"mean converged round [16,4,4] = {convs['[16,4,4]']:.1f} < "
               f"[4,4,4] = {convs['[4,4,4]']:.1f}")
        report("convergence smoothness trend", smoother,
               f"post-convergence jitter [16,4,4] = {jitters['[16,4,4]']:.4f} < "
               f"[4,4,4] = {jitters['[4,4,4]']:.4f}")


class TestFreeLunchTrend:
    def test_low_precision_clients_gain_from_mixed_scheme(self, trend_table):
        mixed = final_4bit_mean(trend_table, "[16,4,4]")
        uniform = final_4bit_mean(trend_table, "[4,4,4]")
        margin = mixed - uniform
        report("free-lunch trend", margin > 0.0,
               f"final 4-bit client accuracy {mixed:.4f} (mixed) vs "
               f"{uniform:.4f} (uniform), margin {margin * 100:+.1f} points")


class TestDiminishingReturns:
    def test_32bit_adds_little_over_16bit(self, trend_table):
        acc32 = final_4bit_mean(trend_table, "[32,4,4]")
        acc16 = final_4bit_mean(trend_table, "[16,4,4]")
        acc4 = final_4bit_mean(trend_table, "[4,4,4]")
        high_gap = abs(acc32 - acc16)
        low_gap = acc16 - acc4
        report("diminishing returns beyond 16-bit", high_gap < low_gap,
               f"|{acc32:.4f} - {acc16:.4f}| = {high_gap:.4f} < "
               f"16-vs-4 gap {low_gap:.4f}")


# ---------------------------------------------------------------------------
# Criterion: byte-identical outputs for identical configurations
# ---------------------------------------------------------------------------

class TestDeterminism:
    def test_reruns_are_byte_identical(self, tmp_path):
        cfg = ExperimentConfig(schemes=("[16,4,4]", "[4,4,4]"), rounds=3,
                               snr_db=(20.0,), seeds=2, n_train=300,
                               n_test=120, classes=4, dim=8, hidden=(12,),
                               clients_per_level=2)
        blobs = []
        for name in ("first.csv", "second.csv"):
            table = run_experiment(cfg)
            path = tmp_path / name
            write_metrics(table, path)
            blobs.append(path.read_bytes())
        report("determinism", blobs[0] == blobs[1],
               f"two runs produced {len(blobs[0])} identical bytes")
