"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also written to the terminal when output is captured.
"""

import itertools
import time

import numpy as np
import pytest

from vlccp.bits import bytes_to_bits
from vlccp.channel import CameraModel, SceneState
from vlccp.config import CALIBRATED_NOISE_SIGMA, resolve_config
from vlccp.cpm import (
    AuthenticationError,
    cpm_size_bits,
    cpm_size_bytes,
    decode_cpm,
    encode_cpm,
    etsi_cpm_size_bits,
    random_message,
)
from vlccp.harness import BER_TARGET, calibrate, results_csv, run_experiment, simulate_link
from vlccp.tx import packetize

CAMERA_RATES = (100, 125, 200, 250, 400, 500, 800, 1000)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, elapsed):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail} ({elapsed:.1f} s)")
    return emit


def test_criterion_1_size_law(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    sizes = {n: encode_cpm(random_message(rng, n)).size for n in range(17)}
    law = all(sizes[n] == 272 + 74 * n == cpm_size_bits(n) for n in sizes)
    n_frame = packetize(encode_cpm(random_message(rng, 2))).n_frame
    elapsed = time.perf_counter() - t0
    ok = law and sizes[2] == 420 and cpm_size_bytes(2) == 53 and n_frame == 53 and elapsed < 1
    report(1, ok, f"272+74n for n=0..16, n=2 -> {sizes[2]} bits, {n_frame} frames", elapsed)
    assert ok


def test_criterion_2_etsi_reference(report):
    t0 = time.perf_counter()
    value = etsi_cpm_size_bits(1, 1)
    ok = value == 2120
    report(2, ok, f"etsi_cpm_size_bits(1, 1) = {value}", time.perf_counter() - t0)
    assert ok


def test_criterion_3_latency(report):
    t0 = time.perf_counter()
    cfg = resolve_config("indoor-stationary", fps_list=list(CAMERA_RATES), processing_delay=0.0)
    results = run_experiment(cfg)
    within = []
    for r in results:
        tau = 2 * 53 / r.fps
        within.append(r.packets > 0 and r.erasures == 0
                      and tau - 1e-9 <= r.latency_meas_s
                      and r.latency_max_s <= tau + 1 / r.fps + 1e-9)
    at_1000 = next(r for r in results if r.fps == 1000)
    elapsed = time.perf_counter() - t0
    ok = (all(within) and [r.fps for r in results] == list(CAMERA_RATES)
          and 0.106 <= at_1000.latency_meas_s <= 0.107 and elapsed < 60)
    report(3, ok, f"{sum(within)}/8 rates within one frame of 2N/fps, "
                  f"1000 fps -> {at_1000.latency_meas_s * 1e3:.3f} ms", elapsed)
    assert ok


def test_criterion_4_round_trip_and_tamper(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(10_000):
        msg = random_message(rng, int(rng.integers(0, 17)))
        if decode_cpm(encode_cpm(msg)) != msg:
            mismatches += 1
    bits = encode_cpm(random_message(rng, 2))
    rejected = 0
    for i in range(bits.size):
        flipped = bits.copy()
        flipped[i] ^= 1
        try:
            decode_cpm(flipped)
        except AuthenticationError:
            rejected += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and bits.size == 420 and rejected == 420 and elapsed < 60
    report(4, ok, f"{10_000 - mismatches}/10000 round trips, {rejected}/420 flips rejected", elapsed)
    assert ok


def test_criterion_5_noiseless_loopback(report):
    t0 = time.perf_counter()
    payload = bytes_to_bits(bytes(range(256)))
    symbol = 1 / 500
    cases = {5.0: 0.0125, 75.0: 0.100, 160.0: 0.100}  # distance -> focal length
    failures = []
    for (distance, focal), k in itertools.product(cases.items(), range(8)):
        cam = CameraModel(focal_length=focal, phase_offset=k / 8 * symbol)
        scene = SceneState(distance=distance, ambient_level=20.0 if distance < 10 else 60.0)
        trace = simulate_link([payload], scene, cam, 500, np.random.default_rng(k))
        if len(trace.rx_packets) != 1 or (trace.rx_packets[0].payload_bits != payload).any():
            failures.append((distance, k))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 300
    report(5, ok, f"256 bytes x 3 distances x 8 phases, failures={failures}", elapsed)
    assert ok


@pytest.fixture(scope="module")
def calibration():
    t0 = time.perf_counter()
    res = calibrate(resolve_config("outdoor-range"))
    return res, time.perf_counter() - t0


def _range_point(sigma, distances, packets=200):
    cfg = resolve_config("outdoor-range", noise_sigma=sigma, distance_list=distances,
                         packets=packets)
    return run_experiment(cfg)


def test_criterion_6_calibrated_range(report, calibration):
    res, cal_time = calibration
    t0 = time.perf_counter()
    in_band = BER_TARGET[0] <= res.ber <= BER_TARGET[1]
    sweep = _range_point(res.noise_sigma, [75.0, 100.0, 120.0, 140.0, 160.0])
    bounded = all(not r.all_erasure and 0 <= r.ber <= 1e-2 and r.packets >= 200 for r in sweep)
    grid = [res.noise_sigma * f for f in (0.6, 0.8, 0.9, 1.0, 1.15)]
    bers = [_range_point(s, [100.0])[0].ber for s in grid]
    monotone = all(a <= b for a, b in zip(bers, bers[1:]))
    elapsed = cal_time + time.perf_counter() - t0
    ok = in_band and bounded and monotone and elapsed < 15 * 60
    detail = (f"sigma={res.noise_sigma:g} (preset {CALIBRATED_NOISE_SIGMA:g}) 100 m BER {res.ber:.3g}; "
              f"range BER {[f'{r.ber:.2g}' for r in sweep]}; grid BER {[f'{b:.2g}' for b in bers]}")
    report(6, ok, detail, elapsed)
    assert ok


def test_criterion_7_speed_invariance(report, calibration):
    res, _ = calibration
    t0 = time.perf_counter()
    cfg = resolve_config("outdoor-driving", noise_sigma=res.noise_sigma)
    results = run_experiment(cfg)
    bounds = {r.speed_kmh: (r.ber_lower_95, r.ber_upper_95) for r in results}
    below = all(hi <= 1e-2 for _, hi in bounds.values())
    overlap = all(max(a[0], b[0]) <= min(a[1], b[1])
                  for a, b in itertools.combinations(bounds.values(), 2))
    elapsed = time.perf_counter() - t0
    ok = (below and overlap and sorted(bounds) == [20.0, 40.0, 60.0, 90.0]
          and all(r.runs == 4 for r in results) and elapsed < 15 * 60)
    detail = ", ".join(f"{v:g} km/h [{lo:.2g}, {hi:.2g}]" for v, (lo, hi) in bounds.items())
    report(7, ok, detail, elapsed)
    assert ok


def test_criterion_8_determinism(report):
    t0 = time.perf_counter()
    configs = [
        resolve_config("outdoor-range", packets=10, distance_list=[100.0, 160.0]),
        resolve_config("outdoor-driving", speed_list=[90.0], runs=2),
        resolve_config("indoor-stationary", fps_list=[250, 1000]),
    ]
    same = [results_csv(c, run_experiment(c)).encode() == results_csv(c, run_experiment(c)).encode()
            for c in configs]
    ok = all(same)
    report(8, ok, f"{sum(same)}/{len(same)} experiments byte-identical on rerun",
           time.perf_counter() - t0)
    assert ok
