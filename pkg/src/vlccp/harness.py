"""End-to-end link simulation, latency/BER metrics and experiment sweeps."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import beta

from .bits import as_bits, hamming
from .channel import (
    CameraFrame,
    CameraModel,
    SceneState,
    SimulationEnd,
    render_frame,
    sample_clock,
    step_motion,
    write_pgm,
)
from .config import RunConfig
from .cpm import AuthenticationError, decode_cpm, encode_cpm, random_message
from .rx import Receiver, RxPacket
from .tx import TxPacket, TxSchedule, packetize, schedule

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "preset", "fps", "tx_rate", "distance_m", "speed_kmh", "packets", "bits", "errors",
    "erasures", "ber", "ber_upper_95", "latency_eq1_s", "latency_meas_s", "seed",
)
CI_METHOD = "clopper-pearson, one-sided 97.5% upper bound"


class AccountingError(ValueError):
    pass


class NoMeasurementError(Exception):
    pass


def latency_eq1(n_frame: int, fps: float) -> float:
    """Application latency when processing keeps up with the camera: 2 N / fps."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    return 2 * n_frame / fps


def ber(tx_bits, rx_bits) -> float:
    tx_bits, rx_bits = as_bits(tx_bits), as_bits(rx_bits)
    if tx_bits.size != rx_bits.size:
        raise AccountingError(f"bit count mismatch: {tx_bits.size} sent, {rx_bits.size} received")
    if tx_bits.size == 0:
        raise AccountingError("no bits to compare")
    return hamming(tx_bits, rx_bits) / tx_bits.size


def cp_upper_95(errors: int, n: int) -> float:
    """Exact binomial (Clopper-Pearson) upper limit of the two-sided 95% interval."""
    if n <= 0 or not 0 <= errors <= n:
        raise ValueError(f"need 0 <= errors <= n and n > 0, got {errors}, {n}")
    if errors == n:
        return 1.0
    return float(beta.ppf(0.975, errors + 1, n - errors))


def cp_lower_95(errors: int, n: int) -> float:
    if n <= 0 or not 0 <= errors <= n:
        raise ValueError(f"need 0 <= errors <= n and n > 0, got {errors}, {n}")
    if errors == 0:
        return 0.0
    return float(beta.ppf(0.025, errors, n - errors + 1))


def derive_seed(*parts: int) -> int:
    """64-bit seed from a master seed and indices, independent of run order."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


# -- link simulation ---------------------------------------------------------

@dataclass
class Trace:
    """Everything one simulated run produced."""

    schedule: TxSchedule
    tx_packets: list[TxPacket]
    capture_times: np.ndarray
    rx_packets: list[RxPacket]
    fps: float
    stop_time: float
    receiver: Receiver
    tx_bits: list[np.ndarray] = field(default_factory=list)  # unpadded payloads

    @property
    def frame_period(self) -> float:
        return 1.0 / self.fps

    def sent_packet_indices(self) -> list[int]:
        """Packets fully on air (data and the closing symbol) before the run stopped."""
        out = []
        for k, (_, d, n) in enumerate(self.schedule.packet_spans):
            if self.schedule.time_of(d + n + 1) <= self.stop_time + 1e-12:
                out.append(k)
        return out

    def match(self) -> list[tuple[int, RxPacket]]:
        """Pair received packets with the transmitted packet they started in."""
        out = []
        period = self.schedule.period
        starts = np.array(self.schedule.data_start_times)
        for pkt in self.rx_packets:
            k = int(np.argmin(np.abs(starts - pkt.first_frame_time)))
            if 0 <= pkt.first_frame_time - starts[k] < period + 1e-12:
                out.append((k, pkt))
        return out


def simulate_link(
    payloads: list[np.ndarray],
    scene: SceneState,
    camera: CameraModel,
    tx_rate: float,
    rng: np.random.Generator,
    lead_in: int = 4,
    end_distance: float | None = None,
    frame_sink: Callable[[int, CameraFrame], None] | None = None,
    keep_trace: bool = False,
) -> Trace:
    """Transmit ``payloads`` back to back and run the receiver over the captures.

    The camera phase comes from ``camera.phase_offset`` or is drawn from
    ``rng``. Moving scenes stop once the distance drops to ``end_distance``.
    """
    packets = [packetize(p) for p in payloads]
    sched = schedule(packets, tx_rate, 0.0, lead_in=lead_in, tail=1)
    captures = sample_clock(camera, sched, rng=rng)
    n_frame = packets[0].n_frame
    receiver = Receiver(n_frame, captures_per_symbol=camera.frame_rate_cam / tx_rate,
                        keep_trace=keep_trace)
    rx_packets: list[RxPacket] = []
    times = []
    stop_time = sched.end_time
    current = scene
    last_t = None
    for k, (t, state) in enumerate(captures):
        if last_t is not None and current.speed:
            try:
                current = step_motion(current, t - last_t)
            except SimulationEnd:
                stop_time = t
                break
        if end_distance is not None and current.distance <= end_distance:
            stop_time = t
            break
        last_t = t
        frame = render_frame(state, current, camera, t)
        if frame_sink is not None:
            frame_sink(k, frame)
        rx_packets.extend(receiver.push(frame))
        times.append(t)
    return Trace(sched, packets, np.array(times), rx_packets, camera.frame_rate_cam,
                 stop_time, receiver, [as_bits(p) for p in payloads])


# -- latency -----------------------------------------------------------------

@dataclass(frozen=True)
class LatencyMeasurement:
    mean: float
    max: float
    with_overhead: float  # measured from the first idle symbol of the packet
    samples: tuple[float, ...]


def reception_time(capture_times: np.ndarray, index: int, fps: float,
                   processing_delay: float = 0.0) -> float:
    """Camera-clock timestamp at which frame ``index``'s result is available.

    Frames are processed in order, each taking ``processing_delay``. Results
    are stamped with the capture tick during which processing finished, so any
    delay shorter than the frame interval leaves the stamp unchanged.
    """
    t0 = capture_times[0]
    period = 1.0 / fps
    if processing_delay <= period:
        finish = capture_times[index] + processing_delay
    else:
        finish = t0 + (index + 1) * processing_delay
    ticks = math.floor((finish - t0) * fps + 1e-9)
    if processing_delay < period:
        ticks = min(ticks, index)
    return t0 + ticks * period


def measure_latency(trace: Trace, processing_delay: float = 0.0) -> LatencyMeasurement:
    matched = trace.match()
    if not matched:
        raise NoMeasurementError("no completed packet in trace")
    samples = []
    overhead = []
    times = trace.capture_times
    for k, pkt in matched:
        index = int(np.argmin(np.abs(times - pkt.demod_complete_time)))
        t_rx = reception_time(times, index, trace.fps, processing_delay)
        samples.append(t_rx - trace.schedule.data_start_times[k])
        overhead.append(t_rx - trace.schedule.idle_start_times[k])
    return LatencyMeasurement(float(np.mean(samples)), float(np.max(samples)),
                              float(np.mean(overhead)), tuple(samples))


# -- experiments -------------------------------------------------------------

@dataclass
class ExperimentResult:
    preset: str
    fps: float
    tx_rate: float
    distance_m: float
    speed_kmh: float
    seed: int
    noise_sigma: float
    packets: int = 0  # packets fully transmitted
    bits: int = 0  # bits in received packets
    errors: int = 0
    erasures: int = 0
    auth_failures: int = 0
    latency_eq1_s: float = 0.0
    latency_meas_s: float = math.nan
    latency_max_s: float = math.nan
    latency_overhead_s: float = math.nan
    runs: int = 0

    @property
    def all_erasure(self) -> bool:
        return self.bits == 0

    @property
    def ber(self) -> float:
        return math.nan if self.all_erasure else self.errors / self.bits

    @property
    def ber_upper_95(self) -> float:
        return 1.0 if self.all_erasure else cp_upper_95(self.errors, self.bits)

    @property
    def ber_lower_95(self) -> float:
        return 0.0 if self.all_erasure else cp_lower_95(self.errors, self.bits)

    def check(self, noiseless: bool = False, processing_delay: float = 0.0) -> list[str]:
        """Invariant violations for this result (empty when all hold)."""
        problems = []
        if self.errors > self.bits:
            problems.append("more bit errors than bits")
        if not self.all_erasure and not self.ber <= self.ber_upper_95 <= 1.0:
            problems.append("ber upper bound out of order")
        if self.all_erasure:
            problems.append("all packets erased")
        if noiseless and (self.errors or self.erasures):
            problems.append(f"noiseless link lost data: {self.errors} errors, {self.erasures} erasures")
        if (processing_delay < 1 / self.fps and not math.isnan(self.latency_max_s)
                and not self.latency_eq1_s - 1e-9 <= self.latency_max_s <= self.latency_eq1_s + 1 / self.fps + 1e-9):
            problems.append("latency outside [eq1, eq1 + 1 frame]")
        return problems

    def csv_row(self) -> list[str]:
        def num(v):
            return "nan" if isinstance(v, float) and math.isnan(v) else repr(float(v))

        return [
            self.preset, num(self.fps), num(self.tx_rate), num(self.distance_m),
            num(self.speed_kmh), str(self.packets), str(self.bits), str(self.errors),
            str(self.erasures), num(self.ber), num(self.ber_upper_95), num(self.latency_eq1_s),
            num(self.latency_meas_s), str(self.seed),
        ]


@dataclass(frozen=True)
class SweepPoint:
    index: int
    fps: float
    distance: float
    speed_kmh: float


def sweep_points(cfg: RunConfig) -> list[SweepPoint]:
    points = []
    for fps in cfg.fps_list:
        for distance in cfg.distance_list:
            for speed in cfg.speed_list:
                points.append(SweepPoint(len(points), float(fps), float(distance), float(speed)))
    return points


def _packets_for_run(cfg: RunConfig, point: SweepPoint, tx_rate: float, n_frame: int) -> int:
    if point.speed_kmh > 0 and cfg.end_distance is not None:
        travel = (point.distance - cfg.end_distance) / (point.speed_kmh / 3.6)
        per_packet = (n_frame + 3) / tx_rate
        return max(1, math.ceil(travel / per_packet) + 1)
    return cfg.packets


def run_point(cfg: RunConfig, point: SweepPoint,
              frame_sink: Callable[[int, CameraFrame], None] | None = None) -> ExperimentResult:
    """All runs of one sweep point, aggregated."""
    key = bytes.fromhex(cfg.key)
    tx_rate = point.fps / cfg.tx_ratio
    camera = cfg.camera_model(point.fps)
    point_seed = derive_seed(cfg.seed, point.index)
    n_frame = math.ceil((272 + 74 * cfg.n_objects) / 8)
    result = ExperimentResult(
        cfg.preset, point.fps, tx_rate, point.distance, point.speed_kmh, point_seed,
        cfg.noise_sigma, latency_eq1_s=latency_eq1(n_frame, point.fps),
    )
    latencies, overheads = [], []
    for run in range(cfg.runs):
        run_seed = derive_seed(point_seed, run)
        rng = np.random.default_rng(run_seed)
        n_packets = _packets_for_run(cfg, point, tx_rate, n_frame)
        messages = [random_message(rng, cfg.n_objects) for _ in range(n_packets)]
        payloads = [encode_cpm(m, key) for m in messages]
        scene = cfg.scene_state(point.distance, point.speed_kmh, derive_seed(run_seed, 1))
        trace = simulate_link(
            payloads, scene, camera, tx_rate, rng, lead_in=cfg.lead_in,
            end_distance=cfg.end_distance if point.speed_kmh > 0 else None,
            frame_sink=frame_sink if run == 0 else None,
        )
        sent = set(trace.sent_packet_indices())
        received = {}
        for k, pkt in trace.match():
            if k in sent and k not in received:
                received[k] = pkt
        result.packets += len(sent)
        result.erasures += len(sent) - len(received)
        for k, pkt in received.items():
            tx_bits = trace.tx_packets[k].padded_bits
            result.bits += tx_bits.size
            result.errors += hamming(tx_bits, pkt.payload_bits)
            try:
                decode_cpm(pkt.payload_bits[: trace.tx_bits[k].size], key)
            except AuthenticationError:
                result.auth_failures += 1
        if received:
            lat = measure_latency(trace, cfg.processing_delay)
            latencies.extend(lat.samples)
            overheads.append(lat.with_overhead)
        result.runs += 1
    if latencies:
        result.latency_meas_s = float(np.mean(latencies))
        result.latency_max_s = float(np.max(latencies))
        result.latency_overhead_s = float(np.mean(overheads))
    log.info("%s fps=%g d=%g v=%g: %d/%d bits wrong, %d erasures", cfg.preset, point.fps,
             point.distance, point.speed_kmh, result.errors, result.bits, result.erasures)
    return result


def run_experiment(cfg: RunConfig, frame_dir=None) -> list[ExperimentResult]:
    """Run every sweep point of ``cfg``; one result per point.

    With ``frame_dir`` set, the first ``cfg.dump_frames`` captures of the first
    point are written there as PGM files.
    """
    results = []
    for point in sweep_points(cfg):
        sink = None
        if frame_dir is not None and cfg.dump_frames > 0 and point.index == 0:
            Path(frame_dir).mkdir(parents=True, exist_ok=True)

            def sink(k, frame, _dir=Path(frame_dir)):
                if k < cfg.dump_frames:
                    write_pgm(frame, _dir / f"frame_{k:05d}.pgm")

        results.append(run_point(cfg, point, sink))
    return results


def check_results(cfg: RunConfig, results: list[ExperimentResult]) -> list[str]:
    noiseless = cfg.noise_sigma == 0
    problems = []
    for r in results:
        for p in r.check(noiseless=noiseless, processing_delay=cfg.processing_delay):
            problems.append(f"fps={r.fps:g} d={r.distance_m:g} v={r.speed_kmh:g}: {p}")
    return problems


def results_csv(cfg: RunConfig, results: list[ExperimentResult]) -> str:
    out = io.StringIO()
    out.write(f"# config: {cfg.to_json()}\n")
    out.write(f"# seed: {cfg.seed}\n")
    out.write(f"# ci: {CI_METHOD}\n")
    out.write(",".join(CSV_COLUMNS) + "\n")
    for r in results:
        out.write(",".join(r.csv_row()) + "\n")
    return out.getvalue()


# -- calibration -------------------------------------------------------------

BER_TARGET = (5e-5, 5e-4)
CALIBRATION_DISTANCE = 100.0


class CalibrationError(Exception):
    pass


@dataclass(frozen=True)
class CalibrationResult:
    noise_sigma: float
    ber: float
    errors: int
    bits: int
    history: tuple[tuple[float, float], ...]


def calibrate(cfg: RunConfig, sigma_max: float = 64.0, target=BER_TARGET,
              max_iter: int = 24) -> CalibrationResult:
    """Bisect the noise level until BER at 100 m lands inside ``target``.

    Every evaluation uses the same seed, so BER is compared on matched
    noise realisations.
    """
    lo_target, hi_target = target
    history = []

    def evaluate(sigma):
        point_cfg = RunConfig(**{**cfg.to_dict(), "scene": {**cfg.scene, "noise_sigma": sigma},
                                 "distance_list": [CALIBRATION_DISTANCE], "speed_list": [0.0],
                                 "fps_list": cfg.fps_list[:1]})
        res = run_point(point_cfg, sweep_points(point_cfg)[0])
        history.append((sigma, res.ber))
        log.info("calibrate: sigma=%.4f ber=%.3g (%d/%d)", sigma, res.ber, res.errors, res.bits)
        return res

    top = evaluate(sigma_max)
    if top.all_erasure or top.ber < lo_target:
        raise CalibrationError(
            f"BER at sigma={sigma_max} is {top.ber:.3g}; target {lo_target:g} not reachable")
    if top.ber <= hi_target:
        return CalibrationResult(sigma_max, top.ber, top.errors, top.bits, tuple(history))
    lo, hi = 0.0, sigma_max
    for _ in range(max_iter):
        mid = (lo + hi) / 2
        res = evaluate(mid)
        if not res.all_erasure and lo_target <= res.ber <= hi_target:
            return CalibrationResult(mid, res.ber, res.errors, res.bits, tuple(history))
        if not res.all_erasure and res.ber < lo_target:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"no sigma in [0, {sigma_max}] put BER inside {target}")
