"""Camera-side receiver: detection, ROI tracking, block demodulation, framing.

Pixel ``c`` covers the interval ``[c - 0.5, c + 0.5]``; bar edges are
continuous coordinates in that frame.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import ndimage

from .bits import bytes_to_bits
from .channel import CameraFrame
from .tx import IDLE_BYTE, MIN_IDLE_GAP, N_BLOCKS, SYNC_BYTE

DIFF_THRESHOLD = 24
NOISE_FACTOR = 6.0
SMOOTH = (3, 5)
MIN_BAR_WIDTH = 12
ROI_MARGIN = 0.2
MAX_LOST = 4
CONTRAST_FLOOR = 4.0
WINDOW_GUARD = 0.25
TRACK_GAIN = 0.5
MAX_EDGE_STEP = 0.1  # of the bar width, per accepted update
MAX_EDGE_STEP_PX = 2.0


class LowContrastError(Exception):
    """Tracking references are too close to threshold reliably."""


class NoPacketError(Exception):
    pass


@dataclass(frozen=True)
class RegionOfInterest:
    x0: int
    y0: int
    width: int
    height: int
    valid: bool = True
    bar_left: float = 0.0
    bar_right: float = 0.0
    bar_top: int = 0  # first row of the bar core
    bar_bottom: int = 0  # one past the last core row
    lost: int = 0

    @property
    def bar_width(self) -> float:
        return self.bar_right - self.bar_left

    @property
    def center(self) -> tuple[float, float]:
        return (self.bar_left + self.bar_right) / 2, (self.bar_top + self.bar_bottom - 1) / 2

    def contains(self, x: float, y: float) -> bool:
        return (self.valid and self.x0 - 0.5 <= x <= self.x0 + self.width - 0.5
                and self.y0 - 0.5 <= y <= self.y0 + self.height - 0.5)


INVALID_ROI = RegionOfInterest(0, 0, 0, 0, valid=False)


@dataclass(frozen=True)
class _BarFit:
    left: float
    right: float
    top: int
    bottom: int


def _crossing(h: np.ndarray, level: float, from_left: bool) -> float | None:
    """Sub-pixel index where ``h`` first reaches ``level`` scanning inwards."""
    idx = np.flatnonzero(h >= level)
    if idx.size == 0:
        return None
    if from_left:
        i = idx[0]
        if i == 0:
            return -0.5
        lo, hi = h[i - 1], h[i]
        return (i - 1) + (level - lo) / (hi - lo)
    i = idx[-1]
    if i == h.size - 1:
        return h.size - 0.5
    hi, lo = h[i], h[i + 1]
    return i + (hi - level) / (hi - lo)


def _fit_bar(prev: np.ndarray, curr: np.ndarray, diff_threshold: float,
             x_off: int = 0, y_off: int = 0) -> _BarFit | None:
    d = np.abs(curr.astype(np.float32) - prev.astype(np.float32))
    if d.size == 0 or d.shape[0] < 1:
        return None
    s = ndimage.uniform_filter(d, size=SMOOTH, mode="nearest")
    # |difference| of Gaussian noise is half-normal: estimate its scale from
    # the median, then threshold the box-filtered image above its mean.
    scale = float(np.median(d)) / 0.6745
    floor = 0.7979 * scale + NOISE_FACTOR * 0.6028 * scale / math.sqrt(SMOOTH[0] * SMOOTH[1])
    threshold = max(diff_threshold, floor)
    labels, count = ndimage.label(s > threshold)
    if count == 0:
        return None
    index = np.arange(1, count + 1)
    mass = ndimage.sum_labels(s, labels, index)
    rows = np.array([c[0] for c in ndimage.center_of_mass(s, labels, index)])
    slices = ndimage.find_objects(labels)
    seed = int(np.argmax(mass))
    seed_rows = slices[seed][0]
    tol = max(3.0, seed_rows.stop - seed_rows.start)
    group = [i for i in range(count) if abs(rows[i] - rows[seed]) <= tol]
    c0 = min(slices[i][1].start for i in group)
    c1 = max(slices[i][1].stop for i in group)
    r0 = min(slices[i][0].start for i in group)
    r1 = max(slices[i][0].stop for i in group)
    if c1 - c0 < MIN_BAR_WIDTH or (r1 - r0) * 3 > (c1 - c0):
        return None

    # Core rows: half maximum of the vertical diff profile around the peak.
    pad = 2
    cc0, cc1 = max(0, c0 - pad), min(d.shape[1], c1 + pad)
    noise_mean = 0.7979 * scale
    v = d[:, c0:c1].sum(axis=1) - noise_mean * (c1 - c0)
    peak = int(np.argmax(v))
    top = bottom = peak
    while top > 0 and v[top - 1] >= 0.5 * v[peak]:
        top -= 1
    while bottom < v.size - 1 and v[bottom + 1] >= 0.5 * v[peak]:
        bottom += 1

    h = ndimage.uniform_filter1d(d[top:bottom + 1, cc0:cc1].mean(axis=0) - noise_mean, 3,
                                 mode="nearest")
    inner = h[c0 - cc0:c1 - cc0]
    level = 0.5 * float(np.percentile(inner, 90))
    if level <= threshold / 4:
        return None
    left = _crossing(h, level, from_left=True)
    right = _crossing(h, level, from_left=False)
    if left is None or right is None or right - left < MIN_BAR_WIDTH:
        return None
    # Both tracking ends must be flipping.
    sixth = (right - left) / 6
    cols = np.arange(h.size)
    ends = [h[(cols > left) & (cols < left + sixth)], h[(cols < right) & (cols > right - sixth)]]
    if any(e.size == 0 or e.mean() < level for e in ends):
        return None
    return _BarFit(float(left + cc0 + x_off), float(right + cc0 + x_off),
                   top + y_off, bottom + 1 + y_off)


def _roi_from_fit(fit: _BarFit, frame_w: int, frame_h: int, lost: int = 0) -> RegionOfInterest:
    width = fit.right - fit.left
    margin_x = ROI_MARGIN * width
    margin_y = max(4.0, ROI_MARGIN * (fit.bottom - fit.top))
    x0 = max(0, math.floor(fit.left - margin_x + 0.5))
    x1 = min(frame_w, math.ceil(fit.right + margin_x + 0.5))
    y0 = max(0, math.floor(fit.top - margin_y))
    y1 = min(frame_h, math.ceil(fit.bottom + margin_y))
    return RegionOfInterest(x0, y0, x1 - x0, y1 - y0, True, fit.left, fit.right,
                            fit.top, fit.bottom, lost)


def detect_bar(prev: CameraFrame, curr: CameraFrame,
               diff_threshold: float = DIFF_THRESHOLD) -> RegionOfInterest:
    """Find the blinking bar from two consecutive captures.

    Static light sources cancel in the difference image; the toggling tracking
    blocks guarantee two flipping end clusters whenever the pair straddles a
    symbol boundary. Returns ``INVALID_ROI`` when nothing bar-like is found.
    """
    if prev.shape != curr.shape:
        raise ValueError("frames differ in size")
    fit = _fit_bar(prev.pixels, curr.pixels, diff_threshold)
    if fit is None:
        return INVALID_ROI
    return _roi_from_fit(fit, curr.width, curr.height)


def track_roi(roi: RegionOfInterest, prev: CameraFrame, curr: CameraFrame,
              diff_threshold: float = DIFF_THRESHOLD, max_lost: int = MAX_LOST) -> RegionOfInterest:
    """Re-fit the bar inside the ROI and follow it.

    Pairs inside one symbol show no flips and count as lost; after more than
    ``max_lost`` consecutive misses the ROI is invalidated.
    """
    if not roi.valid:
        return roi
    y0, y1, x0, x1 = roi.y0, roi.y0 + roi.height, roi.x0, roi.x0 + roi.width
    fit = _fit_bar(prev.region(y0, y1, x0, x1), curr.region(y0, y1, x0, x1),
                   diff_threshold, x0, y0)
    if fit is not None:
        step = max(MAX_EDGE_STEP_PX, MAX_EDGE_STEP * roi.bar_width)
        if abs(fit.left - roi.bar_left) > step or abs(fit.right - roi.bar_right) > step:
            fit = None
    if fit is None:
        lost = roi.lost + 1
        return INVALID_ROI if lost > max_lost else replace(roi, lost=lost)
    g = TRACK_GAIN
    blended = _BarFit(
        g * fit.left + (1 - g) * roi.bar_left,
        g * fit.right + (1 - g) * roi.bar_right,
        fit.top, fit.bottom,
    )
    return _roi_from_fit(blended, curr.width, curr.height)


@dataclass(frozen=True)
class DemodFrame:
    byte_value: int
    confidence: tuple[float, ...]  # per data block, MSB first
    capture_time: float
    symbol_parity: int  # 0 when blocks 0/11 are lit
    on_ref: float = 0.0
    off_ref: float = 0.0

    @property
    def min_confidence(self) -> float:
        return min(self.confidence)


def block_means(frame: CameraFrame, roi: RegionOfInterest, guard: float = WINDOW_GUARD) -> np.ndarray:
    """Mean level of each of the 12 block windows over the bar's core rows."""
    c0 = max(0, math.floor(roi.bar_left))
    c1 = min(frame.width, math.ceil(roi.bar_right) + 1)
    colmean = frame.region(roi.bar_top, roi.bar_bottom, c0, c1).astype(np.float64).mean(axis=0)
    w = roi.bar_width / N_BLOCKS
    means = np.empty(N_BLOCKS)
    for k in range(N_BLOCKS):
        a = roi.bar_left + (k + guard) * w
        b = roi.bar_left + (k + 1 - guard) * w
        lo, hi = math.ceil(a), math.floor(b)
        if hi < lo:
            lo = hi = round((a + b) / 2)
        lo, hi = max(lo, c0), min(hi, c1 - 1)
        means[k] = colmean[lo - c0:hi - c0 + 1].mean()
    return means


def demod_frame(curr: CameraFrame, roi: RegionOfInterest,
                contrast_floor: float = CONTRAST_FLOOR) -> DemodFrame:
    """Threshold each data block against the tracking-block references."""
    if not roi.valid:
        raise ValueError("demodulation needs a valid ROI")
    m = block_means(curr, roi)
    even_pair = (m[0] + m[11]) / 2
    odd_pair = (m[1] + m[10]) / 2
    on_ref, off_ref = max(even_pair, odd_pair), min(even_pair, odd_pair)
    if on_ref - off_ref < contrast_floor:
        raise LowContrastError(f"contrast {on_ref - off_ref:.2f} below {contrast_floor}")
    threshold = (on_ref + off_ref) / 2
    half = (on_ref - off_ref) / 2
    value = 0
    conf = []
    for k in range(2, 10):
        value = (value << 1) | int(m[k] > threshold)
        conf.append(min(1.0, abs(m[k] - threshold) / half))
    parity = 0 if even_pair > odd_pair else 1
    return DemodFrame(value, tuple(conf), curr.capture_time, parity, on_ref, off_ref)


@dataclass(frozen=True)
class RxPacket:
    payload_bits: np.ndarray
    first_frame_time: float
    demod_complete_time: float
    frame_count: int

    @property
    def data_bytes(self) -> bytes:
        return np.packbits(self.payload_bits).tobytes()


class PacketAssembler:
    """Symbol clock recovery and sync search over a demodulated stream.

    Consecutive captures with equal parity form one symbol; the one with the
    highest minimum confidence wins (first on ties). A symbol is closed by the
    first capture of the next one. A run longer than ``captures_per_symbol``
    means a symbol went missing, and the assembler resynchronises.
    """

    def __init__(self, n_frame: int, captures_per_symbol: float = 2.0, min_idle: int = MIN_IDLE_GAP):
        self.n_frame = n_frame
        self.max_run = math.ceil(captures_per_symbol - 1e-9)
        self.min_idle = min_idle
        self.slips = 0
        self._run: list[DemodFrame] = []
        self._best: DemodFrame | None = None
        self._collecting = False
        self._idle = 0
        self._bytes: list[int] = []
        self._first_time = 0.0

    def _resync(self):
        self.slips += 1
        self._collecting = False
        self._idle = 0
        self._bytes = []

    def push(self, df: DemodFrame) -> RxPacket | None:
        if self._run and df.symbol_parity == self._run[0].symbol_parity:
            self._run.append(df)
            if df.min_confidence > self._best.min_confidence:
                self._best = df
            if len(self._run) > self.max_run:
                self._resync()
                self._run, self._best = [df], df
            return None
        packet = None
        if self._run:
            packet = self._symbol(self._best.byte_value, self._run[0].capture_time, df.capture_time)
        self._run, self._best = [df], df
        return packet

    def _symbol(self, value: int, start: float, closed: float) -> RxPacket | None:
        if not self._collecting:
            if value == IDLE_BYTE:
                self._idle += 1
            elif value == SYNC_BYTE and self._idle >= self.min_idle:
                self._collecting = True
                self._bytes = []
            else:
                self._idle = 0
            return None
        if not self._bytes:
            self._first_time = start
        self._bytes.append(value)
        if len(self._bytes) < self.n_frame:
            return None
        bits = bytes_to_bits(bytes(self._bytes))
        packet = RxPacket(bits, self._first_time, closed, self.n_frame)
        self._collecting = False
        self._idle = 0
        self._bytes = []
        return packet


def assemble_packets(stream: Iterable[DemodFrame], n_frame: int,
                     captures_per_symbol: float = 2.0) -> list[RxPacket]:
    asm = PacketAssembler(n_frame, captures_per_symbol)
    return [p for p in (asm.push(df) for df in stream) if p is not None]


def assemble_packet(stream: Iterable[DemodFrame], n_frame: int,
                    captures_per_symbol: float = 2.0) -> RxPacket:
    packets = assemble_packets(stream, n_frame, captures_per_symbol)
    if not packets:
        raise NoPacketError(f"no complete {n_frame}-frame packet in stream")
    return packets[0]


class Receiver:
    """Sequential receiver over a capture stream."""

    def __init__(self, n_frame: int, captures_per_symbol: float = 2.0,
                 diff_threshold: float = DIFF_THRESHOLD, max_lost: int = MAX_LOST,
                 contrast_floor: float = CONTRAST_FLOOR, keep_trace: bool = False):
        self.assembler = PacketAssembler(n_frame, captures_per_symbol)
        self.diff_threshold = diff_threshold
        self.max_lost = max_lost
        self.contrast_floor = contrast_floor
        self.roi = INVALID_ROI
        self.roi_history: list[RegionOfInterest] = []
        self.trace: list[DemodFrame] | None = [] if keep_trace else None
        self.detections = 0
        self.unreliable = 0
        self._prev: CameraFrame | None = None

    def _demod(self, frame: CameraFrame) -> RxPacket | None:
        try:
            df = demod_frame(frame, self.roi, self.contrast_floor)
        except LowContrastError:
            self.unreliable += 1
            return None
        if self.trace is not None:
            self.trace.append(df)
        return self.assembler.push(df)

    def push(self, frame: CameraFrame) -> list[RxPacket]:
        prev, self._prev = self._prev, frame
        if prev is None:
            self.roi_history.append(self.roi)
            return []
        out = []
        if not self.roi.valid:
            self.roi = detect_bar(prev, frame, self.diff_threshold)
            if self.roi.valid:
                self.detections += 1
                out.append(self._demod(prev))
        else:
            self.roi = track_roi(self.roi, prev, frame, self.diff_threshold, self.max_lost)
        if self.roi.valid:
            out.append(self._demod(frame))
        self.roi_history.append(self.roi)
        return [p for p in out if p is not None]


def write_demod_trace(frames: Iterable[DemodFrame], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["capture_time", "byte"] + [f"conf_{i}" for i in range(8)] + ["parity"])
        for df in frames:
            writer.writerow([f"{df.capture_time:.9f}", df.byte_value]
                            + [f"{c:.4f}" for c in df.confidence] + [df.symbol_parity])
