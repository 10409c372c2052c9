"""Optical channel and high-speed camera model.

The LED bar is imaged through a pinhole camera. Each lit LED deposits a
Gaussian spot (truncated at four sigma) whose integrated value falls with the
square of the distance and scales with exposure and 1/f_number**2. Frames
get a uniform ambient level, additive Gaussian noise and 8-bit quantisation.

Frames are rendered lazily in bands of rows. Noise for a band is drawn from
a generator seeded by ``(seed, capture time in ns, band index)``, so a frame's
pixels do not depend on which rows were read first, or whether any were.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .tx import N_LEDS, LedBarState, TxSchedule

WIDTH = 600
HEIGHT = 320
BAND_ROWS = 16
REFERENCE_EXPOSURE = 1 / 2000
SPOT_RADIUS_SIGMAS = 4.0
STANDARD_CAMERA_RATES = (100, 125, 200, 250, 400, 500, 800, 1000)

# Integrated gray level of one lit LED at 1 m, f/1, reference exposure.
# Chosen so the footprints saturate the sensor out to ~160 m behind f/16.
DEFAULT_LED_IRRADIANCE = 4.0e9


class SimulationEnd(Exception):
    """The vehicle has reached the transmitter."""


@dataclass(frozen=True)
class CameraModel:
    focal_length: float = 0.100
    f_number: float = 16.0
    exposure: float = 1 / 2000
    frame_rate_cam: float = 1000.0
    pixel_pitch: float = 10e-6
    width: int = WIDTH
    height: int = HEIGHT
    phase_offset: float | None = None  # seconds; None draws one per run

    bit_depth = 8

    def __post_init__(self):
        if self.frame_rate_cam <= 0:
            raise ValueError("frame_rate_cam must be positive")
        if not 0 < self.exposure < 1 / self.frame_rate_cam:
            raise ValueError("exposure must be shorter than the frame interval")

    @property
    def frame_period(self) -> float:
        return 1.0 / self.frame_rate_cam


@dataclass(frozen=True)
class SceneState:
    distance: float
    lateral_offset: float = 0.0
    speed: float = 0.0  # m/s towards the transmitter
    led_pitch: float = 0.010
    led_on_irradiance: float = DEFAULT_LED_IRRADIANCE
    ambient_level: float = 60.0
    noise_sigma: float = 0.0
    blur_sigma: float = 0.7
    rng_seed: int = 0

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError("distance must be positive")


@dataclass(frozen=True)
class Footprint:
    index: int
    x: float
    y: float
    sigma: float
    radius: float
    flux: float


def kmh_to_ms(speed_kmh: float) -> float:
    return speed_kmh / 3.6


def led_spacing_px(scene: SceneState, camera: CameraModel) -> float:
    return camera.focal_length * scene.led_pitch / (scene.distance * camera.pixel_pitch)


def led_flux(scene: SceneState, camera: CameraModel) -> float:
    exposure_scale = camera.exposure / REFERENCE_EXPOSURE
    return scene.led_on_irradiance / scene.distance**2 * exposure_scale / camera.f_number**2


def project_bar(scene: SceneState, camera: CameraModel) -> list[Footprint]:
    """Pinhole projection of every LED; empty if the bar misses the image."""
    scale = camera.focal_length / (scene.distance * camera.pixel_pitch)
    cx = (camera.width - 1) / 2
    cy = (camera.height - 1) / 2
    sigma = scene.blur_sigma
    radius = SPOT_RADIUS_SIGMAS * sigma
    flux = led_flux(scene, camera)
    xs = cx + scale * ((np.arange(N_LEDS) - (N_LEDS - 1) / 2) * scene.led_pitch + scene.lateral_offset)
    if xs.max() + radius < -0.5 or xs.min() - radius > camera.width - 0.5:
        return []
    return [Footprint(i, float(x), cy, sigma, radius, flux) for i, x in enumerate(xs)]


def _pixel_mass(centers: np.ndarray, pixels: np.ndarray, sigma: float, radius: float) -> np.ndarray:
    """Mass of truncated unit Gaussians (rows: centers) over unit pixels."""
    if sigma <= 0:
        lo = pixels[None, :] - 0.5
        return ((centers[:, None] >= lo) & (centers[:, None] < lo + 1)).astype(float)
    d = pixels[None, :] - centers[:, None]
    hi = np.minimum(d + 0.5, radius)
    lo = np.maximum(d - 0.5, -radius)
    return np.where(hi > lo, ndtr(hi / sigma) - ndtr(lo / sigma), 0.0)


@lru_cache(maxsize=64)
def _geometry(scene_key, camera: CameraModel):
    scene = SceneState(*scene_key)
    feet = project_bar(scene, camera)
    if not feet:
        return None
    sigma, radius = feet[0].sigma, feet[0].radius
    xs = np.array([f.x for f in feet])
    c0 = max(0, math.floor(xs.min() - radius - 1))
    c1 = min(camera.width, math.ceil(xs.max() + radius + 2))
    cols = np.arange(c0, c1, dtype=float)
    gx = _pixel_mass(xs, cols, sigma, radius) * feet[0].flux  # (96, ncols)
    cy = feet[0].y
    r0 = max(0, math.floor(cy - radius - 1))
    r1 = min(camera.height, math.ceil(cy + radius + 2))
    gy = _pixel_mass(np.array([cy]), np.arange(r0, r1, dtype=float), sigma, radius)[0]
    return c0, c1, gx, r0, r1, gy


def _scene_key(scene: SceneState):
    return (scene.distance, scene.lateral_offset, 0.0, scene.led_pitch,
            scene.led_on_irradiance, 0.0, 0.0, scene.blur_sigma, 0)


def quantize(values: np.ndarray) -> np.ndarray:
    """Round half up, clip to [0, 255]."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


class CameraFrame:
    """An 8-bit grayscale capture with its timestamp.

    Built either from a pixel array or from a band renderer; ``pixels`` always
    returns the full ``(height, width)`` array.
    """

    def __init__(self, pixels=None, capture_time: float = 0.0, *, band_source=None,
                 shape=(HEIGHT, WIDTH)):
        self.capture_time = float(capture_time)
        if pixels is not None:
            pixels = np.asarray(pixels)
            if pixels.ndim != 2:
                raise ValueError("pixels must be a 2-D array")
            if pixels.dtype != np.uint8:
                if pixels.min() < 0 or pixels.max() > 255:
                    raise ValueError("pixel values must lie in [0, 255]")
                pixels = pixels.astype(np.uint8)
            self.shape = pixels.shape
            self._full = pixels
            self._bands = None
        else:
            if band_source is None:
                raise ValueError("need pixels or a band source")
            self.shape = tuple(shape)
            self._full = None
            self._source = band_source
            self._bands = [None] * math.ceil(self.shape[0] / BAND_ROWS)

    @property
    def height(self) -> int:
        return self.shape[0]

    @property
    def width(self) -> int:
        return self.shape[1]

    def _band(self, b: int) -> np.ndarray:
        if self._bands[b] is None:
            self._bands[b] = self._source(b)
        return self._bands[b]

    def rows(self, y0: int, y1: int) -> np.ndarray:
        y0, y1 = max(0, y0), min(self.height, y1)
        if self._full is not None:
            return self._full[y0:y1]
        if y1 <= y0:
            return np.zeros((0, self.width), np.uint8)
        b0, b1 = y0 // BAND_ROWS, (y1 - 1) // BAND_ROWS
        stacked = np.concatenate([self._band(b) for b in range(b0, b1 + 1)], axis=0)
        return stacked[y0 - b0 * BAND_ROWS:y1 - b0 * BAND_ROWS]

    def region(self, y0: int, y1: int, x0: int, x1: int) -> np.ndarray:
        return self.rows(y0, y1)[:, max(0, x0):min(self.width, x1)]

    @property
    def pixels(self) -> np.ndarray:
        if self._full is None:
            self._full = self.rows(0, self.height)
            self._bands = None
        return self._full


def _noise_seed(seed: int, t: float, band: int) -> list[int]:
    return [int(seed) & 0xFFFFFFFFFFFFFFFF, round(t * 1e9) & 0xFFFFFFFFFFFFFFFF, band]


def render_frame(led_state: LedBarState | None, scene: SceneState, camera: CameraModel,
                 t: float, seed: int | None = None) -> CameraFrame:
    """Capture of ``led_state`` at time ``t``; ``None`` renders a dark bar.

    Noise depends only on ``(seed, t)``, with ``seed`` defaulting to
    ``scene.rng_seed``.
    """
    seed = scene.rng_seed if seed is None else seed
    geo = _geometry(_scene_key(scene), camera)
    if geo is not None and led_state is not None and any(led_state.leds):
        c0, c1, gx, r0, r1, gy = geo
        on = led_state.as_array().astype(float)
        colprof = on @ gx
    else:
        c0 = c1 = r0 = r1 = 0
        gy = colprof = None
    ambient = float(scene.ambient_level)
    sigma = float(scene.noise_sigma)
    height, width = camera.height, camera.width

    def band(b: int) -> np.ndarray:
        y0, y1 = b * BAND_ROWS, min(height, (b + 1) * BAND_ROWS)
        values = np.full((y1 - y0, width), ambient, dtype=np.float64)
        if colprof is not None and y0 < r1 and r0 < y1:
            a0, a1 = max(y0, r0), min(y1, r1)
            values[a0 - y0:a1 - y0, c0:c1] += np.outer(gy[a0 - r0:a1 - r0], colprof)
        if sigma > 0:
            rng = np.random.default_rng(_noise_seed(seed, t, b))
            values += sigma * rng.standard_normal(values.shape, dtype=np.float32)
        return quantize(values)

    return CameraFrame(capture_time=t, band_source=band, shape=(height, width))


def step_motion(scene: SceneState, dt: float) -> SceneState:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    distance = scene.distance - scene.speed * dt
    if distance <= 0:
        raise SimulationEnd(f"reached the transmitter after {dt} s")
    return replace(scene, distance=distance)


def sample_clock(camera: CameraModel, sched: TxSchedule, phase_offset: float | None = None,
                 rng: np.random.Generator | None = None) -> list[tuple[float, LedBarState]]:
    """Capture instants over the schedule paired with the LED state on air.

    The phase is taken from ``phase_offset``, then ``camera.phase_offset``,
    then drawn uniformly over one camera frame from ``rng``.
    """
    if phase_offset is None:
        phase_offset = camera.phase_offset
    if phase_offset is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        phase_offset = float(rng.uniform(0.0, camera.frame_period))
    captures = []
    k = 0
    while True:
        t = sched.start_time + phase_offset + k / camera.frame_rate_cam
        state = sched.state_at(t)
        if state is None:
            if t >= sched.end_time:
                break
        else:
            captures.append((t, state))
        k += 1
    return captures


def write_pgm(frame: CameraFrame, path) -> None:
    pixels = frame.pixels
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + pixels.tobytes())


def read_pgm(path, capture_time: float = 0.0) -> CameraFrame:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    width, height = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1:pos + 1 + width * height], np.uint8)
    return CameraFrame(pixels.reshape(height, width).copy(), capture_time)
