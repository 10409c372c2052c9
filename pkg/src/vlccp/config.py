"""Run configuration and the named experiment presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .channel import CameraModel, SceneState

# Noise level found by `vlccp calibrate` for outdoor-range at 100 m
# (seed 0, 200 packets); shared by both outdoor presets.
CALIBRATED_NOISE_SIGMA = 56.0

PRESETS: dict[str, dict] = {
    "indoor-stationary": {
        "camera": {"focal_length": 0.0125, "f_number": 16.0, "exposure": 1 / 2000},
        "scene": {"ambient_level": 20.0, "noise_sigma": 0.0},
        "fps_list": [100, 125, 200, 250, 400, 500, 800, 1000],
        "distance_list": [5.0],
        "speed_list": [0.0],
        "packets": 3,
        "runs": 1,
    },
    "outdoor-range": {
        "camera": {"focal_length": 0.100, "f_number": 16.0, "exposure": 1 / 2000},
        "scene": {"ambient_level": 60.0, "noise_sigma": CALIBRATED_NOISE_SIGMA},
        "fps_list": [1000],
        "distance_list": [75.0, 100.0, 120.0, 140.0, 160.0],
        "speed_list": [0.0],
        "packets": 200,
        "runs": 1,
    },
    "outdoor-driving": {
        "camera": {"focal_length": 0.100, "f_number": 16.0, "exposure": 1 / 2000},
        "scene": {"ambient_level": 60.0, "noise_sigma": CALIBRATED_NOISE_SIGMA},
        "fps_list": [1000],
        "distance_list": [120.0],
        "end_distance": 100.0,
        "speed_list": [20.0, 40.0, 60.0, 90.0],
        "packets": 0,  # set by the traversal time
        "runs": 4,
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str
    seed: int = 0
    out: str | None = None
    packets: int = 1
    runs: int = 1
    fps_list: list[float] = field(default_factory=lambda: [1000.0])
    distance_list: list[float] = field(default_factory=lambda: [100.0])
    speed_list: list[float] = field(default_factory=lambda: [0.0])  # km/h
    end_distance: float | None = None
    tx_ratio: float = 2.0  # camera fps per transmitted symbol
    camera: dict = field(default_factory=dict)
    scene: dict = field(default_factory=dict)
    n_objects: int = 2
    key: str = bytes(range(16)).hex()
    processing_delay: float = 0.0
    lead_in: int = 4
    dump_frames: int = 0

    @property
    def noise_sigma(self) -> float:
        return float(self.scene.get("noise_sigma", 0.0))

    def camera_model(self, fps: float) -> CameraModel:
        return CameraModel(frame_rate_cam=float(fps), **self.camera)

    def scene_state(self, distance: float, speed_kmh: float, rng_seed: int) -> SceneState:
        return SceneState(distance=float(distance), speed=float(speed_kmh) / 3.6,
                          rng_seed=int(rng_seed), **self.scene)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "preset" not in data:
            raise ConfigError("config needs a preset")
        return resolve_config(data["preset"], **{k: v for k, v in data.items() if k != "preset"})


def resolve_config(preset: str, **overrides) -> RunConfig:
    """Preset defaults with explicit values layered on top.

    ``camera`` and ``scene`` overrides merge key by key; ``noise_sigma``
    is accepted as a shortcut for ``scene["noise_sigma"]``.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    base = json.loads(json.dumps(PRESETS[preset]))
    noise = overrides.pop("noise_sigma", None)
    for key in ("camera", "scene"):
        base[key].update(overrides.pop(key, None) or {})
    if noise is not None:
        base["scene"]["noise_sigma"] = float(noise)
    base.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(preset=preset, **base)
    CameraModel(frame_rate_cam=1000.0, **cfg.camera)  # validate keys early
    SceneState(distance=1.0, **cfg.scene)
    return cfg


def load_config(path) -> RunConfig:
    """Read a JSON config, or the ``# config:`` header of a result CSV."""
    text = Path(path).read_text()
    for line in text.splitlines():
        if line.startswith("# config: "):
            return RunConfig.from_dict(json.loads(line[len("# config: "):]))
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a JSON config ({exc})") from None
    return RunConfig.from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
