"""Physical layout: base stations, linear arrays, scatterer field and UE placement."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# Minimum clearance between a UE (or scatterer) and any antenna element / scatterer.
MIN_CLEARANCE_M = 0.5


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array centred on its base station.

    ``orientation`` is the direction of the array axis in radians.
    """

    num_elements: int
    element_spacing: float
    orientation: float = 0.0

    def __post_init__(self):
        if self.num_elements < 1:
            raise ConfigError("array needs at least one element")
        if not self.element_spacing > 0:
            raise ConfigError("element spacing must be positive")

    @property
    def element_offsets(self) -> np.ndarray:
        """(num_elements, 2) element coordinates relative to the array centre."""
        m = np.arange(self.num_elements) - (self.num_elements - 1) / 2.0
        axis = np.array([math.cos(self.orientation), math.sin(self.orientation)])
        return (m * self.element_spacing)[:, None] * axis[None, :]


@dataclass(frozen=True)
class BaseStation:
    position: tuple[float, float]
    array: ArrayGeometry

    @property
    def element_positions(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)[None, :] + self.array.element_offsets

    @property
    def num_elements(self) -> int:
        return self.array.num_elements


@dataclass(frozen=True)
class Scatterer:
    position: tuple[float, float]
    amplitude: float
    phase_shift: float

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ConfigError("scatterer amplitude must be positive")
        if not 0.0 <= self.phase_shift < 2 * math.pi:
            raise ConfigError("scatterer phase must lie in [0, 2*pi)")


@dataclass(frozen=True)
class ScenarioConfig:
    """User-facing knobs. Key names double as config-file keys."""

    carrier_frequency_ghz: float = 3.5
    cbs_antennas: int = 64
    tbs_antennas: int = 20
    array_spacing_m: float | None = None
    cbs_radius_m: float = 700.0
    tbs_radius_m: float = 200.0
    rician_k_db: float = 10.0
    num_scatterers: int = 10
    num_cbs: int = 1
    seed: int = 0
    tbs_position_m: tuple[float, float] = (400.0, 0.0)
    cbs_positions_m: tuple[tuple[float, float], ...] = ((0.0, 0.0), (0.0, 500.0))
    scatterer_amplitude_min: float = 0.3
    scatterer_amplitude_max: float = 1.0
    los_amplitude: float = 1.0
    planar_wavefront: bool = False

    def with_updates(self, **kw) -> ScenarioConfig:
        return replace(self, **kw)


@dataclass(frozen=True)
class Scenario:
    carrier_frequency: float
    cbs_list: tuple[BaseStation, ...]
    tbs: BaseStation
    cbs_radius: float
    tbs_radius: float
    rician_k: float
    scatterers: tuple[Scatterer, ...]
    los_amplitude: float
    seed: int
    planar_wavefront: bool = False
    config: ScenarioConfig = field(default_factory=ScenarioConfig, compare=False)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def num_scatterers(self) -> int:
        return len(self.scatterers)

    def station(self, selector) -> BaseStation:
        """Look up a base station: ``"tbs"`` or an integer CBS index."""
        if selector == "tbs":
            return self.tbs
        if isinstance(selector, (int, np.integer)) and 0 <= selector < len(self.cbs_list):
            return self.cbs_list[int(selector)]
        raise ValueError(f"unknown base station selector {selector!r}")

    def scatterer_arrays(self):
        """Scatterer positions (S, 2), amplitudes (S,) and phases (S,) as arrays."""
        if not self.scatterers:
            return np.zeros((0, 2)), np.zeros(0), np.zeros(0)
        pos = np.array([s.position for s in self.scatterers], dtype=float)
        amp = np.array([s.amplitude for s in self.scatterers], dtype=float)
        phase = np.array([s.phase_shift for s in self.scatterers], dtype=float)
        return pos, amp, phase

    def all_element_positions(self) -> np.ndarray:
        stations = list(self.cbs_list) + [self.tbs]
        return np.concatenate([bs.element_positions for bs in stations])


def _facing_orientation(src, dst) -> float:
    """Array axis perpendicular to the line src -> dst (broadside towards dst)."""
    dx, dy = dst[0] - src[0], dst[1] - src[1]
    if dx == 0 and dy == 0:
        return math.pi / 2
    return math.atan2(dy, dx) + math.pi / 2


def _sample_disk(rng: np.random.Generator, center, radius: float, count: int) -> np.ndarray:
    r = radius * np.sqrt(rng.random(count))
    theta = 2 * math.pi * rng.random(count)
    return np.column_stack([center[0] + r * np.cos(theta), center[1] + r * np.sin(theta)])


def _too_close(points: np.ndarray, obstacles: np.ndarray) -> np.ndarray:
    if len(obstacles) == 0 or len(points) == 0:
        return np.zeros(len(points), dtype=bool)
    mask = np.zeros(len(points), dtype=bool)
    # chunked over obstacles to bound memory for large UE batches
    for start in range(0, len(obstacles), 64):
        obs = obstacles[start:start + 64]
        d2 = ((points[:, None, :] - obs[None, :, :]) ** 2).sum(-1)
        mask |= (d2 < MIN_CLEARANCE_M ** 2).any(axis=1)
    return mask


def _sample_clear(rng, center, radius, count, obstacles) -> np.ndarray:
    pts = _sample_disk(rng, center, radius, count)
    bad = _too_close(pts, obstacles)
    while bad.any():
        pts[bad] = _sample_disk(rng, center, radius, int(bad.sum()))
        bad = _too_close(pts, obstacles)
    return pts


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Construct a scenario deterministically from ``config`` (and its seed)."""
    if not config.carrier_frequency_ghz > 0:
        raise ConfigError("carrier frequency must be positive")
    if config.cbs_antennas < 1 or config.tbs_antennas < 1:
        raise ConfigError("antenna counts must be >= 1")
    if not config.tbs_radius_m > 0:
        raise ConfigError("tbs_radius_m must be positive")
    if config.tbs_radius_m > config.cbs_radius_m:
        raise ConfigError("tbs_radius_m exceeds cbs_radius_m")
    if config.num_scatterers < 0:
        raise ConfigError("num_scatterers must be >= 0")
    if not 1 <= config.num_cbs <= len(config.cbs_positions_m):
        raise ConfigError(f"num_cbs must be between 1 and {len(config.cbs_positions_m)}")
    if not 0 < config.scatterer_amplitude_min <= config.scatterer_amplitude_max <= 1:
        raise ConfigError("scatterer amplitude range must satisfy 0 < min <= max <= 1")

    freq = config.carrier_frequency_ghz * 1e9
    wavelength = SPEED_OF_LIGHT / freq
    spacing = config.array_spacing_m if config.array_spacing_m else wavelength / 2

    tbs_pos = tuple(float(v) for v in config.tbs_position_m)
    cbs_positions = [tuple(float(v) for v in p) for p in config.cbs_positions_m[:config.num_cbs]]
    if math.dist(tbs_pos, cbs_positions[0]) > config.cbs_radius_m:
        raise ConfigError("TBS lies outside the coverage of the first CBS")

    cbs_list = tuple(
        BaseStation(p, ArrayGeometry(config.cbs_antennas, spacing, _facing_orientation(p, tbs_pos)))
        for p in cbs_positions
    )
    # TBS array shares the orientation of the first CBS array
    tbs = BaseStation(tbs_pos, ArrayGeometry(config.tbs_antennas, spacing, cbs_list[0].array.orientation))

    rng = np.random.default_rng(config.seed)
    elements = np.concatenate([bs.element_positions for bs in (*cbs_list, tbs)])
    pos = _sample_clear(rng, cbs_positions[0], config.cbs_radius_m, config.num_scatterers, elements)
    amp = rng.uniform(config.scatterer_amplitude_min, config.scatterer_amplitude_max, config.num_scatterers)
    phase = rng.uniform(0.0, 2 * math.pi, config.num_scatterers)
    scatterers = tuple(
        Scatterer((float(p[0]), float(p[1])), float(a), float(ph)) for p, a, ph in zip(pos, amp, phase)
    )

    return Scenario(
        carrier_frequency=freq,
        cbs_list=cbs_list,
        tbs=tbs,
        cbs_radius=float(config.cbs_radius_m),
        tbs_radius=float(config.tbs_radius_m),
        rician_k=10 ** (config.rician_k_db / 10),
        scatterers=scatterers,
        los_amplitude=float(config.los_amplitude),
        seed=int(config.seed),
        planar_wavefront=bool(config.planar_wavefront),
        config=config,
    )


def sample_ue_positions(scenario: Scenario, count: int, seed: int) -> np.ndarray:
    """Draw ``count`` UE positions uniformly over the TBS coverage disk.

    Positions closer than 0.5 m to any antenna element or scatterer are redrawn.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    obstacles = np.concatenate([scenario.all_element_positions(), scenario.scatterer_arrays()[0]])
    return _sample_clear(rng, scenario.tbs.position, scenario.tbs_radius, count, obstacles)


# --- config files -----------------------------------------------------------

SCENARIO_KEYS = {f.name: f for f in fields(ScenarioConfig)}


def _parse_point(text: str) -> tuple[float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"expected 'x, y', got {text!r}")
    return float(parts[0]), float(parts[1])


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_scenario_section(items: dict[str, str]) -> ScenarioConfig:
    kw = {}
    for key, raw in items.items():
        if key not in SCENARIO_KEYS:
            raise ConfigError(f"unknown scenario key {key!r}")
        default = getattr(ScenarioConfig, key)
        try:
            if key == "tbs_position_m":
                kw[key] = _parse_point(raw)
            elif key == "cbs_positions_m":
                kw[key] = tuple(_parse_point(p) for p in raw.split(";") if p.strip())
            elif key == "array_spacing_m":
                kw[key] = float(raw) if raw.strip().lower() not in ("", "none") else None
            elif isinstance(default, bool):
                kw[key] = _parse_bool(raw)
            elif isinstance(default, int):
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return ScenarioConfig(**kw)


def read_config_file(path) -> dict[str, dict[str, str]]:
    """Read an INI-style file into ``{section: {key: raw value}}``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    text = Path(path).read_text(encoding="utf-8")
    parser.read_string(text, source=str(path))
    return {name: dict(parser[name]) for name in parser.sections()}


def load_scenario_config(path) -> ScenarioConfig:
    sections = read_config_file(path)
    return parse_scenario_section(sections.get("scenario", {}))
