"""Binaural scene rendering by impulse-response convolution.

Azimuths are counterclockwise degrees with 0 = front and 90 = left. World-frame
azimuths describe where sources are; head-frame azimuths are what the ears
(and the classifiers) see: ``head = wrap(world - head_orientation)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import firwin2

from . import GRID_STEP_DEG, NUM_AZIMUTHS, SAMPLE_RATE_HZ
from .signal_io import (
    BinauralSignal,
    MonoSignal,
    atomic_write_text,
    fractional_delay_filter,
    read_wav,
    resample,
    rms_normalize,
    write_wav,
)

MAX_HEAD_ROTATION_DEG = 30.0
SOURCE_RMS = 0.05


def wrap_deg(az):
    """Wrap degrees into [0, 360)."""
    return np.mod(az, 360.0) if isinstance(az, np.ndarray) else float(az) % 360.0


def signed_deg(az):
    """Wrap degrees into (-180, 180]."""
    a = wrap_deg(az)
    return np.where(a > 180.0, a - 360.0, a) if isinstance(a, np.ndarray) else (a - 360.0 if a > 180.0 else a)


@dataclass(frozen=True)
class AzimuthGrid:
    step_deg: int = GRID_STEP_DEG
    count: int = NUM_AZIMUTHS

    def __post_init__(self):
        if self.step_deg * self.count != 360:
            raise ValueError("grid must cover exactly 360 degrees")

    @property
    def values(self) -> np.ndarray:
        return np.arange(self.count) * self.step_deg

    def index(self, az_deg) -> int:
        """Grid index of an azimuth; raises if it is not on the grid."""
        a = wrap_deg(az_deg)
        k = a / self.step_deg
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"azimuth {az_deg} is not on the {self.step_deg} degree grid")
        return int(round(k)) % self.count

    def snap(self, az_deg) -> int:
        """Nearest grid azimuth in degrees, halves rounded up."""
        k = math.floor(wrap_deg(az_deg) / self.step_deg + 0.5) % self.count
        return int(k * self.step_deg)


GRID = AzimuthGrid()


@dataclass(frozen=True, eq=False)
class HrirCatalog:
    entries: dict[int, tuple[np.ndarray, np.ndarray]]
    sample_rate_hz: int
    label: str = ""

    def __post_init__(self):
        clean = {}
        for az, (left, right) in self.entries.items():
            left = np.asarray(left, dtype=np.float64)
            right = np.asarray(right, dtype=np.float64)
            if left.shape != right.shape or left.ndim != 1:
                raise ValueError(f"entry {az}: left/right impulse responses must be equal-length 1-D")
            clean[int(wrap_deg(az))] = (left, right)
        object.__setattr__(self, "entries", dict(sorted(clean.items())))

    def __contains__(self, az) -> bool:
        return int(round(wrap_deg(az))) in self.entries

    def pair(self, az_deg) -> tuple[np.ndarray, np.ndarray]:
        key = wrap_deg(az_deg)
        if abs(key - round(key)) > 1e-9 or int(round(key)) % 360 not in self.entries:
            raise KeyError(f"catalog {self.label!r} has no entry at azimuth {az_deg}")
        return self.entries[int(round(key)) % 360]

    def covers(self, grid: AzimuthGrid = GRID) -> bool:
        return all(int(a) in self.entries for a in grid.values)

    def require_grid(self, grid: AzimuthGrid = GRID) -> None:
        missing = [int(a) for a in grid.values if int(a) not in self.entries]
        if missing:
            raise ValueError(f"catalog {self.label!r} is missing azimuths {missing[:8]}...")

    @property
    def ir_length(self) -> int:
        return max(l.size for l, _ in self.entries.values())

    def save(self, directory) -> Path:
        """Write the manifest + one float32 WAV per ear and azimuth."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        items = []
        for az, (left, right) in self.entries.items():
            ln, rn = f"az{az:03d}_left.wav", f"az{az:03d}_right.wav"
            write_wav(directory / ln, MonoSignal(left, self.sample_rate_hz))
            write_wav(directory / rn, MonoSignal(right, self.sample_rate_hz))
            items.append({"azimuth": az, "left": ln, "right": rn})
        manifest = {"sample_rate": self.sample_rate_hz, "label": self.label, "entries": items}
        atomic_write_text(directory / "manifest.json", json.dumps(manifest, indent=1))
        return directory / "manifest.json"

    @classmethod
    def load(cls, path, target_rate_hz: int | None = SAMPLE_RATE_HZ) -> "HrirCatalog":
        """Load a catalog from a directory (or its manifest.json)."""
        path = Path(path)
        manifest_path = path / "manifest.json" if path.is_dir() else path
        manifest = json.loads(manifest_path.read_text())
        root = manifest_path.parent
        rate = int(manifest["sample_rate"])
        entries = {}
        for item in manifest["entries"]:
            pair = []
            for side in ("left", "right"):
                s = read_wav(root / item[side])
                if not isinstance(s, MonoSignal):
                    raise ValueError(f"{item[side]} must be a mono impulse response")
                if s.sample_rate_hz != rate:
                    raise ValueError(f"{item[side]} rate {s.sample_rate_hz} != manifest rate {rate}")
                if target_rate_hz and rate != target_rate_hz:
                    s = resample(s, target_rate_hz)
                pair.append(s.samples)
            entries[int(item["azimuth"])] = tuple(pair)
        out_rate = target_rate_hz if target_rate_hz else rate
        return cls(entries, out_rate, manifest.get("label", root.name))


@dataclass(frozen=True)
class SphericalHeadParams:
    head_radius_m: float = 0.0875
    sound_speed_m_s: float = 343.0
    shadow_asymmetry: float = 0.3

    def __post_init__(self):
        if self.head_radius_m <= 0 or self.sound_speed_m_s <= 0:
            raise ValueError("head radius and sound speed must be positive")
        if not 0.0 <= self.shadow_asymmetry <= 1.0:
            raise ValueError("shadow_asymmetry must lie in [0, 1]")


def lateral_angle_rad(azimuth_deg) -> np.ndarray:
    """Angle from the median plane, positive toward the left ear."""
    return np.arcsin(np.clip(np.sin(np.radians(azimuth_deg)), -1.0, 1.0))


def woodworth_itd(azimuth_deg, params: SphericalHeadParams = SphericalHeadParams()):
    """Interaural delay in seconds; positive when the left ear leads."""
    lat = lateral_angle_rad(azimuth_deg)
    a = np.abs(lat)
    return np.sign(lat) * params.head_radius_m / params.sound_speed_m_s * (a + np.sin(a))


# Linear-phase ear filters keep the interaural delay purely Woodworth; only
# magnitudes carry the head shadow and the front/back tilt.
_EAR_FIR_TAPS = 65
_TILT_CORNER_HZ = 3000.0
_TILT_MAX_DB = 20.0
_SHADOW_ALPHA_MIN = 0.1


def _far_ear_gain(freqs, abs_azimuth_deg: float, params: SphericalHeadParams) -> np.ndarray:
    """Far-ear magnitude for a source `abs_azimuth_deg` in [0, 180] off the front."""
    lat = float(lateral_angle_rad(abs_azimuth_deg))
    # one-zero/one-pole shelf: flat at DC, alpha above ~c/(pi a)
    alpha = 1.0 - (1.0 - _SHADOW_ALPHA_MIN) * math.sin(lat)
    f0 = params.sound_speed_m_s / (math.pi * params.head_radius_m)
    w = freqs / f0
    shadow = np.abs((1.0 + 1j * alpha * w) / (1.0 + 1j * w))
    rearness = (1.0 - math.cos(math.radians(abs_azimuth_deg))) / 2.0
    tilt_db = -params.shadow_asymmetry * _TILT_MAX_DB * math.sin(lat) * rearness
    g = 10.0 ** (tilt_db / 20.0)
    hp = freqs**2 / (freqs**2 + _TILT_CORNER_HZ**2)
    return shadow * (1.0 + (g - 1.0) * hp)


def _ear_fir(gain, freqs, sample_rate_hz) -> np.ndarray:
    return firwin2(_EAR_FIR_TAPS, freqs, gain, fs=sample_rate_hz, window=("kaiser", 8.0))


def generate_spherical_catalog(params: SphericalHeadParams = SphericalHeadParams(),
                               grid: AzimuthGrid = GRID,
                               sample_rate_hz: int = SAMPLE_RATE_HZ) -> HrirCatalog:
    """Rigid-sphere stand-in for a measured HRIR set."""
    delay_len = 128
    base_delay = 48.0
    freqs = np.linspace(0.0, sample_rate_hz / 2, 257)
    flat = _ear_fir(np.ones_like(freqs), freqs, sample_rate_hz)
    k = params.head_radius_m / params.sound_speed_m_s * sample_rate_hz
    entries = {}
    for az in grid.values:
        # mirror azimuths share every intermediate value, so L/R swap is exact
        side = float(signed_deg(float(az)))
        m = abs(side)
        a = float(lateral_angle_rad(m)) if m not in (0.0, 180.0) else 0.0
        near = fractional_delay_filter(base_delay - k * math.sin(a), delay_len)
        far = fractional_delay_filter(base_delay + k * a, delay_len)
        near_ir = np.convolve(near, flat)
        if a == 0.0:
            far_ir = np.convolve(far, flat)
        else:
            far_ir = np.convolve(far, _ear_fir(_far_ear_gain(freqs, m, params), freqs, sample_rate_hz))
        left, right = (near_ir, far_ir) if side > 0 else (far_ir, near_ir)
        entries[int(az)] = (left, right)
    label = (f"spherical(a={params.head_radius_m},c={params.sound_speed_m_s},"
             f"asym={params.shadow_asymmetry})")
    return HrirCatalog(entries, sample_rate_hz, label)


def compensate_levels(catalog: HrirCatalog) -> HrirCatalog:
    """Scale each entry so the mean of its left/right peak magnitudes is 1."""
    if not catalog.entries:
        raise ValueError("empty catalog")
    out = {}
    for az, (left, right) in catalog.entries.items():
        peak = 0.5 * (np.max(np.abs(left)) + np.max(np.abs(right)))
        if peak == 0.0:
            raise ValueError(f"entry {az} has an all-zero impulse response")
        out[az] = (left / peak, right / peak)
    return HrirCatalog(out, catalog.sample_rate_hz, catalog.label)


def _as_rate(s: MonoSignal, rate: int) -> MonoSignal:
    return s if s.sample_rate_hz == rate else resample(s, rate)


def spatialize(source: MonoSignal, azimuth_deg, catalog: HrirCatalog) -> BinauralSignal:
    """Render a mono source at a head-frame azimuth (full linear convolution)."""
    left_ir, right_ir = catalog.pair(azimuth_deg)
    x = _as_rate(source, catalog.sample_rate_hz).samples
    return BinauralSignal.from_arrays(np.convolve(x, left_ir), np.convolve(x, right_ir),
                                      catalog.sample_rate_hz)


def make_diffuse_noise(duration_s: float, catalog: HrirCatalog, seed: int,
                       grid: AzimuthGrid = GRID) -> BinauralSignal:
    """Sum of independent white Gaussian sources at every grid azimuth."""
    n = int(round(duration_s * catalog.sample_rate_hz))
    return diffuse_noise_samples(n, catalog, np.random.default_rng(seed), grid)


def diffuse_noise_samples(n: int, catalog: HrirCatalog, rng: np.random.Generator,
                          grid: AzimuthGrid = GRID) -> BinauralSignal:
    catalog.require_grid(grid)
    if n <= 0:
        raise ValueError("noise length must be positive")
    azs = [int(a) for a in grid.values]
    noise = rng.standard_normal((len(azs), n))
    irs = np.zeros((2, len(azs), catalog.ir_length))
    for i, az in enumerate(azs):
        left, right = catalog.pair(az)
        irs[0, i, :left.size] = left
        irs[1, i, :right.size] = right
    out_len = n + catalog.ir_length - 1
    nfft = 1 << (out_len - 1).bit_length()
    spec = np.fft.rfft(noise, nfft)
    mixed = np.einsum("sf,csf->cf", spec, np.fft.rfft(irs, nfft))
    data = np.fft.irfft(mixed, nfft)[:, :out_len]
    return BinauralSignal.from_stacked(data, catalog.sample_rate_hz)


def broadband_energy(s: BinauralSignal) -> float:
    """Channel-averaged total energy."""
    d = s.stacked()
    return float(np.mean(np.sum(d * d, axis=1)))


def snr_gain(directional: BinauralSignal, noise: BinauralSignal, snr_db: float) -> float:
    """Factor for `noise` so that directional/noise energy equals `snr_db`."""
    e_dir = broadband_energy(directional)
    e_noise = broadband_energy(noise)
    if e_dir == 0.0:
        raise ValueError("SNR requested but directional sources have zero energy")
    if e_noise == 0.0:
        raise ValueError("noise field has zero energy")
    return math.sqrt(e_dir / (e_noise * 10.0 ** (snr_db / 10.0)))


@dataclass
class SourceSpec:
    azimuth_deg: float
    gain: float = 1.0
    signal_path: str | None = None
    generator: dict | None = None

    def __post_init__(self):
        if (self.signal_path is None) == (self.generator is None):
            raise ValueError("a source needs exactly one of signal_path or generator")

    def load(self, sample_rate_hz: int = SAMPLE_RATE_HZ, base_dir=None) -> MonoSignal:
        """The source waveform, resampled and RMS-normalized before its gain."""
        if self.generator is not None:
            from .material import generate
            s = generate(self.generator, sample_rate_hz)
        else:
            p = Path(self.signal_path)
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            s = read_wav(p)
            if isinstance(s, BinauralSignal):
                raise ValueError(f"source {p} must be mono")
            s = _as_rate(s, sample_rate_hz)
        s = rms_normalize(s, SOURCE_RMS)
        return MonoSignal(s.samples * self.gain, sample_rate_hz)

    def to_dict(self) -> dict:
        d = {"azimuth_deg": self.azimuth_deg, "gain": self.gain}
        if self.signal_path is not None:
            d["signal_path"] = self.signal_path
        else:
            d["generator"] = self.generator
        return d


@dataclass
class SceneSpec:
    sources: list[SourceSpec]
    head_orientation_deg: float = 0.0
    catalog_ref: str | None = None
    diffuse_noise: dict | None = None  # {"snr_db": float}
    seed: int = 0
    duration_s: float | None = None
    base_dir: str | None = field(default=None, compare=False)

    def head_relative_azimuths(self, grid: AzimuthGrid = GRID) -> list[int]:
        return [grid.snap(s.azimuth_deg - self.head_orientation_deg) for s in self.sources]

    def world_azimuths(self) -> list[float]:
        return [wrap_deg(s.azimuth_deg) for s in self.sources]

    def validate_for_evaluation(self, min_separation_deg: float = 10.0) -> None:
        if not 1 <= len(self.sources) <= 3:
            raise ValueError(f"evaluation scenes need 1-3 sources, got {len(self.sources)}")
        az = self.world_azimuths()
        for i in range(len(az)):
            for j in range(i + 1, len(az)):
                d = abs(az[i] - az[j]) % 360.0
                if min(d, 360.0 - d) < min_separation_deg:
                    raise ValueError(f"sources at {az[i]} and {az[j]} are closer than "
                                     f"{min_separation_deg} degrees")

    def to_dict(self) -> dict:
        d = {
            "sources": [s.to_dict() for s in self.sources],
            "head_orientation_deg": self.head_orientation_deg,
            "catalog_ref": self.catalog_ref,
            "diffuse_noise": self.diffuse_noise,
            "seed": self.seed,
        }
        if self.duration_s is not None:
            d["duration_s"] = self.duration_s
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "SceneSpec":
        return cls(
            sources=[SourceSpec(**s) for s in d["sources"]],
            head_orientation_deg=float(d.get("head_orientation_deg", 0.0)),
            catalog_ref=d.get("catalog_ref"),
            diffuse_noise=d.get("diffuse_noise"),
            seed=int(d.get("seed", 0)),
            duration_s=d.get("duration_s"),
            base_dir=None if base_dir is None else str(base_dir),
        )

    @classmethod
    def load(cls, path) -> "SceneSpec":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)


def rotate_head(spec: SceneSpec, delta_deg: float) -> SceneSpec:
    """Turn the head by `delta_deg` (counterclockwise); sources stay put."""
    if abs(delta_deg) > MAX_HEAD_ROTATION_DEG:
        raise ValueError(f"head rotation {delta_deg} outside +/-{MAX_HEAD_ROTATION_DEG} degrees")
    if delta_deg == 0:
        return spec
    return replace(spec, head_orientation_deg=spec.head_orientation_deg + delta_deg)


def _render_sources(spec: SceneSpec, catalog: HrirCatalog, grid: AzimuthGrid) -> BinauralSignal:
    rate = catalog.sample_rate_hz
    signals = [s.load(rate, spec.base_dir) for s in spec.sources]
    if spec.duration_s is not None:
        n = int(round(spec.duration_s * rate))
        signals = [MonoSignal(np.pad(s.samples[:n], (0, max(0, n - len(s)))), rate) for s in signals]
    n_src = max(len(s) for s in signals)
    out = np.zeros((2, n_src + catalog.ir_length - 1))
    for s, az in zip(signals, spec.head_relative_azimuths(grid)):
        r = spatialize(s, az, catalog).stacked()
        out[:, :r.shape[1]] += r
    return BinauralSignal.from_stacked(out, rate)


def mix_scene(spec: SceneSpec, catalog: HrirCatalog, grid: AzimuthGrid = GRID) -> BinauralSignal:
    """Sum of per-source renderings plus optional diffuse noise at a given SNR."""
    if not spec.sources:
        raise ValueError("scene has no sources")
    mix = _render_sources(spec, catalog, grid)
    if spec.diffuse_noise is not None:
        n_src = len(mix) - catalog.ir_length + 1
        rng = np.random.default_rng(spec.seed)
        noise = diffuse_noise_samples(n_src, catalog, rng, grid)
        g = snr_gain(mix, noise, float(spec.diffuse_noise["snr_db"]))
        mix = BinauralSignal.from_stacked(mix.stacked() + g * noise.stacked(), mix.sample_rate_hz)
    if spec.duration_s is not None:
        n = int(round(spec.duration_s * catalog.sample_rate_hz))
        mix = mix.slice(0, n)
    return mix


@dataclass
class Scene:
    """Simulation handle: a scene that can be re-rendered after a head turn."""

    spec: SceneSpec
    catalog: HrirCatalog
    grid: AzimuthGrid = GRID

    def render(self, rotation_deg: float = 0.0) -> BinauralSignal:
        return mix_scene(rotate_head(self.spec, rotation_deg), self.catalog, self.grid)

    @property
    def head_orientation_deg(self) -> float:
        return self.spec.head_orientation_deg
