"""Auditory front-end: gammatone analysis, rectification, framed CCF, ITD and ILD.

Lag convention: a positive lag means the right ear lags the left ear, so a
source on the left (azimuth 90) produces a positive ITD.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import SAMPLE_RATE_HZ
from .signal_io import BinauralSignal, MonoSignal, atomic_path

ENERGY_FLOOR = 1e-12
GAMMATONE_ORDER = 4
ERB_BANDWIDTH_FACTOR = 1.019


def erb_rate(f_hz):
    """Glasberg & Moore ERB-rate (number of ERBs below f)."""
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f_hz, dtype=np.float64))


def erb_rate_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def erb_bandwidth(f_hz):
    return 24.7 * (0.00437 * np.asarray(f_hz, dtype=np.float64) + 1.0)


@dataclass(frozen=True)
class FilterbankConfig:
    num_bands: int = 32
    f_low_hz: float = 80.0
    f_high_hz: float = 8000.0

    def validate(self, sample_rate_hz: int) -> None:
        if not 0 < self.f_low_hz < self.f_high_hz:
            raise ValueError("need 0 < f_low < f_high")
        if self.f_high_hz > sample_rate_hz / 2:
            raise ValueError(f"f_high {self.f_high_hz} Hz is above Nyquist for {sample_rate_hz} Hz")
        if self.num_bands < 1:
            raise ValueError("need at least one band")

    def center_frequencies(self) -> np.ndarray:
        e = np.linspace(erb_rate(self.f_low_hz), erb_rate(self.f_high_hz), self.num_bands)
        return erb_rate_to_hz(e)


@dataclass(frozen=True)
class FrameConfig:
    frame_len_s: float = 0.020
    frame_shift_s: float = 0.010
    max_lag_s: float = 0.0011
    feature_lag_s: float = 0.001

    def __post_init__(self):
        if not 0 < self.frame_shift_s <= self.frame_len_s:
            raise ValueError("need 0 < frame shift <= frame length")
        if self.feature_lag_s > self.max_lag_s:
            raise ValueError("feature lag range exceeds the CCF lag range")

    def in_samples(self, rate: int) -> tuple[int, int, int, int]:
        """(frame length, shift, max lag, feature lag) in samples."""
        return (int(round(self.frame_len_s * rate)), int(round(self.frame_shift_s * rate)),
                int(round(self.max_lag_s * rate)), int(round(self.feature_lag_s * rate)))

    def num_frames(self, n_samples: int, rate: int) -> int:
        length, shift, _, _ = self.in_samples(rate)
        return 0 if n_samples < length else (n_samples - length) // shift + 1


def gammatone_coefficients(cfg: FilterbankConfig, rate: int):
    """Per-band complex pole and gain of the one-pole cascade."""
    fc = cfg.center_frequencies()
    lam = np.exp(-2 * np.pi * ERB_BANDWIDTH_FACTOR * erb_bandwidth(fc) / rate)
    poles = lam * np.exp(2j * np.pi * fc / rate)
    gains = 2.0 * (1.0 - lam) ** GAMMATONE_ORDER
    return poles, gains


def gammatone_analyze(x, cfg: FilterbankConfig = FilterbankConfig(),
                      sample_rate_hz: int | None = None) -> np.ndarray:
    """Band signals (..., num_bands, N) from a signal (..., N).

    Each band is the real part of a cascade of four complex one-pole sections,
    normalized to unit gain at its center frequency.
    """
    if isinstance(x, MonoSignal):
        sample_rate_hz = x.sample_rate_hz
        x = x.samples
    if sample_rate_hz is None:
        raise ValueError("sample rate required for raw arrays")
    cfg.validate(sample_rate_hz)
    x = np.asarray(x, dtype=np.float64)
    poles, gains = gammatone_coefficients(cfg, sample_rate_hz)
    out = np.empty(x.shape[:-1] + (cfg.num_bands, x.shape[-1]))
    for b, (p, g) in enumerate(zip(poles, gains)):
        y = x.astype(np.complex128)
        for _ in range(GAMMATONE_ORDER):
            y = lfilter([1.0], [1.0, -p], y, axis=-1)
        out[..., b, :] = g * y.real
    return out


def rectify(band):
    """Half-wave rectification; no low-pass stage follows."""
    if isinstance(band, MonoSignal):
        return MonoSignal(np.maximum(band.samples, 0.0), band.sample_rate_hz)
    return np.maximum(band, 0.0)


def frame_view(x: np.ndarray, length: int, shift: int) -> np.ndarray:
    """(..., T, length) strided view of the last axis."""
    w = np.lib.stride_tricks.sliding_window_view(x, length, axis=-1)
    return w[..., ::shift, :]


def raw_ccf(lf: np.ndarray, rf: np.ndarray, max_lag: int) -> np.ndarray:
    """Unnormalized frame cross-correlation over lags -max_lag..max_lag.

    Both sides of a lag use the same element products in the same order, so
    swapping the inputs mirrors the lag axis bit-for-bit.
    """
    n = lf.shape[-1]
    out = np.empty(lf.shape[:-1] + (2 * max_lag + 1,))
    for i, lag in enumerate(range(-max_lag, max_lag + 1)):
        if lag >= 0:
            out[..., i] = np.sum(lf[..., :n - lag] * rf[..., lag:], axis=-1)
        else:
            out[..., i] = np.sum(rf[..., :n + lag] * lf[..., -lag:], axis=-1)
    return out


def _tie_order(max_lag: int) -> np.ndarray:
    """Lag-axis positions ordered 0, -1, +1, -2, +2, ... for tie breaking."""
    lags = np.arange(-max_lag, max_lag + 1)
    return np.lexsort((lags, np.abs(lags)))


def peak_lag(ccf: np.ndarray, max_lag: int) -> np.ndarray:
    """Integer lag of the CCF maximum; ties go to the smaller |lag|."""
    order = _tie_order(max_lag)
    pos = order[np.argmax(ccf[..., order], axis=-1)]
    return pos - max_lag


class SilentFrameError(ValueError):
    pass


def ccf_frame(left_band, right_band, start: int, cfg: FrameConfig = FrameConfig(),
              sample_rate_hz: int = SAMPLE_RATE_HZ) -> tuple[np.ndarray, int]:
    """Normalized CCF over the feature lags and the peak lag over the full range."""
    length, _, max_lag, feat_lag = cfg.in_samples(sample_rate_hz)
    l = np.asarray(left_band, dtype=np.float64)[start:start + length]
    r = np.asarray(right_band, dtype=np.float64)[start:start + length]
    if start < 0 or l.size < length or r.size < length:
        raise ValueError("frame extends outside the signal")
    el, er = np.dot(l, l), np.dot(r, r)
    if el < ENERGY_FLOOR or er < ENERGY_FLOOR:
        raise SilentFrameError("frame energy below floor")
    c = raw_ccf(l, r, max_lag) / np.sqrt(el * er)
    trim = max_lag - feat_lag
    return c[trim:c.size - trim], int(peak_lag(c, max_lag))


def ild_frame(left_band, right_band, start: int, length: int) -> float:
    """Left-to-right energy ratio in dB (positive = left louder)."""
    l = np.asarray(left_band, dtype=np.float64)[start:start + length]
    r = np.asarray(right_band, dtype=np.float64)[start:start + length]
    el, er = np.dot(l, l), np.dot(r, r)
    if el < ENERGY_FLOOR or er < ENERGY_FLOOR:
        raise SilentFrameError("frame energy below floor")
    # difference of logs is exactly antisymmetric under an L/R swap
    return float(10.0 * (np.log10(el) - np.log10(er)))


@dataclass
class FeatureGrid:
    """Per-frame, per-band features; silent cells hold NaN."""

    ccf: np.ndarray      # (T, B, 2*feature_lag+1)
    ild_db: np.ndarray   # (T, B)
    itd_s: np.ndarray    # (T, B)
    energy: np.ndarray   # (T, B) mean square, averaged over ears
    silent: np.ndarray   # (T, B) bool

    @property
    def num_frames(self) -> int:
        return self.ccf.shape[0]

    @property
    def num_bands(self) -> int:
        return self.ccf.shape[1]

    def vectors(self) -> np.ndarray:
        """(T, B, 34): CCF by ascending lag, then ILD."""
        return np.concatenate([self.ccf, self.ild_db[..., None]], axis=-1)

    def to_feature_set(self) -> "FeatureSet":
        t, f = np.nonzero(~self.silent)
        return FeatureSet(
            t=t.astype(np.int32), band=f.astype(np.int32),
            x=self.vectors()[t, f].astype(np.float32),
            itd_s=self.itd_s[t, f].astype(np.float32),
            energy=self.energy[t, f].astype(np.float32),
        )


def band_frame_energy(bands: np.ndarray, cfg: FrameConfig, rate: int) -> np.ndarray:
    """(T, B) mean square per frame of (B, N) band signals."""
    length, shift, _, _ = cfg.in_samples(rate)
    fr = frame_view(bands, length, shift)
    return np.mean(fr * fr, axis=-1).T


def features_from_bands(left: np.ndarray, right: np.ndarray, cfg: FrameConfig = FrameConfig(),
                        sample_rate_hz: int = SAMPLE_RATE_HZ) -> FeatureGrid:
    """Features from rectified (B, N) band signals of both ears."""
    length, shift, max_lag, feat_lag = cfg.in_samples(sample_rate_hz)
    if left.shape[-1] < length:
        raise ValueError("signal shorter than one frame")
    lf = frame_view(left, length, shift)
    rf = frame_view(right, length, shift)
    el = np.sum(lf * lf, axis=-1)
    er = np.sum(rf * rf, axis=-1)
    silent = (el < ENERGY_FLOOR) | (er < ENERGY_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = raw_ccf(lf, rf, max_lag) / np.sqrt(el * er)[..., None]
        ild = 10.0 * (np.log10(el) - np.log10(er))
    lag = peak_lag(c, max_lag)
    trim = max_lag - feat_lag
    ccf = c[..., trim:c.shape[-1] - trim]
    ccf[silent] = np.nan
    ild[silent] = np.nan
    itd = np.where(silent, np.nan, lag / sample_rate_hz)
    energy = 0.5 * (el + er) / length
    return FeatureGrid(
        ccf=np.swapaxes(ccf, 0, 1), ild_db=ild.T, itd_s=itd.T, energy=energy.T, silent=silent.T
    )


def analyze_binaural(s: BinauralSignal, fb: FilterbankConfig = FilterbankConfig()) -> np.ndarray:
    """Unrectified band signals (2, B, N)."""
    return gammatone_analyze(s.stacked(), fb, s.sample_rate_hz)


def extract_features(s: BinauralSignal, fb: FilterbankConfig = FilterbankConfig(),
                     fr: FrameConfig = FrameConfig()) -> FeatureGrid:
    length, _, _, _ = fr.in_samples(s.sample_rate_hz)
    if len(s) < length:
        raise ValueError("signal shorter than one frame")
    bands = rectify(analyze_binaural(s, fb))
    return features_from_bands(bands[0], bands[1], fr, s.sample_rate_hz)


# --- feature dump -----------------------------------------------------------

DUMP_MAGIC = b"BLFD"
DUMP_FORMAT = "binloc-features/1"


def record_dtype(dim: int = 34) -> np.dtype:
    return np.dtype([("t", "<i4"), ("f", "<i4"), ("x", "<f4", (dim,)),
                     ("itd", "<f4"), ("energy", "<f4")])


LABEL_DTYPE = np.dtype([("azimuth_deg", "<i2"), ("snr_db", "<f4"), ("item", "<i4")])


@dataclass
class FeatureSet:
    """Flat collection of non-silent (frame, band) cells, optionally labeled."""

    t: np.ndarray
    band: np.ndarray
    x: np.ndarray
    itd_s: np.ndarray
    energy: np.ndarray
    labels: np.ndarray | None = None  # LABEL_DTYPE records
    header: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size

    @classmethod
    def concatenate(cls, parts: list["FeatureSet"], header: dict | None = None) -> "FeatureSet":
        if not parts:
            raise ValueError("nothing to concatenate")
        labels = None
        if all(p.labels is not None for p in parts):
            labels = np.concatenate([p.labels for p in parts])
        return cls(
            t=np.concatenate([p.t for p in parts]), band=np.concatenate([p.band for p in parts]),
            x=np.concatenate([p.x for p in parts]), itd_s=np.concatenate([p.itd_s for p in parts]),
            energy=np.concatenate([p.energy for p in parts]), labels=labels,
            header=dict(header or parts[0].header),
        )

    def for_band(self, f: int) -> "FeatureSet":
        m = self.band == f
        return FeatureSet(self.t[m], self.band[m], self.x[m], self.itd_s[m], self.energy[m],
                          None if self.labels is None else self.labels[m], self.header)

    def save(self, path) -> None:
        """Write the dump (and a ``.labels.npy`` sidecar when labeled)."""
        path = Path(path)
        rec = np.empty(len(self), dtype=record_dtype(self.x.shape[1]))
        rec["t"], rec["f"], rec["x"] = self.t, self.band, self.x
        rec["itd"], rec["energy"] = self.itd_s, self.energy
        header = dict(self.header, format=DUMP_FORMAT, num_records=len(self), dim=int(self.x.shape[1]))
        hb = json.dumps(header, sort_keys=True).encode()
        with atomic_path(path) as tmp:
            with open(tmp, "wb") as fh:
                fh.write(DUMP_MAGIC + struct.pack("<I", len(hb)) + hb)
                fh.write(rec.tobytes())
        if self.labels is not None:
            with atomic_path(labels_path(path)) as tmp:
                with open(tmp, "wb") as fh:
                    np.save(fh, self.labels.astype(LABEL_DTYPE), allow_pickle=False)

    @classmethod
    def load(cls, path) -> "FeatureSet":
        path = Path(path)
        data = path.read_bytes()
        if data[:4] != DUMP_MAGIC:
            raise ValueError(f"{path} is not a feature dump")
        (hl,) = struct.unpack("<I", data[4:8])
        header = json.loads(data[8:8 + hl])
        if header.get("format") != DUMP_FORMAT:
            raise ValueError(f"unsupported feature dump format {header.get('format')!r}")
        rec = np.frombuffer(data, dtype=record_dtype(header["dim"]), offset=8 + hl)
        labels = None
        lp = labels_path(path)
        if lp.exists():
            labels = np.load(lp, allow_pickle=False)
            if labels.size != rec.size:
                raise ValueError("labels sidecar does not match the feature dump")
        return cls(t=rec["t"].copy(), band=rec["f"].copy(), x=rec["x"].copy(),
                   itd_s=rec["itd"].copy(), energy=rec["energy"].copy(), labels=labels,
                   header=header)


def labels_path(dump_path) -> Path:
    dump_path = Path(dump_path)
    return dump_path.with_name(dump_path.name + ".labels.npy")


def config_header(fb: FilterbankConfig, fr: FrameConfig, rate: int) -> dict:
    return {"filterbank": asdict(fb), "frame": asdict(fr), "sample_rate": rate}
