"""Audio containers and sample-level utilities shared by the pipeline."""

from __future__ import annotations

import math
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly
from scipy.special import i0

KAISER_BETA = 8.0
TAPS_PER_PHASE = 64


@dataclass(frozen=True, eq=False)
class MonoSignal:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be a positive integer, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples contain NaN or Inf")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def rms(self) -> float:
        return rms(self.samples)


@dataclass(frozen=True, eq=False)
class BinauralSignal:
    left: MonoSignal
    right: MonoSignal

    def __post_init__(self):
        if len(self.left) != len(self.right):
            raise ValueError(f"channel lengths differ: {len(self.left)} vs {len(self.right)}")
        if self.left.sample_rate_hz != self.right.sample_rate_hz:
            raise ValueError("channel sample rates differ")

    @classmethod
    def from_arrays(cls, left, right, sample_rate_hz: int) -> "BinauralSignal":
        return cls(MonoSignal(left, sample_rate_hz), MonoSignal(right, sample_rate_hz))

    @classmethod
    def from_stacked(cls, data, sample_rate_hz: int) -> "BinauralSignal":
        data = np.asarray(data)
        return cls.from_arrays(data[0], data[1], sample_rate_hz)

    def __len__(self):
        return len(self.left)

    @property
    def sample_rate_hz(self) -> int:
        return self.left.sample_rate_hz

    @property
    def duration_s(self) -> float:
        return self.left.duration_s

    def stacked(self) -> np.ndarray:
        """(2, N) array, left first."""
        return np.stack([self.left.samples, self.right.samples])

    def slice(self, start: int, stop: int) -> "BinauralSignal":
        return BinauralSignal.from_arrays(
            self.left.samples[start:stop], self.right.samples[start:stop], self.sample_rate_hz
        )

    def swapped(self) -> "BinauralSignal":
        return BinauralSignal(self.right, self.left)


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(x * x)))


@contextmanager
def atomic_path(path):
    """Yield a temporary sibling path; rename it onto `path` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    with atomic_path(path) as tmp:
        tmp.write_text(text)


def atomic_write_bytes(path, data: bytes) -> None:
    with atomic_path(path) as tmp:
        tmp.write_bytes(data)


def read_wav(path) -> MonoSignal | BinauralSignal:
    """Read a PCM16 or float32 WAV file, scaled to [-1, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such WAV file: {path}")
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:  # scipy raises ValueError / struct errors on junk
        raise ValueError(f"unreadable WAV file {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV encoding {data.dtype} in {path}; need PCM16 or float32")
    if x.shape[0] == 0:
        raise ValueError(f"zero-length audio stream in {path}")
    if x.ndim == 1:
        return MonoSignal(x, rate)
    if x.shape[1] == 1:
        return MonoSignal(x[:, 0], rate)
    if x.shape[1] == 2:
        return BinauralSignal.from_arrays(x[:, 0], x[:, 1], rate)
    raise ValueError(f"{path} has {x.shape[1]} channels; only mono and stereo are supported")


def write_wav(path, s: MonoSignal | BinauralSignal, encoding: str = "float32") -> None:
    if isinstance(s, BinauralSignal):
        data = s.stacked().T
    else:
        data = s.samples
    if encoding == "float32":
        out = data.astype(np.float32)
    elif encoding == "pcm16":
        out = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    with atomic_path(path) as tmp:
        wavfile.write(tmp, s.sample_rate_hz, out)


def rms_normalize(s: MonoSignal, target_rms: float) -> MonoSignal:
    level = s.rms()
    if level == 0.0:
        raise ValueError("cannot RMS-normalize an all-zero signal")
    return MonoSignal(s.samples * (target_rms / level), s.sample_rate_hz)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def central_segment(s: BinauralSignal, duration_s: float) -> BinauralSignal:
    n = round_half_up(duration_s * s.sample_rate_hz)
    if n > len(s):
        raise ValueError(f"signal of {s.duration_s:.3f} s is shorter than requested {duration_s} s")
    start = (len(s) - n) // 2
    return s.slice(start, start + n)


def kaiser_sinc(t, cutoff: float = 1.0, half_width: float = TAPS_PER_PHASE / 2,
                beta: float = KAISER_BETA) -> np.ndarray:
    """Kaiser-windowed sinc evaluated at (possibly fractional) sample offsets `t`.

    `cutoff` is relative to Nyquist; the window spans |t| <= half_width.
    """
    t = np.asarray(t, dtype=np.float64)
    u = t / half_width
    inside = np.abs(u) <= 1.0
    w = np.zeros_like(t)
    w[inside] = i0(beta * np.sqrt(1.0 - u[inside] ** 2)) / i0(beta)
    return cutoff * np.sinc(cutoff * t) * w


def fractional_delay_filter(delay: float, length: int) -> np.ndarray:
    """FIR that delays by `delay` samples (needs delay >= TAPS_PER_PHASE/2)."""
    if delay < TAPS_PER_PHASE / 2 or delay > length - TAPS_PER_PHASE / 2:
        raise ValueError(f"delay {delay} does not fit a {length}-tap delay line")
    return kaiser_sinc(np.arange(length) - delay)


def _resampling_filter(up: int, down: int) -> np.ndarray:
    # taps live on the upsampled grid; cutoff is the lower of the two Nyquists
    half = TAPS_PER_PHASE // 2 * up
    m = np.arange(-half, half + 1)
    return up * kaiser_sinc(m, cutoff=1.0 / max(up, down), half_width=half)


def resample(s: MonoSignal, target_rate_hz: int) -> MonoSignal:
    """Polyphase windowed-sinc resampling (Kaiser beta 8, 64 taps per phase)."""
    if target_rate_hz <= 0:
        raise ValueError("target rate must be positive")
    if target_rate_hz == s.sample_rate_hz:
        return s
    g = math.gcd(int(target_rate_hz), s.sample_rate_hz)
    up, down = int(target_rate_hz) // g, s.sample_rate_hz // g
    h = _resampling_filter(up, down)
    y = resample_poly(s.samples, up, down, window=h)
    n_out = round_half_up(len(s) * target_rate_hz / s.sample_rate_hz)
    if y.size >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - y.size)])
    return MonoSignal(y, target_rate_hz)
