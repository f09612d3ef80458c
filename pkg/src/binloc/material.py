"""Seeded synthetic source material (noise bursts, vowel-like harmonic tones).

Stands in for licensed speech corpora so the repository is self-testing. A
generator is described by a small dict, e.g.
``{"kind": "harmonic", "seed": 3, "duration_s": 1.0}``, which keeps scene
files declarative and reproducible.
"""

from __future__ import annotations

import numpy as np

from . import SAMPLE_RATE_HZ
from .signal_io import MonoSignal

KINDS = ("white", "pink", "harmonic")


def white_burst(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(n)


def pink_burst(n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spec / np.sqrt(f), n)


def harmonic_tone(n: int, rate: int, rng: np.random.Generator) -> np.ndarray:
    """Voiced-speech-like complex: gliding f0, formant envelope, syllabic AM, breath noise."""
    t = np.arange(n) / rate
    f0 = rng.uniform(90.0, 260.0) * (1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 3.0) * t
                                                         + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / rate
    formants = np.sort(rng.uniform([300, 900, 2000], [900, 2200, 3500]))
    nyq = rate / 2
    x = np.zeros(n)
    for h in range(1, int(nyq / 90.0) + 1):
        fh = h * f0
        env = sum(1.0 / (1.0 + ((fh - fc) / (0.15 * fc)) ** 2) for fc in formants)
        # spectral tilt keeps high harmonics present but weak
        amp = (env + 0.05) / np.sqrt(h)
        x += np.where(fh < nyq, amp, 0.0) * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    am = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    x *= am
    x += 0.05 * np.std(x) * rng.standard_normal(n)
    return x


def generate(gen: dict, sample_rate_hz: int = SAMPLE_RATE_HZ) -> MonoSignal:
    kind = gen.get("kind", "harmonic")
    n = int(round(float(gen.get("duration_s", 1.0)) * sample_rate_hz))
    if n <= 0:
        raise ValueError("generator duration must be positive")
    rng = np.random.default_rng(int(gen.get("seed", 0)))
    if kind == "white":
        x = white_burst(n, rng)
    elif kind == "pink":
        x = pink_burst(n, rng)
    elif kind == "harmonic":
        x = harmonic_tone(n, sample_rate_hz, rng)
    else:
        raise ValueError(f"unknown generator kind {kind!r}; expected one of {KINDS}")
    return MonoSignal(x, sample_rate_hz)


def desk_material(count: int, duration_s: float, seed: int,
                  sample_rate_hz: int = SAMPLE_RATE_HZ) -> list[MonoSignal]:
    """`count` items cycling through the generator kinds."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [generate({"kind": KINDS[i % len(KINDS)], "seed": int(s), "duration_s": duration_s},
                     sample_rate_hz)
            for i, s in enumerate(seeds)]
