"""Multi-conditional training data: targets at every grid azimuth in diffuse noise.

Each (frame, band) cell is kept only when its a priori SNR, computed from the
separately rendered target and noise, exceeds the gate.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .frontend import (
    LABEL_DTYPE,
    FeatureSet,
    FilterbankConfig,
    FrameConfig,
    analyze_binaural,
    band_frame_energy,
    config_header,
    features_from_bands,
    rectify,
)
from .signal_io import MonoSignal, resample, rms_normalize
from .spatializer import (
    GRID,
    SOURCE_RMS,
    AzimuthGrid,
    HrirCatalog,
    diffuse_noise_samples,
    snr_gain,
    spatialize,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MctConfig:
    snrs_db: tuple[float, ...] = (20.0, 10.0, 0.0)
    clean: bool = False
    gate_snr_db: float = -5.0
    sentences_per_azimuth: int = 30
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.gate_snr_db):
            raise ValueError("gate threshold must be finite")
        if not self.clean and not self.snrs_db:
            raise ValueError("MCT mode needs at least one SNR")
        if self.sentences_per_azimuth < 1:
            raise ValueError("need at least one sentence per azimuth")


def a_priori_snr(target_energy, noise_energy) -> np.ndarray:
    """10 log10(E_t / E_n): +inf for zero noise, -inf for zero target, NaN if both are zero."""
    et = np.asarray(target_energy, dtype=np.float64)
    en = np.asarray(noise_energy, dtype=np.float64)
    if np.any(en < 0) or np.any(et < 0):
        raise ValueError("energies must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 10.0 * np.log10(et / en)
    return out


def gate_mask(target_energy, noise_energy, gate_snr_db: float) -> np.ndarray:
    """Cells whose a priori SNR strictly exceeds the gate (both-zero cells dropped)."""
    snr = a_priori_snr(target_energy, noise_energy)
    return np.nan_to_num(snr, nan=-np.inf) > gate_snr_db


def _labeled(grid, keep, az: int, snr_db: float, item: int) -> FeatureSet:
    fs = grid.to_feature_set()
    sel = keep[fs.t, fs.band]
    fs = FeatureSet(fs.t[sel], fs.band[sel], fs.x[sel], fs.itd_s[sel], fs.energy[sel])
    lab = np.empty(len(fs), dtype=LABEL_DTYPE)
    lab["azimuth_deg"], lab["snr_db"], lab["item"] = az, snr_db, item
    fs.labels = lab
    return fs


def build_training_set(material: list[MonoSignal], catalog: HrirCatalog,
                       cfg: MctConfig = MctConfig(),
                       fb: FilterbankConfig = FilterbankConfig(),
                       fr: FrameConfig = FrameConfig(),
                       grid: AzimuthGrid = GRID,
                       check_coverage: bool = True) -> FeatureSet:
    """Labeled, gated features for every grid azimuth."""
    if not material:
        raise ValueError("no training material")
    catalog.require_grid(grid)
    rate = catalog.sample_rate_hz
    rng = np.random.default_rng(cfg.seed)
    parts = []
    item = 0
    for az in grid.values:
        az = int(az)
        picks = rng.choice(len(material), size=cfg.sentences_per_azimuth,
                           replace=len(material) < cfg.sentences_per_azimuth)
        for j in picks:
            src = material[int(j)]
            if src.sample_rate_hz != rate:
                src = resample(src, rate)
            src = rms_normalize(src, SOURCE_RMS)
            target = spatialize(src, az, catalog)
            tb = analyze_binaural(target, fb)
            if cfg.clean:
                r = rectify(tb)
                g = features_from_bands(r[0], r[1], fr, rate)
                parts.append(_labeled(g, np.ones_like(g.silent), az, np.inf, item))
            else:
                noise = diffuse_noise_samples(len(src), catalog, rng, grid)
                nb = analyze_binaural(noise, fb)
                rt = rectify(tb)
                et = 0.5 * (band_frame_energy(rt[0], fr, rate) + band_frame_energy(rt[1], fr, rate))
                rn = rectify(nb)
                en = 0.5 * (band_frame_energy(rn[0], fr, rate) + band_frame_energy(rn[1], fr, rate))
                for snr in cfg.snrs_db:
                    gain = snr_gain(target, noise, snr)
                    mix = rectify(tb + gain * nb)
                    g = features_from_bands(mix[0], mix[1], fr, rate)
                    # rectification commutes with a positive gain
                    keep = gate_mask(et, gain * gain * en, cfg.gate_snr_db)
                    parts.append(_labeled(g, keep, az, float(snr), item))
            item += 1
        log.debug("azimuth %d done", az)
    header = config_header(fb, fr, rate)
    header["mct"] = asdict(cfg)
    header["catalog"] = catalog.label
    out = FeatureSet.concatenate(parts, header)
    if check_coverage:
        check_class_coverage(out, fb.num_bands, grid)
    return out


def check_class_coverage(fs: FeatureSet, num_bands: int, grid: AzimuthGrid = GRID) -> None:
    counts = np.zeros((num_bands, grid.count), dtype=np.int64)
    np.add.at(counts, (fs.band, fs.labels["azimuth_deg"] // grid.step_deg), 1)
    empty = np.argwhere(counts == 0)
    if empty.size:
        f, k = empty[0]
        raise ValueError(f"{len(empty)} (band, azimuth) classes have no frames, "
                         f"e.g. band {f} azimuth {k * grid.step_deg}")
