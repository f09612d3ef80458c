"""Posterior fusion across bands and frames, source picking, and head-rotation
resolution of front-back phantoms."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import GRID_STEP_DEG, NUM_AZIMUTHS
from .frontend import extract_features
from .signal_io import BinauralSignal
from .spatializer import MAX_HEAD_ROTATION_DEG, Scene, wrap_deg

PROB_FLOOR = 1e-10
POLICIES = {"none": "none", "no_movement": "none", "rotate": "rotate", "random_rotation": "rotate"}


@dataclass(frozen=True)
class LocalizerConfig:
    prominence_fraction: float = 0.5
    # the product over bands is overconfident, so a front-back mirror peak
    # still signals ambiguity far below the prominence fraction
    mirror_fraction: float = 1e-6
    # peaks this far below the top are numerical debris, not candidates
    candidate_fraction: float = 1e-6
    mirror_window_deg: float = 20.0
    match_tolerance_bins: int = 1
    min_separation_deg: float = 10.0
    prob_floor: float = PROB_FLOOR
    hemifield: str = "full"  # or "frontal": only report azimuths in [-90, 90]

    def __post_init__(self):
        if self.hemifield not in ("full", "frontal"):
            raise ValueError(f"hemifield must be 'full' or 'frontal', got {self.hemifield!r}")


@dataclass
class AzimuthPosterior:
    probs: np.ndarray
    start_frame: int = 0
    num_frames: int = 1

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (NUM_AZIMUTHS,):
            raise ValueError(f"posterior must have {NUM_AZIMUTHS} entries")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("posterior must be non-negative and sum to 1")
        self.probs = p

    @property
    def azimuths(self) -> np.ndarray:
        return np.arange(NUM_AZIMUTHS) * GRID_STEP_DEG


def _normalize(p: np.ndarray) -> np.ndarray:
    return p / p.sum(axis=-1, keepdims=True)


def fuse_frames(band_posteriors: np.ndarray, prior=None, floor: float = PROB_FLOOR):
    """Product over bands of per-band posteriors, per frame, in the log domain.

    `band_posteriors` is (T, B, K) with NaN rows for silent bands. Returns the
    (T', K) fused posteriors for frames with at least one usable band and the
    indices of those frames.
    """
    p = np.asarray(band_posteriors, dtype=np.float64)
    if p.ndim == 2:
        p = p[None]
    usable = ~np.any(np.isnan(p), axis=-1)
    logp = np.where(usable[..., None], np.log(np.maximum(np.nan_to_num(p), floor)), 0.0)
    # sorting first makes the band sum independent of band order, bit for bit
    total = np.sum(np.sort(logp, axis=1), axis=1)
    if prior is not None:
        total = total + np.log(np.maximum(np.asarray(prior, dtype=np.float64), floor))
    keep = np.flatnonzero(usable.any(axis=1))
    total = total[keep]
    total -= total.max(axis=-1, keepdims=True)
    return _normalize(np.exp(total)), keep


def fuse_frame(band_posteriors: np.ndarray, prior=None, floor: float = PROB_FLOOR):
    """Fused posterior of one frame (B, K), or None when every band is silent."""
    fused, keep = fuse_frames(np.asarray(band_posteriors)[None], prior, floor)
    return fused[0] if keep.size else None


def average_block(frame_posteriors: np.ndarray, start_frame: int = 0) -> AzimuthPosterior:
    fp = np.asarray(frame_posteriors, dtype=np.float64)
    if fp.ndim != 2 or fp.shape[0] == 0:
        raise ValueError("no usable frames in block")
    return AzimuthPosterior(_normalize(fp.mean(axis=0)), start_frame, fp.shape[0])


def angular_distance(a, b):
    d = np.mod(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)), 360.0)
    out = np.minimum(d, 360.0 - d)
    return float(out) if np.ndim(out) == 0 else out


def mirror_azimuth(az):
    """Front-back reflection across the interaural axis (same ITD)."""
    return np.mod(180.0 - np.asarray(az, dtype=np.float64), 360.0) if np.ndim(az) else wrap_deg(180.0 - az)


def local_maxima(p: np.ndarray) -> np.ndarray:
    """Circular local maxima as bin indices.

    A run of equal values is one peak (reported at its smallest bin) when both
    neighbours of the run are strictly lower; flat floors are not peaks.
    """
    p = np.asarray(p)
    k = p.size
    if k == 0 or np.all(p == p[0]):
        return np.array([], dtype=np.int64)
    # start walking just after a change so no run straddles the start
    start = int(np.flatnonzero(p != np.roll(p, 1))[0])
    out = []
    i = 0
    while i < k:
        b = (start + i) % k
        j = i
        while j + 1 < k and p[(start + j + 1) % k] == p[b]:
            j += 1
        left, right = p[(b - 1) % k], p[(start + j + 1) % k]
        if p[b] > 0 and p[b] > left and p[b] > right:
            out.append(min((start + m) % k for m in range(i, j + 1)))
        i = j + 1
    return np.sort(np.array(out, dtype=np.int64))


def _order(p: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Sort bins by descending mass, ties by smaller azimuth."""
    return idx[np.lexsort((idx, -p[idx]))]


def pick_sources(p, n: int, min_separation_deg: float = 10.0) -> list[int]:
    """Azimuths (degrees) of the `n` strongest, well-separated peaks."""
    probs = p.probs if isinstance(p, AzimuthPosterior) else np.asarray(p, dtype=np.float64)
    k = probs.size
    if n < 1:
        raise ValueError("need at least one source")
    if n > k:
        raise ValueError(f"cannot pick {n} sources from {k} azimuths")
    step = 360.0 / k
    chosen: list[int] = []

    def far_enough(i):
        return all(angular_distance(i * step, j * step) >= min_separation_deg for j in chosen)

    for i in _order(probs, local_maxima(probs)):
        if len(chosen) == n:
            break
        if far_enough(i):
            chosen.append(int(i))
    if len(chosen) < n:
        rest = _order(probs, np.arange(k))
        for i in rest:
            if len(chosen) < n and i not in chosen and far_enough(i):
                chosen.append(int(i))
        for i in rest:
            if len(chosen) < n and i not in chosen:
                chosen.append(int(i))
    return [int(i * step) for i in chosen]


def candidate_peaks(probs: np.ndarray, fraction: float) -> np.ndarray:
    """Local maxima holding at least `fraction` of the top peak's mass, strongest first."""
    peaks = local_maxima(probs)
    if peaks.size == 0:
        return peaks
    top = probs[peaks].max()
    return _order(probs, peaks[probs[peaks] >= fraction * top])


def detect_ambiguity(p, n: int, cfg: LocalizerConfig = LocalizerConfig()) -> bool:
    """More prominent peaks than sources, or a picked peak with a prominent mirror."""
    probs = p.probs if isinstance(p, AzimuthPosterior) else np.asarray(p, dtype=np.float64)
    step = 360.0 / probs.size
    if candidate_peaks(probs, cfg.prominence_fraction).size > n:
        return True
    mirrors = candidate_peaks(probs, cfg.mirror_fraction)
    for az in pick_sources(probs, n, cfg.min_separation_deg):
        m = mirror_azimuth(az)
        for q in mirrors:
            if int(q * step) != az and angular_distance(q * step, m) <= cfg.mirror_window_deg:
                return True
    return False


def _lobe(p: np.ndarray, peak: int) -> np.ndarray:
    """Bins of the lobe around `peak`: walk outwards while values do not rise."""
    k = p.size
    members = [peak]
    i = peak
    while len(members) < k:
        j = (i - 1) % k
        if p[j] > p[i] or p[j] == 0:
            break
        members.append(j)
        i = j
    i = peak
    while len(members) < k:
        j = (i + 1) % k
        if p[j] > p[i] or p[j] == 0 or j in members:
            break
        members.append(j)
        i = j
    return np.array(members)


def _circ_bins(a: int, b: int, k: int) -> int:
    d = abs(a - b) % k
    return min(d, k - d)


@dataclass
class LocalizationResult:
    azimuths_deg: list[float]          # world frame
    head_azimuths_deg: list[float]     # head frame of the block that produced the estimate
    masses: list[float]
    rotation_deg: float = 0.0
    used_head_movement: bool = False
    ambiguous: bool = False
    phantoms_deg: list[float] = field(default_factory=list)
    low_confidence: bool = False
    head_orientation_deg: float = 0.0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "azimuths_deg": [float(a) for a in self.azimuths_deg],
            "masses": [float(m) for m in self.masses],
            "rotation_deg": float(self.rotation_deg),
            "ambiguous": bool(self.ambiguous),
            "head_azimuths_deg": [float(a) for a in self.head_azimuths_deg],
            "phantoms_deg": [float(a) for a in self.phantoms_deg],
            "used_head_movement": bool(self.used_head_movement),
            "low_confidence": bool(self.low_confidence),
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _restrict(probs: np.ndarray, hemifield: str) -> np.ndarray:
    if hemifield == "full":
        return probs
    az = np.arange(probs.size) * (360.0 / probs.size)
    front = (az <= 90.0) | (az >= 270.0)
    q = np.where(front, probs, 0.0)
    return q / q.sum() if q.sum() > 0 else probs


def _result(probs, n, cfg, head_orientation, **kw) -> LocalizationResult:
    probs = _restrict(probs, cfg.hemifield)
    picks = pick_sources(probs, n, cfg.min_separation_deg)
    step = 360.0 / probs.size
    return LocalizationResult(
        azimuths_deg=[wrap_deg(a + head_orientation) for a in picks],
        head_azimuths_deg=[float(a) for a in picks],
        masses=[float(probs[int(round(a / step))]) for a in picks],
        head_orientation_deg=head_orientation,
        **kw,
    )


def resolve_with_rotation(p1, p2, rotation_deg: float, n: int,
                          cfg: LocalizerConfig = LocalizerConfig(),
                          head_orientation_deg: float = 0.0) -> LocalizationResult:
    """Keep only peaks that move with the head; report the survivors in the world frame.

    `p1` is in the head frame before the turn (orientation `head_orientation_deg`),
    `p2` after turning by `rotation_deg`.
    """
    a = p1.probs if isinstance(p1, AzimuthPosterior) else np.asarray(p1, dtype=np.float64)
    b = p2.probs if isinstance(p2, AzimuthPosterior) else np.asarray(p2, dtype=np.float64)
    k = a.size
    step = 360.0 / k
    shift = rotation_deg / step
    if abs(rotation_deg) > MAX_HEAD_ROTATION_DEG or abs(shift - round(shift)) > 1e-9:
        raise ValueError(f"rotation {rotation_deg} must be a grid multiple within "
                         f"+/-{MAX_HEAD_ROTATION_DEG} degrees")
    shift = int(round(shift))
    tol = cfg.match_tolerance_bins
    peaks1 = candidate_peaks(a, cfg.candidate_fraction)
    peaks2 = candidate_peaks(b, cfg.candidate_fraction)
    # a world-stationary source at head bin i moves to head bin i - shift
    moved1 = (peaks1 - shift) % k
    match1 = np.array([any(_circ_bins(i, j, k) <= tol for j in peaks2) for i in moved1], dtype=bool)
    match2 = np.array([any(_circ_bins(j, i, k) <= tol for i in moved1) for j in peaks2], dtype=bool)

    a_clean, b_clean = a.copy(), b.copy()
    for i in np.concatenate([peaks1[~match1], np.setdiff1d(local_maxima(a), peaks1)]):
        a_clean[_lobe(a, i)] = 0.0
    for j in np.concatenate([peaks2[~match2], np.setdiff1d(local_maxima(b), peaks2)]):
        b_clean[_lobe(b, j)] = 0.0
    phantoms = sorted({wrap_deg(i * step + head_orientation_deg) for i in peaks1[~match1]}
                      | {wrap_deg(j * step + head_orientation_deg + rotation_deg)
                         for j in peaks2[~match2]})

    low_conf = False
    if a_clean.sum() <= 0 and b_clean.sum() <= 0:
        a_clean, b_clean, low_conf = a, b, True
    parts = [np.roll(a_clean, -shift), b_clean]
    parts = [q / q.sum() for q in parts if q.sum() > 0]
    avg = _normalize(np.mean(parts, axis=0))
    return _result(avg, n, cfg, head_orientation_deg + rotation_deg,
                   rotation_deg=float(rotation_deg), used_head_movement=True, ambiguous=True,
                   phantoms_deg=phantoms, low_confidence=low_conf)


def block_posterior(signal: BinauralSignal, models, cfg: LocalizerConfig = LocalizerConfig(),
                    start_frame: int = 0) -> AzimuthPosterior:
    """Features, band posteriors, frame fusion and time average for one block."""
    if signal.sample_rate_hz != models.sample_rate_hz:
        raise ValueError(f"signal rate {signal.sample_rate_hz} != model rate {models.sample_rate_hz}")
    grid = extract_features(signal, models.filterbank, models.frame)
    fused, _ = fuse_frames(models.band_posteriors(grid), floor=cfg.prob_floor)
    return average_block(fused, start_frame)


ROTATIONS_DEG = [r for r in range(-30, 31, GRID_STEP_DEG) if r != 0]


def localize(signal: BinauralSignal | None, models, n: int, policy: str = "none",
             scene: Scene | None = None, seed: int = 0,
             cfg: LocalizerConfig = LocalizerConfig()) -> LocalizationResult:
    """Estimate `n` source azimuths.

    "none": one block over the whole signal. "rotate": first half is block 1;
    if it is ambiguous the head turns by a random non-zero grid angle within
    +/-30 degrees and the second half is re-rendered through `scene`.
    """
    try:
        policy = POLICIES[policy]
    except KeyError:
        raise ValueError(f"unknown policy {policy!r}; expected one of {sorted(POLICIES)}") from None
    if signal is None:
        if scene is None:
            raise ValueError("need a signal or a scene")
        signal = scene.render()
    h0 = scene.head_orientation_deg if scene is not None else 0.0
    warnings = []
    if policy == "rotate" and scene is None:
        warnings.append("head rotation needs a scene handle; fell back to no movement")
        policy = "none"
    if policy == "none":
        p = block_posterior(signal, models, cfg)
        return _result(p.probs, n, cfg, h0, ambiguous=detect_ambiguity(p, n, cfg),
                       warnings=warnings)

    half = len(signal) // 2
    p1 = block_posterior(signal.slice(0, half), models, cfg)
    if not detect_ambiguity(p1, n, cfg):
        p2 = block_posterior(signal.slice(half, len(signal)), models, cfg)
        avg = _normalize(0.5 * (p1.probs + p2.probs))
        return _result(avg, n, cfg, h0, ambiguous=False)
    rotation = float(np.random.default_rng(seed).choice(ROTATIONS_DEG))
    turned = scene.render(rotation)
    p2 = block_posterior(turned.slice(half, len(turned)), models, cfg)
    return resolve_with_rotation(p1, p2, rotation, n, cfg, h0)
