"""Scoring of localization runs and batch experiments over fixed scene sets."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .localization import LocalizerConfig, angular_distance, localize, mirror_azimuth
from .spatializer import HrirCatalog, Scene, SceneSpec, SourceSpec, wrap_deg

log = logging.getLogger(__name__)

HISTOGRAM_BIN_DEG = 20
CSV_COLUMNS = ["scene_id", "condition", "policy", "n_sources", "true_az", "est_az",
               "n_correct", "n_front_back"]

__all__ = ["angular_distance", "mirror_azimuth", "match_estimates", "is_front_back_error",
           "EvalConfig", "EvalReport", "run_experiment", "make_scene_set", "scene_id"]


def match_estimates(true_az, est_az, threshold_deg: float = 5.0):
    """Optimal one-to-one assignment of estimates to sources.

    Returns (pairs, n_correct) where `pairs` lists (true, estimate) in the order
    of `true_az`. Exhaustive over permutations, fine for up to three sources.
    A source is correct when its estimate lies within `threshold_deg` inclusive.
    """
    true_az = [float(a) for a in true_az]
    est_az = [float(a) for a in est_az]
    if len(true_az) != len(est_az):
        raise ValueError(f"{len(est_az)} estimates for {len(true_az)} sources")
    best, best_key = None, None
    for perm in itertools.permutations(range(len(est_az))):
        d = [angular_distance(t, est_az[j]) for t, j in zip(true_az, perm)]
        # equal-cost assignments are broken towards more correct sources so
        # the count cannot depend on the order of the estimates
        key = (sum(d), -sum(x <= threshold_deg for x in d))
        if best_key is None or key < best_key:
            best, best_key = perm, key
    pairs = [(t, est_az[j]) for t, j in zip(true_az, best)]
    n_correct = sum(angular_distance(t, e) <= threshold_deg for t, e in pairs)
    return pairs, int(n_correct)


def is_front_back_error(true_az: float, est_az: float, window_deg: float = 20.0) -> bool:
    return angular_distance(est_az, mirror_azimuth(true_az)) <= window_deg


def accuracy(n_correct: int, n_total: int) -> float:
    return n_correct / n_total if n_total else 0.0


def scene_id(spec: SceneSpec) -> str:
    blob = json.dumps(spec.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class EvalConfig:
    scenes: list[SceneSpec]
    policies: tuple[str, ...] = ("none",)
    accuracy_threshold_deg: float = 5.0
    front_back_window_deg: float = 20.0
    hemifield: str = "full"
    condition: str = "default"
    seed: int = 0

    def __post_init__(self):
        if self.accuracy_threshold_deg < 0 or self.front_back_window_deg < 0:
            raise ValueError("threshold and front-back window must be non-negative")
        if not self.scenes:
            raise ValueError("no scenes to evaluate")
        for s in self.scenes:
            s.validate_for_evaluation()
        LocalizerConfig(hemifield=self.hemifield)

    def to_dict(self) -> dict:
        return {
            "scenes": [s.to_dict() for s in self.scenes],
            "policies": list(self.policies),
            "accuracy_threshold_deg": self.accuracy_threshold_deg,
            "front_back_window_deg": self.front_back_window_deg,
            "hemifield": self.hemifield,
            "condition": self.condition,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "EvalConfig":
        scenes = [SceneSpec.from_dict(s, base_dir) for s in d["scenes"]]
        keys = ("accuracy_threshold_deg", "front_back_window_deg", "hemifield", "condition", "seed")
        kw = {k: d[k] for k in keys if k in d}
        if "policies" in d:
            kw["policies"] = tuple(d["policies"])
        return cls(scenes, **kw)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class SceneOutcome:
    scene_id: str
    policy: str
    n_sources: int
    true_az: list[float]
    est_az: list[float] = field(default_factory=list)
    n_correct: int = 0
    n_front_back: int = 0
    rotation_deg: float = 0.0
    ambiguous: bool = False
    error: str | None = None


@dataclass
class EvalReport:
    condition: str
    outcomes: list[SceneOutcome]
    summary: dict
    histograms: dict
    metadata: dict

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "summary": self.summary,
            "histograms": self.histograms,
            "metadata": self.metadata,
            "scenes": [asdict(o) for o in self.outcomes],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for o in self.outcomes:
            w.writerow([o.scene_id, self.condition, o.policy, o.n_sources,
                        " ".join(f"{a:g}" for a in o.true_az),
                        " ".join(f"{a:g}" for a in o.est_az), o.n_correct, o.n_front_back])
        return buf.getvalue()

    def save(self, directory) -> tuple[Path, Path]:
        from .signal_io import atomic_write_text
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        jp, cp = directory / "report.json", directory / "report.csv"
        atomic_write_text(jp, self.to_json())
        atomic_write_text(cp, self.to_csv())
        return jp, cp

    def accuracy(self, policy: str, n_sources: int | None = None) -> float:
        key = "all" if n_sources is None else str(n_sources)
        return self.summary[policy][key]["accuracy"]

    def front_back_errors(self, policy: str, n_sources: int | None = None) -> int:
        key = "all" if n_sources is None else str(n_sources)
        return self.summary[policy][key]["front_back_errors"]

    def errors(self, policy: str, n_sources: int | None = None) -> int:
        key = "all" if n_sources is None else str(n_sources)
        s = self.summary[policy][key]
        return s["sources"] - s["correct"]


def _rotation_seed(seed: int, sid: str) -> int:
    return int(np.random.SeedSequence([seed, int(sid, 16)]).generate_state(1)[0])


def _evaluate_scene(args) -> SceneOutcome:
    spec, policy, models, catalog, cfg = args
    sid = scene_id(spec)
    true_az = spec.world_azimuths()
    out = SceneOutcome(sid, policy, len(true_az), true_az)
    try:
        res = localize(None, models, len(true_az), policy, Scene(spec, catalog),
                       seed=_rotation_seed(cfg.seed, sid),
                       cfg=LocalizerConfig(hemifield=cfg.hemifield))
    except Exception as exc:  # one bad scene must not abort the batch
        out.error = f"{type(exc).__name__}: {exc}"
        return out
    pairs, n_ok = match_estimates(true_az, res.azimuths_deg, cfg.accuracy_threshold_deg)
    out.est_az = [e for _, e in pairs]
    out.n_correct = n_ok
    out.n_front_back = sum(
        angular_distance(t, e) > cfg.accuracy_threshold_deg
        and is_front_back_error(t, e, cfg.front_back_window_deg) for t, e in pairs)
    out.rotation_deg = res.rotation_deg
    out.ambiguous = res.ambiguous
    return out


def _tally(outcomes) -> dict:
    ok = [o for o in outcomes if o.error is None]
    n = sum(o.n_sources for o in ok)
    c = sum(o.n_correct for o in ok)
    fb = sum(o.n_front_back for o in ok)
    return {"scenes": len(ok), "failed": len(outcomes) - len(ok), "sources": n, "correct": c,
            "accuracy": accuracy(c, n), "front_back_errors": fb,
            "front_back_rate": accuracy(fb, n), "error_rate": accuracy(n - c, n)}


def _histogram(outcomes, cfg: EvalConfig) -> dict:
    nbins = 360 // HISTOGRAM_BIN_DEG
    h = {k: [0] * nbins for k in ("sources", "correct", "front_back", "other_errors")}
    for o in outcomes:
        if o.error is not None:
            continue
        for t, e in zip(o.true_az, o.est_az):
            b = int(wrap_deg(t) // HISTOGRAM_BIN_DEG)
            h["sources"][b] += 1
            if angular_distance(t, e) <= cfg.accuracy_threshold_deg:
                h["correct"][b] += 1
            elif is_front_back_error(t, e, cfg.front_back_window_deg):
                h["front_back"][b] += 1
            else:
                h["other_errors"][b] += 1
    h["bin_edges_deg"] = list(range(0, 361, HISTOGRAM_BIN_DEG))
    return h


def run_experiment(cfg: EvalConfig, models, catalog: HrirCatalog, threads: int = 1) -> EvalReport:
    """Evaluate every policy on the same scene list; aggregation ignores scene order."""
    jobs = [(spec, p, models, catalog, cfg) for p in cfg.policies for spec in cfg.scenes]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_evaluate_scene, jobs))
    else:
        outcomes = [_evaluate_scene(j) for j in jobs]
    outcomes.sort(key=lambda o: (o.policy, o.n_sources, o.scene_id))
    for o in outcomes:
        if o.error:
            log.warning("scene %s (%s) failed: %s", o.scene_id, o.policy, o.error)
    summary, hist = {}, {}
    for p in cfg.policies:
        mine = [o for o in outcomes if o.policy == p]
        summary[p] = {"all": _tally(mine)}
        for k in sorted({o.n_sources for o in mine}):
            summary[p][str(k)] = _tally([o for o in mine if o.n_sources == k])
        hist[p] = _histogram(mine, cfg)
    meta = {"config_hash": cfg.hash(), "version": __version__,
            "model_kind": getattr(models, "kind", None),
            "model_layout": getattr(models, "layout", None),
            "catalog": catalog.label, "num_scenes": len(cfg.scenes)}
    return EvalReport(cfg.condition, outcomes, summary, hist, meta)


def make_scene_set(num_scenes: int, num_sources: int, seed: int, hemifield: str = "full",
                   duration_s: float = 1.0, snr_db: float | None = None,
                   kind: str = "harmonic", min_separation_deg: float = 10.0,
                   step_deg: int = 5) -> list[SceneSpec]:
    """Random scenes on the grid; source positions at least `min_separation_deg` apart."""
    if not 1 <= num_sources <= 3:
        raise ValueError("scenes hold 1-3 sources")
    if hemifield == "full":
        candidates = np.arange(0, 360, step_deg)
    elif hemifield == "frontal":
        candidates = np.arange(-90, 91, step_deg) % 360
    else:
        raise ValueError(f"unknown hemifield {hemifield!r}")
    rng = np.random.default_rng(seed)
    scenes = []
    for i in range(num_scenes):
        while True:
            az = rng.choice(candidates, size=num_sources, replace=False)
            if all(angular_distance(a, b) >= min_separation_deg
                   for a, b in itertools.combinations(az, 2)):
                break
        srcs = [SourceSpec(int(a), generator={"kind": kind, "duration_s": duration_s,
                                              "seed": int(rng.integers(2**31))})
                for a in az]
        noise = None if snr_db is None else {"snr_db": float(snr_db)}
        scenes.append(SceneSpec(srcs, diffuse_noise=noise, seed=int(rng.integers(2**31)),
                                duration_s=duration_s))
    return scenes
