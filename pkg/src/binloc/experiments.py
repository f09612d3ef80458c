"""Desk-scale experiments on the synthetic spherical head.

Everything here is seeded; a trained model is a pure function of its setup, so
bundles can be cached on disk under a key derived from the setup.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from pathlib import Path

from .evaluation import EvalConfig, EvalReport, make_scene_set, run_experiment
from .frontend import FeatureSet
from .material import desk_material
from .mct import MctConfig, build_training_set
from .models import ModelBundle, TrainSchedule, train_bundle
from .spatializer import HrirCatalog, SphericalHeadParams, generate_spherical_catalog

log = logging.getLogger(__name__)

NUM_SCENES = 50
SCENE_SECONDS = 1.0


@dataclass(frozen=True)
class DeskSetup:
    asymmetry: float = 0.3
    clean: bool = False
    layout: str = "ccf+ild"
    sentences_per_azimuth: int = 10
    material_items: int = 30
    burst_s: float = 0.25
    seed: int = 0
    max_epochs_per_phase: int | None = None

    def key(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


MCT_ASYM = DeskSetup()
CLEAN_ASYM = replace(MCT_ASYM, clean=True)
MCT_CCF_ONLY = replace(MCT_ASYM, layout="ccf")
MCT_SYMMETRIC = replace(MCT_ASYM, asymmetry=0.0)


@lru_cache(maxsize=None)
def desk_catalog(asymmetry: float) -> HrirCatalog:
    return generate_spherical_catalog(SphericalHeadParams(shadow_asymmetry=asymmetry))


@lru_cache(maxsize=4)
def _features(asymmetry, clean, sentences, items, burst_s, seed) -> FeatureSet:
    material = desk_material(items, burst_s, seed)
    cfg = MctConfig(clean=clean, sentences_per_azimuth=sentences, seed=seed)
    return build_training_set(material, desk_catalog(asymmetry), cfg)


def desk_features(setup: DeskSetup) -> FeatureSet:
    # the layout only selects columns, so MCT sets are shared across layouts
    return _features(setup.asymmetry, setup.clean, setup.sentences_per_azimuth,
                     setup.material_items, setup.burst_s, setup.seed)


def desk_model(setup: DeskSetup, cache_dir=None) -> ModelBundle:
    """Train (or load a cached copy of) the DNN bundle for `setup`."""
    path = None if cache_dir is None else Path(cache_dir) / setup.key()
    if path is not None and (path / "manifest.json").exists():
        return ModelBundle.load(path)
    schedule = TrainSchedule(max_epochs_per_phase=setup.max_epochs_per_phase)
    bundle = train_bundle(desk_features(setup), "dnn", setup.layout, schedule, seed=setup.seed,
                          threads=1)
    bundle.info["desk_setup"] = asdict(setup)
    if path is not None:
        bundle.save(path)
    return bundle


def scene_set(hemifield: str, num_sources: int = 1, snr_db: float | None = None,
              seed: int = 1000) -> list:
    return make_scene_set(NUM_SCENES, num_sources, seed=seed + 10 * num_sources,
                          hemifield=hemifield, duration_s=SCENE_SECONDS, snr_db=snr_db)


def evaluate(models: ModelBundle, asymmetry: float, scenes, policies=("none",),
             hemifield: str = "full", condition: str = "desk") -> EvalReport:
    cfg = EvalConfig(scenes, policies=tuple(policies), hemifield=hemifield, condition=condition)
    return run_experiment(cfg, models, desk_catalog(asymmetry))


# one function per trend criterion; each returns (passed, details)

def frontal_accuracy(cache_dir=None) -> tuple[bool, dict]:
    rep = evaluate(desk_model(MCT_ASYM, cache_dir), MCT_ASYM.asymmetry, scene_set("frontal"),
                   hemifield="frontal", condition="frontal-1src")
    acc = rep.accuracy("none")
    return acc >= 0.98, {"accuracy": acc}


def head_movement_benefit(cache_dir=None) -> tuple[bool, dict]:
    rep = evaluate(desk_model(MCT_SYMMETRIC, cache_dir), 0.0, scene_set("full"),
                   policies=("none", "rotate"), condition="symmetric-1src")
    fb0, fb1 = rep.front_back_errors("none"), rep.front_back_errors("rotate")
    e0, e1 = rep.errors("none"), rep.errors("rotate")
    reduced = fb1 <= 0.2 * fb0 if fb0 else fb1 == 0
    return reduced and e1 <= e0 + 1, {"front_back_none": fb0, "front_back_rotate": fb1,
                                      "errors_none": e0, "errors_rotate": e1}


def mct_benefit(cache_dir=None) -> tuple[bool, dict]:
    mct = desk_model(MCT_ASYM, cache_dir)
    clean = desk_model(CLEAN_ASYM, cache_dir)
    out, ok = {}, True
    for k in (1, 2, 3):
        scenes = scene_set("full", k, snr_db=0.0)
        a_mct = evaluate(mct, 0.3, scenes, condition=f"0dB-{k}src").accuracy("none")
        a_clean = evaluate(clean, 0.3, scenes, condition=f"0dB-{k}src").accuracy("none")
        out[f"{k}src"] = {"mct": a_mct, "clean": a_clean}
        ok &= a_mct > a_clean if k >= 2 else a_mct >= a_clean
    return ok, out


def ild_contribution(cache_dir=None) -> tuple[bool, dict]:
    scenes = scene_set("full")
    both = evaluate(desk_model(MCT_ASYM, cache_dir), 0.3, scenes).front_back_errors("none")
    ccf = evaluate(desk_model(MCT_CCF_ONLY, cache_dir), 0.3, scenes).front_back_errors("none")
    return both < ccf, {"front_back_ccf_ild": both, "front_back_ccf": ccf}


TREND_CRITERIA = {
    "frontal single-source accuracy": frontal_accuracy,
    "head movement removes front-back errors": head_movement_benefit,
    "multi-conditional training helps in noise": mct_benefit,
    "ILD reduces front-back errors": ild_contribution,
}
