"""A set of 32 band classifiers plus the front-end configuration they expect."""

from __future__ import annotations

import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import NUM_AZIMUTHS, SAMPLE_RATE_HZ
from ..frontend import FeatureGrid, FeatureSet, FilterbankConfig, FrameConfig
from ..signal_io import atomic_path, atomic_write_text
from .gmm import DiagonalGmm, GmmBandModel, gmm_train
from .mlp import MlpBandModel, TrainSchedule, mlp_train
from .normalizer import Normalizer

BUNDLE_FORMAT = "binloc-models/1"
LAYOUTS = ("ccf+ild", "ccf", "itd+ild", "itd", "ild")


def flat_layout(fs: FeatureSet, layout: str) -> np.ndarray:
    """(n, D) classifier input from a flat feature set."""
    return _select(fs.x, fs.itd_s, layout)


def grid_layout(g: FeatureGrid, layout: str) -> np.ndarray:
    """(T, B, D) classifier input from a feature grid."""
    return _select(g.vectors(), g.itd_s, layout)


def _select(x34: np.ndarray, itd_s: np.ndarray, layout: str) -> np.ndarray:
    itd_ms = 1000.0 * np.asarray(itd_s, dtype=np.float64)[..., None]
    x34 = np.asarray(x34, dtype=np.float64)
    if layout == "ccf+ild":
        return x34
    if layout == "ccf":
        return x34[..., :-1]
    if layout == "itd+ild":
        return np.concatenate([itd_ms, x34[..., -1:]], axis=-1)
    if layout == "itd":
        return itd_ms
    if layout == "ild":
        return x34[..., -1:]
    raise ValueError(f"unknown feature layout {layout!r}; expected one of {LAYOUTS}")


def band_seed(seed: int, band: int) -> int:
    return int(np.random.SeedSequence([seed, band]).generate_state(1)[0])


@dataclass
class ModelBundle:
    kind: str  # "dnn" or "gmm"
    layout: str
    bands: list
    filterbank: FilterbankConfig = field(default_factory=FilterbankConfig)
    frame: FrameConfig = field(default_factory=FrameConfig)
    sample_rate_hz: int = SAMPLE_RATE_HZ
    info: dict = field(default_factory=dict)

    @property
    def num_bands(self) -> int:
        return len(self.bands)

    def band_posteriors(self, grid: FeatureGrid) -> np.ndarray:
        """(T, B, 72) per-band posteriors; silent cells are NaN."""
        x = grid_layout(grid, self.layout)
        out = np.full((grid.num_frames, grid.num_bands, NUM_AZIMUTHS), np.nan)
        for f, model in enumerate(self.bands):
            ok = ~grid.silent[:, f]
            if ok.any():
                out[ok, f] = model.posteriors(x[ok, f])
        return out

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for f, m in enumerate(self.bands):
            name = f"band_{f:02d}.npz"
            buf = io.BytesIO()
            np.savez(buf, **_band_arrays(m))
            with atomic_path(directory / name) as tmp:
                tmp.write_bytes(buf.getvalue())
            entries.append({"band": f, "file": name})
        manifest = {
            "format": BUNDLE_FORMAT,
            "kind": self.kind,
            "layout": self.layout,
            "num_bands": self.num_bands,
            "filterbank": asdict(self.filterbank),
            "frame": asdict(self.frame),
            "sample_rate": self.sample_rate_hz,
            "bands": entries,
            "info": self.info,
        }
        if self.kind == "dnn":
            manifest["layer_sizes"] = self.bands[0].sizes
        path = directory / "manifest.json"
        atomic_write_text(path, json.dumps(manifest, indent=1, sort_keys=True))
        return path

    @classmethod
    def load(cls, directory) -> "ModelBundle":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        if manifest.get("format") != BUNDLE_FORMAT:
            raise ValueError(f"unsupported model bundle format {manifest.get('format')!r}")
        kind = manifest["kind"]
        bands = []
        for entry in sorted(manifest["bands"], key=lambda e: e["band"]):
            with np.load(directory / entry["file"], allow_pickle=False) as z:
                bands.append(_band_from_arrays(kind, dict(z), entry["band"]))
        return cls(kind, manifest["layout"], bands, FilterbankConfig(**manifest["filterbank"]),
                   FrameConfig(**manifest["frame"]), int(manifest["sample_rate"]),
                   manifest.get("info", {}))


def _band_arrays(m) -> dict:
    if isinstance(m, MlpBandModel):
        d = {"mean": m.normalizer.mean, "std": m.normalizer.std}
        if m.class_prior is not None:
            d["class_prior"] = m.class_prior
        for i, (w, b) in enumerate(m.layers):
            d[f"W{i}"], d[f"b{i}"] = w, b
        return d
    return {
        "weights": np.stack([g.weights for g in m.mixtures]),
        "means": np.stack([g.means for g in m.mixtures]),
        "variances": np.stack([g.variances for g in m.mixtures]),
        "variance_floor": np.asarray(m.variance_floor),
    }


def _band_from_arrays(kind: str, z: dict, band: int):
    if kind == "dnn":
        n = sum(1 for k in z if k.startswith("W"))
        layers = [(z[f"W{i}"], z[f"b{i}"]) for i in range(n)]
        return MlpBandModel(layers, Normalizer(z["mean"], z["std"]), band, z.get("class_prior"))
    if kind == "gmm":
        mix = [DiagonalGmm(w, m, v) for w, m, v in zip(z["weights"], z["means"], z["variances"])]
        return GmmBandModel(mix, band, z["variance_floor"])
    raise ValueError(f"unknown model kind {kind!r}")


def _train_one(args):
    kind, layout, x, labels, seed, band, schedule, num_components = args
    if kind == "dnn":
        model, _ = mlp_train(x, labels, schedule, seed=seed, band=band)
    else:
        model, _ = gmm_train(x, labels, num_components=num_components, seed=seed, band=band)
    return model


def default_threads() -> int:
    env = os.environ.get("BINLOC_THREADS")
    return int(env) if env else (os.cpu_count() or 1)


def train_bundle(features: FeatureSet, kind: str = "dnn", layout: str = "ccf+ild",
                 schedule: TrainSchedule = TrainSchedule(), seed: int = 0,
                 threads: int | None = 1, num_components: int = 16,
                 filterbank: FilterbankConfig | None = None,
                 frame: FrameConfig | None = None) -> ModelBundle:
    """Train every band independently; results do not depend on `threads`."""
    if features.labels is None:
        raise ValueError("training features carry no azimuth labels")
    if kind not in ("dnn", "gmm"):
        raise ValueError(f"unknown model kind {kind!r}")
    hdr = features.header
    fb = filterbank or FilterbankConfig(**hdr.get("filterbank", {}))
    fr = frame or FrameConfig(**hdr.get("frame", {}))
    x_all = flat_layout(features, layout)
    labels = features.labels["azimuth_deg"].astype(np.int64)
    jobs = []
    for f in range(fb.num_bands):
        m = features.band == f
        jobs.append((kind, layout, x_all[m], labels[m], band_seed(seed, f), f, schedule,
                     num_components))
    threads = default_threads() if threads is None else threads
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            bands = list(pool.map(_train_one, jobs))
    else:
        bands = [_train_one(j) for j in jobs]
    info = {"seed": seed, "num_components": num_components if kind == "gmm" else None,
            "schedule": asdict(schedule) if kind == "dnn" else None}
    return ModelBundle(kind, layout, bands, fb, fr, hdr.get("sample_rate", SAMPLE_RATE_HZ), info)
