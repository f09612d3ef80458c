"""Command-line entry point: ``binloc <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .evaluation import EvalConfig, make_scene_set, run_experiment
from .frontend import FeatureSet
from .localization import LocalizerConfig, localize
from .material import desk_material
from .mct import MctConfig, build_training_set
from .models import LAYOUTS, ModelBundle, TrainSchedule, train_bundle
from .models.bundle import default_threads
from .signal_io import BinauralSignal, MonoSignal, atomic_write_text, read_wav
from .spatializer import HrirCatalog, Scene, SceneSpec, SphericalHeadParams, generate_spherical_catalog

log = logging.getLogger("binloc")

FEATURES_FILE = "features.blfd"


class UsageError(Exception):
    """Bad combination of flags detected after parsing."""


def _write_config(out: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
           if k != "func"}
    cfg["version"] = __version__
    if extra:
        cfg.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.json", json.dumps(cfg, indent=1, sort_keys=True, default=str))


def _require_out(args) -> Path:
    if args.out is None:
        raise UsageError(f"{args.command} needs --out")
    return Path(args.out)


def cmd_gen_catalog(args) -> int:
    out = _require_out(args)
    params = SphericalHeadParams(args.head_radius, args.speed_of_sound, args.asymmetry)
    cat = generate_spherical_catalog(params)
    cat.save(out)
    _write_config(out, args, {"head": asdict(params)})
    log.info("wrote %d azimuths to %s", len(cat.entries), out)
    return 0


def _load_material(args) -> list[MonoSignal]:
    if args.material is None:
        return desk_material(args.desk_items, args.desk_duration, args.seed)
    items = []
    for p in sorted(Path(args.material).glob("*.wav")):
        s = read_wav(p)
        if isinstance(s, BinauralSignal):
            raise ValueError(f"training material {p} must be mono")
        items.append(s)
    if not items:
        raise ValueError(f"no .wav files in {args.material}")
    return items


def cmd_build_mct(args) -> int:
    out = _require_out(args)
    cat = HrirCatalog.load(args.catalog)
    cfg = MctConfig(snrs_db=tuple(args.snrs), clean=args.clean, gate_snr_db=args.gate,
                    sentences_per_azimuth=args.sentences, seed=args.seed)
    fs = build_training_set(_load_material(args), cat, cfg)
    out.mkdir(parents=True, exist_ok=True)
    fs.save(out / FEATURES_FILE)
    _write_config(out, args, {"mct": asdict(cfg), "num_records": len(fs)})
    log.info("wrote %d feature cells to %s", len(fs), out)
    return 0


def cmd_train(args) -> int:
    out = _require_out(args)
    src = Path(args.features)
    fs = FeatureSet.load(src / FEATURES_FILE if src.is_dir() else src)
    schedule = TrainSchedule(max_epochs_per_phase=args.max_epochs)
    bundle = train_bundle(fs, args.model, args.layout, schedule, seed=args.seed,
                          threads=args.threads, num_components=args.components)
    bundle.save(out)
    _write_config(out, args, {"schedule": asdict(schedule)})
    return 0


def _scene_catalog(spec: SceneSpec, args) -> HrirCatalog:
    ref = args.catalog or spec.catalog_ref
    if ref is None:
        raise UsageError("the scene names no catalog; pass --catalog")
    p = Path(ref)
    if not p.is_absolute() and args.catalog is None and spec.base_dir:
        p = Path(spec.base_dir) / p
    return HrirCatalog.load(p)


def cmd_localize(args) -> int:
    if args.policy == "rotate" and args.scene is None:
        raise UsageError("--policy rotate needs --scene (head rotation re-renders the scene)")
    if (args.input is None) == (args.scene is None):
        raise UsageError("give exactly one of --input or --scene")
    models = ModelBundle.load(args.model)
    cfg = LocalizerConfig(hemifield=args.hemifield)
    if args.scene is not None:
        spec = SceneSpec.load(args.scene)
        scene = Scene(spec, _scene_catalog(spec, args))
        res = localize(None, models, args.sources, args.policy, scene, seed=args.seed, cfg=cfg)
    else:
        sig = read_wav(args.input)
        if not isinstance(sig, BinauralSignal):
            raise ValueError(f"{args.input} must be a two-channel recording")
        res = localize(sig, models, args.sources, args.policy, seed=args.seed, cfg=cfg)
    text = res.to_json()
    print(text)
    if args.out is not None:
        out = Path(args.out)
        _write_config(out, args)
        atomic_write_text(out / "result.json", text + "\n")
    return 0


def _eval_config(path: Path) -> tuple[EvalConfig, dict]:
    d = json.loads(path.read_text())
    if "scenes" not in d:
        gen = d.get("generate")
        if gen is None:
            raise ValueError(f"{path} needs 'scenes' or 'generate'")
        d = dict(d, scenes=[s.to_dict() for s in make_scene_set(**gen)])
    return EvalConfig.from_dict(d, base_dir=path.parent), d


def cmd_evaluate(args) -> int:
    out = _require_out(args)
    cfg_path = Path(args.config)
    cfg, raw = _eval_config(cfg_path)
    model_dir = args.model or raw.get("model")
    cat_dir = args.catalog or raw.get("catalog")
    if model_dir is None or cat_dir is None:
        raise UsageError("evaluate needs a model and a catalog (flags or config keys)")
    base = cfg_path.parent
    models = ModelBundle.load(base / model_dir if args.model is None else model_dir)
    cat = HrirCatalog.load(base / cat_dir if args.catalog is None else cat_dir)
    report = run_experiment(cfg, models, cat, threads=args.threads)
    report.save(out)
    _write_config(out, args, {"eval": cfg.to_dict()})
    for p in cfg.policies:
        s = report.summary[p]["all"]
        print(f"{p}: accuracy {s['accuracy']:.3f}, front-back errors {s['front_back_errors']}, "
              f"failed {s['failed']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker processes; defaults to $BINLOC_THREADS or the CPU count")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="binloc", description="Binaural multi-source azimuth "
                                "localization with per-band classifiers.")
    p.add_argument("--version", action="version", version=f"binloc {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-catalog", parents=[common], help="write a spherical-head HRIR catalog")
    g.add_argument("--head-radius", type=float, default=0.0875, help="head radius in metres")
    g.add_argument("--speed-of-sound", type=float, default=343.0, help="speed of sound in m/s")
    g.add_argument("--asymmetry", type=float, default=0.3,
                   help="front-back shadow asymmetry in [0, 1]; 0 gives mirror-identical cues")
    g.set_defaults(func=cmd_gen_catalog)

    b = sub.add_parser("build-mct", parents=[common], help="build a labeled training set")
    b.add_argument("--catalog", required=True, help="HRIR catalog directory")
    b.add_argument("--material", default=None,
                   help="directory of mono WAV training material (default: generated bursts)")
    b.add_argument("--desk-items", type=int, default=30,
                   help="number of generated bursts when --material is absent")
    b.add_argument("--desk-duration", type=float, default=0.25,
                   help="generated burst length in seconds")
    b.add_argument("--sentences", type=int, default=10, help="material items per azimuth")
    b.add_argument("--snrs", type=float, nargs="+", default=[20.0, 10.0, 0.0],
                   help="diffuse-noise SNRs in dB")
    b.add_argument("--gate", type=float, default=-5.0,
                   help="a priori SNR gate in dB; cells at or below it are dropped")
    b.add_argument("--clean", action="store_true", help="no noise and no gating")
    b.set_defaults(func=cmd_build_mct)

    t = sub.add_parser("train", parents=[common], help="train one classifier per band")
    t.add_argument("--features", required=True, help="build-mct output directory or dump file")
    t.add_argument("--model", choices=("dnn", "gmm"), default="dnn", help="classifier type")
    t.add_argument("--layout", choices=LAYOUTS, default="ccf+ild", help="feature layout")
    t.add_argument("--max-epochs", type=int, default=None,
                   help="cap on epochs per growth phase (dnn only)")
    t.add_argument("--components", type=int, default=16, help="mixture components (gmm only)")
    t.set_defaults(func=cmd_train)

    lo = sub.add_parser("localize", parents=[common], help="localize sources; JSON on stdout")
    lo.add_argument("--model", required=True, help="trained model directory")
    lo.add_argument("--input", default=None, help="two-channel WAV recording")
    lo.add_argument("--scene", default=None, help="scene JSON (needed for --policy rotate)")
    lo.add_argument("--catalog", default=None,
                    help="catalog directory for --scene (overrides its catalog_ref)")
    lo.add_argument("--sources", type=int, required=True, help="number of sources")
    lo.add_argument("--policy", choices=("none", "rotate"), default="none",
                    help="head-movement policy")
    lo.add_argument("--hemifield", choices=("full", "frontal"), default="full",
                    help="report azimuths from the full circle or the frontal half only")
    lo.set_defaults(func=cmd_localize)

    e = sub.add_parser("evaluate", parents=[common], help="score a batch of scenes")
    e.add_argument("--config", required=True, help="evaluation JSON config")
    e.add_argument("--model", default=None, help="model directory (overrides the config)")
    e.add_argument("--catalog", default=None, help="catalog directory (overrides the config)")
    e.set_defaults(func=cmd_evaluate)
    return p


def _category(exc: Exception) -> str:
    if isinstance(exc, (FileNotFoundError, PermissionError, IsADirectoryError)):
        return "file error"
    if isinstance(exc, (ValueError, KeyError, json.JSONDecodeError)):
        return "invalid input"
    return "runtime error"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is None:
        args.threads = default_threads()
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"binloc {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"binloc {args.command}: {_category(exc)}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
