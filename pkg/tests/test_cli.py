import json
import re

import numpy as np
import pytest

from binloc.cli import build_parser, main
from binloc.signal_io import write_wav
from binloc.spatializer import HrirCatalog, Scene, SceneSpec, SourceSpec


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-catalog, build-mct and train once, at toy size."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-catalog", "--out", str(root / "cat"), "--asymmetry", "0.3"]) == 0
    assert main(["build-mct", "--catalog", str(root / "cat"), "--out", str(root / "feat"),
                 "--desk-items", "3", "--sentences", "1", "--clean", "--threads", "1"]) == 0
    assert main(["train", "--features", str(root / "feat"), "--out", str(root / "model"),
                 "--model", "gmm", "--components", "4", "--threads", "1"]) == 0
    return root


def test_gen_catalog_writes_144_wavs(pipeline):
    cat = pipeline / "cat"
    assert len(list(cat.glob("*.wav"))) == 144
    assert (cat / "manifest.json").exists()
    cfg = json.loads((cat / "config.json").read_text())
    assert cfg["head"]["shadow_asymmetry"] == 0.3
    assert not list(cat.glob("*.tmp*"))


def test_gen_catalog_is_reproducible(pipeline, tmp_path):
    assert main(["gen-catalog", "--out", str(tmp_path), "--asymmetry", "0.3"]) == 0
    for p in (pipeline / "cat").glob("*.wav"):
        assert (tmp_path / p.name).read_bytes() == p.read_bytes()


def _scene_file(path, catalog, azimuths):
    srcs = [SourceSpec(a, generator={"kind": "harmonic", "seed": i, "duration_s": 1.0})
            for i, a in enumerate(azimuths)]
    spec = SceneSpec(srcs, catalog_ref=str(catalog))
    path.write_text(json.dumps(spec.to_dict()))
    return spec


def test_localize_scene_prints_json(pipeline, tmp_path, capsys):
    scene = tmp_path / "scene.json"
    _scene_file(scene, pipeline / "cat", [20, 200])
    code = main(["localize", "--model", str(pipeline / "model"), "--scene", str(scene),
                 "--sources", "2", "--policy", "rotate", "--seed", "3",
                 "--out", str(tmp_path / "res")])
    assert code == 0
    res = json.loads(capsys.readouterr().out)
    assert len(res["azimuths_deg"]) == 2
    assert {"azimuths_deg", "masses", "rotation_deg", "ambiguous"} <= set(res)
    saved = json.loads((tmp_path / "res" / "result.json").read_text())
    assert saved == res


def test_localize_wav_input(pipeline, tmp_path, capsys):
    spec = _scene_file(tmp_path / "s.json", pipeline / "cat", [30])
    write_wav(tmp_path / "mix.wav", Scene(spec, HrirCatalog.load(pipeline / "cat")).render())
    code = main(["localize", "--model", str(pipeline / "model"), "--input",
                 str(tmp_path / "mix.wav"), "--sources", "1"])
    assert code == 0
    assert len(json.loads(capsys.readouterr().out)["azimuths_deg"]) == 1


def test_usage_errors_exit_2(pipeline, tmp_path, capsys):
    wav = tmp_path / "x.wav"
    write_wav(wav, Scene(_scene_file(tmp_path / "s.json", pipeline / "cat", [0]),
                         HrirCatalog.load(pipeline / "cat")).render())
    assert main(["localize", "--model", str(pipeline / "model"), "--input", str(wav),
                 "--sources", "1", "--policy", "rotate"]) == 2
    assert "usage error" in capsys.readouterr().err
    assert main(["gen-catalog"]) == 2
    assert main(["train", "--bogus"]) == 2
    assert main([]) == 2


def test_runtime_errors_exit_1(pipeline, tmp_path, capsys):
    assert main(["localize", "--model", str(tmp_path / "nope"), "--input", "x.wav",
                 "--sources", "1"]) == 1
    assert "file error" in capsys.readouterr().err
    assert main(["gen-catalog", "--out", str(tmp_path / "c"), "--asymmetry", "3"]) == 1
    assert "invalid input" in capsys.readouterr().err


def test_train_then_evaluate(pipeline, tmp_path, capsys):
    cfg = {"generate": {"num_scenes": 3, "num_sources": 1, "seed": 4, "duration_s": 0.5},
           "policies": ["none", "rotate"], "model": str(pipeline / "model"),
           "catalog": str(pipeline / "cat")}
    (tmp_path / "eval.json").write_text(json.dumps(cfg))
    out = tmp_path / "rep"
    assert main(["evaluate", "--config", str(tmp_path / "eval.json"), "--out", str(out),
                 "--threads", "1"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["summary"]) == {"none", "rotate"}
    rows = (out / "report.csv").read_text().splitlines()
    assert len(rows) == 1 + 6
    first = (out / "report.json").read_bytes()
    assert main(["evaluate", "--config", str(tmp_path / "eval.json"), "--out", str(out),
                 "--threads", "1"]) == 0
    assert (out / "report.json").read_bytes() == first
    assert "accuracy" in capsys.readouterr().out


def test_help_documents_every_flag(capsys):
    parser = build_parser()
    subs = parser._subparsers._group_actions[0].choices
    for name, sp in subs.items():
        assert main([name, "--help"]) == 0
        text = capsys.readouterr().out
        for action in sp._actions:
            for opt in action.option_strings:
                assert re.search(re.escape(opt) + r"\b", text), (name, opt)
            if action.option_strings and action.help is not None:
                assert action.help.strip(), (name, action.option_strings)
