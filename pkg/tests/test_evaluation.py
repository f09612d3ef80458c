import json
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from binloc.evaluation import (
    EvalConfig,
    EvalReport,
    angular_distance,
    is_front_back_error,
    make_scene_set,
    match_estimates,
    mirror_azimuth,
    run_experiment,
    scene_id,
)
from binloc.spatializer import SceneSpec, SourceSpec


def test_angular_distance_examples():
    assert angular_distance(355, 0) == 5.0
    assert angular_distance(0, 355) == 5.0
    assert angular_distance(90, 270) == 180.0
    assert angular_distance(-50, 310) == 0.0
    assert angular_distance(720, 5) == 5.0


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_angular_distance_symmetric_and_bounded(a, b):
    d = angular_distance(a, b)
    assert 0 <= d <= 180
    assert d == angular_distance(b, a)


def test_match_examples():
    # 20 is exactly 5 from 15, and the threshold is inclusive
    _, n = match_estimates([-50, -30, 15], [-50, -30, 20])
    assert n == 3
    _, n = match_estimates([-50, -30, 15], [-50, -30, 25])
    assert n / 3 == 2 / 3
    _, n = match_estimates([-50, -30, 15], [15, -50, -30])
    assert n == 3
    _, n = match_estimates([0, 120], [10, 135])
    assert n == 0
    pairs, _ = match_estimates([10, 20], [22, 9])
    assert pairs == [(10.0, 9.0), (20.0, 22.0)]
    with pytest.raises(ValueError):
        match_estimates([0, 10], [0])


def test_threshold_is_inclusive():
    assert match_estimates([30], [35])[1] == 1
    assert match_estimates([30], [35.001])[1] == 0


@given(st.lists(st.integers(0, 71), min_size=1, max_size=3, unique=True),
       st.lists(st.integers(0, 71), min_size=3, max_size=3), st.randoms())
def test_accuracy_permutation_invariant(true_bins, est_bins, rnd):
    true = [5 * b for b in true_bins]
    est = [5 * b for b in est_bins[:len(true)]]
    shuffled = est[:]
    rnd.shuffle(shuffled)
    assert match_estimates(true, est)[1] == match_estimates(true, shuffled)[1]


def test_front_back_examples():
    assert is_front_back_error(30, 150)
    assert is_front_back_error(30, 135)
    assert not is_front_back_error(30, 100)
    assert is_front_back_error(0, 180)
    assert is_front_back_error(90, 90)


def test_mirror_geometry():
    assert mirror_azimuth(30) == 150
    assert mirror_azimuth(0) == 180
    assert mirror_azimuth(90) == 90
    assert mirror_azimuth(300) == 240
    for k in range(0, 360, 5):
        assert mirror_azimuth(mirror_azimuth(k)) == k


def test_config_validation():
    scenes = make_scene_set(2, 1, seed=0)
    with pytest.raises(ValueError):
        EvalConfig(scenes, accuracy_threshold_deg=-1)
    with pytest.raises(ValueError):
        EvalConfig([])
    with pytest.raises(ValueError):
        EvalConfig(scenes, hemifield="up")
    cfg = EvalConfig(scenes, policies=("none", "rotate"), seed=3)
    back = EvalConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back.hash() == cfg.hash()


def test_scene_set():
    a = make_scene_set(20, 3, seed=1, hemifield="frontal")
    assert a == make_scene_set(20, 3, seed=1, hemifield="frontal")
    for s in a:
        az = s.world_azimuths()
        assert len(az) == 3
        assert all(x <= 90 or x >= 270 for x in az)
        assert all(angular_distance(x, y) >= 10 for i, x in enumerate(az) for y in az[i + 1:])
    assert len({scene_id(s) for s in a}) == 20
    with pytest.raises(ValueError):
        make_scene_set(1, 4, seed=0)


class FakeModels:
    """Stand-in for a model bundle; only used through `localize`."""


@pytest.fixture(scope="module")
def report_inputs(small_model, sym_head):
    scenes = make_scene_set(4, 1, seed=7, duration_s=0.5) + make_scene_set(2, 2, seed=8,
                                                                           duration_s=0.5)
    return scenes, small_model, sym_head


def test_report_invariants(report_inputs):
    scenes, model, cat = report_inputs
    rep = run_experiment(EvalConfig(scenes, policies=("none", "rotate")), model, cat)
    for p in ("none", "rotate"):
        s = rep.summary[p]["all"]
        assert 0 <= s["accuracy"] <= 1
        assert s["front_back_rate"] <= s["error_rate"]
        assert s["scenes"] == 6 and s["sources"] == 8
        h = rep.histograms[p]
        assert len(h["sources"]) == 18 and sum(h["sources"]) == 8
        assert sum(h["correct"]) + sum(h["front_back"]) + sum(h["other_errors"]) == 8
    rows = rep.to_csv().splitlines()
    assert rows[0] == ("scene_id,condition,policy,n_sources,true_az,est_az,n_correct,"
                       "n_front_back")
    assert len(rows) == 13
    assert rep.metadata["config_hash"]
    assert json.loads(rep.to_json())["summary"]["none"]["all"]["sources"] == 8


def test_report_byte_identical_and_order_free(report_inputs, tmp_path):
    scenes, model, cat = report_inputs
    a = run_experiment(EvalConfig(scenes, policies=("rotate",)), model, cat)
    shuffled = scenes[:]
    random.Random(0).shuffle(shuffled)
    b = run_experiment(EvalConfig(shuffled, policies=("rotate",)), model, cat)
    assert a.summary == b.summary and a.histograms == b.histograms
    assert a.to_csv() == b.to_csv()
    c = run_experiment(EvalConfig(scenes, policies=("rotate",)), model, cat, threads=2)
    assert c.to_json() == a.to_json()
    a.save(tmp_path / "a")
    c.save(tmp_path / "c")
    for name in ("report.json", "report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()


def test_failed_scene_is_recorded(report_inputs):
    scenes, _, cat = report_inputs
    rep = run_experiment(EvalConfig(scenes[:2]), FakeModels(), cat)
    assert rep.summary["none"]["all"]["failed"] == 2
    assert all(o.error for o in rep.outcomes)
    assert rep.summary["none"]["all"]["accuracy"] == 0.0


def test_zero_errors_means_zero_front_back():
    s = SceneSpec([SourceSpec(0, generator={"kind": "white", "seed": 0, "duration_s": 0.5})])
    o = {"scenes": 1, "failed": 0, "sources": 1, "correct": 1, "accuracy": 1.0,
         "front_back_errors": 0, "front_back_rate": 0.0, "error_rate": 0.0}
    rep = EvalReport("x", [], {"none": {"all": o}}, {}, {})
    assert rep.front_back_errors("none") == 0 and rep.errors("none") == 0
    assert scene_id(s) == scene_id(SceneSpec.from_dict(s.to_dict()))
