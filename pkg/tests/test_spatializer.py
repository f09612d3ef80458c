import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.signal import correlate

from binloc.signal_io import MonoSignal, write_wav
from binloc.spatializer import (
    GRID,
    MAX_HEAD_ROTATION_DEG,
    AzimuthGrid,
    HrirCatalog,
    SceneSpec,
    SourceSpec,
    SphericalHeadParams,
    broadband_energy,
    compensate_levels,
    generate_spherical_catalog,
    make_diffuse_noise,
    mix_scene,
    rotate_head,
    spatialize,
    woodworth_itd,
)

RATE = 16000


@pytest.fixture(scope="module")
def sym_catalog():
    return generate_spherical_catalog(SphericalHeadParams(shadow_asymmetry=0.0))


@pytest.fixture(scope="module")
def catalog():
    return generate_spherical_catalog(SphericalHeadParams(shadow_asymmetry=0.3))


@pytest.fixture(scope="module")
def white():
    return MonoSignal(np.random.default_rng(7).standard_normal(RATE), RATE)


def measured_itd_samples(b):
    """Lag (samples) of the full cross-correlation peak; > 0 when the left ear leads."""
    c = correlate(b.right.samples, b.left.samples, mode="full", method="direct")
    return int(np.argmax(c)) - (len(b) - 1)


def test_grid():
    assert GRID.count * GRID.step_deg == 360
    assert GRID.values[0] == 0 and GRID.values[-1] == 355
    assert GRID.snap(-5) == 355
    assert GRID.snap(362.4) == 0
    with pytest.raises(ValueError):
        AzimuthGrid(step_deg=7)


def test_params_validation():
    with pytest.raises(ValueError):
        SphericalHeadParams(head_radius_m=0)
    with pytest.raises(ValueError):
        SphericalHeadParams(sound_speed_m_s=-1)
    with pytest.raises(ValueError):
        SphericalHeadParams(shadow_asymmetry=1.5)


def test_catalog_covers_grid(catalog):
    assert catalog.covers()
    for left, right in catalog.entries.values():
        assert left.shape == right.shape


def test_unit_impulse_reproduces_ir(catalog):
    imp = MonoSignal(np.r_[1.0, np.zeros(9)], RATE)
    for az in (0, 35, 270):
        out = spatialize(imp, az, catalog)
        left, right = catalog.pair(az)
        np.testing.assert_array_equal(out.left.samples[:left.size], left)
        np.testing.assert_array_equal(out.right.samples[:right.size], right)
        assert len(out) == 10 + catalog.ir_length - 1


def test_missing_entry_is_an_error(catalog):
    with pytest.raises(KeyError):
        catalog.pair(2.5)
    partial = HrirCatalog({0: catalog.pair(0)}, RATE)
    with pytest.raises(KeyError):
        spatialize(MonoSignal(np.ones(4), RATE), 90, partial)
    with pytest.raises(ValueError):
        partial.require_grid()


def test_woodworth_values():
    p = SphericalHeadParams()
    assert woodworth_itd(0, p) == 0.0
    expected = p.head_radius_m / p.sound_speed_m_s * (np.pi / 2 + 1)
    assert woodworth_itd(90, p) == pytest.approx(expected, rel=1e-12)
    assert woodworth_itd(270, p) == pytest.approx(-expected, rel=1e-12)
    assert woodworth_itd(30, p) == pytest.approx(woodworth_itd(150, p), rel=1e-12)


def test_left_leads_at_90(catalog, white):
    lag = measured_itd_samples(spatialize(white, 90, catalog))
    expected = 0.0875 / 343.0 * (np.pi / 2 + 1) * RATE
    assert lag > 0
    assert abs(lag - expected) <= 1


def test_measured_itd_matches_woodworth_everywhere(catalog, white):
    for az in GRID.values:
        lag = measured_itd_samples(spatialize(white, az, catalog))
        assert abs(lag - woodworth_itd(az) * RATE) <= 1, az


def test_front_is_symmetric(sym_catalog):
    left, right = sym_catalog.pair(0)
    np.testing.assert_array_equal(left, right)


def test_opposite_sides_mirror(catalog, white):
    a = spatialize(white, 90, catalog)
    b = spatialize(white, 270, catalog)
    assert measured_itd_samples(a) == -measured_itd_samples(b)
    for az in GRID.values:
        left, right = catalog.pair(az)
        ml, mr = catalog.pair(-az)
        np.testing.assert_array_equal(left, mr)
        np.testing.assert_array_equal(right, ml)


def test_front_back_pair_identical_without_asymmetry(sym_catalog, catalog):
    for az in (30, 60, 85):
        for i in range(2):
            np.testing.assert_allclose(sym_catalog.pair(az)[i], sym_catalog.pair(180 - az)[i],
                                       atol=1e-12)
    # with asymmetry the rear far ear is darker at high frequencies
    spec = lambda x: np.abs(np.fft.rfft(x, 512))[200:]
    assert spec(catalog.pair(120)[1]).sum() < spec(catalog.pair(60)[1]).sum()


def _scene(*azs, noise=None, seed=0):
    srcs = [SourceSpec(a, generator={"kind": "pink", "seed": 5, "duration_s": 0.2}) for a in azs]
    return SceneSpec(srcs, diffuse_noise=noise, seed=seed)


def test_mix_single_source_equals_spatialize(catalog):
    spec = _scene(40)
    src = spec.sources[0].load(RATE)
    np.testing.assert_array_equal(mix_scene(spec, catalog).stacked(),
                                  spatialize(src, 40, catalog).stacked())


def test_mirror_scene_channels_swap(sym_catalog):
    mix = mix_scene(_scene(30, -30), sym_catalog)
    np.testing.assert_allclose(mix.left.samples, mix.right.samples, atol=1e-15)


def test_mix_is_linear(catalog):
    s1 = SourceSpec(20, generator={"kind": "white", "seed": 1, "duration_s": 0.1})
    s2 = SourceSpec(200, generator={"kind": "white", "seed": 2, "duration_s": 0.1})
    a = mix_scene(SceneSpec([s1]), catalog).stacked()
    b = mix_scene(SceneSpec([s2]), catalog).stacked()
    both = mix_scene(SceneSpec([s1, s2]), catalog).stacked()
    np.testing.assert_array_equal(a + b, both)


def test_mix_noise_snr(catalog):
    clean = mix_scene(_scene(0, 90), catalog)
    for snr in (20.0, 0.0):
        noisy = mix_scene(_scene(0, 90, noise={"snr_db": snr}), catalog)
        resid = noisy.stacked() - clean.stacked()
        ratio = broadband_energy(clean) / np.mean(np.sum(resid**2, axis=1))
        assert 10 * np.log10(ratio) == pytest.approx(snr, abs=1e-9)
    again = mix_scene(_scene(0, 90, noise={"snr_db": 0.0}), catalog)
    np.testing.assert_array_equal(again.stacked(), noisy.stacked())


def test_three_talker_scene_is_valid():
    _scene(-50, -30, 15).validate_for_evaluation()
    with pytest.raises(ValueError):
        _scene(10, 15).validate_for_evaluation()
    with pytest.raises(ValueError):
        _scene(0, 90, 180, 270).validate_for_evaluation()
    with pytest.raises(ValueError):
        SourceSpec(0)


def test_diffuse_noise(sym_catalog):
    a = make_diffuse_noise(1.0, sym_catalog, seed=3)
    b = make_diffuse_noise(1.0, sym_catalog, seed=3)
    np.testing.assert_array_equal(a.stacked(), b.stacked())
    assert len(a) >= RATE
    long = make_diffuse_noise(10.0, sym_catalog, seed=4).stacked()
    ild = 10 * np.log10(np.sum(long[0] ** 2) / np.sum(long[1] ** 2))
    assert abs(ild) <= 0.5


def test_diffuse_noise_needs_full_grid(catalog):
    with pytest.raises(ValueError):
        make_diffuse_noise(0.1, HrirCatalog({0: catalog.pair(0)}, RATE), 0)


def test_rotate_head_examples():
    spec = _scene(60)
    assert rotate_head(spec, 30).head_relative_azimuths() == [30]
    assert rotate_head(spec, 0) is spec
    assert rotate_head(_scene(355), -10).head_relative_azimuths() == [5]
    assert rotate_head(spec, 30).world_azimuths() == [60.0]
    with pytest.raises(ValueError):
        rotate_head(spec, MAX_HEAD_ROTATION_DEG + 5)


@given(st.lists(st.integers(0, 71), min_size=1, max_size=3), st.integers(-6, 6),
       st.integers(0, 71))
def test_rotation_round_trip(bins, steps, head):
    spec = SceneSpec([SourceSpec(5 * b, generator={"kind": "white", "seed": 0, "duration_s": 0.01})
                      for b in bins], head_orientation_deg=5 * head)
    d = 5 * steps
    back = rotate_head(rotate_head(spec, d), -d)
    assert back.head_relative_azimuths() == spec.head_relative_azimuths()


def test_compensate_levels():
    ir = np.array([0.0, 1.0, -0.5])
    cat = HrirCatalog({0: (ir, ir), 5: (0.5 * ir, 0.5 * ir), 10: (ir, 0.2 * ir)}, RATE)
    out = compensate_levels(cat)
    np.testing.assert_array_equal(out.pair(0)[0], ir)
    np.testing.assert_allclose(out.pair(5)[0], ir)
    for left, right in out.entries.values():
        assert 0.5 * (np.abs(left).max() + np.abs(right).max()) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        compensate_levels(HrirCatalog({0: (np.zeros(3), np.zeros(3))}, RATE))


def test_catalog_save_load(tmp_path, catalog):
    catalog.save(tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["sample_rate"] == RATE
    assert len(manifest["entries"]) == 72
    assert len(list(tmp_path.glob("*.wav"))) == 144
    back = HrirCatalog.load(tmp_path)
    for az in (0, 95, 355):
        for a, b in zip(back.pair(az), catalog.pair(az)):
            np.testing.assert_array_equal(a, b.astype(np.float32))


def test_catalog_load_resamples(tmp_path):
    ir = np.zeros(96)
    ir[10] = 1.0
    write_wav(tmp_path / "l.wav", MonoSignal(ir, 48000))
    write_wav(tmp_path / "r.wav", MonoSignal(ir, 48000))
    (tmp_path / "manifest.json").write_text(json.dumps(
        {"sample_rate": 48000, "entries": [{"azimuth": 0, "left": "l.wav", "right": "r.wav"}]}))
    cat = HrirCatalog.load(tmp_path)
    assert cat.sample_rate_hz == RATE
    assert cat.pair(0)[0].size == 32
