import numpy as np
import pytest

from binloc.frontend import FeatureSet, analyze_binaural
from binloc.material import desk_material
from binloc.mct import MctConfig, a_priori_snr, build_training_set, check_class_coverage, gate_mask
from binloc.signal_io import rms_normalize
from binloc.spatializer import (
    SOURCE_RMS,
    AzimuthGrid,
    diffuse_noise_samples,
    snr_gain,
    spatialize,
)

QUAD = AzimuthGrid(step_deg=90, count=4)


def test_a_priori_snr_examples():
    assert a_priori_snr(1.0, 1.0) == 0.0
    assert a_priori_snr(10.0, 1.0) == pytest.approx(10.0, abs=1e-12)
    assert a_priori_snr(1.0, 0.0) == np.inf
    assert a_priori_snr(0.0, 1.0) == -np.inf
    with pytest.raises(ValueError):
        a_priori_snr(1.0, -1.0)


def test_gate_is_strict():
    et = np.array([10 ** -0.5, 0.3162, 0.3163, 1.0, 0.0, 0.0])
    en = np.array([1.0, 1.0, 1.0, 0.0, 1.0, 0.0])
    assert gate_mask(et, en, -5.0).tolist() == [False, False, True, True, False, False]


def test_config_validation():
    with pytest.raises(ValueError):
        MctConfig(gate_snr_db=np.inf)
    with pytest.raises(ValueError):
        MctConfig(snrs_db=())
    MctConfig(snrs_db=(), clean=True)


def _build(catalog, **kw):
    material = desk_material(3, 0.2, seed=4)
    cfg = MctConfig(sentences_per_azimuth=1, seed=2, **kw)
    return material, cfg, build_training_set(material, catalog, cfg, grid=QUAD,
                                             check_coverage=False)


def brute_energy(x, length=320, shift=160):
    """Oracle: mean square of each full frame, by explicit slicing."""
    n = (x.size - length) // shift + 1
    return np.array([np.mean(x[t * shift:t * shift + length] ** 2) for t in range(n)])


def test_gating_matches_brute_force(sym_head):
    material, cfg, fs = _build(sym_head)
    # replay the documented random stream: one pick and one noise draw per azimuth
    rng = np.random.default_rng(cfg.seed)
    for az in QUAD.values:
        j = rng.choice(len(material), size=1, replace=True)[0]
        src = rms_normalize(material[int(j)], SOURCE_RMS)
        target = spatialize(src, int(az), sym_head)
        noise = diffuse_noise_samples(len(src), sym_head, rng, QUAD)
        tb = np.maximum(analyze_binaural(target), 0)
        nb = np.maximum(analyze_binaural(noise), 0)
        for snr in cfg.snrs_db:
            g = snr_gain(target, noise, snr)
            expect = set()
            for b in range(32):
                et = 0.5 * (brute_energy(tb[0, b]) + brute_energy(tb[1, b]))
                en = 0.5 * (brute_energy(nb[0, b]) + brute_energy(nb[1, b])) * g * g
                for t in np.flatnonzero(10 * np.log10(et / en) > -5.0):
                    expect.add((int(t), b))
            sel = (fs.labels["azimuth_deg"] == az) & (fs.labels["snr_db"] == snr)
            got = set(zip(fs.t[sel].tolist(), fs.band[sel].tolist()))
            assert got == expect


def test_low_snr_keeps_fewer_cells(sym_head):
    _, _, fs = _build(sym_head)
    for az in QUAD.values:
        m = fs.labels["azimuth_deg"] == az
        counts = {s: int(np.sum(m & (fs.labels["snr_db"] == s))) for s in (20.0, 0.0)}
        assert counts[0.0] < counts[20.0]


def test_clean_mode_keeps_every_frame(sym_head):
    _, _, fs = _build(sym_head, clean=True)
    assert np.all(np.isinf(fs.labels["snr_db"]))
    for az in QUAD.values:
        m = fs.labels["azimuth_deg"] == az
        t_count = fs.t[m].max() + 1
        assert np.sum(m) == t_count * 32


def test_labels_on_grid_and_reproducible(sym_head, tmp_path):
    _, _, a = _build(sym_head)
    _, _, b = _build(sym_head)
    assert set(np.unique(a.labels["azimuth_deg"])) <= set(QUAD.values.tolist())
    a.save(tmp_path / "a.blfd")
    b.save(tmp_path / "b.blfd")
    assert (tmp_path / "a.blfd").read_bytes() == (tmp_path / "b.blfd").read_bytes()
    back = FeatureSet.load(tmp_path / "a.blfd")
    np.testing.assert_array_equal(back.labels, a.labels)


def test_full_grid_coverage(small_features):
    check_class_coverage(small_features, 32)
    assert len(np.unique(small_features.labels["azimuth_deg"])) == 72


def test_coverage_gap_reported(small_features):
    m = ~((small_features.band == 3) & (small_features.labels["azimuth_deg"] == 40))
    holed = FeatureSet(small_features.t[m], small_features.band[m], small_features.x[m],
                       small_features.itd_s[m], small_features.energy[m])
    holed.labels = small_features.labels[m]
    with pytest.raises(ValueError, match="band 3 azimuth 40"):
        check_class_coverage(holed, 32)


def test_errors(sym_head):
    with pytest.raises(ValueError):
        build_training_set([], sym_head)
