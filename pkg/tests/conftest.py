import pytest

from binloc.material import desk_material
from binloc.mct import MctConfig, build_training_set
from binloc.models import TrainSchedule, train_bundle
from binloc.spatializer import SphericalHeadParams, generate_spherical_catalog


@pytest.fixture(scope="session")
def sym_head():
    return generate_spherical_catalog(SphericalHeadParams(shadow_asymmetry=0.0))


@pytest.fixture(scope="session")
def small_features(sym_head):
    material = desk_material(6, 0.25, seed=0)
    return build_training_set(material, sym_head, MctConfig(clean=True, sentences_per_azimuth=1))


@pytest.fixture(scope="session")
def small_model(small_features):
    """A fast clean-trained DNN on the symmetric head; good enough for plumbing tests."""
    schedule = TrainSchedule(hidden_sizes=(32,), max_epochs_per_phase=4)
    return train_bundle(small_features, "dnn", "ccf+ild", schedule, seed=0)


# criterion name -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
