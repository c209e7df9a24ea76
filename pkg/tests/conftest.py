import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def rdp_oracle() -> dict:
    return json.loads((FIXTURES / "rdp_oracle.json").read_text())


@pytest.fixture(scope="session")
def external_reference() -> dict:
    return json.loads((FIXTURES / "external_accountant.json").read_text())


@pytest.fixture(scope="session")
def desk_thresholds() -> dict:
    return json.loads((FIXTURES / "desk_thresholds.json").read_text())


@pytest.fixture(scope="session")
def margin_sets():
    from privtrain.dataio import read_features

    return (
        read_features(FIXTURES / "margin_train.pvtf"),
        read_features(FIXTURES / "margin_test.pvtf"),
    )


@pytest.fixture(scope="session")
def xor_sets():
    from privtrain.dataio import read_features

    return (
        read_features(FIXTURES / "xor_train.pvtf"),
        read_features(FIXTURES / "xor_test.pvtf"),
    )
