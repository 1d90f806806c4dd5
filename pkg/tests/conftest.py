from pathlib import Path

import pytest

from wsnfaas.simcore import ScenarioConfig

SAMPLES = Path(__file__).resolve().parent.parent / "samples"


@pytest.fixture
def samples() -> Path:
    return SAMPLES


@pytest.fixture
def small_config() -> ScenarioConfig:
    return ScenarioConfig(seed=7, edge=2, infrastructure=5, constrained=20,
                          loss_rates=[0.0] * 4)


@pytest.fixture
def city_config() -> ScenarioConfig:
    return ScenarioConfig.load(SAMPLES / "scenario.yaml")


def read_sample(name: str) -> str:
    return (SAMPLES / name).read_text(encoding="utf-8")
