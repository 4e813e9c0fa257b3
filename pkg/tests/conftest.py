from pathlib import Path

import pytest

from services.descriptor import load_descriptor
from services.orchestrator import deploy_system
from services.traffic import ScenarioConfig, run_traffic

ROOT = Path(__file__).resolve().parent.parent
DESCRIPTOR_DIR = ROOT / "descriptors"
SCENARIO_DIR = ROOT / "scenarios"
CORPUS_DIR = Path(__file__).resolve().parent / "corpus"


@pytest.fixture
def descriptor_dir() -> Path:
    return DESCRIPTOR_DIR


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR


@pytest.fixture
def small_scenario() -> ScenarioConfig:
    """Короткий профиль: 20 абонентов, вызов в секунду, окно 20 с"""
    return ScenarioConfig(
        name="small",
        call_rate=60,
        call_duration=5,
        subscriber_count=20,
        reregistration_rate=10,
        warmup=5,
        measurement_window=20,
        answer_delay=1,
        ua_timeout=8,
    )


@pytest.fixture
def run_small(small_scenario):
    """Фабрика прогона: (система, хранилище) для Descriptor по имени"""

    def run(name: str = "DIST", seed: int = 1, kill=None, **overrides):
        scenario = small_scenario.model_copy(update=overrides) if overrides else small_scenario
        descriptor = load_descriptor(name, DESCRIPTOR_DIR)
        system = deploy_system(descriptor, seed=seed)
        if kill is not None:
            pouch_id, at_us = kill
            system.kernel.call_at(at_us, lambda: system.kill_pouch(pouch_id))
        store = run_traffic(scenario, system)
        return system, store

    return run


SMALL_SCN = """\
call_rate = 60
call_duration = 5
subscriber_count = 20
reregistration_rate = 10
warmup = 5
measurement_window = 20
answer_delay = 1
ua_timeout = 8
"""


@pytest.fixture
def small_scn_file(tmp_path) -> Path:
    """Тот же короткий профиль в виде файла сценария"""
    path = tmp_path / "small.scn"
    path.write_text(SMALL_SCN, encoding="utf-8")
    return path
