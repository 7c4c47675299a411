import pytest
from hypothesis import HealthCheck, settings

from simulrag._assets import asset_path
from simulrag.benchgen import read_dataset
from simulrag.gateway import LlmGateway, ScriptedBackend

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


E2E_PACK = asset_path("fixtures/e2e_pack.jsonl")
E2E_PACK_ALLBOUND = asset_path("fixtures/e2e_pack_allbound.jsonl")
BENCH_PACK = asset_path("fixtures/bench_pack.jsonl")
E2E_DATASET = asset_path("datasets/e2e.jsonl")
MINI_DATASETS = (
    asset_path("datasets/mini_climate.jsonl"),
    asset_path("datasets/mini_epidemiology.jsonl"),
)


@pytest.fixture(scope="session")
def e2e_items():
    return read_dataset(E2E_DATASET)


@pytest.fixture()
def e2e_gateway():
    return LlmGateway(ScriptedBackend.from_jsonl(E2E_PACK))


@pytest.fixture()
def allbound_gateway():
    return LlmGateway(ScriptedBackend.from_jsonl(E2E_PACK_ALLBOUND))


@pytest.fixture()
def bench_gateway():
    return LlmGateway(ScriptedBackend.from_jsonl(BENCH_PACK))


@pytest.fixture(scope="session")
def mini_items():
    items = []
    for path in MINI_DATASETS:
        items.extend(read_dataset(path))
    return items
