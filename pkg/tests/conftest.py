import numpy as np
import pytest

from mugrep.data import load_dataset
from mugrep.event_graph import GraphHyperParams
from mugrep.synth import GeneratorConfig, generate
from mugrep.training import TrainConfig, prepare, train

SMALL_CITY_CONFIG = GeneratorConfig(
    seed=1, n_districts=3, n_communities=30, n_transactions=400,
    city_extent_m=6000.0, date_range_days=365,
    n_pois=300, n_stations=50, n_checkins=2000, n_trips=800, n_users=300,
)


@pytest.fixture(scope="session")
def small_city(tmp_path_factory):
    out = tmp_path_factory.mktemp("city") / "small"
    generate(SMALL_CITY_CONFIG, out)
    return out


@pytest.fixture(scope="session")
def small_dataset(small_city):
    return load_dataset(small_city)


@pytest.fixture(scope="session")
def small_prepared(small_dataset):
    return prepare(small_dataset, GraphHyperParams(), validation_days=30, test_days=60)


@pytest.fixture(scope="session")
def small_trained(small_prepared):
    cfg = TrainConfig(max_epochs=3, batch_size=32, seed=0)
    return train(small_prepared, cfg)


@pytest.fixture(scope="session")
def small_checkpoint(tmp_path_factory, small_city, small_prepared, small_trained):
    from mugrep.model import save_checkpoint

    run_dir = tmp_path_factory.mktemp("run")
    path = run_dir / "model.ckpt.json"
    save_checkpoint(path, small_trained.model, small_prepared.hp,
                    small_prepared.layout.layout_hash(),
                    small_prepared.normalizer.mean, small_prepared.normalizer.std,
                    price_mean=small_prepared.table.price_mean,
                    price_std=small_prepared.table.price_std)
    small_prepared.layout.save(small_city / "features.json")
    return path


@pytest.fixture(scope="session")
def small_world(small_city, small_checkpoint):
    from mugrep.service import load_world

    return load_world(small_city, small_checkpoint)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
