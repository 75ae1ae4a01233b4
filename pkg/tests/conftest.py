import numpy as np
import pytest

from lterain.graphbuild import SensingGraph
from lterain.ingest import SynthConfig, synthesize_dataset, synthesize_radar
from lterain.pipeline import featurize

SMALL = dict(m_stations=16, n_windows=20, users_per_station=30)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cfg():
    return SynthConfig(**SMALL)


@pytest.fixture(scope="session")
def small_world(small_cfg):
    radar = synthesize_radar(small_cfg)
    return radar, synthesize_dataset(small_cfg, radar)


@pytest.fixture(scope="session")
def small_featurized(small_cfg, small_world):
    radar, ds = small_world
    return featurize(ds.records, radar, m=small_cfg.m_stations, n=5, k=5, r=10)


def random_graph(rng, n=5, f=16, r=10, label=None):
    pts = rng.uniform(0.0, 3.0, size=(n, 2))
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    y = int(rng.integers(r)) if label is None else label
    return SensingGraph(rng.random((n, f)), d, y, 0, 0)
