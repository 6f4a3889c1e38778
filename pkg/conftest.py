"""
Shared pytest fixtures: tiny configurations, tiny synthetic pairs and random
clouds. The `slow` marker gates the desk-scale learning run behind
SHAPEFLOW_RUN_SLOW=1.
"""

import os

os.environ.setdefault("LOG_TO_FILE", "false")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from core.geometry import PointCloud  # noqa: E402
from shapeflow.models.config import SyntheticSpec  # noqa: E402
from shapeflow.utils import settings  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running learning runs (set SHAPEFLOW_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if settings.RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="set SHAPEFLOW_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_cloud(rng):
    def make(n=32, scale=0.5, cloud_id="random"):
        return PointCloud(rng.uniform(-scale, scale, size=(n, 3)), id=cloud_id)
    return make


@pytest.fixture
def tiny_config():
    from shapeflow.services.gradcheck import tiny_config as make
    return make()


@pytest.fixture
def small_config():
    """Small but non-degenerate model for pipeline and training tests."""
    from shapeflow.services.gradcheck import tiny_config as make
    return make(
        n_points=48, max_visible=24, n_views=3, feature_dim=16,
        geo_dim=16, attn_width=16, heads=2, velocity_width=16,
        knn_k=4, splat_radius_px=1, image_size=32, focal=32.0, patch_size=4,
        batch_size=2, epochs=2, lr=1e-3,
    )


@pytest.fixture
def small_pairs(small_config):
    from shapeflow.services.synthetic import generate_synthetic_pairs
    spec = SyntheticSpec.for_config(small_config, count=3)
    return generate_synthetic_pairs(spec, seed=7, sigma_px=small_config.sigma_px, workers=2)


@pytest.fixture
def identity_pairs(small_config):
    """Pairs whose target equals the (sphere) template."""
    from shapeflow.services.synthetic import generate_synthetic_pairs
    spec = SyntheticSpec.for_config(small_config, count=2, fixed_scales=(1.0, 1.0, 1.0), fixed_exponents=(1.0, 1.0))
    return generate_synthetic_pairs(spec, seed=3, sigma_px=small_config.sigma_px, workers=1)
