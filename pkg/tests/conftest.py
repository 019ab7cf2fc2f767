import numpy as np
import pytest

from mindseek.catalog import Catalog, FeatureChannel, SimilarityProvider, generate_catalog


@pytest.fixture
def tiny_catalog() -> Catalog:
    """Two items, one 2-dim channel, hand-placed vectors."""
    channels = [FeatureChannel(index=0, name="shape", dim=2, bandwidth=1.0)]
    features = [np.array([[0.0, 0.0], [1.0, 1.0]])]
    tags = [{"category": "skirt"}, {"category": "shirt"}]
    return Catalog(channels, features, tags)


@pytest.fixture
def small_catalog() -> Catalog:
    return generate_catalog(12, 2, dims=3, clusters=3, seed=7)


@pytest.fixture
def small_provider(small_catalog) -> SimilarityProvider:
    return SimilarityProvider(small_catalog)


def random_provider(n: int, m: int, seed: int, dim: int = 3) -> SimilarityProvider:
    """Random catalog with smooth (median-bandwidth) kernels.

    The inference-oracle tests run here: with the default median heuristic
    the factored conditionals stay well-conditioned.  Sharpened kernels can
    push the coupling between (item, channel) blocks below float precision,
    where only the exact joint (the session-level fallback) is meaningful.
    """
    catalog = generate_catalog(
        n, m, dims=dim, clusters=max(2, n // 3), seed=seed, calibrate_bandwidth=False
    )
    return SimilarityProvider(catalog)
