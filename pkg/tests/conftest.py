import pytest
import torch

from momenta.encoders import EmbeddingCache, SyntheticBackend, encode_manifest
from momenta.synthetic import random_corpus
from momenta.training import set_threads


@pytest.fixture(autouse=True, scope="session")
def _deterministic():
    set_threads(1)
    yield


@pytest.fixture
def corpus():
    return random_corpus(32, seed=0, name="toy", balanced=True, split=None)


@pytest.fixture
def cache(tmp_path, corpus):
    c = EmbeddingCache(tmp_path / "emb.cache", "a")
    encode_manifest(corpus.records, SyntheticBackend(), c)
    return c


def make_cache(path, *manifests, backend=None):
    c = EmbeddingCache(path, "a")
    for m in manifests:
        encode_manifest(m.records, backend or SyntheticBackend(), c)
    return c


def random_batch(seed, b=4, n_max=4, m_max=3, dtype=torch.float64, empty_ok=True):
    """Collated batch of random synthetic bundles with variable set sizes."""
    import numpy as np

    from momenta.encoders import ATTRIBUTE_DIM, GLOBAL_DIM, PROPOSAL_DIM, EmbeddingBundle
    from momenta.model import collate

    rng = np.random.default_rng(seed)
    lo = 0 if empty_ok else 1
    bundles = []
    for _ in range(b):
        n, m = int(rng.integers(lo, n_max + 1)), int(rng.integers(lo, m_max + 1))
        bundles.append(
            EmbeddingBundle(
                f_image=rng.standard_normal(GLOBAL_DIM),
                f_text=rng.standard_normal(GLOBAL_DIM),
                proposals=rng.standard_normal((n, PROPOSAL_DIM)),
                attributes=rng.standard_normal((m, ATTRIBUTE_DIM)),
            )
        )
    return bundles, collate(bundles, dtype)
