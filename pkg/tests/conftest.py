import numpy as np
import pytest

from vcqlab.corpus import TokenCorpus


def random_corpus(seed, n, length, k, labelled=False) -> TokenCorpus:
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, k, size=(n, length))
    labels = rng.integers(0, 4, size=n) if labelled else None
    return TokenCorpus(tokens=tokens, k_max=k, labels=labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
