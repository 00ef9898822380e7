import numpy as np
import pytest

from perclang.corpus import build_vocabulary
from perclang.grammar import default_grammar
from perclang.typegraph import TypeGraphParams, build_typegraph


@pytest.fixture(scope="session")
def grammar():
    return default_grammar()


@pytest.fixture(scope="session")
def small_graph():
    # 6 entities / 60 descriptors / 10 verbs per class keeps tests quick
    return build_typegraph(
        TypeGraphParams(n_entities=30, n_desc_props=300, n_classes=5, n_verbs=50, seed=7)
    )


@pytest.fixture(scope="session")
def small_vocab(small_graph):
    return build_vocabulary(small_graph)


@pytest.fixture(scope="session")
def default_graph():
    return build_typegraph(TypeGraphParams(seed=0))


@pytest.fixture(scope="session")
def default_vocab(default_graph):
    return build_vocabulary(default_graph)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
