import itertools
import os

import numpy as np
import pytest
from hypothesis import strategies as st

from halfgraph.graph import Graph

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
MUTAG_DIR = os.path.join(ROOT, "data", "MUTAG")


def random_graph(rng, n, p=0.4, node_vocab=3, edge_vocab=2, node_width=1, edge_width=1, label=None):
    pairs = [(u, v) for u, v in itertools.combinations(range(n), 2) if rng.random() < p]
    return Graph(
        rng.integers(node_vocab, size=(n, node_width)),
        np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
        rng.integers(edge_vocab, size=(len(pairs), edge_width)),
        label,
    )


@st.composite
def graphs(draw, min_nodes=1, max_nodes=8, node_vocab=3, edge_vocab=2):
    n = draw(st.integers(min_nodes, max_nodes))
    all_pairs = list(itertools.combinations(range(n), 2))
    mask = draw(st.lists(st.booleans(), min_size=len(all_pairs), max_size=len(all_pairs)))
    pairs = [p for p, m in zip(all_pairs, mask) if m]
    nf = draw(st.lists(st.integers(0, node_vocab - 1), min_size=n, max_size=n))
    ef = draw(st.lists(st.integers(0, edge_vocab - 1), min_size=len(pairs), max_size=len(pairs)))
    return Graph(
        np.asarray(nf).reshape(n, 1),
        np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
        np.asarray(ef, dtype=np.int64).reshape(-1, 1),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def fig2_graph():
    """An 8-node molecule-like graph laid out like the decomposition figure."""
    edges = [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (3, 7), (1, 5)]
    return Graph(np.arange(8).reshape(8, 1) % 3, np.asarray(edges), np.zeros((len(edges), 1)))


@pytest.fixture(scope="session")
def mutag():
    from halfgraph.data import parse_tu

    return parse_tu(MUTAG_DIR, "MUTAG")
