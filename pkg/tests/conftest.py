import numpy as np
import pytest
from hypothesis import strategies as st

from graphflow.graphs import Graph, Permutation


def random_graph(rng: np.random.Generator, n: int, p: float = 0.4, num_edge_classes: int = 2,
                 num_node_classes: int = 1) -> Graph:
    nodes = rng.integers(0, num_node_classes, size=n)
    e = np.zeros((n, n), dtype=np.int64)
    iu, ju = np.triu_indices(n, 1)
    present = rng.random(len(iu)) < p
    labels = rng.integers(1, num_edge_classes, size=len(iu))
    vals = np.where(present, labels, 0)
    e[iu, ju] = vals
    e[ju, iu] = vals
    return Graph(n, nodes, e)


@st.composite
def graphs(draw, max_nodes: int = 7, num_edge_classes: int = 2, num_node_classes: int = 2):
    n = draw(st.integers(min_value=1, max_value=max_nodes))
    nodes = draw(st.lists(st.integers(0, num_node_classes - 1), min_size=n, max_size=n))
    e = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            lab = draw(st.integers(0, num_edge_classes - 1))
            e[i, j] = e[j, i] = lab
    return Graph(n, np.asarray(nodes), e)


@st.composite
def graph_and_permutation(draw, max_nodes: int = 7):
    g = draw(graphs(max_nodes=max_nodes))
    perm = draw(st.permutations(list(range(g.num_nodes))))
    return g, Permutation(np.asarray(perm))


# shared small fixtures


@pytest.fixture
def triangle():
    return Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def path3():
    return Graph.from_edges(3, [(0, 1), (1, 2)])
