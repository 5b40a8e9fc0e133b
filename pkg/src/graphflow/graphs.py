"""Categorical graph representation, permutations, isomorphism, and structure statistics.

Graphs carry categorical node labels and symmetric categorical edge labels;
edge class 0 is reserved for "no edge", so unlabeled graphs use two edge
classes (absent / present) and a single node class.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from hashlib import blake2b

import numpy as np

__all__ = [
    "Graph",
    "Permutation",
    "GraphStatistics",
    "apply_permutation",
    "is_isomorphic",
    "canonical_hash",
    "compute_statistics",
    "read_graphs",
    "write_graphs",
    "graph_to_record",
    "graph_from_record",
]


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph with categorical node and edge labels.

    edge_labels is a symmetric N x N integer matrix with zero diagonal;
    label 0 means "no edge".
    """

    num_nodes: int
    node_labels: np.ndarray
    edge_labels: np.ndarray

    def __post_init__(self):
        n = self.num_nodes
        if n <= 0:
            raise ValueError(f"num_nodes must be positive, got {n}")
        nodes = np.ascontiguousarray(self.node_labels, dtype=np.int64)
        edges = np.ascontiguousarray(self.edge_labels, dtype=np.int64)
        if nodes.shape != (n,):
            raise ValueError(f"node_labels shape {nodes.shape} != ({n},)")
        if edges.shape != (n, n):
            raise ValueError(f"edge_labels shape {edges.shape} != ({n}, {n})")
        if nodes.min(initial=0) < 0 or edges.min(initial=0) < 0:
            raise ValueError("labels must be nonnegative")
        if not np.array_equal(edges, edges.T):
            raise ValueError("edge_labels must be symmetric")
        if np.any(np.diag(edges) != 0):
            raise ValueError("edge_labels diagonal must be 0 (no self loops)")
        nodes.flags.writeable = False
        edges.flags.writeable = False
        object.__setattr__(self, "node_labels", nodes)
        object.__setattr__(self, "edge_labels", edges)

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls(n, np.zeros(n, dtype=np.int64), np.zeros((n, n), dtype=np.int64))

    @classmethod
    def _trusted(cls, n: int, node_labels: np.ndarray, edge_labels: np.ndarray) -> "Graph":
        """Skip invariant validation; only for internal hot loops whose
        construction is symmetric and zero-diagonal by design."""
        g = object.__new__(cls)
        node_labels.flags.writeable = False
        edge_labels.flags.writeable = False
        object.__setattr__(g, "num_nodes", n)
        object.__setattr__(g, "node_labels", node_labels)
        object.__setattr__(g, "edge_labels", edge_labels)
        return g

    @classmethod
    def from_edges(cls, n: int, edges, node_labels=None) -> "Graph":
        """Build from an iterable of (i, j) or (i, j, label) tuples."""
        e = np.zeros((n, n), dtype=np.int64)
        for item in edges:
            if len(item) == 2:
                i, j, lab = item[0], item[1], 1
            else:
                i, j, lab = item
            e[i, j] = lab
            e[j, i] = lab
        nodes = np.zeros(n, dtype=np.int64) if node_labels is None else np.asarray(node_labels)
        return cls(n, nodes, e)

    def adjacency(self) -> np.ndarray:
        """Binary adjacency (any nonzero edge label counts as an edge)."""
        return (self.edge_labels != 0).astype(np.float64)

    def num_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.edge_labels, 1)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.node_labels, other.node_labels)
            and np.array_equal(self.edge_labels, other.edge_labels)
        )

    def __hash__(self):
        return hash((self.num_nodes, self.node_labels.tobytes(), self.edge_labels.tobytes()))

    def __repr__(self):
        return f"Graph(n={self.num_nodes}, edges={self.num_edges()})"


@dataclass(frozen=True)
class Permutation:
    """A bijection on {0..N-1}; mapping[i] is the new index of old node i."""

    mapping: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(self.mapping, dtype=np.int64)
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(len(m))):
            raise ValueError("mapping must be a bijection on 0..N-1")
        m.flags.writeable = False
        object.__setattr__(self, "mapping", m)

    def __len__(self):
        return len(self.mapping)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Permutation":
        return cls(rng.permutation(n))

    def inverse(self) -> "Permutation":
        return Permutation(np.argsort(self.mapping))

    def compose(self, other: "Permutation") -> "Permutation":
        """self after other: (self.compose(other))(i) == self(other(i))."""
        return Permutation(self.mapping[other.mapping])


def apply_permutation(g: Graph, perm: Permutation) -> Graph:
    """Relabel g so that output node perm(i) carries input node i."""
    if len(perm) != g.num_nodes:
        raise ValueError(f"permutation length {len(perm)} != num_nodes {g.num_nodes}")
    inv = np.argsort(perm.mapping)
    return Graph(g.num_nodes, g.node_labels[inv], g.edge_labels[np.ix_(inv, inv)])


# ---------------------------------------------------------------------------
# Weisfeiler-Leman refinement and isomorphism
# ---------------------------------------------------------------------------

_WL_ITERATIONS = 3


def _wl_colors(g: Graph, iterations: int = _WL_ITERATIONS) -> list[bytes]:
    """Color refinement: returns one digest per node after `iterations` rounds.

    Initial color is the node label; each round a node absorbs the multiset of
    (edge label, neighbor color) over nonzero-labeled incident edges.
    """
    n = g.num_nodes
    edges = g.edge_labels
    neighbors = [np.nonzero(edges[v])[0] for v in range(n)]
    colors = [blake2b(b"n%d" % g.node_labels[v], digest_size=8).digest() for v in range(n)]
    for _ in range(iterations):
        new = []
        for v in range(n):
            parts = sorted(b"%d:" % edges[v, u] + colors[u] for u in neighbors[v])
            h = blake2b(digest_size=8)
            h.update(colors[v])
            for p in parts:
                h.update(p)
            new.append(h.digest())
        colors = new
    return colors


def canonical_hash(g: Graph) -> bytes:
    """Permutation-invariant digest; equal for isomorphic graphs, and hash
    inequality implies non-isomorphism. Equality does NOT imply isomorphism:
    this is only a dedup prefilter, is_isomorphic stays authoritative.
    """
    colors = _wl_colors(g)
    h = blake2b(digest_size=16)
    h.update(b"N%d" % g.num_nodes)
    for c in sorted(colors):
        h.update(c)
    # multiset of colored edges, order-independent
    tri = []
    for i in range(g.num_nodes):
        for j in range(i + 1, g.num_nodes):
            lab = g.edge_labels[i, j]
            if lab != 0:
                a, b = sorted((colors[i], colors[j]))
                tri.append(b"%d" % lab + a + b)
    for t in sorted(tri):
        h.update(t)
    return h.digest()


def is_isomorphic(a: Graph, b: Graph) -> bool:
    """Exact isomorphism respecting node and edge labels.

    WL color refinement prunes the search; the decision procedure is a
    backtracking match over WL color classes with most-constrained-first
    node ordering. Differing node counts or label multisets return False.
    """
    if a.num_nodes != b.num_nodes:
        return False
    n = a.num_nodes
    if not np.array_equal(np.sort(a.node_labels), np.sort(b.node_labels)):
        return False
    da = np.sort((a.edge_labels != 0).sum(axis=1))
    db = np.sort((b.edge_labels != 0).sum(axis=1))
    if not np.array_equal(da, db):
        return False
    ea, ca = np.unique(a.edge_labels, return_counts=True)
    eb, cb = np.unique(b.edge_labels, return_counts=True)
    if not (np.array_equal(ea, eb) and np.array_equal(ca, cb)):
        return False

    col_a = _wl_colors(a)
    col_b = _wl_colors(b)
    if sorted(col_a) != sorted(col_b):
        return False

    # candidates: nodes of b with the same WL color
    by_color: dict[bytes, list[int]] = {}
    for v in range(n):
        by_color.setdefault(col_b[v], []).append(v)
    cand = [by_color[col_a[v]] for v in range(n)]

    # order a-nodes: rarest color class first, then high degree
    deg_a = (a.edge_labels != 0).sum(axis=1)
    order = sorted(range(n), key=lambda v: (len(cand[v]), -deg_a[v]))

    ea_m = a.edge_labels
    eb_m = b.edge_labels
    mapping = np.full(n, -1, dtype=np.int64)
    used = np.zeros(n, dtype=bool)

    def backtrack(k: int) -> bool:
        if k == n:
            return True
        v = order[k]
        placed = order[:k]
        for w in cand[v]:
            if used[w]:
                continue
            ok = True
            for u in placed:
                if ea_m[v, u] != eb_m[w, mapping[u]]:
                    ok = False
                    break
            if ok:
                mapping[v] = w
                used[w] = True
                if backtrack(k + 1):
                    return True
                used[w] = False
                mapping[v] = -1
        return False

    return backtrack(0)


# ---------------------------------------------------------------------------
# Structure statistics
# ---------------------------------------------------------------------------


def _connected_4node_lut() -> np.ndarray:
    """Connectivity of a 4-node graph from its 6 edge bits.

    Bit order: (0,1), (0,2), (0,3), (1,2), (1,3), (2,3).
    """
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    lut = np.zeros(64, dtype=bool)
    for bits in range(64):
        adj = [[False] * 4 for _ in range(4)]
        for k, (i, j) in enumerate(pairs):
            if bits >> k & 1:
                adj[i][j] = adj[j][i] = True
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in range(4):
                if adj[u][v] and v not in seen:
                    seen.add(v)
                    stack.append(v)
        lut[bits] = len(seen) == 4
    return lut


_CONN4 = _connected_4node_lut()


def _orbit_counts(adj: np.ndarray) -> np.ndarray:
    """Per node: number of connected 4-node induced subgraphs it belongs to."""
    n = adj.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    if n < 4:
        return counts
    a = adj.astype(np.int64)
    quads = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(n), 4)),
        dtype=np.int64,
    ).reshape(-1, 4)
    i0, i1, i2, i3 = quads[:, 0], quads[:, 1], quads[:, 2], quads[:, 3]
    bits = (
        a[i0, i1]
        | a[i0, i2] << 1
        | a[i0, i3] << 2
        | a[i1, i2] << 3
        | a[i1, i3] << 4
        | a[i2, i3] << 5
    )
    connected = _CONN4[bits]
    np.add.at(counts, quads[connected].ravel(), 1)
    return counts


@dataclass(frozen=True)
class GraphStatistics:
    """Structural statistics used by the distribution-distance metric."""

    degree_histogram: np.ndarray  # counts per degree 0..max, sums to N
    clustering_coefficients: np.ndarray  # per node, in [0, 1]
    orbit_counts: np.ndarray  # per node, connected 4-node subgraph memberships
    laplacian_spectrum: np.ndarray  # sorted eigenvalues of sym-normalized Laplacian

    num_nodes: int = field(default=0)


def compute_statistics(g: Graph) -> GraphStatistics:
    """Degrees, clustering, 4-node orbit counts, and the spectrum of
    L = I - D^{-1/2} A D^{-1/2} (isolated nodes contribute eigenvalue 0).
    """
    adj = g.adjacency()
    n = g.num_nodes
    deg = adj.sum(axis=1)
    deg_int = deg.astype(np.int64)
    degree_histogram = np.bincount(deg_int, minlength=1)

    # clustering: (A^3)_vv counts each triangle at v twice
    closed = np.einsum("ij,jk,ki->i", adj, adj, adj)
    denom = deg * (deg - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        clustering = np.where(denom > 0, closed / denom, 0.0)

    orbit = _orbit_counts(adj)

    with np.errstate(divide="ignore"):
        dinv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    lap = -adj * dinv_sqrt[:, None] * dinv_sqrt[None, :]
    # diagonal: 1 for non-isolated nodes, 0 for isolated ones
    lap[np.arange(n), np.arange(n)] = np.where(deg > 0, 1.0, 0.0)
    spectrum = np.sort(np.linalg.eigvalsh(lap))

    return GraphStatistics(degree_histogram, clustering, orbit, spectrum, num_nodes=n)


# ---------------------------------------------------------------------------
# JSONL serialization: one graph per line,
# {"n": N, "nodes": [label,...], "edges": [[i,j,label],...]} with i<j only.
# ---------------------------------------------------------------------------


def graph_to_record(g: Graph) -> dict:
    ii, jj = np.nonzero(np.triu(g.edge_labels, 1))
    edges = [[int(i), int(j), int(g.edge_labels[i, j])] for i, j in zip(ii, jj)]
    return {"n": g.num_nodes, "nodes": [int(x) for x in g.node_labels], "edges": edges}


def graph_from_record(rec: dict) -> Graph:
    n = int(rec["n"])
    nodes = np.asarray(rec["nodes"], dtype=np.int64)
    e = np.zeros((n, n), dtype=np.int64)
    for i, j, lab in rec["edges"]:
        e[i, j] = lab
        e[j, i] = lab
    return Graph(n, nodes, e)


def write_graphs(path, graphs) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_record(g), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_graphs(path) -> list[Graph]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(graph_from_record(json.loads(line)))
    return out
