"""Synthetic graph families: generators, validity checks, and splits.

Five families: stochastic block model, planar (Delaunay triangulations),
uniform random trees, Erdos-Renyi, and Barabasi-Albert. Generation is
deterministic per (seed, graph index) stream, so parallelism or re-runs
never change the output.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.spatial import Delaunay
from scipy.stats import binom

from .errors import ConfigurationError
from .graphs import Graph
from .rng import stream

__all__ = [
    "DatasetSpec",
    "DatasetSplit",
    "generate",
    "check_validity",
    "PRESETS",
    "preset",
]

FAMILIES = ("sbm", "planar", "tree", "er", "ba")

# two-sided z threshold at significance 1e-3 for the SBM density tests
SBM_Z = 3.2905267314919255


@dataclass(frozen=True)
class DatasetSpec:
    """Family, node-count range, graph count, family parameters, and seed."""

    family: str
    min_nodes: int
    max_nodes: int
    count: int
    seed: int = 0
    # SBM
    num_communities: tuple[int, int] = (2, 2)
    community_size: tuple[int, int] = (10, 15)
    p_intra: float = 0.3
    p_inter: float = 0.05
    # Erdos-Renyi
    er_p: float = 0.6
    # Barabasi-Albert
    ba_m: int = 6
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}")
        if self.min_nodes > self.max_nodes or self.min_nodes < 1:
            raise ConfigurationError("need 1 <= min_nodes <= max_nodes")
        if self.count < 1:
            raise ConfigurationError("count must be >= 1")
        if not 0 <= self.er_p <= 1 or not 0 <= self.p_intra <= 1 or not 0 <= self.p_inter <= 1:
            raise ConfigurationError("probabilities must be in [0, 1]")
        if self.family == "sbm":
            if self.p_intra <= self.p_inter:
                raise ConfigurationError("SBM requires p_intra > p_inter")
            if self.num_communities[0] > self.num_communities[1] or self.num_communities[0] < 1:
                raise ConfigurationError("bad community count range")
            if self.community_size[0] > self.community_size[1] or self.community_size[0] < 2:
                raise ConfigurationError("bad community size range")
        if self.family == "ba" and not 1 <= self.ba_m < self.min_nodes:
            raise ConfigurationError("BA attachment count must satisfy 1 <= m < min_nodes")
        if abs(sum(self.split) - 1.0) > 1e-9 or any(s < 0 for s in self.split):
            raise ConfigurationError("split fractions must be nonnegative and sum to 1")

    def to_json(self) -> dict:
        out = {
            "family": self.family,
            "min_nodes": self.min_nodes,
            "max_nodes": self.max_nodes,
            "count": self.count,
            "seed": self.seed,
            "split": list(self.split),
        }
        if self.family == "sbm":
            out["sbm"] = {
                "num_communities": list(self.num_communities),
                "community_size": list(self.community_size),
                "p_intra": self.p_intra,
                "p_inter": self.p_inter,
            }
        elif self.family == "er":
            out["er"] = {"p": self.er_p}
        elif self.family == "ba":
            out["ba"] = {"m": self.ba_m}
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetSpec":
        kw = dict(
            family=obj["family"],
            min_nodes=int(obj["min_nodes"]),
            max_nodes=int(obj["max_nodes"]),
            count=int(obj["count"]),
            seed=int(obj.get("seed", 0)),
        )
        if "split" in obj:
            kw["split"] = tuple(float(x) for x in obj["split"])
        if "sbm" in obj:
            s = obj["sbm"]
            kw.update(
                num_communities=tuple(int(x) for x in s["num_communities"]),
                community_size=tuple(int(x) for x in s["community_size"]),
                p_intra=float(s["p_intra"]),
                p_inter=float(s["p_inter"]),
            )
        if "er" in obj:
            kw["er_p"] = float(obj["er"]["p"])
        if "ba" in obj:
            kw["ba_m"] = int(obj["ba"]["m"])
        return cls(**kw)


@dataclass(frozen=True)
class DatasetSplit:
    train: list[Graph]
    val: list[Graph]
    test: list[Graph]

    def all_graphs(self) -> list[Graph]:
        return list(self.train) + list(self.val) + list(self.test)


# ---------------------------------------------------------------------------
# Per-family samplers (each consumes a dedicated rng)
# ---------------------------------------------------------------------------


def _symmetric_from_upper(n: int, iu, ju, vals) -> Graph:
    e = np.zeros((n, n), dtype=np.int64)
    e[iu, ju] = vals
    e[ju, iu] = vals
    return Graph(n, np.zeros(n, dtype=np.int64), e)


def _sample_er(spec: DatasetSpec, rng: np.random.Generator) -> Graph:
    n = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
    iu, ju = np.triu_indices(n, 1)
    vals = (rng.random(len(iu)) < spec.er_p).astype(np.int64)
    return _symmetric_from_upper(n, iu, ju, vals)


def _sample_ba(spec: DatasetSpec, rng: np.random.Generator) -> Graph:
    n = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
    m = spec.ba_m
    e = np.zeros((n, n), dtype=np.int64)
    # seed clique of m fully connected nodes
    e[:m, :m] = 1
    np.fill_diagonal(e, 0)
    deg = e.sum(axis=1).astype(np.float64)
    for v in range(m, n):
        targets: list[int] = []
        w = deg[:v].copy()
        for _ in range(min(m, v)):
            total = w.sum()
            p = w / total if total > 0 else np.full(v, 1.0 / v)
            pick = int(rng.choice(v, p=p))
            targets.append(pick)
            w[pick] = 0.0
        for u in targets:
            e[v, u] = e[u, v] = 1
            deg[u] += 1
            deg[v] += 1
    return Graph(n, np.zeros(n, dtype=np.int64), e)


def _sample_tree(spec: DatasetSpec, rng: np.random.Generator) -> Graph:
    n = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
    if n == 1:
        return Graph.empty(1)
    if n == 2:
        return Graph.from_edges(2, [(0, 1)])
    # Prufer decoding yields the uniform distribution over labeled trees
    seq = rng.integers(0, n, size=n - 2)
    degree = np.ones(n, dtype=np.int64)
    for x in seq:
        degree[x] += 1
    edges = []
    leaves = [v for v in range(n) if degree[v] == 1]
    heapq.heapify(leaves)
    for x in seq:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, int(x)))
        degree[x] -= 1
        if degree[x] == 1:
            heapq.heappush(leaves, int(x))
    u = heapq.heappop(leaves)
    v = heapq.heappop(leaves)
    edges.append((u, v))
    g = Graph.from_edges(n, edges)
    # extra uniform relabeling (harmless for a label-uniform distribution)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    return Graph(n, g.node_labels[inv], g.edge_labels[np.ix_(inv, inv)])


def _sample_planar(spec: DatasetSpec, rng: np.random.Generator) -> Graph:
    n = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
    if n < 3:
        return Graph.from_edges(n, [(0, 1)] if n == 2 else [])
    while True:
        points = rng.random((n, 2))
        tri = Delaunay(points)
        if tri.coplanar.size == 0:
            break
    edges = set()
    for simplex in tri.simplices:
        for a in range(3):
            for b in range(a + 1, 3):
                i, j = int(simplex[a]), int(simplex[b])
                edges.add((min(i, j), max(i, j)))
    return Graph.from_edges(n, sorted(edges))


def _sample_sbm(spec: DatasetSpec, rng: np.random.Generator) -> Graph:
    k = int(rng.integers(spec.num_communities[0], spec.num_communities[1] + 1))
    sizes = rng.integers(spec.community_size[0], spec.community_size[1] + 1, size=k)
    n = int(sizes.sum())
    labels = np.repeat(np.arange(k), sizes)
    iu, ju = np.triu_indices(n, 1)
    same = labels[iu] == labels[ju]
    p = np.where(same, spec.p_intra, spec.p_inter)
    vals = (rng.random(len(iu)) < p).astype(np.int64)
    return _symmetric_from_upper(n, iu, ju, vals)


_SAMPLERS = {
    "er": _sample_er,
    "ba": _sample_ba,
    "tree": _sample_tree,
    "planar": _sample_planar,
    "sbm": _sample_sbm,
}


def generate(spec: DatasetSpec) -> DatasetSplit:
    """Generate `count` graphs and split them 80/10/10 (configurable) by
    generation order. Graph i is drawn from stream (seed, "dataset", i)."""
    sampler = _SAMPLERS[spec.family]
    graphs = [sampler(spec, stream(spec.seed, "dataset", i)) for i in range(spec.count)]
    n_train = int(round(spec.split[0] * spec.count))
    n_val = int(round(spec.split[1] * spec.count))
    n_train = min(n_train, spec.count)
    n_val = min(n_val, spec.count - n_train)
    return DatasetSplit(
        train=graphs[:n_train],
        val=graphs[n_train : n_train + n_val],
        test=graphs[n_train + n_val :],
    )


# ---------------------------------------------------------------------------
# Validity
# ---------------------------------------------------------------------------


def _is_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    frontier = [0]
    while frontier:
        u = frontier.pop()
        for v in np.nonzero(adj[u])[0]:
            if not seen[v]:
                seen[v] = True
                frontier.append(int(v))
    return bool(seen.all())


def _to_networkx(g: Graph) -> nx.Graph:
    gx = nx.Graph()
    gx.add_nodes_from(range(g.num_nodes))
    ii, jj = np.nonzero(np.triu(g.edge_labels, 1))
    gx.add_edges_from(zip(ii.tolist(), jj.tolist()))
    return gx


def _tree_valid(g: Graph) -> bool:
    adj = g.adjacency()
    return g.num_edges() == g.num_nodes - 1 and _is_connected(adj)


def _planar_valid(g: Graph) -> bool:
    if not _is_connected(g.adjacency()):
        return False
    ok, _ = nx.check_planarity(_to_networkx(g), counterexample=False)
    return bool(ok)


def _er_valid(g: Graph, spec: DatasetSpec) -> bool:
    n = g.num_nodes
    pairs = n * (n - 1) // 2
    if pairs == 0:
        return True
    k = g.num_edges()
    lo = binom.ppf(0.005, pairs, spec.er_p)
    hi = binom.ppf(0.995, pairs, spec.er_p)
    return bool(lo <= k <= hi)


def _ba_valid(g: Graph, spec: DatasetSpec) -> bool:
    m = spec.ba_m
    n = g.num_nodes
    if n <= m:
        return False
    adj = g.adjacency()
    if not _is_connected(adj):
        return False
    expected_edges = m * (m - 1) // 2 + (n - m) * m
    if g.num_edges() != expected_edges:
        return False
    return bool(adj.sum(axis=1).min() >= m)


def _normalized_laplacian(adj: np.ndarray) -> np.ndarray:
    deg = adj.sum(axis=1)
    with np.errstate(divide="ignore"):
        inv = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    lap = -adj * inv[:, None] * inv[None, :]
    np.fill_diagonal(lap, np.where(deg > 0, 1.0, 0.0))
    return lap


def _regularized_laplacian(adj: np.ndarray, tau: float) -> np.ndarray:
    """Normalized Laplacian of the tau-regularized adjacency A + (tau/n) J.

    Regularization (tau = mean degree) is the standard fix for spectral
    clustering on sparse graphs: it damps small-degree fluctuations that
    otherwise dominate the leading eigenvectors.
    """
    n = adj.shape[0]
    a = adj + tau / n
    deg = a.sum(axis=1)
    inv = 1.0 / np.sqrt(deg)
    lap = -a * inv[:, None] * inv[None, :]
    lap[np.arange(n), np.arange(n)] += 1.0
    return lap


def _bisect_regularized(adj: np.ndarray, k: int, balanced: bool) -> np.ndarray | None:
    """Recursively split the largest part by the Fiedler vector of its
    regularized normalized Laplacian (sign or median threshold)."""
    n = adj.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(k - 1):
        sizes = np.bincount(labels)
        part = int(np.argmax(sizes))
        idx = np.nonzero(labels == part)[0]
        if len(idx) < 2:
            return None
        sub_adj = adj[np.ix_(idx, idx)]
        tau = sub_adj.sum() / len(idx)
        if tau == 0:
            return None
        _, vecs = np.linalg.eigh(_regularized_laplacian(sub_adj, tau))
        fiedler = vecs[:, 1]
        side = fiedler >= (np.median(fiedler) if balanced else 0.0)
        if side.all() or not side.any():
            side = fiedler >= fiedler.max()
        labels[idx[side]] = labels.max() + 1
    return labels


def _embedding_clusters(adj: np.ndarray, k: int) -> np.ndarray | None:
    """Cluster the k-dimensional regularized spectral embedding with
    farthest-point seeding and Lloyd iterations.

    Uses only pairwise distances in the embedding, so the partition is
    independent of node order and of eigenvector sign conventions.
    """
    n = adj.shape[0]
    tau = adj.sum() / n
    _, vecs = np.linalg.eigh(_regularized_laplacian(adj, tau))
    emb = vecs[:, 1:k]  # skip the near-constant leading eigenvector
    norms = np.linalg.norm(emb, axis=1)
    centers = [int(np.argmax(norms))]
    for _ in range(k - 1):
        dists = np.min(
            np.stack([np.linalg.norm(emb - emb[c], axis=1) for c in centers]), axis=0
        )
        centers.append(int(np.argmax(dists)))
    centroids = emb[centers].copy()
    labels = None
    for _ in range(50):
        d = np.linalg.norm(emb[:, None, :] - centroids[None, :, :], axis=2)
        new = d.argmin(axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        if len(np.unique(labels)) < k:
            return None
        for c in range(k):
            centroids[c] = emb[labels == c].mean(axis=0)
    return labels


def _candidate_ks(g: Graph, kmin: int, kmax: int) -> list[int]:
    """Community counts in the allowed range, largest eigengap first."""
    n = g.num_nodes
    if kmax == kmin:
        return [kmin]
    adj = g.adjacency()
    tau = adj.sum() / n
    vals = np.sort(np.linalg.eigvalsh(_regularized_laplacian(adj, tau)))
    ks = [k for k in range(kmin, kmax + 1) if k < n]
    return sorted(ks, key=lambda k: -(vals[k] - vals[k - 1]))


def _plugin_refine(adj: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Local likelihood refinement with block densities re-estimated from the
    partition itself (no reference to the generator's parameters)."""
    n = adj.shape[0]
    iu, ju = np.triu_indices(n, 1)
    e = adj[iu, ju]
    for _ in range(10):
        same = labels[iu] == labels[ju]
        pi, po = same.sum(), (~same).sum()
        if pi == 0 or po == 0:
            return labels
        p_in = min(max(e[same].sum() / pi, 1e-9), 1 - 1e-9)
        p_out = min(max(e[~same].sum() / po, 1e-9), 1 - 1e-9)
        if p_in <= p_out:
            return labels
        log_odds = math.log(p_in * (1 - p_out)) - math.log(p_out * (1 - p_in))
        size_pen = math.log(1 - p_out) - math.log(1 - p_in)
        onehot = np.eye(k)[labels]
        edges_to = adj @ onehot
        sizes = onehot.sum(axis=0)
        new = (log_odds * edges_to - size_pen * (sizes[None, :] - onehot)).argmax(axis=1)
        if len(np.unique(new)) < k or np.array_equal(new, labels):
            break
        labels = new
    return labels


def _sbm_partitions(g: Graph, k: int) -> list[np.ndarray]:
    """Candidate k-way partitions from regularized spectral clustering:
    sign- and median-threshold Fiedler bisection, plus embedding
    k-clustering and plug-in local refinement when k > 2. Deterministic, and
    independent of node order (only the partition is used downstream, never
    its numbering)."""
    adj = g.adjacency()
    seeds = []
    for balanced in (False, True):
        lab = _bisect_regularized(adj, k, balanced)
        if lab is not None:
            seeds.append(lab)
    if k > 2:
        lab = _embedding_clusters(adj, k)
        if lab is not None:
            seeds.append(lab)
        seeds.extend(_plugin_refine(adj, lab.copy(), k) for lab in list(seeds))
    candidates: list[np.ndarray] = []
    for lab in seeds:
        if not any(np.array_equal(lab, u) for u in candidates):
            candidates.append(lab)
    return candidates


def _density_z_ok(k_obs: float, n_pairs: int, p: float) -> bool:
    sd = math.sqrt(n_pairs * p * (1 - p))
    if sd == 0:
        return k_obs == n_pairs * p
    return abs(k_obs - n_pairs * p) <= SBM_Z * sd


def _sbm_valid(g: Graph, spec: DatasetSpec) -> bool:
    """Regularized spectral community recovery (k tried in eigengap order
    over the generator's allowed range), recovered block sizes within the
    generator's range, and two-sided binomial z-tests that the intra and
    inter block densities match the generator's parameters. A graph is valid
    if any candidate partition passes all checks."""
    n = g.num_nodes
    if n < 2 * spec.num_communities[0] or g.num_edges() == 0:
        return False
    adj = g.adjacency()
    iu, ju = np.triu_indices(n, 1)
    e = adj[iu, ju]
    for k in _candidate_ks(g, spec.num_communities[0], spec.num_communities[1]):
        for labels in _sbm_partitions(g, k):
            sizes = np.bincount(labels)
            if sizes.min() < spec.community_size[0] or sizes.max() > spec.community_size[1]:
                continue
            same = labels[iu] == labels[ju]
            intra_pairs = int(same.sum())
            inter_pairs = int((~same).sum())
            if intra_pairs == 0 or inter_pairs == 0:
                continue
            if _density_z_ok(float(e[same].sum()), intra_pairs, spec.p_intra) and _density_z_ok(
                float(e[~same].sum()), inter_pairs, spec.p_inter
            ):
                return True
    return False


def check_validity(g: Graph, family) -> bool:
    """Family-specific validity; `family` is a DatasetSpec or a family name
    (named presets supply default parameters for parametric families)."""
    spec = family if isinstance(family, DatasetSpec) else preset(family)
    if spec.family == "tree":
        return _tree_valid(g)
    if spec.family == "planar":
        return _planar_valid(g)
    if spec.family == "er":
        return _er_valid(g, spec)
    if spec.family == "ba":
        return _ba_valid(g, spec)
    if spec.family == "sbm":
        return _sbm_valid(g, spec)
    raise ConfigurationError(f"unknown family {spec.family!r}")


# ---------------------------------------------------------------------------
# Named presets
# ---------------------------------------------------------------------------

PRESETS: dict[str, DatasetSpec] = {
    # desk-scale SBM: 2 communities of 10-15 nodes, 160 graphs -> 128/16/16
    "sbm-desk": DatasetSpec(
        family="sbm", min_nodes=20, max_nodes=30, count=160, seed=0,
        num_communities=(2, 2), community_size=(10, 15), p_intra=0.3, p_inter=0.05,
    ),
    "sbm": DatasetSpec(
        family="sbm", min_nodes=40, max_nodes=200, count=200, seed=0,
        num_communities=(2, 5), community_size=(20, 40), p_intra=0.3, p_inter=0.05,
    ),
    "planar64": DatasetSpec(family="planar", min_nodes=64, max_nodes=64, count=200, seed=0),
    "tree64": DatasetSpec(family="tree", min_nodes=64, max_nodes=64, count=200, seed=0),
    "er-20-80": DatasetSpec(family="er", min_nodes=20, max_nodes=80, count=200, seed=0, er_p=0.6),
    "ba64": DatasetSpec(family="ba", min_nodes=64, max_nodes=64, count=200, seed=0, ba_m=6),
}


def preset(name: str) -> DatasetSpec:
    key = {"tree": "tree64", "planar": "planar64", "er": "er-20-80", "ba": "ba64"}.get(name, name)
    if key not in PRESETS:
        raise ConfigurationError(f"unknown dataset preset {name!r}")
    return PRESETS[key]


def write_manifest(spec: DatasetSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump({"kind": "dataset-manifest", "spec": spec.to_json()}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> DatasetSpec:
    with open(path) as fh:
        obj = json.load(fh)
    return DatasetSpec.from_json(obj["spec"] if "spec" in obj else obj)
