import numpy as np
import pytest

from graphflow.datasets import (
    PRESETS,
    DatasetSpec,
    check_validity,
    generate,
    preset,
    read_manifest,
    write_manifest,
)
from graphflow.errors import ConfigurationError
from graphflow.graphs import Graph


def small_spec(family: str, **kw) -> DatasetSpec:
    base = dict(min_nodes=12, max_nodes=20, count=20, seed=5)
    base.update(kw)
    return DatasetSpec(family=family, **base)


class TestSpecValidation:
    def test_unknown_family(self):
        with pytest.raises(ConfigurationError):
            DatasetSpec(family="lattice", min_nodes=4, max_nodes=8, count=1)

    def test_bad_node_range(self):
        with pytest.raises(ConfigurationError):
            DatasetSpec(family="er", min_nodes=10, max_nodes=4, count=1)

    def test_sbm_requires_intra_above_inter(self):
        with pytest.raises(ConfigurationError):
            DatasetSpec(
                family="sbm", min_nodes=20, max_nodes=30, count=1, p_intra=0.05, p_inter=0.3
            )

    def test_ba_attachment_bound(self):
        with pytest.raises(ConfigurationError):
            DatasetSpec(family="ba", min_nodes=4, max_nodes=8, count=1, ba_m=4)

    def test_json_round_trip(self):
        for spec in PRESETS.values():
            assert DatasetSpec.from_json(spec.to_json()) == spec


class TestDeterminism:
    @pytest.mark.parametrize("family", ["er", "ba", "tree", "planar", "sbm"])
    def test_same_seed_identical(self, family):
        kw = {}
        if family == "ba":
            kw = dict(min_nodes=12, max_nodes=12, ba_m=3)
        if family == "sbm":
            kw = dict(min_nodes=20, max_nodes=30, community_size=(6, 9))
        a = generate(small_spec(family, **kw))
        b = generate(small_spec(family, **kw))
        assert a.train == b.train and a.val == b.val and a.test == b.test

    def test_different_seed_differs(self):
        a = generate(small_spec("er", seed=1))
        b = generate(small_spec("er", seed=2))
        assert a.train != b.train


class TestSplits:
    def test_desk_preset_counts(self):
        split = generate(preset("sbm-desk"))
        assert (len(split.train), len(split.val), len(split.test)) == (128, 16, 16)

    def test_split_fractions(self):
        split = generate(small_spec("tree", count=20))
        assert (len(split.train), len(split.val), len(split.test)) == (16, 2, 2)


class TestGeneratedInvariants:
    @pytest.mark.parametrize("family", ["er", "ba", "tree", "planar", "sbm"])
    def test_graph_invariants(self, family):
        kw = {}
        if family == "ba":
            kw = dict(min_nodes=12, max_nodes=12, ba_m=3)
        if family == "sbm":
            kw = dict(min_nodes=20, max_nodes=30, community_size=(6, 9))
        for g in generate(small_spec(family, **kw)).all_graphs():
            assert np.array_equal(g.edge_labels, g.edge_labels.T)
            assert np.all(np.diag(g.edge_labels) == 0)
            assert g.edge_labels.max() <= 1


class TestTreeFamily:
    def test_edge_count_and_connectivity(self):
        spec = small_spec("tree", min_nodes=64, max_nodes=64, count=10)
        for g in generate(spec).all_graphs():
            assert g.num_edges() == 63
            assert check_validity(g, spec)

    def test_cycle_rejected(self):
        cycle = Graph.from_edges(64, [(i, (i + 1) % 64) for i in range(64)])
        assert not check_validity(cycle, "tree")

    def test_path_accepted(self):
        path = Graph.from_edges(64, [(i, i + 1) for i in range(63)])
        assert check_validity(path, "tree")


class TestPlanarFamily:
    def test_k5_rejected(self):
        k5 = Graph.from_edges(5, [(i, j) for i in range(5) for j in range(i + 1, 5)])
        assert not check_validity(k5, "planar")

    def test_k33_rejected(self):
        k33 = Graph.from_edges(6, [(i, j + 3) for i in range(3) for j in range(3)])
        assert not check_validity(k33, "planar")

    def test_generated_all_valid(self):
        spec = small_spec("planar", min_nodes=30, max_nodes=40, count=15)
        gs = generate(spec).all_graphs()
        assert all(check_validity(g, spec) for g in gs)

    def test_disconnected_rejected(self):
        g = Graph.from_edges(4, [(0, 1), (2, 3)])
        assert not check_validity(g, "planar")


class TestErFamily:
    def test_density_matches_p(self):
        spec = DatasetSpec(family="er", min_nodes=30, max_nodes=30, count=40, seed=3, er_p=0.6)
        densities = []
        for g in generate(spec).all_graphs():
            pairs = g.num_nodes * (g.num_nodes - 1) / 2
            densities.append(g.num_edges() / pairs)
        assert abs(np.mean(densities) - 0.6) < 0.02

    def test_self_acceptance(self):
        spec = DatasetSpec(family="er", min_nodes=20, max_nodes=80, count=100, seed=3, er_p=0.6)
        gs = generate(spec).all_graphs()
        rate = np.mean([check_validity(g, spec) for g in gs])
        assert rate >= 0.9

    def test_wrong_density_rejected(self):
        spec = preset("er-20-80")
        empty = Graph.empty(40)
        assert not check_validity(empty, spec)


class TestBaFamily:
    def test_edge_count_formula(self):
        spec = DatasetSpec(family="ba", min_nodes=64, max_nodes=64, count=10, seed=4, ba_m=6)
        expected = 6 * 5 // 2 + (64 - 6) * 6
        for g in generate(spec).all_graphs():
            assert g.num_edges() == expected
            assert g.adjacency().sum(axis=1).min() >= 6

    def test_self_acceptance(self):
        spec = DatasetSpec(family="ba", min_nodes=64, max_nodes=64, count=40, seed=4, ba_m=6)
        gs = generate(spec).all_graphs()
        rate = np.mean([check_validity(g, spec) for g in gs])
        assert rate >= 0.9

    def test_tree_rejected_as_ba(self):
        path = Graph.from_edges(64, [(i, i + 1) for i in range(63)])
        assert not check_validity(path, "ba")


class TestSbmFamily:
    def test_self_acceptance_calibration(self):
        # acceptance rate frozen from a 500-graph Monte Carlo run
        spec = DatasetSpec(
            family="sbm", min_nodes=20, max_nodes=30, count=200, seed=123,
            num_communities=(2, 2), community_size=(10, 15), p_intra=0.3, p_inter=0.05,
        )
        gs = generate(spec).all_graphs()
        rate = np.mean([check_validity(g, spec) for g in gs])
        assert rate >= 0.9

    def test_dense_noise_rejected(self):
        from graphflow.rng import stream

        spec = preset("sbm-desk")
        rng = stream(1, "dense")
        rejected = 0
        for _ in range(20):
            n = 25
            iu, ju = np.triu_indices(n, 1)
            vals = (rng.random(len(iu)) < 0.5).astype(np.int64)
            e = np.zeros((n, n), dtype=np.int64)
            e[iu, ju] = vals
            e[ju, iu] = vals
            if not check_validity(Graph(n, np.zeros(n, dtype=np.int64), e), spec):
                rejected += 1
        assert rejected == 20

    def test_too_small_rejected(self):
        assert not check_validity(Graph.empty(5), preset("sbm-desk"))


class TestManifest:
    def test_round_trip(self, tmp_path):
        spec = preset("sbm-desk")
        path = tmp_path / "manifest.json"
        write_manifest(spec, path)
        assert read_manifest(path) == spec

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            preset("quantum")
