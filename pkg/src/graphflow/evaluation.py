"""Sample-quality metrics: validity/uniqueness/novelty and MMD ratios.

Uniqueness and novelty are isomorphism-based with a hash prefilter; the
distribution distance compares per-graph histograms of four structural
statistics (degrees, clustering, 4-node orbit memberships, normalized
Laplacian spectrum) under a Gaussian kernel on total-variation distance,
normalized by the train-vs-test distance of the same statistic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import DatasetSpec, check_validity
from .graphs import Graph, GraphStatistics, canonical_hash, compute_statistics, is_isomorphic

__all__ = [
    "VunReport",
    "RatioReport",
    "MetricConfig",
    "vun",
    "mmd",
    "avg_ratio",
]

STATISTIC_NAMES = ("degree", "clustering", "orbit", "spectrum")


@dataclass(frozen=True)
class MetricConfig:
    """Kernel bandwidths and binning for the ratio metric, plus the
    uniqueness reading (first occurrence kept vs all duplicates excluded)."""

    sigma: dict = field(
        default_factory=lambda: {"degree": 1.0, "clustering": 1.0, "orbit": 1.0, "spectrum": 0.1}
    )
    clustering_bins: int = 100
    spectrum_bins: int = 200
    strict_uniqueness: bool = False

    def to_json(self) -> dict:
        return {
            "sigma": dict(self.sigma),
            "clustering_bins": self.clustering_bins,
            "spectrum_bins": self.spectrum_bins,
            "strict_uniqueness": self.strict_uniqueness,
        }


@dataclass(frozen=True)
class VunReport:
    validity: float
    uniqueness: float
    novelty: float
    vun: float
    num_generated: int
    num_valid: int
    num_unique: int
    num_novel: int

    def to_json(self) -> dict:
        return {
            "validity": self.validity,
            "uniqueness": self.uniqueness,
            "novelty": self.novelty,
            "vun": self.vun,
            "counts": {
                "generated": self.num_generated,
                "valid": self.num_valid,
                "unique": self.num_unique,
                "novel": self.num_novel,
            },
        }


@dataclass(frozen=True)
class RatioReport:
    gen_test_mmd: dict
    train_test_mmd: dict
    ratios: dict
    avg_ratio: float
    dropped: tuple = ()

    def to_json(self) -> dict:
        return {
            "gen_test_mmd": dict(self.gen_test_mmd),
            "train_test_mmd": dict(self.train_test_mmd),
            "ratios": dict(self.ratios),
            "avg_ratio": self.avg_ratio,
            "dropped": list(self.dropped),
        }


# ---------------------------------------------------------------------------
# VUN
# ---------------------------------------------------------------------------


def _iso_groups(graphs: list[Graph]):
    """Greedy grouping into isomorphism classes, hash-bucketed."""
    buckets: dict[bytes, list[int]] = {}
    group_of = []
    representatives: list[Graph] = []
    for g in graphs:
        h = canonical_hash(g)
        gid = None
        for cand in buckets.get(h, []):
            if is_isomorphic(g, representatives[cand]):
                gid = cand
                break
        if gid is None:
            gid = len(representatives)
            representatives.append(g)
            buckets.setdefault(h, []).append(gid)
        group_of.append(gid)
    return group_of, representatives


def vun(
    generated: list[Graph],
    train_set: list[Graph],
    family,
    metric_cfg: MetricConfig | None = None,
) -> VunReport:
    """Validity, uniqueness, and novelty of a generated set.

    Validity: fraction passing the family check. Uniqueness: over valid
    graphs, the fraction not isomorphic to an earlier valid graph (first
    occurrence kept; the strict reading drops all duplicates). Novelty: over
    valid graphs, the fraction not isomorphic to any training graph.
    """
    if not generated:
        raise ValueError("generated list must be non-empty")
    metric_cfg = metric_cfg or MetricConfig()
    valid = [g for g in generated if check_validity(g, family)]

    group_of, _ = _iso_groups(valid)
    counts = np.bincount(group_of, minlength=len(set(group_of))) if group_of else np.zeros(0, int)
    if metric_cfg.strict_uniqueness:
        num_unique = sum(1 for gid in group_of if counts[gid] == 1)
    else:
        num_unique = len(set(group_of))

    train_buckets: dict[bytes, list[Graph]] = {}
    for g in train_set:
        train_buckets.setdefault(canonical_hash(g), []).append(g)
    num_novel = 0
    for g in valid:
        h = canonical_hash(g)
        if not any(is_isomorphic(g, tg) for tg in train_buckets.get(h, [])):
            num_novel += 1

    n_gen, n_valid = len(generated), len(valid)
    validity = n_valid / n_gen
    uniqueness = num_unique / n_valid if n_valid else 0.0
    novelty = num_novel / n_valid if n_valid else 0.0
    return VunReport(
        validity=validity,
        uniqueness=uniqueness,
        novelty=novelty,
        vun=validity * uniqueness * novelty,
        num_generated=n_gen,
        num_valid=n_valid,
        num_unique=num_unique,
        num_novel=num_novel,
    )


# ---------------------------------------------------------------------------
# MMD over statistic histograms
# ---------------------------------------------------------------------------


def _normalize(h: np.ndarray) -> np.ndarray:
    total = h.sum()
    return h / total if total > 0 else h


def _pad_pair(a: list[np.ndarray], b: list[np.ndarray]):
    width = max(max(len(x) for x in a), max(len(x) for x in b))
    pad = lambda x: np.pad(x, (0, width - len(x)))
    return [pad(x) for x in a], [pad(x) for x in b]


def _tv_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # a: (n, d), b: (m, d) normalized histograms
    return 0.5 * np.abs(a[:, None, :] - b[None, :, :]).sum(axis=2)


def mmd(set_a: list[np.ndarray], set_b: list[np.ndarray], kernel_bandwidth: float = 1.0) -> float:
    """Squared MMD (biased V-statistic) with k(x, y) = exp(-TV(x,y)^2 / (2 s^2))
    over normalized histograms, clamped at zero."""
    if not set_a or not set_b:
        raise ValueError("both sets must be non-empty")
    a_pad, b_pad = _pad_pair(list(set_a), list(set_b))
    a = np.stack([_normalize(x) for x in a_pad])
    b = np.stack([_normalize(x) for x in b_pad])
    s2 = 2.0 * kernel_bandwidth**2
    k_aa = np.exp(-(_tv_matrix(a, a) ** 2) / s2).mean()
    k_bb = np.exp(-(_tv_matrix(b, b) ** 2) / s2).mean()
    k_ab = np.exp(-(_tv_matrix(a, b) ** 2) / s2).mean()
    return float(max(k_aa + k_bb - 2.0 * k_ab, 0.0))


def _histograms(stats: list[GraphStatistics], cfg: MetricConfig) -> dict[str, list[np.ndarray]]:
    out: dict[str, list[np.ndarray]] = {name: [] for name in STATISTIC_NAMES}
    for st in stats:
        out["degree"].append(st.degree_histogram.astype(np.float64))
        cl, _ = np.histogram(st.clustering_coefficients, bins=cfg.clustering_bins, range=(0.0, 1.0))
        out["clustering"].append(cl.astype(np.float64))
        orbit = np.bincount(st.orbit_counts, minlength=1).astype(np.float64)
        out["orbit"].append(orbit)
        sp, _ = np.histogram(
            np.clip(st.laplacian_spectrum, 0.0, 2.0), bins=cfg.spectrum_bins, range=(0.0, 2.0)
        )
        out["spectrum"].append(sp.astype(np.float64))
    return out


def avg_ratio(
    generated: list[Graph],
    train: list[Graph],
    test: list[Graph],
    metric_cfg: MetricConfig | None = None,
    precomputed: dict | None = None,
) -> RatioReport:
    """Per-statistic MMD(generated, test) / MMD(train, test) and their mean.

    Statistics whose train-vs-test MMD is zero are dropped from the average
    (recorded in `dropped`); the average over no statistics is nan.
    `precomputed` may carry {"train": stats, "test": stats} to reuse
    statistics across repeated calls.
    """
    if not generated or not train or not test:
        raise ValueError("all three graph sets must be non-empty")
    cfg = metric_cfg or MetricConfig()
    pre = precomputed or {}
    gen_stats = [compute_statistics(g) for g in generated]
    train_stats = pre.get("train") or [compute_statistics(g) for g in train]
    test_stats = pre.get("test") or [compute_statistics(g) for g in test]

    gen_h = _histograms(gen_stats, cfg)
    train_h = _histograms(train_stats, cfg)
    test_h = _histograms(test_stats, cfg)

    gen_test = {}
    train_test = {}
    ratios = {}
    dropped = []
    for name in STATISTIC_NAMES:
        sigma = cfg.sigma[name]
        gen_test[name] = mmd(gen_h[name], test_h[name], sigma)
        train_test[name] = mmd(train_h[name], test_h[name], sigma)
        if train_test[name] == 0.0:
            dropped.append(name)
        else:
            ratios[name] = gen_test[name] / train_test[name]
    avg = float(np.mean(list(ratios.values()))) if ratios else float("nan")
    return RatioReport(
        gen_test_mmd=gen_test,
        train_test_mmd=train_test,
        ratios=ratios,
        avg_ratio=avg,
        dropped=tuple(dropped),
    )
