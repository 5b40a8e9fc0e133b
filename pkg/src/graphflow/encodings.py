"""Positional encodings and the scalar symmetry-modulation mechanism.

Two encoding families feed the denoiser:

* random-walk probabilities: powers of the degree-normalized adjacency,
  permutation-equivariant by construction (node features are the diagonals,
  pair features the full powers);
* sinusoidal index encodings: a fixed absolute frame over storage indices,
  deliberately symmetry-breaking. A scalar `lam` rescales their
  permutation-invariant mean component against the per-node deviations, and
  an optional coverage fraction restores the mean row on a random node
  subset.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .graphs import Graph

__all__ = [
    "EncodingConfig",
    "EncodingMatrix",
    "rrwp",
    "sinusoidal",
    "modulate",
    "modulate_normalized",
    "apply_coverage",
    "encoding_for",
    "encoding_dims",
]


@dataclass(frozen=True)
class EncodingConfig:
    """Which encoding the training pipeline builds, and its knobs.

    kind "rrwp" uses hop count K; kind "sinusoidal" uses channel count d,
    the modulation scale lam, the mean-preserving normalized variant, and
    the node coverage fraction.
    """

    kind: str = "rrwp"
    K: int = 8
    d: int = 16
    lam: float = 1.0
    normalized: bool = False
    coverage: float = 1.0

    def __post_init__(self):
        if self.kind not in ("rrwp", "sinusoidal"):
            raise ValueError(f"unknown encoding kind {self.kind!r}")
        if self.kind == "rrwp":
            if self.K < 0:
                raise ValueError("K must be >= 0")
        else:
            if self.d < 2 or self.d % 2 != 0:
                raise ValueError("d must be even and >= 2")
            if self.lam < 0:
                raise ValueError("lam must be >= 0")
            if self.normalized and self.lam == 0:
                raise ValueError("normalized modulation requires lam > 0")
            if not 0 < self.coverage <= 1:
                raise ValueError("coverage must be in (0, 1]")

    def to_json(self) -> dict:
        if self.kind == "rrwp":
            return {"kind": "rrwp", "K": self.K}
        return {
            "kind": "sinusoidal",
            "d": self.d,
            "lambda": self.lam,
            "normalized": self.normalized,
            "coverage": self.coverage,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EncodingConfig":
        kind = obj["kind"]
        if kind == "rrwp":
            return cls(kind="rrwp", K=int(obj.get("K", 8)))
        return cls(
            kind="sinusoidal",
            d=int(obj.get("d", 16)),
            lam=float(obj.get("lambda", 1.0)),
            normalized=bool(obj.get("normalized", False)),
            coverage=float(obj.get("coverage", 1.0)),
        )


@dataclass(frozen=True)
class EncodingMatrix:
    """Per-node feature rows, plus per-pair features for the random-walk kind."""

    node_features: np.ndarray  # N x d_node
    pair_features: np.ndarray | None = None  # N x N x d_pair


def rrwp(g: Graph, K: int) -> EncodingMatrix:
    """Random-walk transition probabilities up to K hops.

    M = D^{-1} A on the binary adjacency; rows of isolated nodes are all
    zeros. pair_features[i, j] = [delta_ij, M_ij, ..., (M^K)_ij] and the node
    features are the diagonal slices.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    n = g.num_nodes
    adj = g.adjacency()
    deg = adj.sum(axis=1)
    with np.errstate(divide="ignore"):
        inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1e-300), 0.0)
    m = adj * inv[:, None]
    pair = np.empty((n, n, K + 1), dtype=np.float64)
    pair[:, :, 0] = np.eye(n)
    power = np.eye(n)
    for k in range(1, K + 1):
        power = power @ m
        pair[:, :, k] = power
    node = pair[np.arange(n), np.arange(n), :].copy()
    return EncodingMatrix(node_features=node, pair_features=pair)


@functools.lru_cache(maxsize=256)
def _sinusoidal_base(n: int, d: int) -> np.ndarray:
    idx = np.arange(n, dtype=np.float64)[:, None]
    j = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = idx / np.power(10000.0, 2.0 * j / d)
    out = np.empty((n, d), dtype=np.float64)
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    out.flags.writeable = False
    return out


def sinusoidal(n: int, d: int) -> EncodingMatrix:
    """Index-based sine/cosine rows; independent of the graph structure."""
    if d < 2 or d % 2 != 0:
        raise ValueError("d must be even and >= 2")
    return EncodingMatrix(node_features=_sinusoidal_base(n, d).copy())


def _mean_row(features: np.ndarray) -> np.ndarray:
    return features.mean(axis=0)


def modulate(enc: EncodingMatrix, lam: float) -> EncodingMatrix:
    """Rescale the permutation-invariant mean component of the node rows.

    Output row i = lam * mean + (row_i - mean), where mean is the per-channel
    average across nodes. lam = 1 is the identity (exactly); larger lam
    amplifies the shared component relative to the symmetry-breaking
    deviations.
    """
    if lam == 1.0:
        return enc
    mean = _mean_row(enc.node_features)
    out = lam * mean[None, :] + (enc.node_features - mean[None, :])
    return EncodingMatrix(node_features=out, pair_features=enc.pair_features)


def modulate_normalized(enc: EncodingMatrix, lam: float) -> EncodingMatrix:
    """Mean-preserving variant: row i = mean + (row_i - mean) / lam.

    The per-channel average of the output equals the input average for every
    lam > 0, so the shared component no longer grows with lam.
    """
    if lam == 0:
        raise ValueError("lam must be nonzero for normalized modulation")
    if lam == 1.0:
        return enc
    mean = _mean_row(enc.node_features)
    out = mean[None, :] + (enc.node_features - mean[None, :]) / lam
    return EncodingMatrix(node_features=out, pair_features=enc.pair_features)


def apply_coverage(enc: EncodingMatrix, coverage: float, rng: np.random.Generator) -> EncodingMatrix:
    """Keep encodings on a random ceil(coverage*N) node subset; the remaining
    rows are replaced by the per-channel mean row (invariant component only).
    """
    if not 0 < coverage <= 1:
        raise ValueError("coverage must be in (0, 1]")
    feats = enc.node_features
    n = feats.shape[0]
    keep = math.ceil(coverage * n)
    if keep >= n:
        return enc
    kept = rng.choice(n, size=keep, replace=False)
    mask = np.zeros(n, dtype=bool)
    mask[kept] = True
    mean = _mean_row(feats)
    out = np.where(mask[:, None], feats, mean[None, :])
    return EncodingMatrix(node_features=out, pair_features=enc.pair_features)


def encoding_for(g: Graph, cfg: EncodingConfig, rng: np.random.Generator | None = None) -> EncodingMatrix:
    """Build the configured encoding for one graph.

    Random-walk features are computed on the graph as given (during training
    that is the noisy graph; during sampling, the current chain state).
    Sinusoidal features depend only on size and storage order; modulation is
    applied before coverage, and coverage < 1 draws from `rng` per call.
    """
    if cfg.kind == "rrwp":
        return rrwp(g, cfg.K)
    enc = sinusoidal(g.num_nodes, cfg.d)
    enc = modulate_normalized(enc, cfg.lam) if cfg.normalized else modulate(enc, cfg.lam)
    if cfg.coverage < 1.0:
        if rng is None:
            raise ValueError("coverage < 1 requires an rng")
        enc = apply_coverage(enc, cfg.coverage, rng)
    return enc


def encoding_dims(cfg: EncodingConfig) -> tuple[int, int]:
    """(node feature width, pair feature width) contributed by the encoding."""
    if cfg.kind == "rrwp":
        return cfg.K + 1, cfg.K + 1
    return cfg.d, 0
