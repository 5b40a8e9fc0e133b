"""Discrete flow matching: forward noising, CTMC rate matrices, Euler sampling.

State at time t interpolates linearly between a fixed categorical prior
(t = 0) and the data (t = 1), independently per node and per unordered edge
pair. Generation reverses this with a continuous-time Markov chain whose
rates are built from a posterior estimate of the clean graph, optionally
biased toward the predicted target (omega), randomized along a
detailed-balance direction (eta), and run on a monotonically distorted time
grid.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .graphs import Graph


@functools.lru_cache(maxsize=512)
def _triu(n: int):
    return np.triu_indices(n, 1)


def _sample_categorical(rng: np.random.Generator, cum_probs: np.ndarray, size: int) -> np.ndarray:
    """Draw `size` class indices from a distribution given by its cumsum."""
    idx = np.searchsorted(cum_probs, rng.random(size), side="right")
    return np.minimum(idx, len(cum_probs) - 1).astype(np.int64)

__all__ = [
    "NoiseDistribution",
    "RatePolicy",
    "PosteriorPrediction",
    "noising_marginal",
    "noise_graph",
    "conditional_rate",
    "guided_rate",
    "db_rate",
    "expected_rate",
    "transition_kernel",
    "euler_step",
    "sample",
    "sample_many",
    "loss",
    "distort",
]

# rates are evaluated at min(t, 1 - T_CLIP) to keep the final step bounded
T_CLIP = 1e-4
# -log(p) cap when a true class has zero predicted mass
LOG_LOSS_CAP = 1e30


def _check_simplex(v: np.ndarray, name: str, tol: float = 1e-12) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a 1-D probability vector")
    if v.min() < 0 or abs(v.sum() - 1.0) > tol:
        raise ValueError(f"{name} must be a simplex vector (sum 1, nonnegative)")
    return v


@dataclass(frozen=True)
class NoiseDistribution:
    """Fixed categorical priors for node and edge classes."""

    node_probs: np.ndarray
    edge_probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "node_probs", _check_simplex(self.node_probs, "node_probs"))
        object.__setattr__(self, "edge_probs", _check_simplex(self.edge_probs, "edge_probs"))

    @classmethod
    def uniform(cls, num_node_classes: int, num_edge_classes: int) -> "NoiseDistribution":
        return cls(
            np.full(num_node_classes, 1.0 / num_node_classes),
            np.full(num_edge_classes, 1.0 / num_edge_classes),
        )

    @classmethod
    def marginal(cls, graphs: Sequence[Graph], num_node_classes: int, num_edge_classes: int) -> "NoiseDistribution":
        """Empirical class marginals over a graph list (edges over i<j pairs)."""
        node_counts = np.zeros(num_node_classes)
        edge_counts = np.zeros(num_edge_classes)
        for g in graphs:
            node_counts += np.bincount(g.node_labels, minlength=num_node_classes)
            iu = np.triu_indices(g.num_nodes, 1)
            edge_counts += np.bincount(g.edge_labels[iu], minlength=num_edge_classes)
        if node_counts.sum() == 0 or edge_counts.sum() == 0:
            raise ValueError("cannot take marginals of an empty graph list")
        return cls(node_counts / node_counts.sum(), edge_counts / edge_counts.sum())


def _parse_distortion(name: str) -> tuple[str, int]:
    if name == "identity":
        return "identity", 0
    if name == "cosine":
        return "cosine", 0
    if name.startswith("poly:"):
        k = int(name.split(":", 1)[1])
        if k < 1:
            raise ValueError("polynomial distortion needs k >= 1")
        return "poly", k
    raise ValueError(f"unknown distortion {name!r} (expected identity|poly:k|cosine)")


@dataclass(frozen=True)
class RatePolicy:
    """Sampling-time knobs: guidance strength, stochasticity, time distortion,
    and Euler step count."""

    omega: float = 0.0
    eta: float = 0.0
    distortion: str = "identity"
    steps: int = 100

    def __post_init__(self):
        if self.omega < 0 or self.eta < 0:
            raise ValueError("omega and eta must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        _parse_distortion(self.distortion)

    def to_json(self) -> dict:
        return {"omega": self.omega, "eta": self.eta, "distortion": self.distortion, "steps": self.steps}

    @classmethod
    def from_json(cls, obj: dict) -> "RatePolicy":
        return cls(
            omega=float(obj.get("omega", 0.0)),
            eta=float(obj.get("eta", 0.0)),
            distortion=str(obj.get("distortion", "identity")),
            steps=int(obj.get("steps", 100)),
        )


@dataclass(frozen=True)
class PosteriorPrediction:
    """Factorized clean-graph prediction: per-node and per-pair class
    distributions; the edge tensor is symmetric in (i, j)."""

    node_dists: np.ndarray  # N x X
    edge_dists: np.ndarray  # N x N x E


def distort(t: float, fn: str) -> float:
    """Monotone bijections of [0, 1] reshaping the sampling grid."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must be in [0, 1]")
    kind, k = _parse_distortion(fn)
    if kind == "identity":
        return t
    if kind == "poly":
        return t**k
    return (1.0 - math.cos(math.pi * t)) / 2.0


def noising_marginal(x1: int, t: float, prior: np.ndarray) -> np.ndarray:
    """t * one_hot(x1) + (1 - t) * prior."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must be in [0, 1]")
    prior = np.asarray(prior, dtype=np.float64)
    out = (1.0 - t) * prior.copy()
    out[x1] += t
    return out


def noise_graph(g1: Graph, t: float, noise: NoiseDistribution, rng: np.random.Generator) -> Graph:
    """Sample every node and every unordered pair independently from its
    interpolated marginal; output stays symmetric with zero diagonal."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must be in [0, 1]")
    n = g1.num_nodes

    keep = rng.random(n) < t
    noisy_nodes = _sample_categorical(rng, noise.node_probs.cumsum(), n)
    nodes = np.where(keep, g1.node_labels, noisy_nodes)

    iu, ju = _triu(n)
    keep_e = rng.random(len(iu)) < t
    noisy_edges = _sample_categorical(rng, noise.edge_probs.cumsum(), len(iu))
    vals = np.where(keep_e, g1.edge_labels[iu, ju], noisy_edges)
    edges = np.zeros((n, n), dtype=np.int64)
    edges[iu, ju] = vals
    edges[ju, iu] = vals
    return Graph._trusted(n, nodes.astype(np.int64), edges)


# ---------------------------------------------------------------------------
# Rate vectors for a single categorical variable.
# Convention: entry j != x_t is the jump intensity toward class j; the entry
# at x_t balances the row to sum 0.
# ---------------------------------------------------------------------------


def _with_diagonal(rates: np.ndarray, x_t: int) -> np.ndarray:
    rates[x_t] = 0.0
    rates[x_t] = -rates.sum()
    return rates


def conditional_rate(x_t: int, x1: int, t: float, num_classes: int) -> np.ndarray:
    """Rate transporting the interpolated marginal toward the clean target:
    mass 1/(1-t) toward x1 when not there yet, zero otherwise."""
    if t >= 1.0:
        raise ValueError("conditional rate is singular at t >= 1")
    rates = np.zeros(num_classes, dtype=np.float64)
    if x_t != x1:
        rates[x1] = 1.0 / (1.0 - t)
    return _with_diagonal(rates, x_t)


def _support_size(x1: int, t: float, prior: np.ndarray) -> int:
    """Number of classes with positive interpolated mass given the target."""
    positive = prior > 0
    z = int(np.count_nonzero(positive))
    if t > 0 and not positive[x1]:
        z += 1
    return z


def guided_rate(
    base: np.ndarray, x_t: int, x1: int, t: float, omega: float, prior: np.ndarray
) -> np.ndarray:
    """Add omega-scaled extra mass toward the clean target, normalized by the
    current state's interpolated probability."""
    prior = np.asarray(prior, dtype=np.float64)
    p_curr = noising_marginal(x1, t, prior)[x_t]
    if p_curr <= 0:
        raise ValueError("guidance undefined: current state has zero interpolated mass")
    rates = base.copy()
    if omega != 0.0 and x1 != x_t:
        z = _support_size(x1, t, prior)
        rates[x1] += omega / (z * p_curr)
    return _with_diagonal(rates, x_t)


def db_rate(x_t: int, x1: int, t: float, prior: np.ndarray) -> np.ndarray:
    """Detailed-balance rate: R(i, j) = p_{t|1}(j | x1) off-diagonal, which
    satisfies p(i) R(i, j) == p(j) R(j, i) exactly."""
    marg = noising_marginal(x1, t, np.asarray(prior, dtype=np.float64))
    rates = marg.copy()
    return _with_diagonal(rates, x_t)


def expected_rate(
    x_t: int,
    posterior: np.ndarray,
    t: float,
    policy: RatePolicy,
    prior: np.ndarray,
) -> np.ndarray:
    """Posterior-weighted mixture of conditional, guidance, and
    detailed-balance rates for one variable."""
    posterior = _check_simplex(posterior, "posterior", tol=1e-6)
    num_classes = len(posterior)
    out = np.zeros(num_classes, dtype=np.float64)
    for x1 in range(num_classes):
        w = posterior[x1]
        if w == 0.0:
            continue
        r = conditional_rate(x_t, x1, t, num_classes)
        if policy.omega != 0.0:
            r = guided_rate(r, x_t, x1, t, policy.omega, prior)
        if policy.eta != 0.0:
            r = r + policy.eta * db_rate(x_t, x1, t, prior)
        out += w * r
    return _with_diagonal(out, x_t)


def _expected_rates_array(
    current: np.ndarray,
    posterior: np.ndarray,
    t: float,
    policy: RatePolicy,
    prior: np.ndarray,
) -> np.ndarray:
    """Vectorized expected_rate over a batch of variables.

    current: (V,) class indices; posterior: (V, S). Returns (V, S) rate
    vectors (diagonal balanced). Agrees with expected_rate per variable.
    """
    v, s = posterior.shape
    rows = np.arange(v)
    q_curr = posterior[rows, current]
    # conditional: q(j)/(1-t) toward j != current
    rates = posterior / (1.0 - t)
    if policy.omega != 0.0:
        # p_{t|1}(current | x1=j) = t*delta(current,j) + (1-t)*prior(current)
        p_cond = (1.0 - t) * prior[current][:, None] + t * np.eye(s)[current]
        if np.any((posterior > 0) & (p_cond <= 0)):
            raise ValueError("guidance undefined: current state has zero interpolated mass")
        z = np.array([_support_size(j, t, prior) for j in range(s)], dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            guide = np.where(posterior > 0, policy.omega * posterior / (z[None, :] * p_cond), 0.0)
        rates = rates + guide
    if policy.eta != 0.0:
        rates = rates + policy.eta * (t * posterior + (1.0 - t) * prior[None, :])
    rates[rows, current] = 0.0
    rates[rows, current] = -rates.sum(axis=1)
    return rates


def transition_kernel(rates: np.ndarray, current: int, dt: float) -> np.ndarray:
    """One Euler step as a categorical kernel over classes.

    Jump probability to j != current is rate_j * dt clamped at 0; if the
    total jump mass exceeds 1 it is renormalized to 1 and the stay
    probability becomes 0, otherwise stay = 1 - total.
    """
    return _kernel_with_current(np.asarray(rates, dtype=np.float64)[None, :], np.array([current]), dt)[0]


def _kernel_with_current(rates: np.ndarray, current: np.ndarray, dt: float) -> np.ndarray:
    """Categorical kernels for (V, S) rates with (V,) current states."""
    v, s = rates.shape
    rows = np.arange(v)
    probs = rates * dt
    probs[rows, current] = 0.0
    probs = np.maximum(probs, 0.0)
    total = probs.sum(axis=1)
    over = total > 1.0
    if np.any(over):
        probs[over] /= total[over][:, None]
        total = np.minimum(total, 1.0)
    probs[rows, current] = 1.0 - total
    return probs


def euler_step(
    g_t: Graph,
    prediction: PosteriorPrediction,
    t: float,
    dt: float,
    policy: RatePolicy,
    rng: np.random.Generator,
    noise: NoiseDistribution,
) -> Graph:
    """Advance every variable one Euler step under the expected rates.

    Nodes and unordered edge pairs transition independently; symmetry is
    preserved by sampling only i < j. Rates are evaluated at
    min(t, 1 - 1e-4) so the final step stays bounded.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t + dt > 1.0 + 1e-12:
        raise ValueError("t + dt must not exceed 1")
    t_eff = min(t, 1.0 - T_CLIP)
    n = g_t.num_nodes

    nodes = np.asarray(g_t.node_labels)
    if prediction.node_dists.shape[1] > 1:
        rates = _expected_rates_array(nodes, prediction.node_dists, t_eff, policy, noise.node_probs)
        kernel = _kernel_with_current(rates, nodes, dt)
        u = rng.random(n)
        nodes = (kernel.cumsum(axis=1) > u[:, None]).argmax(axis=1)

    iu, ju = _triu(n)
    edges = np.zeros((n, n), dtype=np.int64)
    if len(iu) > 0:
        current = g_t.edge_labels[iu, ju]
        post = prediction.edge_dists[iu, ju]
        rates = _expected_rates_array(current, post, t_eff, policy, noise.edge_probs)
        kernel = _kernel_with_current(rates, current, dt)
        u = rng.random(len(iu))
        vals = (kernel.cumsum(axis=1) > u[:, None]).argmax(axis=1)
        edges[iu, ju] = vals
        edges[ju, iu] = vals
    return Graph._trusted(n, np.ascontiguousarray(nodes, dtype=np.int64), edges)


def _noise_sample(n: int, noise: NoiseDistribution, rng: np.random.Generator) -> Graph:
    nodes = _sample_categorical(rng, noise.node_probs.cumsum(), n)
    iu, ju = _triu(n)
    vals = _sample_categorical(rng, noise.edge_probs.cumsum(), len(iu))
    edges = np.zeros((n, n), dtype=np.int64)
    edges[iu, ju] = vals
    edges[ju, iu] = vals
    return Graph._trusted(n, nodes, edges)


Denoiser = Callable[[Graph, float], PosteriorPrediction]


def sample(
    model: Denoiser,
    n_nodes: int,
    noise: NoiseDistribution,
    policy: RatePolicy,
    rng: np.random.Generator,
) -> Graph:
    """Draw from the prior and integrate the CTMC over the distorted grid."""
    return sample_many(lambda gs, ts: [model(gs[0], ts[0])], [n_nodes], noise, policy, [rng])[0]


BatchDenoiser = Callable[[list[Graph], list[float]], list[PosteriorPrediction]]


def sample_many(
    model_batch: BatchDenoiser,
    n_nodes: Sequence[int],
    noise: NoiseDistribution,
    policy: RatePolicy,
    rngs: Sequence[np.random.Generator],
) -> list[Graph]:
    """Sample several graphs in lockstep (one forward pass per Euler step).

    Each graph consumes only its own rng, so results match one-at-a-time
    sampling with the same streams regardless of batching.
    """
    if len(n_nodes) != len(rngs):
        raise ValueError("need one rng per graph")
    graphs = [_noise_sample(n, noise, rng) for n, rng in zip(n_nodes, rngs)]
    grid = [distort(k / policy.steps, policy.distortion) for k in range(policy.steps + 1)]
    for k in range(policy.steps):
        t, t_next = grid[k], grid[k + 1]
        dt = t_next - t
        if dt <= 0:
            continue
        preds = model_batch(graphs, [t] * len(graphs))
        graphs = [
            euler_step(g, pred, t, dt, policy, rng, noise)
            for g, pred, rng in zip(graphs, preds, rngs)
        ]
    return graphs


def loss(prediction: PosteriorPrediction, g1: Graph, edge_weight: float) -> float:
    """Cross-entropy of the clean graph under the factorized prediction.

    Node term plus edge_weight times the i != j edge term (taken as twice the
    i < j sum). A true class with zero predicted mass contributes a capped
    large value and emits a warning rather than inf.
    """
    n = g1.num_nodes
    if prediction.node_dists.shape[0] != n or prediction.edge_dists.shape[0] != n:
        raise ValueError("prediction dimensions do not match the graph")
    if edge_weight <= 0:
        raise ValueError("edge_weight must be positive")

    node_p = prediction.node_dists[np.arange(n), g1.node_labels]
    iu, ju = np.triu_indices(n, 1)
    edge_p = prediction.edge_dists[iu, ju, g1.edge_labels[iu, ju]] if len(iu) else np.ones(0)

    zero_mass = bool((node_p <= 0).any() or (edge_p <= 0).any())
    if zero_mass:
        warnings.warn("true class with zero predicted mass; loss capped", RuntimeWarning)
    with np.errstate(divide="ignore"):
        node_term = -np.log(np.maximum(node_p, 0.0))
        edge_term = -np.log(np.maximum(edge_p, 0.0))
    node_term = np.minimum(node_term, LOG_LOSS_CAP)
    edge_term = np.minimum(edge_term, LOG_LOSS_CAP)
    return float(node_term.sum() + edge_weight * 2.0 * edge_term.sum())
