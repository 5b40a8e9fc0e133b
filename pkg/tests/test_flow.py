import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphflow.flow import (
    NoiseDistribution,
    PosteriorPrediction,
    RatePolicy,
    conditional_rate,
    db_rate,
    distort,
    euler_step,
    expected_rate,
    guided_rate,
    loss,
    noise_graph,
    noising_marginal,
    sample,
    sample_many,
    transition_kernel,
    _expected_rates_array,
)
from graphflow.graphs import Graph
from graphflow.rng import stream


def toy_posterior_model(data_probs: np.ndarray, prior: np.ndarray):
    """Exact single-edge posterior for 2-node graphs: p(e1 | e_t, t) by Bayes
    over the linear interpolation kernel."""

    def model(g_t: Graph, t: float) -> PosteriorPrediction:
        e_t = g_t.edge_labels[0, 1]
        lik = t * np.eye(len(data_probs))[:, e_t] + (1 - t) * prior[e_t]
        post = data_probs * lik
        post = post / post.sum()
        edge = np.zeros((2, 2, len(data_probs)))
        edge[0, 1] = post
        edge[1, 0] = post
        edge[0, 0, 0] = edge[1, 1, 0] = 1.0
        return PosteriorPrediction(node_dists=np.ones((2, 1)), edge_dists=edge)

    return model


class TestNoisingMarginal:
    def test_endpoints(self):
        prior = np.array([0.3, 0.7])
        assert np.allclose(noising_marginal(1, 1.0, prior), [0.0, 1.0])
        assert np.allclose(noising_marginal(1, 0.0, prior), prior)

    def test_interpolation_value(self):
        out = noising_marginal(1, 0.3, np.array([0.5, 0.5]))
        assert np.allclose(out, [0.35, 0.65])

    def test_monte_carlo_agreement(self):
        rng = stream(42, "marginal-mc")
        prior = np.array([0.5, 0.5])
        expected = noising_marginal(1, 0.3, prior)
        draws = np.where(rng.random(100_000) < 0.3, 1, rng.choice(2, size=100_000, p=prior))
        freq = np.bincount(draws, minlength=2) / 100_000
        assert np.abs(freq - expected).max() < 0.005

    def test_domain_error(self):
        with pytest.raises(ValueError):
            noising_marginal(0, 1.5, np.array([1.0]))


class TestNoiseGraph:
    def test_t_one_exact(self, triangle):
        noise = NoiseDistribution.uniform(1, 2)
        assert noise_graph(triangle, 1.0, noise, stream(0, "ng")) == triangle

    def test_t_zero_deterministic_prior(self, triangle):
        noise = NoiseDistribution(np.array([1.0]), np.array([1.0, 0.0]))
        out = noise_graph(triangle, 0.0, noise, stream(0, "ng"))
        assert out == Graph.empty(3)

    def test_symmetry_and_diagonal(self, triangle):
        noise = NoiseDistribution.uniform(1, 2)
        out = noise_graph(triangle, 0.4, noise, stream(1, "ng"))
        assert np.array_equal(out.edge_labels, out.edge_labels.T)
        assert np.all(np.diag(out.edge_labels) == 0)

    def test_triangle_mean_edge_count(self, triangle):
        # each edge stays with prob 0.5 + 0.5*0.5 = 0.75 -> mean count 2.25
        noise = NoiseDistribution.uniform(1, 2)
        rng = stream(2, "ng-mc")
        total = sum(noise_graph(triangle, 0.5, noise, rng).num_edges() for _ in range(10_000))
        assert abs(total / 10_000 - 2.25) < 0.05

    def test_marginal_estimation(self):
        gs = [Graph.from_edges(3, [(0, 1)]), Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])]
        noise = NoiseDistribution.marginal(gs, 1, 2)
        assert np.allclose(noise.edge_probs, [2 / 6, 4 / 6])


class TestConditionalRate:
    def test_zero_at_target(self):
        assert np.allclose(conditional_rate(1, 1, 0.5, 3), 0.0)

    def test_rate_toward_target(self):
        r = conditional_rate(0, 1, 0.5, 3)
        assert np.allclose(r, [-2.0, 2.0, 0.0])

    def test_singular_at_one(self):
        with pytest.raises(ValueError):
            conditional_rate(0, 1, 1.0, 2)

    def test_kolmogorov_transport(self):
        # fine Euler on the full rate matrix transports the prior to one-hot
        for s in (2, 3, 5):
            rng = stream(s, "kolmogorov")
            prior = rng.dirichlet(np.ones(s))
            x1 = int(rng.integers(s))
            p = prior.copy()
            dt = 1e-3
            steps = int(1 / dt) - 1
            for k in range(steps):
                t = k * dt
                rates = np.stack([conditional_rate(i, x1, t, s) for i in range(s)])
                p = p + dt * (p @ rates)
            target = np.eye(s)[x1]
            assert 0.5 * np.abs(p - target).sum() < 0.02


class TestGuidedRate:
    def test_omega_zero_unchanged(self):
        base = conditional_rate(0, 1, 0.5, 2)
        out = guided_rate(base, 0, 1, 0.5, 0.0, np.array([0.5, 0.5]))
        assert np.allclose(out, base)

    def test_hand_value(self):
        # base 2.0 toward target; guidance adds 1/(2*0.25) = 2.0 -> total 4.0
        base = conditional_rate(0, 1, 0.5, 2)
        out = guided_rate(base, 0, 1, 0.5, 1.0, np.array([0.5, 0.5]))
        assert np.allclose(out, [-4.0, 4.0])

    def test_monotone_in_omega(self):
        prior = np.array([0.5, 0.5])
        prev = -np.inf
        for omega in (0.0, 1.0, 2.0, 4.0):
            base = conditional_rate(0, 1, 0.5, 2)
            r = guided_rate(base, 0, 1, 0.5, omega, prior)
            p_jump = transition_kernel(r, 0, 0.05)[1]
            assert p_jump > prev or p_jump == pytest.approx(1.0)
            prev = p_jump

    def test_zero_mass_error(self):
        base = conditional_rate(1, 0, 0.0, 2)
        with pytest.raises(ValueError):
            guided_rate(base, 1, 0, 0.0, 1.0, np.array([1.0, 0.0]))


class TestDbRate:
    def test_detailed_balance_exact(self):
        rng = stream(9, "db")
        for _ in range(1000):
            s = int(rng.integers(2, 6))
            prior = rng.dirichlet(np.ones(s))
            t = float(rng.uniform(0.01, 0.99))
            x1 = int(rng.integers(s))
            marg = noising_marginal(x1, t, prior)
            rates = np.stack([db_rate(i, x1, t, prior) for i in range(s)])
            for i in range(s):
                for j in range(s):
                    if i != j:
                        assert abs(marg[i] * rates[i, j] - marg[j] * rates[j, i]) <= 1e-12

    def test_uniform_prior_t0(self):
        r = db_rate(0, 1, 0.0, np.array([0.25, 0.25, 0.25, 0.25]))
        assert np.allclose(r[1:], 0.25)


class TestExpectedRate:
    def test_one_hot_reduction(self):
        policy = RatePolicy()
        prior = np.array([0.5, 0.5])
        post = np.array([0.0, 1.0])
        assert np.allclose(
            expected_rate(0, post, 0.5, policy, prior), conditional_rate(0, 1, 0.5, 2)
        )

    def test_uniform_posterior_linearity(self):
        policy = RatePolicy()
        prior = np.array([0.3, 0.3, 0.4])
        post = np.array([1 / 3, 1 / 3, 1 / 3])
        manual = sum(conditional_rate(0, j, 0.4, 3) / 3 for j in range(3))
        out = expected_rate(0, post, 0.4, policy, prior)
        assert np.allclose(out, manual)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 0.9), st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.integers(0, 4))
    def test_scalar_matches_array_path(self, t, omega, eta, seed):
        rng = stream(seed, "era")
        s = int(rng.integers(2, 5))
        prior = rng.dirichlet(np.ones(s))
        post = rng.dirichlet(np.ones(s), size=3)
        current = rng.integers(0, s, size=3)
        policy = RatePolicy(omega=omega, eta=eta)
        arr = _expected_rates_array(current, post, t, policy, prior)
        for v in range(3):
            scalar = expected_rate(int(current[v]), post[v], t, policy, prior)
            assert np.allclose(arr[v], scalar, atol=1e-10)

    def test_row_sums_zero(self):
        rng = stream(3, "rowsum")
        policy = RatePolicy(omega=1.5, eta=0.7)
        for _ in range(50):
            s = int(rng.integers(2, 6))
            prior = rng.dirichlet(np.ones(s))
            post = rng.dirichlet(np.ones(s))
            r = expected_rate(int(rng.integers(s)), post, float(rng.uniform(0.01, 0.95)), policy, prior)
            assert abs(r.sum()) < 1e-10
            off = np.delete(r, np.argmin(r)) if r.min() < 0 else r
            assert (off >= -1e-12).all()


class TestEulerStep:
    def test_zero_rates_unchanged(self, triangle):
        pred = PosteriorPrediction(
            node_dists=np.ones((3, 1)),
            edge_dists=np.tile(np.eye(2)[triangle.edge_labels], 1).astype(float),
        )
        noise = NoiseDistribution.uniform(1, 2)
        out = euler_step(triangle, pred, 0.5, 0.01, RatePolicy(), stream(0, "es"), noise)
        assert out == triangle

    def test_kernel_slope(self):
        rates = conditional_rate(0, 1, 0.5, 2)
        for dt in (1e-2, 1e-3, 1e-4):
            kern = transition_kernel(rates, 0, dt)
            assert kern[1] == pytest.approx(rates[1] * dt, rel=1e-12)

    def test_clamped_certain_jump(self):
        rates = conditional_rate(0, 1, 0.5, 2) * 1000
        kern = transition_kernel(rates, 0, 1.0)
        assert kern[0] == 0.0 and kern[1] == pytest.approx(1.0)

    def test_kernel_is_distribution(self):
        rng = stream(4, "kern")
        for _ in range(100):
            s = int(rng.integers(2, 6))
            prior = rng.dirichlet(np.ones(s))
            post = rng.dirichlet(np.ones(s))
            cur = int(rng.integers(s))
            r = expected_rate(cur, post, float(rng.uniform(0, 0.99)), RatePolicy(omega=2.0, eta=1.0), prior)
            kern = transition_kernel(r, cur, float(rng.uniform(0.001, 1.0)))
            assert kern.min() >= 0 and abs(kern.sum() - 1.0) < 1e-12


class TestSample:
    def test_single_step_one_hot(self):
        # steps=1 with one-hot predictions lands on the predicted graph
        target = Graph.from_edges(2, [(0, 1)])
        model = toy_posterior_model(np.array([0.0, 1.0]), np.array([0.5, 0.5]))
        noise = NoiseDistribution.uniform(1, 2)
        out = sample(model, 2, noise, RatePolicy(steps=1), stream(0, "ss"))
        assert out == target

    def test_seed_determinism(self):
        model = toy_posterior_model(np.array([0.3, 0.7]), np.array([0.5, 0.5]))
        noise = NoiseDistribution.uniform(1, 2)
        a = sample(model, 2, noise, RatePolicy(steps=25), stream(7, "det"))
        b = sample(model, 2, noise, RatePolicy(steps=25), stream(7, "det"))
        assert a == b

    def test_exact_posterior_marginal(self):
        data = np.array([0.3, 0.7])
        prior = np.array([0.5, 0.5])
        model = toy_posterior_model(data, prior)
        noise = NoiseDistribution(np.array([1.0]), prior)

        def batch(gs, ts):
            return [model(g, t) for g, t in zip(gs, ts)]

        n = 4000
        rngs = [stream(11, "toy", i) for i in range(n)]
        out = sample_many(batch, [2] * n, noise, RatePolicy(steps=50), rngs)
        freq = np.mean([g.edge_labels[0, 1] for g in out])
        assert abs(freq - data[1]) < 0.03

    def test_eta_preserves_marginals(self):
        data = np.array([0.25, 0.75])
        prior = np.array([0.5, 0.5])
        model = toy_posterior_model(data, prior)
        noise = NoiseDistribution(np.array([1.0]), prior)

        def batch(gs, ts):
            return [model(g, t) for g, t in zip(gs, ts)]

        n = 4000
        freqs = []
        for eta in (0.0, 5.0):
            rngs = [stream(13, f"eta{eta}", i) for i in range(n)]
            out = sample_many(batch, [2] * n, noise, RatePolicy(steps=50, eta=eta), rngs)
            freqs.append(np.mean([g.edge_labels[0, 1] for g in out]))
        assert abs(freqs[0] - freqs[1]) < 0.04

    def test_eta_zero_identical_code_path(self):
        model = toy_posterior_model(np.array([0.3, 0.7]), np.array([0.5, 0.5]))
        noise = NoiseDistribution(np.array([1.0]), np.array([0.5, 0.5]))
        a = sample(model, 2, noise, RatePolicy(steps=20, eta=0.0), stream(5, "z"))
        b = sample(model, 2, noise, RatePolicy(steps=20), stream(5, "z"))
        assert a == b


class TestLoss:
    def _pred(self, node, edge):
        return PosteriorPrediction(node_dists=node, edge_dists=edge)

    def test_perfect_prediction_zero(self, triangle):
        edge = np.eye(2)[triangle.edge_labels].astype(float)
        pred = self._pred(np.ones((3, 1)), edge)
        assert loss(pred, triangle, 5.0) == 0.0

    def test_uniform_two_class_hand_value(self):
        g = Graph.from_edges(2, [(0, 1)])
        edge = np.full((2, 2, 2), 0.5)
        pred = self._pred(np.ones((2, 1)), edge)
        w = 3.0
        assert loss(pred, g, w) == pytest.approx(2.0 * w * math.log(2.0))

    def test_edge_weight_linearity(self):
        g = Graph.from_edges(2, [(0, 1)])
        edge = np.full((2, 2, 2), 0.5)
        pred = self._pred(np.ones((2, 1)), edge)
        assert loss(pred, g, 2.0) == pytest.approx(2.0 * loss(pred, g, 1.0))

    def test_zero_mass_capped_with_warning(self):
        g = Graph.from_edges(2, [(0, 1)])
        edge = np.zeros((2, 2, 2))
        edge[:, :, 0] = 1.0  # true class 1 has zero mass
        pred = self._pred(np.ones((2, 1)), edge)
        with pytest.warns(RuntimeWarning):
            value = loss(pred, g, 1.0)
        assert math.isfinite(value) and value >= 1e29

    def test_nonnegative(self):
        rng = stream(6, "lossprop")
        for _ in range(30):
            n = int(rng.integers(2, 6))
            e = np.zeros((n, n), dtype=np.int64)
            iu, ju = np.triu_indices(n, 1)
            v = rng.integers(0, 2, size=len(iu))
            e[iu, ju] = v
            e[ju, iu] = v
            g = Graph(n, np.zeros(n, dtype=np.int64), e)
            edge = rng.dirichlet(np.ones(2), size=(n, n))
            edge = (edge + edge.transpose(1, 0, 2)) / 2
            pred = self._pred(np.ones((n, 1)), edge)
            assert loss(pred, g, 1.0) >= 0.0


class TestDistort:
    def test_identity(self):
        assert distort(0.37, "identity") == 0.37

    def test_polynomial(self):
        assert distort(0.5, "poly:2") == 0.25

    def test_cosine_endpoints(self):
        assert distort(0.0, "cosine") == 0.0
        assert distort(0.5, "cosine") == pytest.approx(0.5)
        assert distort(1.0, "cosine") == pytest.approx(1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from(["identity", "poly:2", "poly:3", "cosine"]))
    def test_monotone_bijection(self, fn):
        grid = np.linspace(0, 1, 101)
        vals = [distort(float(t), fn) for t in grid]
        assert vals[0] == 0.0 and vals[-1] == pytest.approx(1.0)
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_unknown_rejected(self):
        with pytest.raises(ValueError):
            distort(0.5, "exp")


class TestRatePolicy:
    def test_json_round_trip(self):
        p = RatePolicy(omega=1.5, eta=0.2, distortion="poly:2", steps=64)
        assert RatePolicy.from_json(p.to_json()) == p

    def test_invalid(self):
        with pytest.raises(ValueError):
            RatePolicy(omega=-1)
        with pytest.raises(ValueError):
            RatePolicy(steps=0)
        with pytest.raises(ValueError):
            RatePolicy(distortion="poly:0")
