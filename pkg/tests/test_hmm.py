import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from latent_base.errors import DimensionMismatch
from latent_base.hmm import GaussianHMM, hmm_fit_baum_welch, hmm_log_likelihood, hmm_sample
from latent_base.numerics import make_rng


def random_hmm(rng, s, k):
    return GaussianHMM(_simplex(rng.dirichlet(np.ones(s))), np.array([_simplex(r) for r in rng.dirichlet(np.ones(s), size=s)]),
                       rng.standard_normal((s, k)), rng.uniform(0.3, 2.0, (s, k)))


def _simplex(p):
    p = p / p.sum()
    return p / p.sum()


def diag_log_pdf(x, mu, var):
    return -0.5 * np.sum(np.log(2 * np.pi * var) + (x - mu) ** 2 / var)


def brute_force(hmm, frames):
    terms = []
    for path in itertools.product(range(hmm.n_states), repeat=len(frames)):
        lp = np.log(hmm.initial[path[0]])
        lp += sum(np.log(hmm.transitions[a, b]) for a, b in zip(path, path[1:]))
        lp += sum(diag_log_pdf(f, hmm.emission_means[s], hmm.emission_vars[s]) for f, s in zip(frames, path))
        terms.append(lp)
    return logsumexp(terms)


class TestLogLikelihood:
    def test_single_state_is_iid(self, rng):
        hmm = GaussianHMM(np.ones(1), np.ones((1, 1)), rng.standard_normal((1, 3)), rng.uniform(0.5, 2, (1, 3)))
        x = rng.standard_normal((7, 3))
        expected = sum(diag_log_pdf(f, hmm.emission_means[0], hmm.emission_vars[0]) for f in x)
        assert hmm_log_likelihood(hmm, x) == pytest.approx(expected, rel=1e-12)

    def test_single_frame(self, rng):
        hmm = random_hmm(rng, 3, 2)
        f = rng.standard_normal(2)
        expected = logsumexp([np.log(hmm.initial[s]) + diag_log_pdf(f, hmm.emission_means[s], hmm.emission_vars[s])
                              for s in range(3)])
        assert hmm_log_likelihood(hmm, f) == pytest.approx(expected, rel=1e-12)

    def test_brute_force_s3_t5(self, rng):
        hmm = random_hmm(rng, 3, 2)
        x = rng.standard_normal((5, 2))
        assert hmm_log_likelihood(hmm, x) == pytest.approx(brute_force(hmm, x), rel=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), s=st.integers(1, 4), t=st.integers(1, 6), k=st.integers(1, 2))
    def test_brute_force_property(self, seed, s, t, k):
        rng = np.random.default_rng(seed)
        hmm = random_hmm(rng, s, k)
        x = rng.standard_normal((t, k)) * 2
        assert hmm_log_likelihood(hmm, x) == pytest.approx(brute_force(hmm, x), rel=1e-10)

    def test_long_sequence_finite(self):
        rng = make_rng(6, "long")
        hmm = random_hmm(rng, 4, 3)
        x, _ = hmm.sample(rng, 10_000)
        assert np.isfinite(hmm_log_likelihood(hmm, x))

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionMismatch):
            hmm_log_likelihood(random_hmm(rng, 2, 2), np.zeros((3, 3)))

    def test_validation(self):
        with pytest.raises(ValueError):
            GaussianHMM(np.array([0.5, 0.6]), np.eye(2), np.zeros((2, 1)), np.ones((2, 1)))
        with pytest.raises(ValueError):
            GaussianHMM(np.ones(1), np.ones((1, 1)), np.zeros((1, 1)), np.full((1, 1), 1e-9))
        with pytest.raises(DimensionMismatch):
            GaussianHMM(np.ones(2) / 2, np.eye(2), np.zeros((2, 1)), np.ones((3, 1)))


class TestSample:
    def test_cycle(self, rng):
        perm = np.roll(np.eye(3), 1, axis=1)
        means = np.array([[0.0], [10.0], [20.0]])
        hmm = GaussianHMM(np.array([1.0, 0.0, 0.0]), perm, means, np.full((3, 1), 1e-6))
        x, states = hmm_sample(hmm, rng, 12)
        np.testing.assert_array_equal(states, np.arange(12) % 3)
        assert np.all(np.abs(x - means[states]) < 4 * 1e-3)

    def test_single_state_iid(self, rng):
        hmm = GaussianHMM(np.ones(1), np.ones((1, 1)), np.array([[2.0]]), np.array([[4.0]]))
        x, states = hmm.sample(rng, 20_000)
        assert np.all(states == 0)
        assert x.mean() == pytest.approx(2.0, abs=0.05)
        assert x.var() == pytest.approx(4.0, abs=0.15)

    def test_seed_reproducible(self, rng):
        hmm = random_hmm(rng, 3, 2)
        a, sa = hmm.sample(make_rng(3), 30)
        b, sb = hmm.sample(make_rng(3), 30)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(sa, sb)


class TestBaumWelch:
    def test_single_state_closed_form(self, rng):
        seqs = [rng.standard_normal((40, 2)) * [1.0, 3.0] + 1, rng.standard_normal((25, 2))]
        res = hmm_fit_baum_welch(seqs, 1, rng)
        pooled = np.concatenate(seqs)
        np.testing.assert_allclose(res.model.emission_means[0], pooled.mean(axis=0), atol=1e-10)
        np.testing.assert_allclose(res.model.emission_vars[0], pooled.var(axis=0), atol=1e-10)

    def test_recovers_known_transitions(self):
        rng = make_rng(7, "bw-truth")
        truth = GaussianHMM(np.array([0.5, 0.5]), np.array([[0.9, 0.1], [0.2, 0.8]]),
                            np.array([[-5.0], [5.0]]), np.ones((2, 1)))
        x, _ = truth.sample(rng, 3000)
        model = hmm_fit_baum_welch([x], 2, rng).model
        order = np.argsort(model.emission_means[:, 0])
        np.testing.assert_allclose(model.transitions[np.ix_(order, order)], truth.transitions, atol=0.1)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), s=st.integers(1, 4))
    def test_trace_monotone_and_stochastic(self, seed, s):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((40, 2)) + rng.integers(-2, 3, (40, 1))
        res = hmm_fit_baum_welch([x[:25], x[25:]], s, rng, max_iters=30)
        assert np.all(np.diff(res.trace) >= -1e-9)
        np.testing.assert_allclose(res.model.transitions.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(res.model.emission_vars >= 1e-6)

    def test_too_few_frames(self, rng):
        with pytest.raises(ValueError):
            hmm_fit_baum_welch([np.zeros((2, 1))], 3, rng)

    def test_mixed_dims_rejected(self, rng):
        with pytest.raises(DimensionMismatch):
            hmm_fit_baum_welch([np.zeros((4, 1)), np.zeros((4, 2))], 2, rng)
