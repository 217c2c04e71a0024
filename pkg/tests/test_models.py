import itertools
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from oracles import (gaussian_symkl, hmm_paths, linreg_posterior_gain_form,
                     noisyor_joint_table, symkl)
from subdiv import Dataset, SingularCovariance
from subdiv.exact import exact_symmetrized_kl
from subdiv.models import (ConjugateOracle, DiscreteHMM, GaussianMeanField, LinRegModel,
                           NoisyOrNetwork, coupled_sites_fixture, hmm_fixture,
                           linreg_conjugate_posterior, linreg_fixture,
                           noisyor_annealing_schedule, noisyor_fixture, noisyor_kernels,
                           three_state_chain_fixture, toy_bernoulli_fixture)
from subdiv.kernels import (check_detailed_balance, check_reversal, check_stationarity,
                            leaf_kernels)
from subdiv.seqdb import asymptotic_gap

# oracles.noisyor_annealing_gap on noisyor_fixture() for 1, 2, 5 and 10 steps
NOISYOR_GAPS = {1: 43.71323512225985, 2: 12.696358467968718, 5: 5.119505198832873,
                10: 2.7911466951426505}
TOY_SYMKL = 0.45966602500291087


# ---------------------------------------------------------------------------
# toy fixtures


def test_toy_fixture_values():
    fx = toy_bernoulli_fixture()
    assert fx.posterior.prob(1) == pytest.approx(0.24 / 0.38, abs=1e-15)
    assert fx.log_evidence == pytest.approx(math.log(0.38), abs=1e-15)
    prior = fx.model.prior_distribution()
    assert exact_symmetrized_kl(prior, fx.posterior) == pytest.approx(TOY_SYMKL, abs=1e-14)


@pytest.mark.parametrize("make", [toy_bernoulli_fixture, three_state_chain_fixture,
                                  coupled_sites_fixture])
def test_discrete_fixtures_normalize(make):
    fx = make()
    support = list(fx.model.latent_support) if hasattr(fx.model, "latent_support") else \
        list(fx.posterior.support)
    assert sum(math.exp(fx.model.log_prior(z)) for z in support) == pytest.approx(1.0, abs=1e-12)
    total = sum(math.exp(fx.model.log_joint(z, fx.data)) for z in support)
    assert math.log(total) == pytest.approx(fx.log_evidence, abs=1e-12)


def test_coupled_sites_likelihood_normalizes_over_readings():
    fx = coupled_sites_fixture()
    for c in itertools.product((0, 1), repeat=3):
        total = sum(math.exp(fx.model.log_likelihood(c, Dataset(((0, v0), (2, v2)))))
                    for v0 in (0, 1) for v2 in (0, 1))
        assert total == pytest.approx(1.0, abs=1e-14)


def test_prior_sampler_matches_log_prior():
    fx = three_state_chain_fixture()
    rng = np.random.default_rng(0)
    n = 20000
    draws = np.array([fx.model.sample_prior(rng) for _ in range(n)])
    for s in range(3):
        p = math.exp(fx.model.log_prior(s))
        assert abs(np.mean(draws == s) - p) <= 5 * math.sqrt(p * (1 - p) / n)


# ---------------------------------------------------------------------------
# linear regression


def test_linreg_empty_data_gives_prior():
    model = LinRegModel(prior_mean=(0.5, -1.0), prior_var=(2.0, 0.5), noise_var=1.0)
    post = linreg_conjugate_posterior(model, np.empty((0, 2)))
    assert np.allclose(post.mean, [0.5, -1.0], atol=1e-15)
    assert np.allclose(post.cov, np.diag([2.0, 0.5]), atol=1e-15)


def test_linreg_huge_noise_gives_prior():
    model = LinRegModel(noise_var=1e12)
    data = Dataset(np.array([[0.0, 5.0], [1.0, -3.0], [2.0, 4.0]]))
    post = linreg_conjugate_posterior(model, data)
    assert np.allclose(post.mean, [0.0, 0.0], atol=1e-10)
    assert np.allclose(post.cov, np.eye(2), atol=1e-10)


def test_linreg_three_points_match_gain_form():
    model = LinRegModel(prior_mean=(0.2, 0.1), prior_var=(1.5, 0.7), noise_var=0.4)
    xy = np.array([[-1.0, 0.3], [0.5, 1.1], [2.0, 2.4]])
    post = linreg_conjugate_posterior(model, Dataset(xy))
    mean, cov = linreg_posterior_gain_form(xy[:, 0], xy[:, 1], (0.2, 0.1), (1.5, 0.7), 0.4)
    assert np.allclose(post.mean, mean, atol=1e-12)
    assert np.allclose(post.cov, cov, atol=1e-12)


def test_linreg_evidence_by_bayes_identity():
    fx = linreg_fixture()
    post = linreg_conjugate_posterior(fx.model, fx.data)
    theta = np.array([0.3, -0.2])
    via_bayes = fx.model.log_joint(theta, fx.data) - post.log_density(theta)
    assert post.log_evidence == pytest.approx(via_bayes, abs=1e-10)
    assert fx.model.exact_log_evidence(fx.data) == pytest.approx(via_bayes, abs=1e-10)


def test_linreg_default_has_eleven_points():
    fx = linreg_fixture()
    assert len(fx.data) == 11


def test_linreg_singular():
    degenerate = SimpleNamespace(prior_mean=(0.0, 0.0), prior_var=(0.0, 1.0), noise_var=1.0)
    with pytest.raises(SingularCovariance):
        linreg_conjugate_posterior(degenerate, Dataset(np.array([[0.0, 1.0]])))
    with pytest.raises(ValueError):
        LinRegModel(prior_var=(0.0, 1.0))


def test_conjugate_oracle_samples_posterior():
    fx = linreg_fixture()
    ref = ConjugateOracle(fx.model)
    post = linreg_conjugate_posterior(fx.model, fx.data)
    rng = np.random.default_rng(1)
    draws = np.array([ref.sample(fx.data, rng) for _ in range(20000)])
    se = np.sqrt(np.diag(post.cov) / len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - post.mean) <= 5 * se)
    assert ref.log_density(post.mean, fx.data) == pytest.approx(
        stats.multivariate_normal.logpdf(post.mean, post.mean, post.cov), abs=1e-12)


# ---------------------------------------------------------------------------
# mean field


def test_mean_field_normalizes():
    q = GaussianMeanField((0.3, -0.4), (0.5, 2.0))
    val, _ = integrate.dblquad(lambda b, a: math.exp(q.log_density(np.array([a, b]))),
                               -10, 10, -15, 15)
    assert val == pytest.approx(1.0, abs=1e-7)


def test_mean_field_sampler_matches_density():
    q = GaussianMeanField((0.3, -0.4), (0.5, 2.0))
    rng = np.random.default_rng(2)
    draws = np.array([q.sample(None, rng) for _ in range(20000)])
    for d, (m, v) in enumerate(zip(q.mean, q.var)):
        # Kolmogorov-Smirnov against the declared marginal
        assert stats.kstest(draws[:, d], "norm", args=(m, math.sqrt(v))).pvalue > 1e-3


def test_mean_field_rejects_bad_variance():
    with pytest.raises(ValueError):
        GaussianMeanField((0.0, 0.0), (1.0, 0.0))


def test_mean_field_symkl_closed_form():
    fx = linreg_fixture()
    post = linreg_conjugate_posterior(fx.model, fx.data)
    q = GaussianMeanField(tuple(post.mean), (0.1, 0.1))
    value = gaussian_symkl(q.mean, np.diag(q.var), post.mean, post.cov)
    assert value > 0


# ---------------------------------------------------------------------------
# HMM


def test_hmm_uniform_posterior():
    u = np.full((2, 2), 0.5)
    hmm = DiscreteHMM((0.5, 0.5), u, u)
    post = hmm.posterior(Dataset((0, 1, 1)))
    assert np.allclose(post.probs, 1 / 8, atol=1e-15)


def test_hmm_forward_matches_paths_t4():
    fx = hmm_fixture(3, 2, 4, seed=9)
    _, _, joint = hmm_paths(fx.model.init, fx.model.trans, fx.model.emit,
                            [int(o) for o in fx.data.ordered()])
    assert fx.log_evidence == pytest.approx(math.log(joint.sum()), abs=1e-12)


def test_hmm_default_shape():
    fx = hmm_fixture()
    assert (len(fx.data), fx.model.n_states, fx.model.n_obs) == (40, 2, 3)


def test_hmm_joint_normalizes():
    fx = hmm_fixture(2, 2, 3, seed=0)
    total = 0.0
    for z in itertools.product(range(2), repeat=3):
        for x in itertools.product(range(2), repeat=3):
            total += math.exp(fx.model.log_joint(np.array(z), Dataset(x)))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_ffbs_reference_is_oracle():
    fx = hmm_fixture(2, 3, 4, seed=3)
    post = fx.model.posterior(fx.data)
    for z, lp in post.items():
        assert fx.reference.log_density(np.array(z), fx.data) == pytest.approx(lp, abs=1e-12)


# ---------------------------------------------------------------------------
# noisy-or


def test_noisyor_joint_matches_oracle():
    fx = noisyor_fixture()
    net = fx.model
    configs, table = noisyor_joint_table(net.cause_prior, net.transmission, net.leak, range(8))
    for c, p in zip(configs, table):
        assert net.log_joint(c, fx.data) == pytest.approx(math.log(p), abs=1e-10)


def test_noisyor_findings_normalize():
    net = NoisyOrNetwork((0.2, 0.4), ((0.9, 0.0), (0.5, 0.7)), 0.05)
    for c in itertools.product((0, 1), repeat=2):
        total = sum(math.exp(net.log_likelihood(c, Dataset(((0, a), (1, b)))))
                    for a in (0, 1) for b in (0, 1))
        assert total == pytest.approx(1.0, abs=1e-14)


def test_noisyor_schedule_shape():
    fx = noisyor_fixture()
    tg = noisyor_annealing_schedule(fx.model, fx.data, 1)
    assert tg.T == 2
    c = (1, 0, 1, 0, 0, 1)
    assert tg.log_targets[1](c) == pytest.approx(fx.model.log_joint(c, fx.data, 0.99), abs=1e-14)
    assert tg.log_targets[2](c) == fx.model.log_joint(c, fx.data)
    tg10 = noisyor_annealing_schedule(fx.model, fx.data, 10)
    assert tg10.T == 11
    assert tg10.log_targets[1](c) == pytest.approx(fx.model.log_joint(c, fx.data, 0.99),
                                                   abs=1e-14)
    assert fx.model.leak == 0.001


def test_noisyor_gap_decreases_with_steps():
    fx = noisyor_fixture()
    prev = math.inf
    for steps, expected in NOISYOR_GAPS.items():
        gap = asymptotic_gap(noisyor_annealing_schedule(fx.model, fx.data, steps))
        assert gap == pytest.approx(expected, abs=1e-9)
        assert gap < prev
        prev = gap


@pytest.mark.parametrize("kind,block", [("gibbs", 1), ("gibbs", 2), ("mh", 1), ("mh", 3)])
def test_noisyor_kernels_detailed_balance(kind, block):
    net = NoisyOrNetwork((0.1, 0.3, 0.2, 0.4), ((0.9, 0.0, 0.9, 0.0), (0.0, 0.9, 0.9, 0.9)), 0.01)
    data = Dataset(((0, 1), (1, 1)))
    tg = noisyor_annealing_schedule(net, data, 2)
    for t, k in enumerate(noisyor_kernels(net, tg, kind, reps=2, block_size=block), start=1):
        target = tg.normalized(t)
        for leaf in leaf_kernels(k):
            assert check_detailed_balance(leaf, target) <= 1e-10
        # a sweep is reversible only as a whole, with its reversal run in reverse order
        assert check_reversal(k, target) <= 1e-10
        assert check_stationarity(k, target) <= 1e-10


def test_symkl_helper_consistency():
    assert symkl([0.5, 0.5], [0.5, 0.5]) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_noisyor_network_probabilities_valid(seed):
    from subdiv.models import noisyor_network
    net = noisyor_network(4, 5, seed=seed)
    assert np.all((net.cause_prior > 0) & (net.cause_prior < 1))
    assert np.all((net.transmission >= 0) & (net.transmission < 1))
    c = net.sample_prior(np.random.default_rng(seed))
    lp1, lp0 = net.finding_log_probs(c)
    assert np.allclose(np.exp(lp1) + np.exp(lp0), 1.0, atol=1e-14)
