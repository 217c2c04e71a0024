import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subdiv import (Dataset, InsufficientSamples, SupportViolation, estimate,
                    estimate_subjective_divergence_assessable,
                    estimate_subjective_divergence_general, log_weight_estimate,
                    summarize_log_weights, trivial_meta)
from subdiv.core import AssessableInference, MetaInferenceProgram, as_inference
from subdiv.exact import (EnumerableInference, FiniteDistribution,
                          exact_subjective_divergence_expectation, finite_assessable,
                          finite_reference)
from subdiv.models import toy_bernoulli_fixture
from subdiv.smc import sir_pair

# symKL(Bernoulli(0.3), Bernoulli(0.24/0.38)) from tests/oracles.py
TOY_SYMKL = 0.45966602500291087


@pytest.fixture(scope="module")
def toy():
    return toy_bernoulli_fixture()


def test_dataset_validates_ordering():
    with pytest.raises(ValueError):
        Dataset(())
    with pytest.raises(ValueError):
        Dataset((1, 2), ordering=(0, 0))
    d = Dataset(("a", "b", "c"), ordering=(2, 0, 1))
    assert d.ordered() == ("c", "a", "b")
    assert d.prefix(2).ordered() == ("c", "a")
    assert d.reordered((0, 1, 2)).ordered() == ("a", "b", "c")


def test_summarize_examples():
    assert summarize_log_weights([0, 0, 0, 0]) == (0.0, 0.0)
    assert summarize_log_weights([1, 3]) == (2.0, 1.0)
    mean, _ = summarize_log_weights([math.log(2), math.log(8)])
    assert mean == pytest.approx(math.log(4), abs=1e-15)
    with pytest.raises(InsufficientSamples):
        summarize_log_weights([1.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50))
def test_summarize_matches_definition(xs):
    mean, se = summarize_log_weights(xs)
    a = np.asarray(xs)
    assert mean == pytest.approx(a.mean(), abs=1e-9)
    assert se == pytest.approx(math.sqrt(a.var(ddof=1) / a.size), rel=1e-9, abs=1e-12)


def test_log_weight_history_free(toy):
    q = FiniteDistribution([0, 1], np.log([0.6, 0.4]))
    inf = as_inference(finite_assessable(q))
    w = log_weight_estimate(toy.model, toy.data, 1, (), inf, trivial_meta())
    assert w == pytest.approx(math.log(0.24) - math.log(0.4), abs=1e-14)


def test_log_weight_exact_meta_reduces_to_output_density(toy):
    inf, meta = sir_pair(toy.model, 2)
    enum = EnumerableInference.from_program(inf, toy.data)
    for zk, entries in enum.by_output.items():
        z = enum.outputs[zk]
        lq = enum.log_marginal(z)
        cond = enum.conditional_history(z)
        exact_meta = MetaInferenceProgram(run=None, log_density=lambda y, z, d: cond.log_prob(y))
        for y, _ in entries:
            w = log_weight_estimate(toy.model, toy.data, z, y, inf, exact_meta)
            assert w == pytest.approx(toy.model.log_joint(z, toy.data) - lq, abs=1e-12)


def test_log_weight_constant_ratio(toy):
    c = 0.37

    class Inf:
        def log_joint_density(self, y, z, data):
            return math.log(0.1)

    meta = MetaInferenceProgram(
        run=None,
        log_density=lambda y, z, d: math.log(0.1) - toy.model.log_joint(z, d) + math.log(c))
    w = log_weight_estimate(toy.model, toy.data, 0, "y", Inf(), meta)
    assert w == pytest.approx(math.log(c), abs=1e-14)


def test_log_weight_support_violation(toy):
    q = FiniteDistribution([0, 1], np.log([1.0, 1e-300]))
    inf = as_inference(finite_assessable(q))
    meta = MetaInferenceProgram(run=None, log_density=lambda y, z, d: -math.inf)
    with pytest.raises(SupportViolation):
        log_weight_estimate(toy.model, toy.data, 0, (), inf, meta)


def test_estimate_identity_and_stderr(toy):
    inf, meta = sir_pair(toy.model, 2)
    ref = finite_reference(toy.posterior, oracle=True)
    est = estimate(toy.model, toy.data, inf, ref, 300, 200, seed=5, meta=meta)
    assert est.estimate == np.mean(est.ref_log_weights) - np.mean(est.inf_log_weights)
    se = math.sqrt(np.var(est.ref_log_weights, ddof=1) / 300 +
                   np.var(est.inf_log_weights, ddof=1) / 200)
    assert est.stderr == pytest.approx(se, rel=1e-12)
    assert (est.n_reference, est.n_inference) == (300, 200)
    assert all(v >= 0 for v in est.timings.values())


def test_estimate_deterministic_across_threads(toy):
    inf, meta = sir_pair(toy.model, 3)
    ref = finite_reference(toy.posterior, oracle=True)
    a = estimate(toy.model, toy.data, inf, ref, 200, 200, seed=11, meta=meta, threads=1)
    b = estimate(toy.model, toy.data, inf, ref, 200, 200, seed=11, meta=meta, threads=4)
    assert np.array_equal(a.ref_log_weights, b.ref_log_weights)
    assert np.array_equal(a.inf_log_weights, b.inf_log_weights)
    assert a.estimate == b.estimate


def test_oracle_inference_gives_zero(toy):
    sampler = finite_reference(toy.posterior, oracle=True)
    inf = as_inference(sampler)
    est = estimate_subjective_divergence_general(toy.model, toy.data, inf, trivial_meta(), sampler,
                                                 2000, 2000, seed=1)
    assert abs(est.estimate) <= 4 * est.stderr + 1e-12
    est = estimate_subjective_divergence_assessable(toy.model, toy.data, sampler, sampler,
                                                    500, 500, seed=2)
    # the weight is log p(x*) for every z, so both terms agree exactly
    assert est.estimate == pytest.approx(0.0, abs=1e-12)


def test_sir_single_particle_matches_symkl(toy):
    inf, meta = sir_pair(toy.model, 1)
    ref = finite_reference(toy.posterior, oracle=True)
    est = estimate(toy.model, toy.data, inf, ref, 4000, 4000, seed=3, meta=meta)
    assert abs(est.estimate - TOY_SYMKL) <= 4 * est.stderr


def test_assessable_prior_family(toy):
    prior = AssessableInference(
        sample=lambda data, rng: int(rng.random() < 0.3),
        log_density=lambda z, data: math.log(0.3 if z == 1 else 0.7))
    ref = finite_reference(toy.posterior, oracle=True)
    est = estimate(toy.model, toy.data, prior, ref, 4000, 4000, seed=4)
    assert abs(est.estimate - TOY_SYMKL) <= 4 * est.stderr
    exact = exact_subjective_divergence_expectation(
        toy.model, toy.data, EnumerableInference.from_program(as_inference(prior_dist()), toy.data),
        trivial_meta(), toy.posterior)
    assert exact == pytest.approx(TOY_SYMKL, abs=1e-12)


def prior_dist():
    return finite_assessable(FiniteDistribution([0, 1], np.log([0.7, 0.3])))


def test_mc_matches_exact_expectation(toy):
    inf, meta = sir_pair(toy.model, 2)
    enum = EnumerableInference.from_program(inf, toy.data)
    exact = exact_subjective_divergence_expectation(toy.model, toy.data, enum, meta, toy.posterior)
    ref = finite_reference(toy.posterior, oracle=True)
    est = estimate(toy.model, toy.data, inf, ref, 3000, 3000, seed=9, meta=meta)
    assert abs(est.estimate - exact) <= 4 * est.stderr


def test_support_violation_carries_replicate(toy):
    q = finite_assessable(FiniteDistribution([0, 1], np.log([1.0, 1e-300])))
    bad = AssessableInference(sample=q.sample,
                              log_density=lambda z, d: 0.0 if z == 0 else -math.inf)
    ref = finite_reference(toy.posterior, oracle=True)
    with pytest.raises(SupportViolation) as info:
        estimate(toy.model, toy.data, bad, ref, 50, 50, seed=0)
    assert info.value.branch == "reference"
    assert info.value.replicate is not None


def test_insufficient_samples(toy):
    ref = finite_reference(toy.posterior, oracle=True)
    with pytest.raises(InsufficientSamples):
        estimate(toy.model, toy.data, ref, ref, 1, 10, seed=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**64 - 1))
def test_estimate_reproducible_from_seed(seed):
    fx = toy_bernoulli_fixture()
    inf, meta = sir_pair(fx.model, 2)
    ref = finite_reference(fx.posterior, oracle=True)
    a = estimate(fx.model, fx.data, inf, ref, 5, 5, seed=seed, meta=meta)
    b = estimate(fx.model, fx.data, inf, ref, 5, 5, seed=seed, meta=meta)
    assert a.estimate == b.estimate
