import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import symkl
from subdiv import Dataset, SupportViolation, TargetMismatch
from subdiv.exact import (EnumerableInference, FiniteDistribution,
                          exact_subjective_divergence_expectation, exact_symmetrized_kl,
                          meta_distribution)
from subdiv.kernels import ExactResampleKernel, Gibbs, IdentityKernel, ResimulationMH, repeat
from subdiv.models import DiscreteLatentModel, three_state_chain_fixture, toy_bernoulli_fixture
from subdiv.seqdb import (ExtensionHistory, ExtensionInference, ExtensionMetaInference,
                          ExtensionSchedule, SeqDbHistory, SeqDbInference, SeqDbMetaInference,
                          TargetSequence, ais_log_weight, asymptotic_gap, extension_log_weight,
                          geometric_bridge, run_seqdb_inference, run_seqdb_metainference,
                          sequential_observation_targets)

# oracles.sequential_symkl_sum on the 3-state chain's partial posteriors,
# for observation orders (2, 1, 2) and (1, 2, 2)
CHAIN_GAP = 0.8593368183419601
CHAIN_GAP_REORDERED = 0.7704006915122289
TOY_SYMKL = 0.45966602500291087


class PriorProposal:
    def __init__(self, model):
        self.model = model

    def sample(self, rng):
        return self.model.sample_prior(rng)

    def log_density(self, v):
        return self.model.log_prior(v)

    def support(self):
        return self.model.latent_support


def two_state_chain():
    model = DiscreteLatentModel((0.6, 0.4), ((0.3, 0.7), (0.8, 0.2)))
    return model, Dataset((1, 0))


def mh_kernels(model, targets, reps=1):
    return [repeat(ResimulationMH(f, PriorProposal(model)), reps)
            for f in targets.log_targets[1:]]


def exact_kernels(targets):
    return [ExactResampleKernel(f, targets.states) for f in targets.log_targets[1:]]


def test_target_sequence_checks():
    with pytest.raises(ValueError):
        TargetSequence((lambda z: 0.0,), lambda rng: 0, (0, 1))
    with pytest.raises(ValueError):
        TargetSequence((lambda z: 0.0, lambda z: 0.0), lambda rng: 0, (0, 1))
    fx = toy_bernoulli_fixture()
    tg = sequential_observation_targets(fx.model, fx.data)
    assert tg.T == 1
    assert tg.log_targets[0](1) == pytest.approx(math.log(0.3), abs=1e-15)
    assert tg.log_targets[-1](1) == fx.model.log_joint(1, fx.data)


def test_identity_kernel_outputs_initial():
    model, data = two_state_chain()
    tg = TargetSequence((model.log_prior, lambda z: model.log_joint(z, data)),
                        model.sample_prior, (0, 1))
    k = [IdentityKernel(tg.log_targets[1])]
    q = EnumerableInference.from_program(SeqDbInference(tg, k), data).marginal_output()
    assert q.prob(0) == pytest.approx(0.6, abs=1e-15)
    hist = run_seqdb_metainference(tg, k, 1, seed=0)
    assert hist.states == (1,)


def test_output_marginal_is_matrix_product():
    model, data = two_state_chain()
    tg = sequential_observation_targets(model, data)
    ks = mh_kernels(model, tg)
    q = EnumerableInference.from_program(SeqDbInference(tg, ks), data).marginal_output()
    vec = np.exp([tg.log_targets[0](s) for s in tg.states])
    for k in ks:
        vec = vec @ k.transition_matrix(list(tg.states))
    assert np.allclose([q.prob(s) for s in tg.states], vec, atol=1e-14)


def test_perfect_kernels_output_final_target():
    fx = three_state_chain_fixture()
    tg = sequential_observation_targets(fx.model, fx.data)
    q = EnumerableInference.from_program(SeqDbInference(tg, exact_kernels(tg)),
                                         fx.data).marginal_output()
    for s in tg.states:
        assert q.prob(s) == pytest.approx(fx.posterior.prob(s), abs=1e-14)


def test_meta_distribution_matches_reversed_matrices():
    model, data = two_state_chain()
    tg = sequential_observation_targets(model, data)
    ks = mh_kernels(model, tg)
    meta = SeqDbMetaInference(tg, ks)
    S = list(tg.states)
    R = [k.reversed().transition_matrix(S) for k in ks]
    for z in S:
        m = meta_distribution(meta, z, data)
        for u0, u1 in itertools.product(S, repeat=2):
            expected = R[1][S.index(z), S.index(u1)] * R[0][S.index(u1), S.index(u0)]
            assert m.prob(SeqDbHistory((u0, u1))) == pytest.approx(expected, abs=1e-14)


def test_meta_sampling_frequencies():
    model, data = two_state_chain()
    tg = sequential_observation_targets(model, data)
    ks = mh_kernels(model, tg)
    meta = SeqDbMetaInference(tg, ks)
    m = meta_distribution(meta, 1, data)
    rng = np.random.default_rng(3)
    n = 20000
    counts = {}
    for _ in range(n):
        h = meta.run(1, data, rng)
        counts[h.states] = counts.get(h.states, 0) + 1
    for y, lp in m.items():
        p = math.exp(lp)
        assert abs(counts.get(y.states, 0) / n - p) <= 5 * math.sqrt(p * (1 - p) / n) + 1e-12


def test_perfect_kernels_meta_is_optimal_when_targets_repeat():
    model, data = two_state_chain()
    f = lambda z: model.log_joint(z, data)  # noqa: E731
    post = model.posterior(data)
    tg = TargetSequence((post.log_prob, f, f), lambda rng: post.sample(rng), (0, 1))
    ks = exact_kernels(tg)
    enum = EnumerableInference.from_program(SeqDbInference(tg, ks), data)
    meta = SeqDbMetaInference(tg, ks)
    for z in (0, 1):
        m = meta_distribution(meta, z, data)
        cond = enum.conditional_history(z)
        for y, lp in cond.items():
            assert m.log_prob(y) == pytest.approx(lp, abs=1e-13)


def test_ais_weight_examples():
    fx = toy_bernoulli_fixture()
    tg = sequential_observation_targets(fx.model, fx.data)
    assert ais_log_weight(tg, SeqDbHistory((1,))) == pytest.approx(math.log(0.8), abs=1e-15)
    post = fx.posterior
    tg2 = TargetSequence((post.log_prob, tg.log_targets[1]), post.sample, (0, 1))
    for u in (0, 1):
        assert ais_log_weight(tg2, SeqDbHistory((u,))) == pytest.approx(math.log(0.38), abs=1e-14)
    # identical intermediate targets: only the boundary ratio survives
    f = tg.log_targets[1]
    tg3 = TargetSequence((fx.model.log_prior, f, f, f), fx.model.sample_prior, (0, 1))
    assert ais_log_weight(tg3, SeqDbHistory((1, 0, 0))) == pytest.approx(math.log(0.8), abs=1e-15)


def test_ais_weight_support_violation():
    fx = toy_bernoulli_fixture()
    tg = TargetSequence((fx.model.log_prior, lambda z: 0.0 if z else -math.inf),
                        fx.model.sample_prior, (0, 1))
    with pytest.raises(SupportViolation):
        ais_log_weight(tg, SeqDbHistory((0,)))


def test_weight_telescopes_from_kernel_densities():
    fx = three_state_chain_fixture()
    tg = sequential_observation_targets(fx.model, fx.data)
    ks = mh_kernels(fx.model, tg, reps=2)
    inf, meta = SeqDbInference(tg, ks), SeqDbMetaInference(tg, ks)
    for y, z, lq in inf.enumerate(fx.data):
        direct = fx.model.log_joint(z, fx.data) + meta.log_density(y, z, fx.data) - lq
        assert direct == pytest.approx(ais_log_weight(tg, y), abs=1e-11)


def test_perfect_kernel_divergence_equals_asymptotic_gap():
    fx = three_state_chain_fixture()
    tg = sequential_observation_targets(fx.model, fx.data)
    assert asymptotic_gap(tg) == pytest.approx(CHAIN_GAP, abs=1e-12)
    ks = exact_kernels(tg)
    enum = EnumerableInference.from_program(SeqDbInference(tg, ks), fx.data)
    d = exact_subjective_divergence_expectation(fx.model, fx.data, enum,
                                                SeqDbMetaInference(tg, ks), fx.posterior)
    assert d == pytest.approx(CHAIN_GAP, abs=1e-10)


def test_data_order_changes_gap():
    fx = three_state_chain_fixture()
    a = asymptotic_gap(sequential_observation_targets(fx.model, fx.data))
    b = asymptotic_gap(sequential_observation_targets(fx.model, fx.data.reordered((1, 0, 2))))
    assert a == pytest.approx(CHAIN_GAP, abs=1e-12)
    assert b == pytest.approx(CHAIN_GAP_REORDERED, abs=1e-12)


def test_asymptotic_gap_examples():
    fx = toy_bernoulli_fixture()
    f = fx.model.log_prior
    assert asymptotic_gap(TargetSequence((f, f, f), fx.model.sample_prior, (0, 1))) == 0.0
    tg = sequential_observation_targets(fx.model, fx.data)
    assert asymptotic_gap(tg) == pytest.approx(TOY_SYMKL, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_refined_bridge_terms_do_not_exceed_original(a, b, beta):
    p0 = FiniteDistribution([0, 1], np.log([1 - a, a]))
    p1 = FiniteDistribution([0, 1], np.log([1 - b, b]))
    coarse = geometric_bridge(p0.log_prob, p1.log_prob, [0, 1], None, (0, 1))
    fine = geometric_bridge(p0.log_prob, p1.log_prob, [0, beta, 1], None, (0, 1))
    original = asymptotic_gap(coarse)
    dists = [fine.normalized(t) for t in range(3)]
    for x, y in zip(dists, dists[1:]):
        assert exact_symmetrized_kl(x, y) <= original + 1e-12


def test_single_target_mcmc_gets_no_credit():
    fx = three_state_chain_fixture()
    post = fx.posterior
    tg = TargetSequence((fx.model.log_prior, lambda z: fx.model.log_joint(z, fx.data)),
                        fx.model.sample_prior, fx.model.latent_support)
    prior = tg.normalized(0)
    for reps in (1, 3, 10):
        ks = [repeat(ExactResampleKernel(tg.log_targets[1], tg.states), reps)]
        enum = EnumerableInference.from_program(SeqDbInference(tg, ks), fx.data)
        d = exact_subjective_divergence_expectation(fx.model, fx.data, enum,
                                                    SeqDbMetaInference(tg, ks), post)
        assert d == pytest.approx(exact_symmetrized_kl(prior, post), abs=1e-12)


def test_asymptotic_gap_is_limit_for_any_kernel():
    fx = three_state_chain_fixture()
    tg = sequential_observation_targets(fx.model, fx.data)
    ks = mh_kernels(fx.model, tg, reps=60)
    enum = EnumerableInference.from_program(SeqDbInference(tg, ks), fx.data)
    d = exact_subjective_divergence_expectation(fx.model, fx.data, enum,
                                                SeqDbMetaInference(tg, ks), fx.posterior)
    assert d == pytest.approx(asymptotic_gap(tg), abs=1e-8)


def test_target_mismatch():
    fx = three_state_chain_fixture()
    tg = sequential_observation_targets(fx.model, fx.data)
    ks = exact_kernels(tg)
    with pytest.raises(TargetMismatch):
        SeqDbInference(tg, ks[::-1])
    with pytest.raises(TargetMismatch):
        SeqDbMetaInference(tg, ks[:-1])


def test_run_is_reproducible():
    fx = three_state_chain_fixture()
    tg = sequential_observation_targets(fx.model, fx.data)
    ks = mh_kernels(fx.model, tg)
    assert run_seqdb_inference(tg, ks, 7) == run_seqdb_inference(tg, ks, 7)


# ---------------------------------------------------------------------------
# state extensions


class Bern:
    def __init__(self, p):
        self.p = p

    def sample(self, u_prev, rng):
        return (int(rng.random() < self.p),)

    def log_density(self, v, u_prev):
        return math.log(self.p if v[0] == 1 else 1 - self.p)

    def support(self, u_prev):
        return [(0,), (1,)]


class Empty:
    def sample(self, u_prev, rng):
        return ()

    def log_density(self, v, u_prev):
        return 0.0

    def support(self, u_prev):
        return [()]


def extension_fixture():
    joint = {(0, 0): 0.1, (0, 1): 0.35, (1, 0): 0.4, (1, 1): 0.15}
    p1 = {(0,): 0.3, (1,): 0.7}
    t1 = lambda u: math.log(p1[tuple(u)])  # noqa: E731
    t2 = lambda u: math.log(joint[tuple(u)])  # noqa: E731
    schedule = ExtensionSchedule((Bern(0.5), Bern(0.4)), (1, 1))
    kernels = [Gibbs(t1, (0,)), Gibbs(t2, (1,))]
    levels = [[(0,), (1,)], list(itertools.product((0, 1), repeat=2))]
    return (t1, t2), schedule, kernels, levels


def test_extension_weight_matches_direct_evaluation():
    targets, schedule, kernels, levels = extension_fixture()
    inf = ExtensionInference(targets, schedule, kernels, levels)
    meta = ExtensionMetaInference(targets, schedule, kernels, levels)
    total = 0.0
    for y, z, lq in inf.enumerate(None):
        total += math.exp(lq)
        direct = targets[1](z) + meta.log_density(y, z, None) - lq
        assert extension_log_weight(targets, schedule, y, z) == pytest.approx(direct, abs=1e-12)
    assert total == pytest.approx(1.0, abs=1e-12)


def test_extension_meta_enumeration_normalized():
    targets, schedule, kernels, levels = extension_fixture()
    meta = ExtensionMetaInference(targets, schedule, kernels, levels)
    for z in levels[1]:
        ms = list(meta.enumerate(z, None))
        assert sum(math.exp(lm) for _, lm in ms) == pytest.approx(1.0, abs=1e-12)
        for y, lm in ms:
            assert meta.log_density(y, z, None) == pytest.approx(lm, abs=1e-14)


def test_extension_single_step():
    t1 = lambda u: math.log(0.25 if u[0] else 0.75)  # noqa: E731
    schedule = ExtensionSchedule((Bern(0.6),), (1,))
    h = ExtensionHistory(((1,),), ())
    assert extension_log_weight((t1,), schedule, h) == pytest.approx(
        math.log(0.25) - math.log(0.6), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=5), st.floats(0.1, 0.9))
def test_empty_extensions_reduce_to_ais(states, p):
    fx = three_state_chain_fixture()
    T = len(states)
    obs = Dataset(tuple((1, 2, 0, 2, 1)[:T]))
    lt = [(lambda t: (lambda u: fx.model.log_joint(u[0], obs.prefix(t))))(t)
          for t in range(1, T + 1)]
    q = [p, (1 - p) / 2, (1 - p) / 2]

    class First:
        def log_density(self, v, u_prev):
            return math.log(q[v[0]])

    schedule = ExtensionSchedule((First(),) + (Empty(),) * (T - 1), (1,) + (0,) * (T - 1))
    h = ExtensionHistory(((states[0],),) + ((),) * (T - 1), tuple((s,) for s in states[1:]))
    ext = extension_log_weight(lt, schedule, h)
    tg = TargetSequence([lambda u: math.log(q[u])] +
                        [(lambda f: (lambda u: f((u,))))(f) for f in lt], None, (0, 1, 2))
    assert ext == pytest.approx(ais_log_weight(tg, SeqDbHistory(tuple(states))), abs=1e-12)


def test_symkl_oracle_consistency():
    fx = toy_bernoulli_fixture()
    assert symkl(fx.model.prior, fx.posterior.probs) == pytest.approx(TOY_SYMKL, abs=1e-15)
