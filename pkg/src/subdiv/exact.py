"""Brute-force enumeration oracles over finite latent and history spaces.

Everything here is exact summation in log space.  Programs become enumerable
by providing ``enumerate``:

* inference: ``enumerate(data)`` yields ``(y, z, log q(y, z; x*))``
* meta-inference: ``enumerate(z, data)`` yields ``(y, log m(y; z, x*))``

Values (histories, latents) are compared through :func:`canonical`, which
turns numpy arrays and nested sequences into hashable tuples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.special import logsumexp

from .errors import EnumerationTooLarge, SupportMismatch, SupportViolation

MAX_STATES = 10**6
NORMALIZATION_TOL = 1e-12


_ATOMS = (int, float, str, bool, type(None))


def canonical(value):
    """Hashable, order-comparable key for a latent or history value."""
    kind = type(value)
    if kind in _ATOMS:
        return value
    if kind is tuple or kind is list:
        if all(type(v) in _ATOMS for v in value):
            return tuple(value)
        return tuple(canonical(v) for v in value)
    method = getattr(value, "canonical", None)
    if method is not None:
        return method()
    if isinstance(value, np.ndarray):
        return canonical(value.tolist())
    if isinstance(value, (list, tuple)):
        return tuple(canonical(v) for v in value)
    if isinstance(value, np.generic):
        return value.item()
    return value


def _sort_key(key):
    return (type(key).__name__, repr(key))


class FiniteDistribution:
    """Normalized distribution over a finite support, stored as log-probabilities.

    Zero-mass entries are dropped so that "equal support" means equal key sets.
    Repeated support values are merged.
    """

    def __init__(self, support, log_probs, check=True):
        merged = {}
        values = {}
        for v, lp in zip(support, np.asarray(log_probs, dtype=float)):
            if lp == -math.inf:
                continue
            if math.isnan(lp):
                raise ValueError("NaN log-probability")
            k = canonical(v)
            if k in merged:
                merged[k] = np.logaddexp(merged[k], lp)
            else:
                merged[k] = lp
                values[k] = v
        if not merged:
            raise ValueError("distribution has no mass")
        keys = sorted(merged, key=_sort_key)
        self.keys = tuple(keys)
        self.support = tuple(values[k] for k in keys)
        self.log_probs = np.array([merged[k] for k in keys])
        self._index = {k: i for i, k in enumerate(keys)}
        if check:
            total = logsumexp(self.log_probs)
            if abs(total) > NORMALIZATION_TOL:
                raise ValueError(f"log-probabilities sum to exp({total}), not 1")

    @classmethod
    def from_log_weights(cls, support, log_weights):
        """Normalize unnormalized log weights."""
        support = list(support)
        lw = np.asarray(log_weights, dtype=float)
        return cls(support, lw - logsumexp(lw), check=False)._renormalized()

    def _renormalized(self):
        self.log_probs = self.log_probs - logsumexp(self.log_probs)
        return self

    def __len__(self):
        return len(self.keys)

    def __contains__(self, value):
        return canonical(value) in self._index

    def __repr__(self):
        items = ", ".join(f"{v!r}: {p:.6g}" for v, p in zip(self.support, self.probs))
        return f"FiniteDistribution({{{items}}})"

    @property
    def probs(self):
        return np.exp(self.log_probs)

    def log_prob(self, value):
        i = self._index.get(canonical(value))
        return -math.inf if i is None else float(self.log_probs[i])

    def prob(self, value):
        return math.exp(self.log_prob(value))

    def items(self):
        return zip(self.support, self.log_probs)

    def expectation(self, fn):
        return float(sum(math.exp(lp) * fn(v) for v, lp in self.items()))

    def aligned_log_probs(self, other):
        """``other``'s log-probabilities in this distribution's key order."""
        if set(self.keys) != set(other.keys):
            raise SupportMismatch("distributions have different supports")
        return np.array([other.log_probs[other._index[k]] for k in self.keys])

    def sample(self, rng):
        i = rng.choice(len(self.keys), p=self.probs / self.probs.sum())
        return self.support[i]

    def relabel(self, fn):
        return FiniteDistribution([fn(v) for v in self.support], self.log_probs, check=False)


def exact_kl(p, q):
    """KL(p || q) in nats; raises :class:`SupportMismatch` on unequal supports."""
    lq = p.aligned_log_probs(q)
    return float(np.sum(p.probs * (p.log_probs - lq)))


def exact_symmetrized_kl(p, q):
    return exact_kl(p, q) + exact_kl(q, p)


def chi_square_divergence(p, q):
    """Pearson chi-square divergence ``sum p ((q/p)^2 - 1)``."""
    lq = p.aligned_log_probs(q)
    return float(np.sum(np.exp(2.0 * lq - p.log_probs)) - 1.0)


def total_variation(p, q):
    lq = p.aligned_log_probs(q)
    return 0.5 * float(np.sum(np.abs(p.probs - np.exp(lq))))


# ---------------------------------------------------------------------------
# enumerable programs


def _limit(n):
    if n > MAX_STATES:
        raise EnumerationTooLarge(f"enumeration exceeds {MAX_STATES} states")


@dataclass
class EnumerableInference:
    """Exact joint ``q(y, z; x*)`` of an inference program on a dataset.

    ``by_output`` maps each output key to its ``(history, log q(y, z))`` pairs.
    """

    program: Any
    data: Any
    joint: FiniteDistribution
    by_output: dict
    outputs: dict

    @classmethod
    def from_program(cls, program, data):
        by_output, outputs = {}, {}
        pairs, lps = [], []
        for y, z, lq in program.enumerate(data):
            if lq == -math.inf:
                continue
            zk = canonical(z)
            outputs.setdefault(zk, z)
            by_output.setdefault(zk, []).append((y, float(lq)))
            pairs.append((y, z))
            lps.append(lq)
            _limit(len(lps))
        joint = FiniteDistribution(pairs, lps)
        return cls(program, data, joint, by_output, outputs)

    def log_joint(self, y, z):
        return self.joint.log_prob((y, z))

    def marginal_output(self):
        zs = list(self.outputs.values())
        lps = [logsumexp([lq for _, lq in self.by_output[canonical(z)]]) for z in zs]
        return FiniteDistribution(zs, lps, check=False)._renormalized()

    def log_marginal(self, z):
        entries = self.by_output.get(canonical(z))
        if not entries:
            return -math.inf
        return float(logsumexp([lq for _, lq in entries]))

    def conditional_history(self, z):
        entries = self.by_output[canonical(z)]
        lq = np.array([e[1] for e in entries])
        return FiniteDistribution([e[0] for e in entries], lq - logsumexp(lq), check=False)


def exact_marginal_output(inf):
    return inf.marginal_output()


def meta_distribution(meta, z, data):
    """The meta-inference distribution over histories for output ``z``."""
    ys, lms = [], []
    for y, lm in meta.enumerate(z, data):
        ys.append(y)
        lms.append(lm)
        _limit(len(ys))
    return FiniteDistribution(ys, lms)


def enumerate_posterior(model, data):
    """Exact ``p(z | x*)`` by normalizing the joint over ``model.latent_support``."""
    support = list(model.latent_support)
    _limit(len(support))
    lp = [model.log_joint(z, data) for z in support]
    return FiniteDistribution.from_log_weights(support, lp)


def exact_log_marginal_likelihood(model, data):
    """``log p(x*)``, in closed form when the model offers one, else by enumeration."""
    closed = getattr(model, "exact_log_evidence", None)
    if closed is not None:
        return float(closed(data))
    support = list(model.latent_support)
    _limit(len(support))
    return float(logsumexp([model.log_joint(z, data) for z in support]))


def _history_map(inf, z):
    return {canonical(y): lq for y, lq in inf.by_output.get(canonical(z), [])}


def exact_branch_terms(model, data, inf, meta, ref):
    """Exact expected log weight under the reference and under the inference program.

    Returns ``(reference_term, inference_term)``; their difference is the
    expected value of the subjective divergence estimator.
    """
    ref_term = 0.0
    for z, lr in ref.items():
        lp = model.log_joint(z, data)
        q_hist = _history_map(inf, z)
        for y, lm in meta_distribution(meta, z, data).items():
            lq = q_hist.get(canonical(y))
            if lq is None:
                raise SupportViolation(f"meta-inference history {y!r} for z={z!r} has q(y, z) = 0")
            ref_term += math.exp(lr + lm) * (lp + lm - lq)

    inf_term = 0.0
    for zk, entries in inf.by_output.items():
        z = inf.outputs[zk]
        lp = model.log_joint(z, data)
        m = meta_distribution(meta, z, data)
        for y, lq in entries:
            lm = m.log_prob(y)
            if lm == -math.inf:
                raise SupportViolation(f"history {y!r} for z={z!r} has m(y; z) = 0")
            inf_term += math.exp(lq) * (lp + lm - lq)
    return ref_term, inf_term


def exact_subjective_divergence_expectation(model, data, inf, meta, ref):
    """Exact expected value of the subjective divergence estimator.

    ``ref`` is the reference program's output distribution.
    """
    ref_term, inf_term = exact_branch_terms(model, data, inf, meta, ref)
    return ref_term - inf_term


def exact_metainference_gap(inf, meta, posterior):
    """Symmetrized conditional relative entropy between ``q(y|z)`` and ``m(y; z)``.

    ``E_{z~q}[KL(q(y|z) || m)] + E_{z~posterior}[KL(m || q(y|z))]``.
    """
    gap = 0.0
    q_out = inf.marginal_output()
    for z, lq in q_out.items():
        m = meta_distribution(meta, z, inf.data)
        gap += math.exp(lq) * exact_kl(inf.conditional_history(z), m)
    for z, lp in posterior.items():
        if canonical(z) not in inf.by_output:
            raise SupportViolation(f"posterior mass at z={z!r} where q(z) = 0")
        m = meta_distribution(meta, z, inf.data)
        gap += math.exp(lp) * exact_kl(m, inf.conditional_history(z))
    return gap


@dataclass(frozen=True)
class EstimatorMoments:
    """Exact moments of the single-sample output-density estimators at one ``z``."""

    log_q: float
    mean_is: float              # E_m[q_IS]
    mean_reciprocal_hm: float   # E_{q(y|z)}[1 / q_HM]
    mean_log_is: float          # E_m[log q_IS]
    mean_log_hm: float          # E_{q(y|z)}[log q_HM]
    var_is_ratio: float         # Var_m(q_IS / q)

    @property
    def bias_is(self):
        return self.log_q - self.mean_log_is

    @property
    def bias_hm(self):
        return self.mean_log_hm - self.log_q


def estimator_moments(inf, meta, z):
    """Enumerate ``q_IS(z) = q(y, z)/m(y; z)`` under ``m`` and under ``q(y|z)``."""
    log_q = inf.log_marginal(z)
    q_hist = _history_map(inf, z)
    m = meta_distribution(meta, z, inf.data)

    # compensated sums keep these accurate when 1/q(z) is large
    is_terms, log_is_terms, second_terms = [], [], []
    for y, lm in m.items():
        lq = q_hist.get(canonical(y))
        if lq is None:
            raise SupportViolation(f"history {y!r} has q(y, z) = 0")
        log_est = lq - lm
        pm = math.exp(lm)
        is_terms.append(pm * math.exp(log_est))
        log_is_terms.append(pm * log_est)
        second_terms.append(pm * math.exp(2.0 * (log_est - log_q)))

    rec_terms, log_hm_terms = [], []
    for y, lq in inf.by_output[canonical(z)]:
        lm = m.log_prob(y)
        if lm == -math.inf:
            raise SupportViolation(f"history {y!r} has m(y; z) = 0")
        pq = math.exp(lq - log_q)
        rec_terms.append(pq * math.exp(lm - lq))
        log_hm_terms.append(pq * (lq - lm))

    mean_is, mean_log_is, second = (math.fsum(t) for t in (is_terms, log_is_terms,
                                                             second_terms))
    mean_rec, mean_log_hm = math.fsum(rec_terms), math.fsum(log_hm_terms)
    ratio_mean = math.exp(math.log(mean_is) - log_q)
    return EstimatorMoments(log_q, mean_is, mean_rec, mean_log_is, mean_log_hm,
                            second - ratio_mean**2)


# ---------------------------------------------------------------------------
# finite programs


class FiniteSampler:
    """Sampler and exact density for a :class:`FiniteDistribution`.

    Usable both as an oracle/reference program and as an assessable inference
    program.
    """

    def __init__(self, dist, oracle=False):
        self.dist = dist
        self.oracle = oracle
        self.support = dist.support

    def sample(self, data, rng):
        return self.dist.sample(rng)

    def log_density(self, z, data):
        return self.dist.log_prob(z)


def finite_reference(dist, oracle=False):
    return FiniteSampler(dist, oracle=oracle)


def finite_assessable(dist):
    return FiniteSampler(dist)


__all__ = [
    "EnumerableInference",
    "EstimatorMoments",
    "FiniteDistribution",
    "FiniteSampler",
    "canonical",
    "chi_square_divergence",
    "enumerate_posterior",
    "estimator_moments",
    "exact_branch_terms",
    "exact_kl",
    "exact_log_marginal_likelihood",
    "exact_marginal_output",
    "exact_metainference_gap",
    "exact_subjective_divergence_expectation",
    "exact_symmetrized_kl",
    "finite_assessable",
    "finite_reference",
    "meta_distribution",
    "total_variation",
]
