"""Noisy-or Bayesian networks with an enumeration oracle and an annealing schedule."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..core import Dataset
from ..errors import EnumerationTooLarge
from ..exact import MAX_STATES, FiniteDistribution
from ..kernels import Cycle, Gibbs, ResimulationMH, repeat
from ..seqdb import TargetSequence

RELAXED_LEAK = 0.99


class NoisyOrNetwork:
    """Binary causes ``c_j ~ Bernoulli(prior_j)``; finding ``i`` is on with probability
    ``1 - (1 - leak) prod_j (1 - transmission[i, j])^{c_j}``.

    ``transmission[i, j] = 0`` means there is no edge.  Latent values are
    tuples of 0/1 and observations are ``(finding_index, value)`` pairs, so any
    subset or ordering of the findings is a valid dataset.
    """

    def __init__(self, cause_prior, transmission, leak):
        self.cause_prior = np.asarray(cause_prior, dtype=float)
        self.transmission = np.asarray(transmission, dtype=float)
        self.leak = float(leak)
        if np.any((self.cause_prior <= 0) | (self.cause_prior >= 1)):
            raise ValueError("cause priors must lie in (0, 1)")
        if np.any((self.transmission < 0) | (self.transmission >= 1)):
            raise ValueError("transmission probabilities must lie in [0, 1)")
        if not 0 < self.leak < 1:
            raise ValueError("leak must lie in (0, 1)")
        if self.transmission.shape[1] != self.cause_prior.size:
            raise ValueError("transmission columns must match the causes")
        self.n_causes = self.cause_prior.size
        self.n_findings = self.transmission.shape[0]
        self._log_keep = np.log1p(-self.transmission)   # log(1 - transmission)

    @property
    def latent_support(self):
        if 2 ** self.n_causes > MAX_STATES:
            raise EnumerationTooLarge(f"2^{self.n_causes} cause configurations")
        return tuple(itertools.product((0, 1), repeat=self.n_causes))

    def sample_prior(self, rng):
        return tuple(int(v) for v in (rng.random(self.n_causes) < self.cause_prior))

    def log_prior(self, c):
        c = np.asarray(c, dtype=float)
        p = self.cause_prior
        return float(np.sum(c * np.log(p) + (1 - c) * np.log1p(-p)))

    def finding_log_probs(self, c, leak=None):
        """``(log p(f_i = 1 | c), log p(f_i = 0 | c))`` for every finding."""
        leak = self.leak if leak is None else leak
        log_off = np.log1p(-leak) + self._log_keep @ np.asarray(c, dtype=float)
        return np.log(-np.expm1(log_off)), log_off

    def log_likelihood(self, c, data, leak=None):
        obs = np.asarray(data.ordered(), dtype=int).reshape(-1, 2)
        on, off = self.finding_log_probs(c, leak)
        idx = obs[:, 0]
        return float(np.sum(np.where(obs[:, 1] == 1, on[idx], off[idx])))

    def log_joint(self, c, data, leak=None):
        return self.log_prior(c) + self.log_likelihood(c, data, leak)

    def exact_log_evidence(self, data):
        return float(logsumexp([self.log_joint(c, data) for c in self.latent_support]))

    def posterior(self, data, leak=None):
        support = self.latent_support
        return FiniteDistribution.from_log_weights(
            support, [self.log_joint(c, data, leak) for c in support])

    def simulate(self, rng):
        c = self.sample_prior(rng)
        on, _ = self.finding_log_probs(c)
        values = rng.random(self.n_findings) < np.exp(on)
        return c, Dataset(tuple((i, int(v)) for i, v in enumerate(values)))


def noisyor_network(n_causes, n_findings, seed=0, cause_prior=0.001, transmission=0.9,
                    leak=0.001, edge_prob=0.7):
    """Random bipartite network; each cause-finding edge is present with ``edge_prob``."""
    rng = np.random.default_rng(seed)
    edges = rng.random((n_findings, n_causes)) < edge_prob
    return NoisyOrNetwork(np.full(n_causes, cause_prior), np.where(edges, transmission, 0.0), leak)


@dataclass(frozen=True)
class NoisyOrFixture:
    model: NoisyOrNetwork
    data: Dataset


def noisyor_fixture(n_causes=6, n_findings=8, seed=0, cause_prior=0.05, **kwargs):
    """Enumerable network with all findings active."""
    net = noisyor_network(n_causes, n_findings, seed=seed, cause_prior=cause_prior, **kwargs)
    return NoisyOrFixture(net, Dataset(tuple((i, 1) for i in range(n_findings))))


def noisyor_annealing_schedule(net, data, steps, start_leak=RELAXED_LEAK):
    """Prior, then joints whose leak falls linearly from ``start_leak`` to the true value.

    ``steps`` equal-length steps give ``steps + 1`` leak values after the
    prior, the last being the true joint ``net.log_joint``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    leaks = np.linspace(start_leak, net.leak, steps + 1)

    def make(leak):
        return lambda c: net.log_joint(c, data, leak)

    targets = [net.log_prior] + [make(v) for v in leaks[:-1]]
    targets.append(lambda c: net.log_joint(c, data))
    states = net.latent_support if 2 ** net.n_causes <= MAX_STATES else None
    return TargetSequence(targets, net.sample_prior, states)


@dataclass(frozen=True)
class BernoulliBlock:
    """Independent Bernoulli proposal over a block of sites (resimulation from the prior)."""

    probs: tuple

    def sample(self, rng):
        return tuple(int(v) for v in (rng.random(len(self.probs)) < np.asarray(self.probs)))

    def log_density(self, values):
        v = np.asarray(values, dtype=float)
        p = np.asarray(self.probs)
        return float(np.sum(v * np.log(p) + (1 - v) * np.log1p(-p)))

    def support(self):
        return list(itertools.product((0, 1), repeat=len(self.probs)))


def _blocks(n, block_size):
    return [tuple(range(i, min(i + block_size, n))) for i in range(0, n, block_size)]


def noisyor_kernel(net, target, kind, reps=1, block_size=None, frozen=()):
    """Transition kernel on cause configurations for one target.

    ``kind`` is ``gibbs`` or ``mh`` (resimulation from the cause prior).
    Sites are updated one at a time, or in blocks of ``block_size``; the
    sites in ``frozen`` are never updated.
    """
    blocks = _blocks(net.n_causes, block_size or 1)
    blocks = [tuple(s for s in b if s not in set(frozen)) for b in blocks]
    blocks = [b for b in blocks if b]
    if kind == "gibbs":
        parts = [Gibbs(target, b) for b in blocks]
    elif kind == "mh":
        parts = [ResimulationMH(target, BernoulliBlock(tuple(net.cause_prior[list(b)])), b)
                 for b in blocks]
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    return repeat(parts[0] if len(parts) == 1 else Cycle(parts), reps)


def noisyor_kernels(net, targets, kind, reps=1, block_size=None, frozen=()):
    """One kernel per target ``p_1 .. p_T``."""
    return [noisyor_kernel(net, f, kind, reps, block_size, frozen) for f in targets.log_targets[1:]]
