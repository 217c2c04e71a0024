"""Small enumerable models used as exact fixtures."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..core import Dataset
from ..exact import FiniteDistribution


@dataclass(frozen=True)
class DiscreteLatentModel:
    """One categorical latent ``z`` with i.i.d. categorical observations.

    ``likelihood[z, x] = p(x | z)``.  The latent space is ``0..S-1``.
    """

    prior: tuple
    likelihood: tuple

    def __post_init__(self):
        prior = np.asarray(self.prior, dtype=float)
        lik = np.asarray(self.likelihood, dtype=float)
        if not np.isclose(prior.sum(), 1.0, atol=1e-12) or np.any(prior <= 0):
            raise ValueError("prior must be a positive probability vector")
        if lik.shape[0] != prior.size or not np.allclose(lik.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("likelihood rows must be probability vectors, one per latent value")
        object.__setattr__(self, "_log_prior", np.log(prior))
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_log_lik", np.log(lik))

    @property
    def latent_support(self):
        return tuple(range(len(self.prior)))

    def sample_prior(self, rng):
        return int(rng.choice(len(self.prior), p=np.asarray(self.prior)))

    def sample_prior_many(self, rng, K):
        return rng.choice(len(self.prior), size=K, p=np.asarray(self.prior))

    def log_prior(self, z):
        return float(self._log_prior[int(z)])

    def log_prior_many(self, zs):
        return self._log_prior[np.asarray(zs, dtype=int)]

    def _log_lik_sum(self, data):
        obs = np.asarray(data.ordered(), dtype=int)
        return self._log_lik[:, obs].sum(axis=1)

    def log_joint(self, z, data):
        return float(self._log_prior[int(z)] + self._log_lik_sum(data)[int(z)])

    def log_joint_many(self, zs, data):
        zs = np.asarray(zs, dtype=int)
        return self._log_prior[zs] + self._log_lik_sum(data)[zs]

    def log_likelihood(self, z, data):
        return float(self._log_lik_sum(data)[int(z)])

    def exact_log_evidence(self, data):
        return float(logsumexp(self._log_prior + self._log_lik_sum(data)))

    def posterior(self, data):
        return FiniteDistribution.from_log_weights(
            self.latent_support, self._log_prior + self._log_lik_sum(data))

    def prior_distribution(self):
        return FiniteDistribution(self.latent_support, self._log_prior)

    def simulate(self, rng, n):
        z = self.sample_prior(rng)
        lik = np.asarray(self.likelihood, dtype=float)[z]
        return z, Dataset(tuple(int(x) for x in rng.choice(lik.size, size=n, p=lik)))


def bernoulli_toy(prior_one=0.3, lik_one_given_one=0.8, lik_one_given_zero=0.2):
    """Binary latent, binary observation: ``p(z=1)``, ``p(x=1|z=1)``, ``p(x=1|z=0)``."""
    return DiscreteLatentModel(
        prior=(1.0 - prior_one, prior_one),
        likelihood=((1.0 - lik_one_given_zero, lik_one_given_zero),
                    (1.0 - lik_one_given_one, lik_one_given_one)),
    )


@dataclass(frozen=True)
class ToyFixture:
    model: DiscreteLatentModel
    data: Dataset
    posterior: FiniteDistribution
    log_evidence: float


def toy_bernoulli_fixture():
    """Prior 0.3, likelihoods 0.8 / 0.2, one observation ``x* = 1``."""
    model = bernoulli_toy()
    data = Dataset((1,))
    return ToyFixture(model, data, model.posterior(data), model.exact_log_evidence(data))


def three_state_chain_fixture():
    """Three latent values observed three times, giving four partial-posterior targets."""
    model = DiscreteLatentModel(
        prior=(0.5, 0.3, 0.2),
        likelihood=((0.7, 0.2, 0.1),
                    (0.2, 0.5, 0.3),
                    (0.1, 0.3, 0.6)),
    )
    data = Dataset((2, 1, 2))
    return ToyFixture(model, data, model.posterior(data), model.exact_log_evidence(data))


class PairwiseBinaryModel:
    """Binary sites with a pairwise (Ising-style) prior and noisy per-site readings.

    ``log p(c) = h . c + sum_{i<j} J[i, j] c_i c_j - log Z``.  Each observation
    is a ``(site, value)`` reading that is wrong with probability ``flip``.
    """

    def __init__(self, fields, couplings, flip):
        self.fields = np.asarray(fields, dtype=float)
        self.couplings = np.triu(np.asarray(couplings, dtype=float), 1)
        self.flip = float(flip)
        if not 0 < self.flip < 0.5:
            raise ValueError("flip probability must lie in (0, 0.5)")
        self._log_hit, self._log_miss = math.log1p(-self.flip), math.log(self.flip)
        self.n_sites = self.fields.size
        self.latent_support = tuple(itertools.product((0, 1), repeat=self.n_sites))
        self._log_z = float(logsumexp([self._energy(c) for c in self.latent_support]))
        self._prior = np.exp([self.log_prior(c) for c in self.latent_support])

    def _energy(self, c):
        c = np.asarray(c, dtype=float)
        return float(self.fields @ c + c @ self.couplings @ c)

    def log_prior(self, c):
        return self._energy(c) - self._log_z

    def sample_prior(self, rng):
        return self.latent_support[rng.choice(len(self.latent_support), p=self._prior)]

    def log_likelihood(self, c, data):
        return float(sum(self._log_hit if c[int(site)] == value else self._log_miss
                         for site, value in data.ordered()))

    def log_joint(self, c, data):
        return self.log_prior(c) + self.log_likelihood(c, data)

    def exact_log_evidence(self, data):
        return float(logsumexp([self.log_joint(c, data) for c in self.latent_support]))

    def posterior(self, data):
        support = self.latent_support
        return FiniteDistribution.from_log_weights(support, [self.log_joint(c, data) for c in support])


def coupled_sites_fixture():
    """Three coupled sites; site 0 is rarely on a priori but is read as on first.

    A sampler that never updates site 0 cannot absorb the first reading, so
    no amount of work on the other sites lowers its subjective divergence.
    """
    couplings = np.zeros((3, 3))
    couplings[0, 1], couplings[0, 2], couplings[1, 2] = -2.5, 1.0, -3.0
    model = PairwiseBinaryModel((-3.5, -0.5, 0.5), couplings, 0.1)
    data = Dataset(((0, 1), (2, 1)))
    return ToyFixture(model, data, model.posterior(data), model.exact_log_evidence(data))
