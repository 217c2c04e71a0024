"""Finite hidden Markov models with exact forward and FFBS oracles."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..core import Dataset
from ..errors import EnumerationTooLarge
from ..exact import MAX_STATES, FiniteDistribution
from ..smc import (LocallyOptimalProposal, PriorProposal, StateSpaceModel, ffbs_log_prob,
                   ffbs_sample, forward_log_messages)


class DiscreteHMM:
    """``z_1 ~ init``, ``z_t | z_{t-1} ~ trans[z_{t-1}]``, ``x_t | z_t ~ emit[z_t]``.

    Latent values are integer paths of length ``len(data)``.
    """

    def __init__(self, init, trans, emit):
        self.init = np.asarray(init, dtype=float)
        self.trans = np.asarray(trans, dtype=float)
        self.emit = np.asarray(emit, dtype=float)
        S = self.init.size
        if self.trans.shape != (S, S) or self.emit.shape[0] != S:
            raise ValueError("matrix shapes disagree with the number of states")
        for name, m in (("init", self.init), ("trans", self.trans), ("emit", self.emit)):
            if np.any(m < 0) or not np.allclose(m.sum(axis=-1), 1.0, atol=1e-12):
                raise ValueError(f"{name} must be row-stochastic")
        with np.errstate(divide="ignore"):
            self.log_init = np.log(self.init)
            self.log_trans = np.log(self.trans)
            self.log_emit = np.log(self.emit)
        self.n_states = S
        self.n_obs = self.emit.shape[1]
        self.ssm = StateSpaceModel(
            initial_log_density=lambda u: self.log_init[u],
            transition_log_density=lambda t, u, prev: self.log_trans[prev, u],
            observation_log_density=lambda t, u, data: self.log_emit[u, self._obs(data)[t]],
            sample_initial=self._sample_initial,
            sample_transition=self._sample_transition,
            states=tuple(range(S)),
        )

    @staticmethod
    def _obs(data):
        return data.ordered_array.astype(int, copy=False)

    def _sample_initial(self, rng, K):
        return rng.choice(self.n_states, size=K, p=self.init)

    def _sample_transition(self, t, prev, rng):
        cum = np.cumsum(self.trans[prev], axis=1)
        r = rng.random(len(prev))[:, None] * cum[:, -1:]
        return np.minimum((r >= cum).sum(axis=1), self.n_states - 1)

    def log_obs_matrix(self, data):
        """``[t, s] -> log p(x_t | z_t = s)``."""
        return self.log_emit[:, self._obs(data)].T

    def log_prior(self, z):
        z = np.asarray(z, dtype=int)
        return float(self.log_init[z[0]] + self.log_trans[z[:-1], z[1:]].sum())

    def log_joint(self, z, data):
        z = np.asarray(z, dtype=int)
        return self.log_prior(z) + float(self.log_emit[z, self._obs(data)].sum())

    def log_likelihood(self, z, data):
        z = np.asarray(z, dtype=int)
        return float(self.log_emit[z, self._obs(data)].sum())

    def exact_log_evidence(self, data):
        return forward_log_messages(self.log_init, self.log_trans, self.log_obs_matrix(data))[1]

    def paths(self, T):
        if self.n_states ** T > MAX_STATES:
            raise EnumerationTooLarge(f"{self.n_states}^{T} paths exceed {MAX_STATES}")
        return tuple(itertools.product(range(self.n_states), repeat=T))

    def posterior(self, data):
        paths = self.paths(len(data))
        return FiniteDistribution.from_log_weights(paths, [self.log_joint(p, data) for p in paths])

    def prior_proposal(self):
        return PriorProposal(self.ssm)

    def conditional_proposal(self):
        return LocallyOptimalProposal(self.ssm)

    def simulate(self, rng, T):
        z = np.empty(T, dtype=int)
        x = np.empty(T, dtype=int)
        z[0] = rng.choice(self.n_states, p=self.init)
        for t in range(T):
            if t > 0:
                z[t] = rng.choice(self.n_states, p=self.trans[z[t - 1]])
            x[t] = rng.choice(self.n_obs, p=self.emit[z[t]])
        return z, Dataset(tuple(int(v) for v in x))


class EnumerableHMM(DiscreteHMM):
    """A :class:`DiscreteHMM` bound to a fixed length so its latent space is enumerable."""

    def __init__(self, init, trans, emit, T):
        super().__init__(init, trans, emit)
        self.T = int(T)

    @property
    def latent_support(self):
        return self.paths(self.T)


class FFBSReference:
    """Exact posterior sampler by forward filtering and backward sampling."""

    oracle = True

    def __init__(self, hmm):
        self.hmm = hmm

    def sample(self, data, rng):
        h = self.hmm
        return ffbs_sample(h.log_init, h.log_trans, h.log_obs_matrix(data), rng)

    def log_density(self, z, data):
        h = self.hmm
        return ffbs_log_prob(h.log_init, h.log_trans, h.log_obs_matrix(data), np.asarray(z))


@dataclass(frozen=True)
class HMMFixture:
    model: DiscreteHMM
    data: Dataset
    true_path: np.ndarray
    log_evidence: float
    reference: FFBSReference


def random_hmm(n_states, n_obs, rng, concentration=1.0):
    init = rng.dirichlet(np.full(n_states, concentration))
    trans = rng.dirichlet(np.full(n_states, concentration), size=n_states)
    emit = rng.dirichlet(np.full(n_obs, concentration), size=n_states)
    return init, trans, emit


def hmm_fixture(n_states=2, n_obs=3, T=40, seed=0):
    """Seeded random HMM with data simulated from it."""
    if n_states < 2:
        raise ValueError("n_states must be >= 2")
    rng = np.random.default_rng(seed)
    init, trans, emit = random_hmm(n_states, n_obs, rng)
    model = EnumerableHMM(init, trans, emit, T)
    z, data = model.simulate(rng, T)
    return HMMFixture(model, data, z, model.exact_log_evidence(data), FFBSReference(model))
