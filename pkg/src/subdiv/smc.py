"""Particle filtering with independent resampling and conditional-SMC meta-inference.

State-space models and proposals work on arrays of particles: every density
takes a batch ``u`` of shape ``(K, ...)`` and returns ``(K,)`` log values.

For a run with particles ``u[t, i]``, ancestors ``a[t, i]`` (the parent at step
``t`` of particle ``i`` at step ``t+1``) and final index ``k``, the inference
density is

    q(y) = prod_i M_1(u_1^i) prod_{t>=2} prod_i W_{t-1}^{a_{t-1}^i} M_t(u_t^i; u_{t-1}^{a_{t-1}^i}) W_T^k

with normalized weights ``W``.  Meta-inference draws the ancestry ``I``
uniformly from ``K^T`` choices, clamps the output path there and fills the
other slots as the filter would.  With that pair the log weight is exactly the
filter's log evidence estimate.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import AllWeightsZero, InconsistentHistory, ZeroEvidence
from .exact import canonical
from .rng import as_generator


def _logsumexp(a, axis=None, keepdims=False):
    # lighter than scipy's version on the small arrays of a filter step
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


# ---------------------------------------------------------------------------
# models and proposals


@dataclass(frozen=True)
class StateSpaceModel:
    """``p(z_1) prod_t p(z_t | z_{t-1}) p(x_t | z_t)`` with vectorized densities.

    ``initial_log_density(u)``, ``transition_log_density(t, u, u_prev)`` and
    ``observation_log_density(t, u, data)`` take particle batches; ``t`` is
    0-based.  ``states`` lists the finite state space when there is one.
    """

    initial_log_density: Callable
    transition_log_density: Callable
    observation_log_density: Callable
    sample_initial: Optional[Callable] = None      # (rng, K) -> batch
    sample_transition: Optional[Callable] = None   # (t, u_prev, rng) -> batch
    states: Optional[tuple] = None

    def n_steps(self, data):
        return len(data)

    def log_potential(self, t, u, u_prev, data):
        """``log p(u_t | u_{t-1}) + log p(x_t | u_t)`` (the initial density at ``t = 0``)."""
        if t == 0:
            lp = self.initial_log_density(u)
        else:
            lp = self.transition_log_density(t, u, u_prev)
        return lp + self.observation_log_density(t, u, data)

    def log_joint(self, z, data):
        z = np.asarray(z)
        total = 0.0
        for t in range(self.n_steps(data)):
            prev = None if t == 0 else z[t - 1: t]
            total += float(self.log_potential(t, z[t: t + 1], prev, data)[0])
        return total


class PriorProposal:
    """Forward simulation: ``M_t = p(u_t | u_{t-1})``."""

    def __init__(self, ssm):
        self.ssm = ssm

    def sample(self, t, u_prev, data, rng, K):
        if t == 0:
            return self.ssm.sample_initial(rng, K)
        return self.ssm.sample_transition(t, u_prev, rng)

    def log_density(self, t, u, u_prev, data):
        if t == 0:
            return self.ssm.initial_log_density(u)
        return self.ssm.transition_log_density(t, u, u_prev)


class LocallyOptimalProposal:
    """``M_t(u_t; u_{t-1}) proportional to p(u_t | u_{t-1}) p(x_t | u_t)`` on a finite state space."""

    def __init__(self, ssm):
        if ssm.states is None:
            raise TypeError("the conditional proposal needs a finite state space")
        self.ssm = ssm
        self.states = np.asarray(ssm.states)
        self._cache = None

    def _state_table(self, t, data):
        """``[i, j] -> log M_t(states[j]; states[i])`` (a single row at ``t = 0``)."""
        cached = self._cache
        if cached is not None and cached[0] == t and cached[1] is data:
            return cached[2]
        S = len(self.states)
        if t == 0:
            lp = self.ssm.log_potential(0, self.states, None, data)[None, :]
        else:
            u = np.tile(self.states, S)
            prev = np.repeat(self.states, S, axis=0)
            lp = self.ssm.log_potential(t, u, prev, data).reshape(S, S)
        table = lp - _logsumexp(lp, axis=1, keepdims=True)
        self._cache = (t, data, table)
        return table

    def _log_table(self, t, u_prev, data):
        table = self._state_table(t, data)
        if t == 0:
            return table
        return table[np.searchsorted(self.states, np.asarray(u_prev))]

    def sample(self, t, u_prev, data, rng, K):
        table = np.exp(self._log_table(t, u_prev, data))
        if t == 0:
            table = np.broadcast_to(table, (K, table.shape[1]))
        cum = np.cumsum(table, axis=1)
        r = rng.random(K)[:, None] * cum[:, -1:]
        idx = np.minimum((r >= cum).sum(axis=1), len(self.states) - 1)
        return self.states[idx]

    def log_density(self, t, u, u_prev, data):
        table = self._log_table(t, u_prev, data)
        idx = np.searchsorted(self.states, np.asarray(u))
        rows = np.zeros(len(idx), dtype=int) if t == 0 else np.arange(len(idx))
        return table[rows, idx]


# ---------------------------------------------------------------------------
# history


@dataclass(frozen=True, eq=False)
class ParticleFilterHistory:
    particles: np.ndarray     # (T, K, ...)
    ancestors: np.ndarray     # (T-1, K)
    k: int
    log_weights: np.ndarray   # (T, K) unnormalized
    log_Z_hat: float

    @property
    def T(self):
        return self.particles.shape[0]

    @property
    def K(self):
        return self.particles.shape[1]

    @property
    def ancestry(self):
        """``I_T = k`` and ``I_t = a_t^{I_{t+1}}``."""
        return ancestry(self.ancestors, self.k)

    def path(self):
        idx = self.ancestry
        return self.particles[np.arange(self.T), idx]

    def canonical(self):
        return (canonical(self.particles), canonical(self.ancestors), int(self.k))


def ancestry(ancestors, k):
    T = ancestors.shape[0] + 1
    idx = np.empty(T, dtype=int)
    idx[-1] = k
    for t in range(T - 2, -1, -1):
        idx[t] = ancestors[t, idx[t + 1]]
    return idx


def _categorical(log_w, size, rng):
    p = np.exp(log_w - np.max(log_w))
    cum = np.cumsum(p)
    idx = np.searchsorted(cum, rng.random(size) * cum[-1], side="right")
    return np.minimum(idx, len(p) - 1)


def _step_log_weights(ssm, proposal, t, u, u_prev, data):
    lw = ssm.log_potential(t, u, u_prev, data) - proposal.log_density(t, u, u_prev, data)
    if not np.any(lw > -np.inf):
        raise AllWeightsZero(t)
    return lw


def _log_Z(log_weights):
    K = log_weights.shape[1]
    return float(np.sum(_logsumexp(log_weights, axis=1)) - log_weights.shape[0] * math.log(K))


# ---------------------------------------------------------------------------
# inference and meta-inference


def run_particle_filter(ssm, proposal, K, seed, data):
    """Particle filter with independent categorical resampling.

    Returns ``(history, z)`` where ``z`` is the particle path along the
    ancestry of the final index.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = as_generator(seed)
    T = ssm.n_steps(data)
    u = np.asarray(proposal.sample(0, None, data, rng, K))
    particles = np.empty((T,) + u.shape, dtype=u.dtype)
    ancestors = np.zeros((max(T - 1, 0), K), dtype=np.int64)
    log_w = np.empty((T, K))
    particles[0] = u
    log_w[0] = _step_log_weights(ssm, proposal, 0, u, None, data)
    for t in range(1, T):
        a = _categorical(log_w[t - 1], K, rng)
        ancestors[t - 1] = a
        prev = particles[t - 1][a]
        u = np.asarray(proposal.sample(t, prev, data, rng, K))
        particles[t] = u
        log_w[t] = _step_log_weights(ssm, proposal, t, u, prev, data)
    k = int(_categorical(log_w[-1], 1, rng)[0])
    hist = ParticleFilterHistory(particles, ancestors, k, log_w, _log_Z(log_w))
    return hist, hist.path()


def run_csmc_metainference(ssm, proposal, K, z, seed, data):
    """Conditional SMC with the retained path placed at a uniformly drawn ancestry."""
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = as_generator(seed)
    z = np.asarray(z)
    T = ssm.n_steps(data)
    I = rng.integers(0, K, size=T)
    u = np.array(proposal.sample(0, None, data, rng, K))
    u[I[0]] = z[0]
    particles = np.empty((T,) + u.shape, dtype=np.result_type(u.dtype, z.dtype))
    ancestors = np.zeros((max(T - 1, 0), K), dtype=np.int64)
    log_w = np.empty((T, K))
    particles[0] = u
    log_w[0] = _step_log_weights(ssm, proposal, 0, u, None, data)
    for t in range(1, T):
        a = _categorical(log_w[t - 1], K, rng)
        a[I[t]] = I[t - 1]
        ancestors[t - 1] = a
        prev = particles[t - 1][a]
        u = np.array(proposal.sample(t, prev, data, rng, K))
        u[I[t]] = z[t]
        particles[t] = u
        log_w[t] = _step_log_weights(ssm, proposal, t, u, prev, data)
    return ParticleFilterHistory(particles, ancestors, int(I[-1]), log_w, _log_Z(log_w))


def _recompute_log_weights(ssm, proposal, hist, data):
    T = hist.T
    log_w = np.empty((T, hist.K))
    for t in range(T):
        prev = None if t == 0 else hist.particles[t - 1][hist.ancestors[t - 1]]
        log_w[t] = ssm.log_potential(t, hist.particles[t], prev, data) \
            - proposal.log_density(t, hist.particles[t], prev, data)
    return log_w


def check_history(hist, z=None, ssm=None, proposal=None, data=None, atol=1e-9):
    """Raise :class:`InconsistentHistory` unless the history's invariants hold."""
    T, K = hist.T, hist.K
    if hist.ancestors.shape != (max(T - 1, 0), K):
        raise InconsistentHistory("ancestor array has the wrong shape")
    if hist.log_weights.shape != (T, K):
        raise InconsistentHistory("weight array has the wrong shape")
    if not 0 <= hist.k < K or np.any(hist.ancestors < 0) or np.any(hist.ancestors >= K):
        raise InconsistentHistory("index out of range")
    if abs(_log_Z(hist.log_weights) - hist.log_Z_hat) > atol:
        raise InconsistentHistory("log_Z_hat does not match the stored weights")
    if z is not None and not np.array_equal(hist.path(), np.asarray(z)):
        raise InconsistentHistory("output is not the path along the ancestry")
    if ssm is not None:
        recomputed = _recompute_log_weights(ssm, proposal, hist, data)
        if not np.allclose(recomputed, hist.log_weights, rtol=0, atol=atol):
            raise InconsistentHistory("stored weights do not match the model and proposal")


def pf_log_weight_estimate(hist, z, ssm=None, proposal=None, data=None):
    """Log weight of a particle-filter history: the log evidence estimate."""
    check_history(hist, z, ssm, proposal, data)
    return hist.log_Z_hat


def _log_normalized(log_w):
    return log_w - _logsumexp(log_w, axis=-1, keepdims=True)


def pf_log_inference_density(ssm, proposal, hist, data):
    """``log q(y)`` of a full particle-filter history, by direct evaluation."""
    log_w = _recompute_log_weights(ssm, proposal, hist, data)
    lW = _log_normalized(log_w)
    total = float(np.sum(proposal.log_density(0, hist.particles[0], None, data)))
    for t in range(1, hist.T):
        a = hist.ancestors[t - 1]
        prev = hist.particles[t - 1][a]
        total += float(np.sum(lW[t - 1][a]))
        total += float(np.sum(proposal.log_density(t, hist.particles[t], prev, data)))
    return total + float(lW[-1][hist.k])


def pf_log_meta_density(ssm, proposal, hist, z, data):
    """``log m(y; z)`` under conditional SMC with uniform ancestry."""
    T, K = hist.T, hist.K
    I = hist.ancestry
    if not np.array_equal(hist.particles[np.arange(T), I], np.asarray(z)):
        return -math.inf
    log_w = _recompute_log_weights(ssm, proposal, hist, data)
    lW = _log_normalized(log_w)
    others = np.ones(K, dtype=bool)
    others[I[0]] = False
    total = -T * math.log(K)
    total += float(np.sum(proposal.log_density(0, hist.particles[0], None, data)[others]))
    for t in range(1, T):
        others = np.ones(K, dtype=bool)
        others[I[t]] = False
        a = hist.ancestors[t - 1]
        prev = hist.particles[t - 1][a]
        total += float(np.sum(lW[t - 1][a][others]))
        total += float(np.sum(proposal.log_density(t, hist.particles[t], prev, data)[others]))
    return total


def pf_log_weight_slow(ssm, proposal, hist, z, data):
    """``log p(z, x*) + log m(y; z) - log q(y, z)`` evaluated term by term."""
    return (ssm.log_joint(z, data) + pf_log_meta_density(ssm, proposal, hist, z, data)
            - pf_log_inference_density(ssm, proposal, hist, data))


def _enumerate_histories(states, T, K):
    """All (particles, ancestors, k) over a finite state space."""
    states = list(states)
    for parts in itertools.product(states, repeat=T * K):
        particles = np.array(parts).reshape((T, K) + np.shape(states[0]))
        for anc in itertools.product(range(K), repeat=(T - 1) * K):
            ancestors = np.array(anc, dtype=np.int64).reshape(max(T - 1, 0), K)
            for k in range(K):
                yield particles, ancestors, k


class ParticleFilter:
    """Inference program view of :func:`run_particle_filter`."""

    def __init__(self, ssm, proposal, K):
        self.ssm = ssm
        self.proposal = proposal
        self.K = int(K)

    def _output(self, path):
        return path

    def model_log_joint(self, z, data):
        return self.ssm.log_joint(z, data)

    def run(self, data, rng):
        hist, path = run_particle_filter(self.ssm, self.proposal, self.K, rng, data)
        return hist, self._output(path)

    def _history(self, particles, ancestors, k, data):
        log_w = _recompute_log_weights(
            self.ssm, self.proposal,
            ParticleFilterHistory(particles, ancestors, k, np.zeros(particles.shape[:2]), 0.0),
            data)
        return ParticleFilterHistory(particles, ancestors, k, log_w, _log_Z(log_w))

    def log_joint_density(self, y, z, data):
        if canonical(self._output(y.path())) != canonical(z):
            return -math.inf
        return pf_log_inference_density(self.ssm, self.proposal, y, data)

    def log_weight(self, y, z, data):
        return y.log_Z_hat

    def enumerate(self, data):
        T = self.ssm.n_steps(data)
        for particles, ancestors, k in _enumerate_histories(self.ssm.states, T, self.K):
            hist = self._history(particles, ancestors, k, data)
            lq = pf_log_inference_density(self.ssm, self.proposal, hist, data)
            if lq > -math.inf:
                yield hist, self._output(hist.path()), lq


class CSMCMetaInference:
    """Meta-inference program view of :func:`run_csmc_metainference`."""

    def __init__(self, ssm, proposal, K):
        self.ssm = ssm
        self.proposal = proposal
        self.K = int(K)

    def _path(self, z):
        return z

    def run(self, z, data, rng):
        return run_csmc_metainference(self.ssm, self.proposal, self.K, self._path(z), rng, data)

    def log_density(self, y, z, data):
        return pf_log_meta_density(self.ssm, self.proposal, y, self._path(z), data)

    def enumerate(self, z, data):
        pf = ParticleFilter(self.ssm, self.proposal, self.K)
        path = np.asarray(self._path(z))
        T = self.ssm.n_steps(data)
        for particles, ancestors, k in _enumerate_histories(self.ssm.states, T, self.K):
            if not np.array_equal(particles[np.arange(T), ancestry(ancestors, k)], path):
                continue
            hist = pf._history(particles, ancestors, k, data)
            lm = self.log_density(hist, z, data)
            if lm > -math.inf:
                yield hist, lm


# ---------------------------------------------------------------------------
# sampling importance resampling


class OneStepModel:
    """A model seen as a single-step state-space model whose potential is the full joint.

    Uses ``model.log_joint_many(zs, data)`` when available.
    """

    def __init__(self, model):
        self.model = model
        self.states = getattr(model, "latent_support", None)

    def n_steps(self, data):
        return 1

    def log_potential(self, t, u, u_prev, data):
        many = getattr(self.model, "log_joint_many", None)
        if many is not None:
            return np.asarray(many(u, data), dtype=float)
        return np.array([self.model.log_joint(v, data) for v in u], dtype=float)

    def log_joint(self, z, data):
        return float(self.model.log_joint(np.asarray(z)[0], data))


class LikelihoodWeighting:
    """Prior proposal for a one-step model; the weight is the likelihood."""

    def __init__(self, model):
        self.model = model

    def sample(self, t, u_prev, data, rng, K):
        many = getattr(self.model, "sample_prior_many", None)
        if many is not None:
            return np.asarray(many(rng, K))
        return np.array([self.model.sample_prior(rng) for _ in range(K)])

    def log_density(self, t, u, u_prev, data):
        many = getattr(self.model, "log_prior_many", None)
        if many is not None:
            return np.asarray(many(u), dtype=float)
        return np.array([self.model.log_prior(v) for v in u], dtype=float)


class SIR(ParticleFilter):
    """Sampling importance resampling: the one-step particle filter on the full joint."""

    def __init__(self, model, K, proposal=None):
        super().__init__(OneStepModel(model), proposal or LikelihoodWeighting(model), K)
        self.model = model

    def _output(self, path):
        out = path[0]
        return out.item() if isinstance(out, np.generic) else out

    def model_log_joint(self, z, data):
        return self.model.log_joint(z, data)


class SIRMetaInference(CSMCMetaInference):
    """Places ``z`` in a uniformly chosen slot and draws the other particles from the proposal."""

    def __init__(self, model, K, proposal=None):
        super().__init__(OneStepModel(model), proposal or LikelihoodWeighting(model), K)

    def _path(self, z):
        return np.asarray(z)[None]


def run_sir(model, data, K, seed, proposal=None):
    return SIR(model, K, proposal).run(data, as_generator(seed))


class SIRReference:
    """Reference program that returns the output of an SIR run (LW-SIR with the default proposal)."""

    oracle = False

    def __init__(self, model, K, proposal=None):
        self.sir = SIR(model, K, proposal)

    def sample(self, data, rng):
        return self.sir.run(data, rng)[1]


def particle_filter_pair(ssm, proposal, K):
    return ParticleFilter(ssm, proposal, K), CSMCMetaInference(ssm, proposal, K)


def sir_pair(model, K, proposal=None):
    return SIR(model, K, proposal), SIRMetaInference(model, K, proposal)


# ---------------------------------------------------------------------------
# exact HMM recursions


def forward_log_messages(log_init, log_trans, log_obs):
    """Forward filtering in log space.

    ``log_obs[t, s]`` is ``log p(x_t | z_t = s)``.  Returns ``(alpha, log_evidence)``
    with ``alpha[t, s] = log p(x_{1:t}, z_t = s)``.
    """
    T, S = log_obs.shape
    alpha = np.empty((T, S))
    alpha[0] = log_init + log_obs[0]
    for t in range(1, T):
        alpha[t] = _logsumexp(alpha[t - 1][:, None] + log_trans, axis=0) + log_obs[t]
    log_ev = float(_logsumexp(alpha[-1]))
    if log_ev == -math.inf:
        raise ZeroEvidence("observations have zero probability under the model")
    return alpha, log_ev


def ffbs_sample(log_init, log_trans, log_obs, rng):
    """Exact posterior path by forward filtering and backward sampling."""
    rng = as_generator(rng)
    alpha, _ = forward_log_messages(log_init, log_trans, log_obs)
    T, S = log_obs.shape
    z = np.empty(T, dtype=np.int64)
    z[-1] = _categorical(alpha[-1], 1, rng)[0]
    for t in range(T - 2, -1, -1):
        z[t] = _categorical(alpha[t] + log_trans[:, z[t + 1]], 1, rng)[0]
    return z


def ffbs_log_prob(log_init, log_trans, log_obs, z):
    """Log probability that :func:`ffbs_sample` returns ``z``."""
    alpha, _ = forward_log_messages(log_init, log_trans, log_obs)
    T = len(z)
    lp = alpha[-1][z[-1]] - _logsumexp(alpha[-1])
    for t in range(T - 2, -1, -1):
        row = alpha[t] + log_trans[:, z[t + 1]]
        lp += row[z[t]] - _logsumexp(row)
    return float(lp)
