"""Sequential inference with detailed-balance kernels and its reversed-chain meta-inference.

The inference program draws ``u_0 ~ p_0``, then ``u_t ~ k_t(. ; u_{t-1})`` for
``t = 1..T-1`` and returns ``z ~ k_T(. ; u_{T-1})``, where ``k_t`` leaves
``p_t`` invariant.  The history is the coarse state sequence
``(u_0, ..., u_{T-1})``; the randomness inside each kernel is not recorded.

Meta-inference runs the time reversals of the same kernels backwards from
``z``.  With that pairing the log weight telescopes to the annealed
importance sampling weight ``sum_t log p_{t+1}(u_t) - log p_t(u_t)``.

A second variant grows the state space as it goes: at step ``t`` an extension
``v_t ~ q(v_t | u_{t-1})`` is appended before applying ``k_t`` on
``U_t = U_{t-1} x V_t``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .errors import SupportViolation, TargetMismatch
from .exact import FiniteDistribution, canonical, exact_symmetrized_kl
from .rng import as_generator

NORMALIZATION_TOL = 1e-10


@dataclass(frozen=True)
class TargetSequence:
    """Unnormalized log targets ``p_0 .. p_T``.

    ``log_targets[0]`` must be a normalized density that ``sample_initial``
    draws from.  ``states`` lists the state space when it is finite; the
    normalization of ``p_0`` is checked over it.
    """

    log_targets: tuple
    sample_initial: Callable
    states: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "log_targets", tuple(self.log_targets))
        if len(self.log_targets) < 2:
            raise ValueError("a target sequence needs at least p_0 and p_1")
        if self.states is not None:
            object.__setattr__(self, "states", tuple(self.states))
            total = logsumexp([self.log_targets[0](s) for s in self.states])
            if abs(total) > NORMALIZATION_TOL:
                raise ValueError(f"initial target is not normalized: log mass {total:.3e}")

    @property
    def T(self):
        return len(self.log_targets) - 1

    def normalized(self, t):
        """``p_t`` as a :class:`FiniteDistribution` over ``states``."""
        if self.states is None:
            raise TypeError("target sequence has no finite state space")
        return FiniteDistribution.from_log_weights(
            self.states, [self.log_targets[t](s) for s in self.states])


def geometric_bridge(log_initial, log_final, betas, sample_initial, states=None):
    """Targets ``(1 - b) log p_0 + b log p_T`` for each ``b`` in ``betas``.

    ``betas`` must start at 0 and end at 1.  The endpoints are the given
    functions themselves, so kernels built for them match by identity.
    """
    betas = [float(b) for b in betas]
    if betas[0] != 0.0 or betas[-1] != 1.0:
        raise ValueError("bridge must start at 0 and end at 1")

    def make(b):
        return lambda u: (1.0 - b) * log_initial(u) + b * log_final(u)

    targets = [log_initial] + [make(b) for b in betas[1:-1]] + [log_final]
    return TargetSequence(targets, sample_initial, states)


def sequential_observation_targets(model, data):
    """Partial posteriors ``p_t(z) = p(z, x*_{1:t})`` in the dataset's order.

    ``p_0`` is the prior and ``p_T`` is the joint at the full dataset.
    """
    if model.log_prior is None:
        raise TypeError("sequential observation targets need model.log_prior")

    def make(t):
        prefix = data.prefix(t)
        return lambda z: model.log_joint(z, prefix)

    targets = [model.log_prior] + [make(t) for t in range(1, len(data) + 1)]
    return TargetSequence(targets, lambda rng: model.sample_prior(rng), model.latent_support)


@dataclass(frozen=True)
class SeqDbHistory:
    states: tuple   # u_0 .. u_{T-1}

    def __len__(self):
        return len(self.states)

    @cached_property
    def _key(self):
        return tuple(canonical(u) for u in self.states)

    def canonical(self):
        return self._key


# ---------------------------------------------------------------------------
# weights


def _finite(value, what):
    if not math.isfinite(value):
        raise SupportViolation(f"{what} is {value}")
    return value


def ais_log_weight(targets, history):
    """``sum_{t=0}^{T-1} log p_{t+1}(u_t) - log p_t(u_t)``."""
    states = history.states if isinstance(history, SeqDbHistory) else tuple(history)
    if len(states) != targets.T:
        raise ValueError(f"history has {len(states)} states, expected {targets.T}")
    total = 0.0
    for t, u in enumerate(states):
        num = targets.log_targets[t + 1](u)
        den = targets.log_targets[t](u)
        total += _finite(num, f"log p_{t + 1}(u_{t})") - _finite(den, f"log p_{t}(u_{t})")
    return total


def asymptotic_gap(targets):
    """``sum_t symKL(p_t, p_{t+1})`` over an enumerable target sequence."""
    dists = [targets.normalized(t) for t in range(targets.T + 1)]
    return float(sum(exact_symmetrized_kl(a, b) for a, b in zip(dists, dists[1:])))


# ---------------------------------------------------------------------------
# kernel densities


class _KernelDensity:
    """``log k(v | u)`` through ``transition_log_prob`` or a cached matrix over ``states``."""

    def __init__(self, kernel, states=None):
        self.kernel = kernel
        self.states = None if states is None else list(states)
        self._logK = None
        self._index = None

    def _matrix(self):
        if self._logK is None:
            with np.errstate(divide="ignore"):
                self._logK = np.log(self.kernel.transition_matrix(self.states))
            self._index = {canonical(s): i for i, s in enumerate(self.states)}
        return self._logK, self._index

    def __call__(self, u, v):
        if self.states is None:
            return float(self.kernel.transition_log_prob(u, v))
        logK, index = self._matrix()
        i, j = index.get(canonical(u)), index.get(canonical(v))
        if i is None or j is None:
            return -math.inf
        return float(logK[i, j])

    def row(self, u):
        """``(states, log k(. | u))``."""
        logK, index = self._matrix()
        return self.states, logK[index[canonical(u)]]


def _check_pairing(log_targets, kernels):
    if len(kernels) != len(log_targets):
        raise TargetMismatch(f"{len(kernels)} kernels for {len(log_targets)} targets")
    for t, (k, target) in enumerate(zip(kernels, log_targets), start=1):
        if k.target is not target:
            raise TargetMismatch(f"kernel {t} does not declare target p_{t}")


# ---------------------------------------------------------------------------
# fixed state space


class SeqDbInference:
    """Inference program over a fixed state space; ``kernels[t-1]`` targets ``p_t``."""

    def __init__(self, targets, kernels):
        self.targets = targets
        self.kernels = list(kernels)
        _check_pairing(targets.log_targets[1:], self.kernels)
        self._dens = [_KernelDensity(k, targets.states) for k in self.kernels]

    def run(self, data, rng):
        u = self.targets.sample_initial(rng)
        states = [u]
        for k in self.kernels[:-1]:
            u = k.step(u, rng)
            states.append(u)
        z = self.kernels[-1].step(u, rng)
        return SeqDbHistory(tuple(states)), z

    def log_joint_density(self, y, z, data):
        path = list(y.states) + [z]
        total = self.targets.log_targets[0](path[0])
        for t, dens in enumerate(self._dens):
            total += dens(path[t], path[t + 1])
        return float(total)

    def log_weight(self, y, z, data):
        return ais_log_weight(self.targets, y)

    def enumerate(self, data):
        states = self.targets.states
        if states is None:
            raise TypeError("enumeration needs a finite state space")
        for path in itertools.product(states, repeat=self.targets.T + 1):
            lq = self.log_joint_density(SeqDbHistory(path[:-1]), path[-1], data)
            if lq > -math.inf:
                yield SeqDbHistory(path[:-1]), path[-1], lq


class SeqDbMetaInference:
    """Runs the reversed kernels from ``z`` down to ``u_0``."""

    def __init__(self, targets, kernels):
        self.targets = targets
        self.kernels = list(kernels)
        _check_pairing(targets.log_targets[1:], self.kernels)
        self.reversed_kernels = [k.reversed() for k in self.kernels]
        self._dens = [_KernelDensity(k, targets.states) for k in self.reversed_kernels]

    def run(self, z, data, rng):
        states = [None] * self.targets.T
        u = z
        for t in range(self.targets.T - 1, -1, -1):
            u = self.reversed_kernels[t].step(u, rng)
            states[t] = u
        return SeqDbHistory(tuple(states))

    def log_density(self, y, z, data):
        path = list(y.states) + [z]
        total = 0.0
        for t in range(self.targets.T - 1, -1, -1):
            total += self._dens[t](path[t + 1], path[t])
        return float(total)

    def enumerate(self, z, data):
        # backward recursion over the reversed chain
        partial = [((z,), 0.0)]
        for t in range(self.targets.T - 1, -1, -1):
            nxt = []
            for path, lm in partial:
                states, row = self._dens[t].row(path[0])
                for s, l in zip(states, row):
                    if l > -math.inf:
                        nxt.append(((s,) + path, lm + l))
            partial = nxt
        for path, lm in partial:
            yield SeqDbHistory(path[:-1]), lm


def run_seqdb_inference(targets, kernels, seed, data=None):
    return SeqDbInference(targets, kernels).run(data, as_generator(seed))


def run_seqdb_metainference(targets, kernels, z_star, seed, data=None):
    return SeqDbMetaInference(targets, kernels).run(z_star, data, as_generator(seed))


# ---------------------------------------------------------------------------
# state extensions


@dataclass(frozen=True)
class ExtensionSchedule:
    """Extension samplers for ``t = 1..T``.

    Each sampler offers ``sample(u_prev, rng) -> v``, ``log_density(v, u_prev)``
    and, for enumeration, ``support(u_prev)``.  States are tuples and
    ``u_t = u_{t-1} + v_t``; ``u_0`` is the empty tuple.  ``dims[t-1]`` is the
    length of ``v_t``.
    """

    samplers: tuple
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "samplers", tuple(self.samplers))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.samplers) != len(self.dims):
            raise ValueError("one dimension per extension sampler")
        if self.dims[0] < 1:
            raise ValueError("the first extension must be non-empty")

    @property
    def T(self):
        return len(self.samplers)

    def split(self, t, state):
        """Split a level-``t`` state into ``(u_{t-1}, v_t)``."""
        n_prev = sum(self.dims[: t - 1])
        return tuple(state[:n_prev]), tuple(state[n_prev:])


@dataclass(frozen=True)
class ExtensionHistory:
    """Extensions ``v_1..v_T`` and intermediate states ``u_1..u_{T-1}``."""

    extensions: tuple
    states: tuple

    @cached_property
    def _key(self):
        return (canonical(self.extensions), canonical(self.states))

    def canonical(self):
        return self._key


def extension_log_weight(log_targets, schedule, history, z=None):
    """Log weight of the state-extension scheme.

    ``log_targets`` holds ``p_1..p_T`` (there is no ``p_0``).  The value is
    ``log p_1(v_1) - log q(v_1) + sum_{t=1}^{T-1} [log p_{t+1}(u_t + v_{t+1})
    - log p_t(u_t) - log q(v_{t+1} | u_t)]``.
    """
    v, u = history.extensions, history.states
    T = schedule.T
    if len(log_targets) != T or len(v) != T or len(u) != T - 1:
        raise ValueError("history and schedule lengths disagree")
    first = tuple(v[0])
    total = _finite(log_targets[0](first), "log p_1(v_1)") \
        - _finite(schedule.samplers[0].log_density(first, ()), "log q(v_1)")
    for t in range(1, T):
        ut = tuple(u[t - 1])
        vn = tuple(v[t])
        total += _finite(log_targets[t](ut + vn), f"log p_{t + 1}")
        total -= _finite(log_targets[t - 1](ut), f"log p_{t}")
        total -= _finite(schedule.samplers[t].log_density(vn, ut), f"log q(v_{t + 1})")
    return total


class ExtensionInference:
    """Inference with growing states; ``kernels[t-1]`` targets ``log_targets[t-1] = p_t``.

    ``level_states[t-1]`` optionally enumerates ``U_t`` for exact densities.
    """

    def __init__(self, log_targets, schedule, kernels, level_states=None):
        self.log_targets = tuple(log_targets)
        self.schedule = schedule
        self.kernels = list(kernels)
        _check_pairing(self.log_targets, self.kernels)
        if level_states is None:
            level_states = [None] * schedule.T
        self.level_states = [None if s is None else [tuple(x) for x in s] for s in level_states]
        self._dens = [_KernelDensity(k, s) for k, s in zip(self.kernels, self.level_states)]

    def run(self, data, rng):
        u = ()
        exts, states = [], []
        for t, (sampler, k) in enumerate(zip(self.schedule.samplers, self.kernels)):
            v = tuple(sampler.sample(u, rng))
            exts.append(v)
            u = tuple(k.step(u + v, rng))
            if t < self.schedule.T - 1:
                states.append(u)
        return ExtensionHistory(tuple(exts), tuple(states)), u

    def log_joint_density(self, y, z, data):
        total = 0.0
        u = ()
        outputs = list(y.states) + [tuple(z)]
        for t in range(self.schedule.T):
            v = tuple(y.extensions[t])
            total += self.schedule.samplers[t].log_density(v, u)
            total += self._dens[t](u + v, outputs[t])
            u = outputs[t]
        return float(total)

    def log_weight(self, y, z, data):
        return extension_log_weight(self.log_targets, self.schedule, y, z)

    def enumerate(self, data):
        partial = [((), (), (), 0.0)]   # (u, exts, states, lq)
        T = self.schedule.T
        for t in range(T):
            sampler = self.schedule.samplers[t]
            nxt = []
            for u, exts, states, lq in partial:
                for v in sampler.support(u):
                    v = tuple(v)
                    lv = sampler.log_density(v, u)
                    if lv == -math.inf:
                        continue
                    for w in self.level_states[t]:
                        lk = self._dens[t](u + v, w)
                        if lk == -math.inf:
                            continue
                        new_states = states + (w,) if t < T - 1 else states
                        nxt.append((w, exts + (v,), new_states, lq + lv + lk))
            partial = nxt
        for z, exts, states, lq in partial:
            yield ExtensionHistory(exts, states), z, lq


class ExtensionMetaInference:
    """Reversed kernels split each state back into ``(u_{t-1}, v_t)``."""

    def __init__(self, log_targets, schedule, kernels, level_states=None):
        self.schedule = schedule
        self.kernels = list(kernels)
        _check_pairing(tuple(log_targets), self.kernels)
        if level_states is None:
            level_states = [None] * schedule.T
        level_states = [None if s is None else [tuple(x) for x in s] for s in level_states]
        self.reversed_kernels = [k.reversed() for k in self.kernels]
        self._dens = [_KernelDensity(k, s) for k, s in zip(self.reversed_kernels, level_states)]

    def run(self, z, data, rng):
        T = self.schedule.T
        u = tuple(z)
        exts, states = [None] * T, [None] * (T - 1)
        for t in range(T, 0, -1):
            w = tuple(self.reversed_kernels[t - 1].step(u, rng))
            prev, v = self.schedule.split(t, w)
            exts[t - 1] = v
            if t > 1:
                states[t - 2] = prev
            u = prev
        return ExtensionHistory(tuple(exts), tuple(states))

    def log_density(self, y, z, data):
        T = self.schedule.T
        outputs = [()] + list(y.states) + [tuple(z)]
        total = 0.0
        for t in range(T, 0, -1):
            pre = outputs[t - 1] + tuple(y.extensions[t - 1])
            total += self._dens[t - 1](outputs[t], pre)
        return float(total)

    def enumerate(self, z, data):
        T = self.schedule.T
        partial = [(tuple(z), (), (), 0.0)]   # (u_t, exts from t+1.., states from t.., lm)
        for t in range(T, 0, -1):
            nxt = []
            for u, exts, states, lm in partial:
                states_row, row = self._dens[t - 1].row(u)
                for w, l in zip(states_row, row):
                    if l == -math.inf:
                        continue
                    prev, v = self.schedule.split(t, w)
                    new_states = (prev,) + states if t > 1 else states
                    nxt.append((prev, (v,) + exts, new_states, lm + l))
            partial = nxt
        for _, exts, states, lm in partial:
            yield ExtensionHistory(exts, states), lm
