"""Transition kernels that leave a target invariant.

Every kernel carries the (unnormalized) log target it was built for and the
set of sites it updates.  Primitive kernels expose
``transition_log_prob(u, u_new)`` so that, on finite state spaces,
``transition_matrix(states)`` and :func:`check_detailed_balance` can audit
them.  Composite kernels (:class:`Repeat`, :class:`Cycle`) build their matrix
from the components.

``reversed()`` returns the kernel whose transition matrix ``R`` satisfies
``p(u) K(u, u') = p(u') R(u', u)``.  Kernels in detailed balance are their own
reversal; a cycle reverses to the cycle of reversed components in opposite
order.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import logsumexp

from .errors import EmptyConditional, MixedTargets, SupportViolation


def _replace(state, sites, values):
    if isinstance(state, np.ndarray):
        new = state.copy()
        new[list(sites)] = values
        return new
    new = list(state)
    for s, v in zip(sites, values):
        new[s] = v
    return tuple(new)


def _get(state, sites):
    return tuple(state[s] for s in sites)


def _same(a, b):
    return np.array_equal(np.asarray(a), np.asarray(b))


def _same_outside(a, b, sites):
    if sites is None:
        return True
    keep = [i for i in range(len(a)) if i not in set(sites)]
    return _same(_get(a, keep), _get(b, keep))


def _entry_check(target, state):
    lp = target(state)
    if lp == -math.inf or math.isnan(lp):
        raise SupportViolation(f"target density is zero at kernel entry state {state!r}")
    return lp


# ---------------------------------------------------------------------------
# step functions


def mh_resimulation_step(state, target, proposal, rng, sites=None):
    """Independence Metropolis-Hastings step with a resimulation proposal.

    ``proposal`` has ``sample(rng)`` and ``log_density(value)``.  With
    ``sites=None`` it proposes a whole new state; otherwise it proposes the
    tuple of values for ``sites`` and the rest of the state is kept.
    """
    lp_old = _entry_check(target, state)
    proposed = proposal.sample(rng)
    if sites is None:
        new = proposed
        lq_new, lq_old = proposal.log_density(new), proposal.log_density(state)
    else:
        new = _replace(state, sites, proposed)
        lq_new = proposal.log_density(proposed)
        lq_old = proposal.log_density(_get(state, sites))
    lp_new = target(new)
    log_alpha = (lp_new + lq_old) - (lp_old + lq_new)
    if lp_new > -math.inf and math.log(rng.random()) < log_alpha:
        return new
    return state


def mh_random_walk_step(state, target, step_scale, rng, lattice=False):
    """Symmetric random-walk Metropolis step.

    Each coordinate moves by an independent offset, uniform on
    ``[-step_scale, step_scale]`` (or on the integers in that range when
    ``lattice`` is set).
    """
    lp_old = _entry_check(target, state)
    x = np.asarray(state)
    width = np.broadcast_to(np.asarray(step_scale), x.shape)
    if lattice:
        offset = rng.integers(-width, width + 1)
    else:
        offset = rng.uniform(-1.0, 1.0, size=x.shape) * width
    new = x + offset
    if isinstance(state, tuple):
        new = tuple(new.tolist())
    elif np.isscalar(state):
        new = new.item()
    lp_new = target(new)
    if lp_new > -math.inf and math.log(rng.random()) < lp_new - lp_old:
        return new
    return state


def gibbs_conditional(state, target, sites, domain):
    """Exact conditional over the joint values of ``sites``.

    Returns ``(values, log_probs)`` where ``values`` is the list of value
    tuples.  ``domain`` is the per-site finite domain.
    """
    values = list(itertools.product(domain, repeat=len(sites)))
    lp = np.array([target(_replace(state, sites, v)) for v in values])
    i = int(np.argmax(lp))
    top = lp[i]
    if top == -math.inf:
        raise EmptyConditional(f"all values of sites {sites} have zero mass")
    # same accuracy as scipy's logsumexp without its overhead on short vectors
    rest = np.exp(np.delete(lp, i) - top).sum()
    return values, (lp - top) - math.log1p(rest)


def gibbs_single_site_step(state, target, site_index, rng, domain=(0, 1)):
    """Resample one site from its exact conditional."""
    return _gibbs_step(state, target, (site_index,), domain, rng)


def _gibbs_step(state, target, sites, domain, rng):
    values, lp = gibbs_conditional(state, target, sites, domain)
    i = rng.choice(len(values), p=np.exp(lp))
    return _replace(state, sites, values[i])


# ---------------------------------------------------------------------------
# kernel objects


class TransitionKernel:
    """Base class.  Subclasses set ``target`` and ``sites`` and define ``step``."""

    target = None
    sites = None

    def step(self, state, rng):
        raise NotImplementedError

    def transition_log_prob(self, state, new_state):
        raise NotImplementedError(f"{type(self).__name__} has no evaluable transition density")

    def transition_matrix(self, states):
        """Row-stochastic matrix ``K[i, j] = k(states[j] | states[i])``."""
        n = len(states)
        K = np.empty((n, n))
        for i, u in enumerate(states):
            for j, v in enumerate(states):
                K[i, j] = math.exp(self.transition_log_prob(u, v))
        return K

    def reversed(self):
        return self


class IdentityKernel(TransitionKernel):
    def __init__(self, target):
        self.target = target
        self.sites = ()

    def step(self, state, rng):
        return state

    def transition_log_prob(self, state, new_state):
        return 0.0 if _same(state, new_state) else -math.inf


class ExactResampleKernel(TransitionKernel):
    """Draws a fresh state from the normalized target, ignoring the current state.

    The perfectly mixing kernel used to exercise the asymptotic regime.
    """

    def __init__(self, target, states):
        self.target = target
        self.sites = None
        self.states = list(states)
        lp = np.array([target(s) for s in self.states])
        self._log_probs = lp - logsumexp(lp)
        self._index = {_key(s): i for i, s in enumerate(self.states)}

    def step(self, state, rng):
        return self.states[rng.choice(len(self.states), p=np.exp(self._log_probs))]

    def transition_log_prob(self, state, new_state):
        i = self._index.get(_key(new_state))
        return -math.inf if i is None else float(self._log_probs[i])


def _key(state):
    if isinstance(state, np.ndarray):
        return tuple(state.tolist())
    return state


class ResimulationMH(TransitionKernel):
    """Independence MH that resimulates ``sites`` (or the whole state) from ``proposal``.

    For evaluable transition densities ``proposal`` must also offer
    ``support()``, the finite list of values it can propose.
    """

    def __init__(self, target, proposal, sites=None):
        self.target = target
        self.proposal = proposal
        self.sites = None if sites is None else tuple(sites)

    def step(self, state, rng):
        return mh_resimulation_step(state, self.target, self.proposal, rng, self.sites)

    def _move(self, state, value):
        return value if self.sites is None else _replace(state, self.sites, value)

    def _log_accept_move(self, state, value):
        new = self._move(state, value)
        lq_new = self.proposal.log_density(value)
        old_value = state if self.sites is None else _get(state, self.sites)
        lq_old = self.proposal.log_density(old_value)
        lp_new = self.target(new)
        if lp_new == -math.inf:
            return new, -math.inf
        return new, lq_new + min(0.0, lp_new + lq_old - self.target(state) - lq_new)

    def transition_log_prob(self, state, new_state):
        if not _same_outside(state, new_state, self.sites):
            return -math.inf
        stay = 1.0
        result = -math.inf
        for value in self.proposal.support():
            new, la = self._log_accept_move(state, value)
            if _same(new, state):
                continue
            p = math.exp(la)
            stay -= p
            if _same(new, new_state):
                result = np.logaddexp(result, la)
        if _same(state, new_state):
            return math.log(max(stay, 0.0)) if stay > 0 else -math.inf
        return float(result)


class RandomWalkMH(TransitionKernel):
    """Random-walk MH with per-coordinate uniform offsets of half-width ``step_scale``."""

    def __init__(self, target, step_scale, lattice=False):
        self.target = target
        self.step_scale = step_scale
        self.lattice = lattice
        self.sites = None

    def step(self, state, rng):
        return mh_random_walk_step(state, self.target, self.step_scale, rng, self.lattice)

    def transition_log_prob(self, state, new_state):
        if not self.lattice:
            raise NotImplementedError("transition density is only evaluable on a lattice")
        x = np.atleast_1d(np.asarray(state))
        width = np.broadcast_to(np.asarray(self.step_scale, dtype=int), x.shape)
        ranges = [range(-w, w + 1) for w in width]
        n_offsets = int(np.prod([len(r) for r in ranges]))
        lp_old = self.target(state)
        stay = 1.0
        result = -math.inf
        for off in itertools.product(*ranges):
            if not any(off):
                continue
            cand = x + np.array(off)
            cand = cand.item() if np.ndim(state) == 0 else type(state)(cand.tolist())
            lp_new = self.target(cand)
            if lp_new == -math.inf:
                continue
            p = min(1.0, math.exp(lp_new - lp_old)) / n_offsets
            stay -= p
            if _same(cand, new_state):
                result = math.log(p)
        if _same(state, new_state):
            return math.log(stay) if stay > 0 else -math.inf
        return result


class Gibbs(TransitionKernel):
    """Gibbs update of a block of sites from their exact joint conditional.

    A single-element ``sites`` gives the single-site Gibbs operator.
    """

    def __init__(self, target, sites, domain=(0, 1)):
        self.target = target
        self.sites = tuple(sites) if not isinstance(sites, int) else (sites,)
        self.domain = tuple(domain)

    def step(self, state, rng):
        return _gibbs_step(state, self.target, self.sites, self.domain, rng)

    def transition_log_prob(self, state, new_state):
        if not _same_outside(state, new_state, self.sites):
            return -math.inf
        values, lp = gibbs_conditional(state, self.target, self.sites, self.domain)
        want = _get(new_state, self.sites)
        for v, l in zip(values, lp):
            if tuple(v) == tuple(want):
                return float(l)
        return -math.inf


def _shared_target(kernels):
    target = kernels[0].target
    for k in kernels[1:]:
        if k.target != target:
            raise MixedTargets("composed kernels declare different targets")
    return target


def _union_sites(kernels):
    if any(k.sites is None for k in kernels):
        return None
    return tuple(sorted(set().union(*(k.sites for k in kernels))))


class Repeat(TransitionKernel):
    def __init__(self, kernel, n):
        if n < 1:
            raise ValueError("repeat count must be >= 1")
        self.kernel = kernel
        self.n = int(n)
        self.target = kernel.target
        self.sites = kernel.sites

    def step(self, state, rng):
        for _ in range(self.n):
            state = self.kernel.step(state, rng)
        return state

    def transition_matrix(self, states):
        return np.linalg.matrix_power(self.kernel.transition_matrix(states), self.n)

    def reversed(self):
        inner = self.kernel.reversed()
        return self if inner is self.kernel else Repeat(inner, self.n)


class Cycle(TransitionKernel):
    """Apply ``kernels`` in order; preserves the shared target but not detailed balance."""

    def __init__(self, kernels):
        self.kernels = list(kernels)
        if not self.kernels:
            raise ValueError("cycle needs at least one kernel")
        self.target = _shared_target(self.kernels)
        self.sites = _union_sites(self.kernels)

    def step(self, state, rng):
        for k in self.kernels:
            state = k.step(state, rng)
        return state

    def transition_matrix(self, states):
        K = np.eye(len(states))
        for k in self.kernels:
            K = K @ k.transition_matrix(states)
        return K

    def reversed(self):
        return Cycle([k.reversed() for k in reversed(self.kernels)])


def repeat(kernel, n):
    return kernel if n == 1 else Repeat(kernel, n)


def cycle(kernels):
    return Cycle(kernels)


def gibbs_sweep(target, n_sites, domain=(0, 1), skip=()):
    """Single-site Gibbs over every site in order, minus the sites in ``skip``."""
    return Cycle([Gibbs(target, (i,), domain) for i in range(n_sites) if i not in set(skip)])


# ---------------------------------------------------------------------------
# audits


def _target_probs(kernel, target, states):
    if target is None:
        lp = np.array([kernel.target(s) for s in states])
        return np.exp(lp - logsumexp(lp))
    return np.exp(np.array([target.log_prob(s) for s in states]))


def check_detailed_balance(kernel, target):
    """Largest ``|p(u) k(u'|u) - p(u') k(u|u')|`` over the target's support.

    ``target`` is a :class:`~subdiv.exact.FiniteDistribution`.
    """
    states = list(target.support)
    p = _target_probs(kernel, target, states)
    flow = p[:, None] * kernel.transition_matrix(states)
    return float(np.max(np.abs(flow - flow.T)))


def leaf_kernels(kernel):
    """The primitive kernels inside any nesting of :class:`Repeat` and :class:`Cycle`."""
    if isinstance(kernel, Repeat):
        return leaf_kernels(kernel.kernel)
    if isinstance(kernel, Cycle):
        return [leaf for k in kernel.kernels for leaf in leaf_kernels(k)]
    return [kernel]


def check_stationarity(kernel, target):
    """Largest ``|(p K)(u) - p(u)|``."""
    states = list(target.support)
    p = _target_probs(kernel, target, states)
    return float(np.max(np.abs(p @ kernel.transition_matrix(states) - p)))


def check_reversal(kernel, target):
    """Largest ``|p(u) K(u, u') - p(u') R(u', u)|`` with ``R = kernel.reversed()``."""
    states = list(target.support)
    p = _target_probs(kernel, target, states)
    fwd = p[:, None] * kernel.transition_matrix(states)
    bwd = p[:, None] * kernel.reversed().transition_matrix(states)
    return float(np.max(np.abs(fwd - bwd.T)))
