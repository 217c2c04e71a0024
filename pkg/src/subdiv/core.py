"""Subjective divergence and its Monte Carlo estimators.

The subjective divergence of an inference program ``q`` against a reference
program ``r`` is

    E_{z~r} E[log p(z, x*) / q_IS(z)] - E_{z~q} E[log p(z, x*) / q_HM(z)]

where ``q_IS`` and ``q_HM`` are single-sample importance-sampling and
harmonic-mean estimates of the output density built from a meta-inference
program ``m(y; z, x*)``.  With an oracle reference it upper-bounds the
symmetrized KL divergence between ``q(z; x*)`` and the posterior.

All programs in this module are duck-typed.  The estimators only rely on the
following attributes:

* model: ``log_joint(z, data)``
* inference: ``run(data, rng) -> (y, z)``, ``log_joint_density(y, z, data)``
  and optionally ``log_weight(y, z, data)``, a cheaper closed form of the log
  weight estimate (AIS weight, particle-filter evidence, ...)
* meta-inference: ``run(z, data, rng) -> y``, ``log_density(y, z, data)``
* reference: ``sample(data, rng)``
* assessable inference: ``sample(data, rng)``, ``log_density(z, data)``

The dataclasses below wrap plain callables into objects with that shape.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Optional

import numpy as np

from .errors import InsufficientSamples, SupportViolation
from .rng import stream

REFERENCE = "reference"
INFERENCE = "inference"

STAGES = ("reference", "meta", "inference", "weight")


@dataclass(frozen=True)
class Dataset:
    """Observed data ``x*`` with an explicit observation order.

    ``prefix(t)`` returns the first ``t`` observations in ``ordering``; it is
    what sequential-observation target sequences condition on.
    """

    observations: Any
    ordering: Optional[tuple] = None

    def __post_init__(self):
        n = len(self.observations)
        if n == 0:
            raise ValueError("dataset must contain at least one observation")
        order = tuple(range(n)) if self.ordering is None else tuple(int(i) for i in self.ordering)
        if sorted(order) != list(range(n)):
            raise ValueError(f"ordering {order} is not a permutation of 0..{n - 1}")
        object.__setattr__(self, "ordering", order)

    def __len__(self):
        return len(self.observations)

    def ordered(self):
        return _take(self.observations, self.ordering)

    @cached_property
    def ordered_array(self):
        """The ordered observations as a numpy array (computed once)."""
        return np.asarray(self.ordered())

    def prefix(self, t):
        if not 1 <= t <= len(self):
            raise ValueError(f"prefix length {t} outside 1..{len(self)}")
        return Dataset(_take(self.observations, self.ordering[:t]))

    def reordered(self, ordering):
        return Dataset(self.observations, tuple(ordering))


def _take(obs, idx):
    if isinstance(obs, np.ndarray):
        return obs[list(idx)]
    return tuple(obs[i] for i in idx)


@dataclass(frozen=True)
class ModelProgram:
    """A model ``p(z, x)`` given as callables.

    ``latent_support`` enumerates the latent space when it is finite and is
    ``None`` otherwise.
    """

    sample_prior: Callable
    log_joint: Callable
    log_prior: Optional[Callable] = None
    latent_support: Optional[tuple] = None


@dataclass(frozen=True)
class InferenceProgram:
    run: Callable
    log_joint_density: Callable
    enumerate: Optional[Callable] = None


@dataclass(frozen=True)
class MetaInferenceProgram:
    run: Callable
    log_density: Callable
    enumerate: Optional[Callable] = None


@dataclass(frozen=True)
class AssessableInference:
    sample: Callable
    log_density: Callable


@dataclass(frozen=True)
class ReferenceProgram:
    sample: Callable
    oracle: bool = False


@dataclass(frozen=True, eq=False)
class DivergenceEstimate:
    """Point estimate of the subjective divergence with its raw log weights.

    ``timings`` holds total wall-clock seconds per stage (reference sampling,
    meta-inference, inference, weight evaluation), summed over replicates.
    """

    estimate: float
    stderr: float
    n_reference: int
    n_inference: int
    ref_log_weights: np.ndarray
    inf_log_weights: np.ndarray
    timings: dict = field(default_factory=dict)

    @property
    def reference_term(self):
        return float(np.mean(self.ref_log_weights))

    @property
    def inference_term(self):
        return float(np.mean(self.inf_log_weights))


def summarize_log_weights(samples):
    """Return ``(mean, stderr)`` using the unbiased sample variance."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {x.size}")
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size))


def _check_finite(value, what):
    value = float(value)
    if not math.isfinite(value):
        raise SupportViolation(f"{what} is {value}")
    return value


def log_weight_estimate(model, data, z, y, inf, meta):
    """Log of ``p(z, x*) m(y; z, x*) / q(y, z; x*)``.

    Raises :class:`SupportViolation` if any of the three log densities is not
    finite.
    """
    lp = _check_finite(model.log_joint(z, data), "log p(z, x*)")
    lm = _check_finite(meta.log_density(y, z, data), "log m(y; z, x*)")
    lq = _check_finite(inf.log_joint_density(y, z, data), "log q(y, z; x*)")
    return lp + lm - lq


def _weight_fn(model, data, inf, meta):
    fast = getattr(inf, "log_weight", None)
    if fast is not None:
        return lambda y, z: _check_finite(fast(y, z, data), "log weight")
    return lambda y, z: log_weight_estimate(model, data, z, y, inf, meta)


def _run_replicates(fn, n, threads):
    if threads is None or threads == 1 or n < 2:
        return [fn(i) for i in range(n)]
    workers = None if threads == 0 else threads
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n), chunksize=max(1, n // 64)))


def _annotate(exc, branch, i):
    if isinstance(exc, SupportViolation):
        return SupportViolation(f"{branch} replicate {i}: {exc}", branch=branch, replicate=i)
    return exc


def _collect(ref_results, inf_results):
    ref_w = np.array([r[0] for r in ref_results], dtype=float)
    inf_w = np.array([r[0] for r in inf_results], dtype=float)
    timings = dict.fromkeys(STAGES, 0.0)
    for _, t in list(ref_results) + list(inf_results):
        for k, v in t.items():
            timings[k] += v
    return ref_w, inf_w, timings


def _finish(ref_w, inf_w, timings):
    mean_r, se_r = summarize_log_weights(ref_w)
    mean_q, se_q = summarize_log_weights(inf_w)
    return DivergenceEstimate(
        estimate=float(np.mean(ref_w) - np.mean(inf_w)),
        stderr=math.hypot(se_r, se_q),
        n_reference=ref_w.size,
        n_inference=inf_w.size,
        ref_log_weights=ref_w,
        inf_log_weights=inf_w,
        timings=timings,
    )


def _check_counts(n_ref, n_inf):
    if n_ref < 2 or n_inf < 2:
        raise InsufficientSamples(f"need n_ref >= 2 and n_inf >= 2, got {n_ref}, {n_inf}")


def estimate_subjective_divergence_general(model, data, inf, meta, ref, n_ref, n_inf,
                                           seed, threads=1):
    """Estimate the subjective divergence of a general inference program.

    Each reference replicate samples ``z ~ r`` then ``y ~ m(.; z)``; each
    inference replicate samples ``(y, z) ~ q`` jointly.  Both compute the log
    weight estimate of the pair.  Replicate ``i`` of a branch draws from the
    stream ``(seed, branch, i)`` so the result does not depend on ``threads``.

    If ``inf`` defines ``log_weight(y, z, data)`` it is used instead of the
    generic density ratio.
    """
    _check_counts(n_ref, n_inf)
    weight = _weight_fn(model, data, inf, meta)
    clock = time.perf_counter

    def reference(i):
        rng = stream(seed, REFERENCE, i)
        try:
            t0 = clock()
            z = ref.sample(data, rng)
            t1 = clock()
            y = meta.run(z, data, rng)
            t2 = clock()
            w = weight(y, z)
            t3 = clock()
        except SupportViolation as exc:
            raise _annotate(exc, REFERENCE, i) from exc
        return w, {"reference": t1 - t0, "meta": t2 - t1, "weight": t3 - t2}

    def inference(j):
        rng = stream(seed, INFERENCE, j)
        try:
            t0 = clock()
            y, z = inf.run(data, rng)
            t1 = clock()
            w = weight(y, z)
            t2 = clock()
        except SupportViolation as exc:
            raise _annotate(exc, INFERENCE, j) from exc
        return w, {"inference": t1 - t0, "weight": t2 - t1}

    ref_results = _run_replicates(reference, n_ref, threads)
    inf_results = _run_replicates(inference, n_inf, threads)
    return _finish(*_collect(ref_results, inf_results))


def estimate_subjective_divergence_assessable(model, data, q, ref, n_ref, n_inf, seed,
                                              threads=1):
    """Estimate the subjective divergence when ``q(z; x*)`` is evaluable.

    Both branches use the exact log weight ``log p(z, x*) - log q(z; x*)``;
    there is no meta-inference.
    """
    _check_counts(n_ref, n_inf)
    clock = time.perf_counter

    def weight(z):
        lp = _check_finite(model.log_joint(z, data), "log p(z, x*)")
        return lp - _check_finite(q.log_density(z, data), "log q(z; x*)")

    def reference(i):
        rng = stream(seed, REFERENCE, i)
        try:
            t0 = clock()
            z = ref.sample(data, rng)
            t1 = clock()
            w = weight(z)
            t2 = clock()
        except SupportViolation as exc:
            raise _annotate(exc, REFERENCE, i) from exc
        return w, {"reference": t1 - t0, "weight": t2 - t1}

    def inference(j):
        rng = stream(seed, INFERENCE, j)
        try:
            t0 = clock()
            z = q.sample(data, rng)
            t1 = clock()
            w = weight(z)
            t2 = clock()
        except SupportViolation as exc:
            raise _annotate(exc, INFERENCE, j) from exc
        return w, {"inference": t1 - t0, "weight": t2 - t1}

    ref_results = _run_replicates(reference, n_ref, threads)
    inf_results = _run_replicates(inference, n_inf, threads)
    return _finish(*_collect(ref_results, inf_results))


def estimate(model, data, inf, ref, n_ref, n_inf, seed, meta=None, threads=1):
    """Dispatch to the assessable estimator when ``meta`` is None."""
    if meta is None:
        return estimate_subjective_divergence_assessable(model, data, inf, ref, n_ref, n_inf,
                                                         seed, threads=threads)
    return estimate_subjective_divergence_general(model, data, inf, meta, ref, n_ref, n_inf,
                                                  seed, threads=threads)


def trivial_meta():
    """Meta-inference for history-free programs: ``y`` is ``()`` with density 1."""
    return MetaInferenceProgram(
        run=lambda z, data, rng: (),
        log_density=lambda y, z, data: 0.0,
        enumerate=lambda z, data: [((), 0.0)],
    )


def as_inference(q: AssessableInference):
    """View an assessable program as a history-free inference program."""

    def enumerate_joint(data):
        support = getattr(q, "support", None)
        if support is None:
            raise TypeError("assessable program has no finite support")
        return [((), z, q.log_density(z, data)) for z in support]

    return InferenceProgram(
        run=lambda data, rng: ((), q.sample(data, rng)),
        log_joint_density=lambda y, z, data: q.log_density(z, data),
        enumerate=enumerate_joint,
    )

