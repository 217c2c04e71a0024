"""Assemble (model, inference, meta-inference, reference) quadruples from a config and
sweep an effort knob.

Each knob value runs with its own seed derived from the master seed and the knob value
(:func:`knob_seed`), so a single CSV row can be reproduced in isolation from its
``knob`` and ``seed`` columns.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import estimate
from .errors import ConfigError, SubdivError
from .exact import finite_reference
from .kernels import ExactResampleKernel, RandomWalkMH, ResimulationMH, gibbs_sweep, repeat
from .models import (ConjugateOracle, GaussianMeanField, coupled_sites_fixture, hmm_fixture,
                     linreg_conjugate_posterior, linreg_fixture, noisyor_annealing_schedule,
                     noisyor_fixture, noisyor_kernels, three_state_chain_fixture,
                     toy_bernoulli_fixture)
from .rng import derive_seed
from .seqdb import SeqDbInference, SeqDbMetaInference, sequential_observation_targets
from .smc import SIRReference, particle_filter_pair, sir_pair

CSV_COLUMNS = ("knob", "estimate_nats", "stderr_nats", "n_ref", "n_inf", "seed",
               "t_ref_ms", "t_meta_ms", "t_inf_ms", "t_weight_ms")
STAGE_COLUMNS = (("t_ref_ms", "reference"), ("t_meta_ms", "meta"), ("t_inf_ms", "inference"),
                 ("t_weight_ms", "weight"))

INFERENCE_PARAMS = {
    "sir": (),
    "smc": ("proposal",),
    "seqdb": ("kernel", "targets", "steps", "block_size", "frozen", "step_scale"),
    "assessable": ("mean", "variance"),
}
REFERENCE_PARAMS = {
    "oracle": (),
    "lw_sir": ("K",),
    "seqdb": ("kernel", "targets", "steps", "block_size", "reps", "step_scale"),
}


@dataclass
class Problem:
    """A model, its dataset and an exact posterior sampler."""

    model: object
    data: object
    oracle: object


@dataclass(frozen=True)
class Preset:
    build: Callable
    description: str
    inference_kinds: tuple
    reference_kinds: tuple
    seqdb_kernels: tuple = ()


class _PriorProposal:
    """Whole-state resimulation from the prior, for :class:`ResimulationMH`."""

    def __init__(self, model):
        self.model = model

    def sample(self, rng):
        return self.model.sample_prior(rng)

    def log_density(self, value):
        return self.model.log_prior(value)

    def support(self):
        return self.model.latent_support


def _toy_bernoulli():
    fx = toy_bernoulli_fixture()
    return Problem(fx.model, fx.data, finite_reference(fx.posterior, oracle=True))


def _three_state_chain():
    fx = three_state_chain_fixture()
    return Problem(fx.model, fx.data, finite_reference(fx.posterior, oracle=True))


def _coupled_sites():
    fx = coupled_sites_fixture()
    return Problem(fx.model, fx.data, finite_reference(fx.posterior, oracle=True))


def _linreg(n_points=11, seed=0):
    fx = linreg_fixture(n_points=n_points, seed=seed)
    return Problem(fx.model, fx.data, ConjugateOracle(fx.model))


def _hmm(n_states=2, n_obs=3, T=40, seed=0):
    fx = hmm_fixture(n_states=n_states, n_obs=n_obs, T=T, seed=seed)
    return Problem(fx.model, fx.data, fx.reference)


def _noisyor(n_causes=6, n_findings=8, seed=0, cause_prior=0.05, transmission=0.9,
             leak=0.001, edge_prob=0.7):
    fx = noisyor_fixture(n_causes, n_findings, seed=seed, cause_prior=cause_prior,
                         transmission=transmission, leak=leak, edge_prob=edge_prob)
    return Problem(fx.model, fx.data,
                   finite_reference(fx.model.posterior(fx.data), oracle=True))


PRESETS = {
    "toy_bernoulli": Preset(_toy_bernoulli, "one binary latent, one observation",
                            ("sir", "seqdb"), ("oracle", "lw_sir", "seqdb"), ("exact", "mh")),
    "three_state_chain": Preset(_three_state_chain,
                                "one 3-state latent, three observations (4 sequential targets)",
                                ("sir", "seqdb"), ("oracle", "lw_sir", "seqdb"),
                                ("exact", "mh")),
    "coupled_sites": Preset(_coupled_sites, "three coupled binary sites, two noisy readings",
                            ("sir", "seqdb"), ("oracle", "lw_sir", "seqdb"), ("gibbs",)),
    "linreg": Preset(_linreg, "Bayesian linear regression with a conjugate oracle",
                     ("sir", "seqdb", "assessable"), ("oracle", "lw_sir", "seqdb"),
                     ("resimulation", "random_walk")),
    "hmm": Preset(_hmm, "discrete HMM with an FFBS oracle", ("smc",), ("oracle",)),
    "noisyor": Preset(_noisyor, "bipartite noisy-or network, all findings active",
                      ("sir", "seqdb"), ("oracle", "lw_sir", "seqdb"), ("gibbs", "mh")),
}


def build_problem(config):
    return PRESETS[config.preset].build(**config.model_params)


def _fail(path, msg):
    raise ConfigError([(path, msg)])


# ---------------------------------------------------------------------------
# sequential detailed-balance programs


def _seqdb_targets(config, problem, params, path):
    kind = params.get("targets", "annealing" if config.preset == "noisyor" else "sequential")
    if kind == "sequential":
        return sequential_observation_targets(problem.model, problem.data)
    if kind == "annealing" and config.preset == "noisyor":
        return noisyor_annealing_schedule(problem.model, problem.data, int(params.get("steps", 10)))
    _fail(f"{path}.targets", f"{kind!r} is not available for preset {config.preset!r}")


def _seqdb_kernels(config, problem, targets, params, reps, path):
    preset = PRESETS[config.preset]
    kind = params.get("kernel", preset.seqdb_kernels[0])
    if kind not in preset.seqdb_kernels:
        _fail(f"{path}.kernel", f"must be one of {', '.join(preset.seqdb_kernels)}")
    model = problem.model
    frozen = tuple(params.get("frozen", ()))
    out = []
    if config.preset == "noisyor":
        return noisyor_kernels(model, targets, kind, reps, params.get("block_size"), frozen)
    for f in targets.log_targets[1:]:
        if kind == "exact":
            k = ExactResampleKernel(f, model.latent_support)
        elif kind == "mh":
            k = ResimulationMH(f, _PriorProposal(model))
        elif kind == "gibbs":
            k = gibbs_sweep(f, len(model.fields), skip=frozen)
        elif kind == "resimulation":
            k = ResimulationMH(f, _PriorProposal(model))
        else:
            k = RandomWalkMH(f, float(params.get("step_scale", 0.5)))
        out.append(repeat(k, reps))
    return out


def _seqdb_pair(config, problem, params, reps, path):
    targets = _seqdb_targets(config, problem, params, path)
    kernels = _seqdb_kernels(config, problem, targets, params, reps, path)
    return SeqDbInference(targets, kernels), SeqDbMetaInference(targets, kernels)


class SeqDbReference:
    """Reference program that returns the output of a sequential inference run."""

    oracle = False

    def __init__(self, inference):
        self.inference = inference

    def sample(self, data, rng):
        return self.inference.run(data, rng)[1]


# ---------------------------------------------------------------------------
# assembly


def build_reference(config, problem):
    kind, params = config.reference_kind, config.reference_params
    if kind == "oracle":
        return problem.oracle
    if kind == "lw_sir":
        return SIRReference(problem.model, int(params.get("K", 64)))
    reps = int(params.get("reps", 1))
    inf, _ = _seqdb_pair(config, problem, params, reps, "reference.params")
    return SeqDbReference(inf)


def build_inference(config, problem, knob):
    """Return ``(inference, meta)`` for one knob value; ``meta`` is None for assessable."""
    kind, params = config.inference_kind, config.inference_params
    if kind == "sir":
        return sir_pair(problem.model, int(knob))
    if kind == "smc":
        which = params.get("proposal", "prior")
        if which == "prior":
            proposal = problem.model.prior_proposal()
        elif which == "conditional":
            proposal = problem.model.conditional_proposal()
        else:
            _fail("inference.params.proposal", "must be prior or conditional")
        return particle_filter_pair(problem.model.ssm, proposal, int(knob))
    if kind == "seqdb":
        return _seqdb_pair(config, problem, params, int(knob), "inference.params")
    # mean-field Gaussian: the knob is a fixed variance, or with variance=relative a
    # multiplier on the exact posterior marginal variances
    post = linreg_conjugate_posterior(problem.model, problem.data)
    mean = params.get("mean", "posterior")
    if mean == "posterior":
        mean = post.mean
    mode = params.get("variance", "fixed")
    if mode == "fixed":
        var = (float(knob),) * 2
    elif mode == "relative":
        var = tuple(float(knob) * np.diag(post.cov))
    else:
        _fail("inference.params.variance", "must be fixed or relative")
    return GaussianMeanField(tuple(np.asarray(mean, dtype=float)), var), None


@dataclass
class ProfilePoint:
    knob: object
    seed: int
    estimate: object

    def row(self):
        e = self.estimate
        out = {"knob": self.knob, "estimate_nats": e.estimate, "stderr_nats": e.stderr,
               "n_ref": e.n_reference, "n_inf": e.n_inference, "seed": self.seed}
        for col, stage in STAGE_COLUMNS:
            out[col] = 1000.0 * e.timings.get(stage, 0.0)
        return out


class EstimationError(SubdivError):
    """An estimation error raised while running one knob value."""

    def __init__(self, knob, cause):
        super().__init__(f"knob {knob!r}: {type(cause).__name__}: {cause}")
        self.knob = knob
        self.cause = cause


def knob_seed(master, knob):
    return derive_seed(master, f"knob:{knob!r}", 0)


def run_point(config, knob, problem=None, reference=None, threads=1):
    problem = problem or build_problem(config)
    reference = reference or build_reference(config, problem)
    seed = knob_seed(config.seed, knob)
    try:
        inf, meta = build_inference(config, problem, knob)
        est = estimate(problem.model, problem.data, inf, reference, config.n_ref, config.n_inf,
                       seed, meta=meta, threads=threads)
    except ConfigError:
        raise
    except (SubdivError, FloatingPointError) as exc:
        raise EstimationError(knob, exc) from exc
    return ProfilePoint(knob, seed, est)


def run_profile(config, threads=1):
    problem = build_problem(config)
    reference = build_reference(config, problem)
    return [run_point(config, knob, problem, reference, threads) for knob in config.sweep]


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def profile_csv(points):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for p in points:
        row = p.row()
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def weights_ndjson(points):
    lines = []
    for p in points:
        for branch, w in (("reference", p.estimate.ref_log_weights),
                          ("inference", p.estimate.inf_log_weights)):
            lines.append(json.dumps({"knob": p.knob, "seed": p.seed, "branch": branch,
                                     "log_weights": [float(v) for v in w]}))
    return "".join(line + "\n" for line in lines)


def run_experiment(config, threads=1, out_dir=None):
    """Run the sweep and write ``profile.csv`` (and ``weights.ndjson``) under ``out_dir``.

    Returns the list of :class:`ProfilePoint` and the written paths.
    """
    points = run_profile(config, threads)
    out_dir = out_dir or config.output
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, "profile.csv")]
    with open(paths[0], "w", encoding="utf-8", newline="") as fh:
        fh.write(profile_csv(points))
    if config.raw_weights:
        paths.append(os.path.join(out_dir, "weights.ndjson"))
        with open(paths[1], "w", encoding="utf-8") as fh:
            fh.write(weights_ndjson(points))
    return points, paths
