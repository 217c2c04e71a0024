"""Bayesian linear regression with a conjugate Gaussian oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import multivariate_normal, norm

from ..core import Dataset
from ..errors import SingularCovariance

DEFAULT_N_POINTS = 11


@dataclass(frozen=True)
class LinRegModel:
    """``y_i = a + b x_i + e_i`` with independent normal priors on ``(a, b)``.

    Latent values are arrays ``[intercept, slope]``; observations are
    ``(x, y)`` pairs.
    """

    prior_mean: tuple = (0.0, 0.0)
    prior_var: tuple = (1.0, 1.0)
    noise_var: float = 1.0

    def __post_init__(self):
        if min(self.prior_var) <= 0 or self.noise_var <= 0:
            raise ValueError("variances must be positive")

    latent_support = None

    @property
    def _m0(self):
        return np.asarray(self.prior_mean, dtype=float)

    @property
    def _s0(self):
        return np.sqrt(np.asarray(self.prior_var, dtype=float))

    def sample_prior(self, rng):
        return self._m0 + self._s0 * rng.standard_normal(2)

    def sample_prior_many(self, rng, K):
        return self._m0 + self._s0 * rng.standard_normal((K, 2))

    def log_prior(self, z):
        return float(np.sum(norm.logpdf(np.asarray(z), self._m0, self._s0)))

    def log_prior_many(self, zs):
        return np.sum(norm.logpdf(np.asarray(zs), self._m0, self._s0), axis=-1)

    @staticmethod
    def _xy(data):
        obs = np.asarray(data.ordered(), dtype=float).reshape(-1, 2)
        return obs[:, 0], obs[:, 1]

    def log_likelihood_many(self, zs, data):
        zs = np.atleast_2d(np.asarray(zs, dtype=float))
        x, y = self._xy(data)
        resid = y[None, :] - zs[:, :1] - zs[:, 1:2] * x[None, :]
        n = x.size
        return (-0.5 * np.sum(resid**2, axis=1) / self.noise_var
                - 0.5 * n * math.log(2 * math.pi * self.noise_var))

    def log_likelihood(self, z, data):
        return float(self.log_likelihood_many(z, data)[0])

    def log_joint(self, z, data):
        return self.log_prior(z) + self.log_likelihood(z, data)

    def log_joint_many(self, zs, data):
        return self.log_prior_many(zs) + self.log_likelihood_many(zs, data)

    def exact_log_evidence(self, data):
        return linreg_conjugate_posterior(self, data).log_evidence

    def simulate(self, rng, covariates):
        z = self.sample_prior(rng)
        x = np.asarray(covariates, dtype=float)
        y = z[0] + z[1] * x + math.sqrt(self.noise_var) * rng.standard_normal(x.size)
        return z, Dataset(np.column_stack([x, y]))


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray
    log_evidence: float
    _chol: np.ndarray = field(repr=False)

    oracle = True

    def sample(self, data=None, rng=None):
        return self.mean + self._chol @ rng.standard_normal(self.mean.size)

    def log_density(self, z, data=None):
        return float(multivariate_normal.logpdf(np.asarray(z), self.mean, self.cov))


def _cholesky(a):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc


def linreg_conjugate_posterior(model, data):
    """Exact Gaussian posterior over ``(intercept, slope)`` and the log evidence.

    ``data`` may hold zero observations (an empty array), giving the prior.
    """
    obs = np.asarray(data.ordered() if isinstance(data, Dataset) else data, dtype=float)
    obs = obs.reshape(-1, 2)
    x, y = obs[:, 0], obs[:, 1]
    X = np.column_stack([np.ones_like(x), x])
    m0 = np.asarray(model.prior_mean, dtype=float)
    S0 = np.diag(np.asarray(model.prior_var, dtype=float))
    try:
        prec = np.linalg.inv(S0) + X.T @ X / model.noise_var
        _cholesky(prec)
        cov = np.linalg.inv(prec)
        mean = cov @ (np.linalg.solve(S0, m0) + X.T @ y / model.noise_var)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc
    cov = 0.5 * (cov + cov.T)
    if x.size:
        marg = X @ S0 @ X.T + model.noise_var * np.eye(x.size)
        _cholesky(marg)
        log_ev = float(multivariate_normal.logpdf(y, X @ m0, marg))
    else:
        log_ev = 0.0
    return GaussianPosterior(mean, cov, log_ev, _cholesky(cov))


class ConjugateOracle:
    """Reference program drawing exact posterior samples for the dataset at hand."""

    oracle = True

    def __init__(self, model):
        self.model = model
        self._cache = {}

    def _posterior(self, data):
        key = np.asarray(data.ordered(), dtype=float).tobytes()
        post = self._cache.get(key)
        if post is None:
            post = self._cache[key] = linreg_conjugate_posterior(self.model, data)
        return post

    def sample(self, data, rng):
        return self._posterior(data).sample(data, rng)

    def log_density(self, z, data):
        return self._posterior(data).log_density(z)


@dataclass(frozen=True)
class LinRegFixture:
    model: LinRegModel
    data: Dataset
    true_latent: np.ndarray


def linreg_fixture(n_points=DEFAULT_N_POINTS, seed=0, model=None):
    """Covariates evenly spaced on ``[-1, 1]``; data simulated from the prior."""
    model = model or LinRegModel()
    rng = np.random.default_rng(seed)
    z, data = model.simulate(rng, np.linspace(-1.0, 1.0, n_points))
    return LinRegFixture(model, data, z)
