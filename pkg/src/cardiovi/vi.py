"""Variational objective and the two-stage fit.

The approximate posterior is a diagonal Gaussian over the raw (unit-box)
coordinates that the optimiser sees. Stage one finds its mean by
minimising the ECG misfit; stage two keeps the mean fixed and chooses the
per-dimension spread by maximising a Monte Carlo estimate of the evidence
lower bound.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bayesopt import Box, bo_minimize
from .cardiosim import EcgTrace, ecg_mse
from .errors import ParameterError

SIGMA_FLOOR = 1e-3
MAX_REDRAWS = 100


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, float)).copy()
        sigma = np.atleast_1d(np.asarray(self.sigma, float)).copy()
        if mu.shape != sigma.shape:
            raise ParameterError("mu and sigma must have the same length")
        if not np.all(sigma > 0):
            raise ParameterError("sigma must be strictly positive")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self):
        return len(self.mu)


@dataclass(frozen=True, eq=False)
class PriorSpec:
    """Independent Gaussian prior per dimension."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, float)).copy()
        std = np.atleast_1d(np.asarray(self.std, float)).copy()
        if mean.shape != std.shape or not np.all(std > 0):
            raise ParameterError("prior needs matching mean/std with std > 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def for_box(cls, lo, hi):
        """Centred on the box with a quarter of its width as standard deviation."""
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        return cls((lo + hi) / 2, (hi - lo) / 4)

    def sample(self, rng, lo, hi):
        return _truncated_draw(rng, self.mean, self.std, lo, hi)

    def as_posterior(self):
        return GaussianPosterior(self.mean, self.std)


def kl_diag_gaussians(q, p):
    """KL(q || p) between diagonal Gaussians."""
    mq, sq = np.asarray(q.mu, float), np.asarray(q.sigma, float)
    mp, sp = np.asarray(p.mean, float), np.asarray(p.std, float)
    if mq.shape != mp.shape:
        raise ParameterError("dimension mismatch between q and prior")
    if np.any(sq <= 0) or np.any(sp <= 0):
        raise ParameterError("standard deviations must be positive")
    return float(np.sum(np.log(sp / sq) + (sq**2 + (mq - mp) ** 2) / (2 * sp**2) - 0.5))


def _flat(x):
    return x.samples.ravel() if isinstance(x, EcgTrace) else np.asarray(x, float).ravel()


def log_likelihood(obs, sim, noise_std):
    """iid Gaussian log density of ``obs`` around ``sim``, summed over samples."""
    if noise_std <= 0:
        raise ParameterError("noise_std must be positive")
    if isinstance(obs, EcgTrace) and isinstance(sim, EcgTrace):
        if obs.samples.shape != sim.samples.shape or obs.dt != sim.dt:
            raise ParameterError("trace shapes differ")
    a, b = _flat(obs), _flat(sim)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch {a.shape} vs {b.shape}")
    r = a - b
    return float(-0.5 * len(a) * math.log(2 * math.pi * noise_std**2) - (r @ r) / (2 * noise_std**2))


def default_noise_std(obs, fraction=0.05):
    """Five percent of the observed peak-to-peak amplitude."""
    a = _flat(obs)
    return fraction * float(np.ptp(a)) or 1.0


def _truncated_draw(rng, mu, sigma, lo, hi):
    for _ in range(MAX_REDRAWS):
        theta = mu + sigma * rng.standard_normal(len(mu))
        if np.all(theta >= lo) and np.all(theta <= hi):
            return theta
    return np.clip(theta, lo, hi)


def draw_samples(q, n, seed, lo, hi):
    """``n`` draws from ``q`` restricted to the box by redraw-then-clamp."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return np.array([_truncated_draw(rng, q.mu, q.sigma, lo, hi) for _ in range(n)])


def elbo_estimate(q, prior, simulator, obs, n_mc, seed, noise_std, bounds=None, workers=1):
    """``-KL(q || prior) + mean_k log p(obs | simulator(theta_k))``.

    ``simulator`` maps a raw point to an output comparable with ``obs``.
    The KL term is exact; the expectation uses ``n_mc`` seeded draws from
    ``q`` kept inside ``bounds`` (defaults to the unit box). With
    ``workers > 1`` the draws are simulated on a thread pool and reduced in
    draw order, so the result does not depend on scheduling.
    """
    if n_mc < 1:
        raise ParameterError("n_mc must be >= 1")
    if bounds is None:
        bounds = (np.zeros(q.dim), np.ones(q.dim))
    thetas = draw_samples(q, n_mc, seed, *bounds)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outs = list(pool.map(simulator, thetas))
    else:
        outs = [simulator(t) for t in thetas]
    ll = [log_likelihood(obs, o, noise_std) for o in outs]
    return float(np.mean(ll)) - kl_diag_gaussians(q, prior)


def misfit_objective(obs, simulator):
    """Stage-one cost ``theta -> ecg_mse(obs, simulator(theta))``, infinite on failure."""

    def cost(theta):
        try:
            return ecg_mse(obs, simulator(theta))
        except ValueError:
            return math.inf

    return cost


def fit_mean_stage(obs, simulator, space, bo_cfg):
    """Minimise the ECG misfit over ``space``; return (best raw point, trace)."""
    trace = bo_minimize(misfit_objective(obs, simulator), space, bo_cfg)
    return trace.best_raw.copy(), trace


def sigma_box(lo, hi):
    """Log-sigma search range ``[log 1e-3, log(width / 2)]`` per dimension."""
    width = np.asarray(hi, float) - np.asarray(lo, float)
    return Box(np.full(len(width), math.log(SIGMA_FLOOR)), np.log(width / 2))


def fit_variance_stage(mu, obs, prior, simulator, bounds, bo_cfg, n_mc, noise_std, mc_seed=0, workers=1):
    """Choose per-dimension sigma around a fixed ``mu`` by maximising the ELBO.

    The Monte Carlo seed is fixed for the whole search, which makes the
    objective deterministic in sigma. ``simulator`` maps raw points to
    outputs. Returns ``(posterior, trace)``.
    """
    mu = np.asarray(mu, float)
    lo, hi = (np.asarray(b, float) for b in bounds)
    box = sigma_box(lo, hi)

    def neg_elbo(log_sigma):
        q = GaussianPosterior(mu, np.exp(log_sigma))
        return -elbo_estimate(q, prior, simulator, obs, n_mc, mc_seed, noise_std, (lo, hi), workers)

    trace = bo_minimize(neg_elbo, box, bo_cfg)
    return GaussianPosterior(mu, np.exp(trace.best_theta)), trace
