"""Gaussian-process regression with an ARD squared-exponential kernel.

Targets are standardised inside the model, so hyperparameters live on the
standardised scale; predictions are mapped back to the caller's units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dpotrf, dtrtrs

from .errors import NumericalError, ParameterError

JITTER_START = 1e-8
JITTER_MAX = 1e-2
LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True, eq=False)
class Hyperparams:
    signal_var: float
    lengthscales: np.ndarray
    noise_var: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        if not (self.signal_var > 0 and np.all(ls > 0) and self.noise_var >= 0):
            raise ParameterError("need signal_var > 0, lengthscales > 0, noise_var >= 0")

    def to_log(self):
        noise = math.log(self.noise_var) if self.noise_var > 0 else -np.inf
        return np.concatenate([[math.log(self.signal_var)], np.log(self.lengthscales), [noise]])

    @classmethod
    def from_log(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(float(np.exp(v[0])), np.exp(v[1:-1]), float(np.exp(v[-1])))

    def __eq__(self, other):
        return (
            isinstance(other, Hyperparams)
            and self.signal_var == other.signal_var
            and self.noise_var == other.noise_var
            and np.array_equal(self.lengthscales, other.lengthscales)
        )


def se_kernel(x, xp, h):
    """``sf2 * exp(-1/2 sum_d ((x_d - x'_d) / l_d)^2)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    if x.shape != xp.shape or x.shape != h.lengthscales.shape:
        raise ParameterError(f"dimension mismatch: {x.shape}, {xp.shape}, lengthscales {h.lengthscales.shape}")
    r = (x - xp) / h.lengthscales
    return h.signal_var * math.exp(-0.5 * float(r @ r))


def kernel_matrix(a, b, h):
    a = np.asarray(a, dtype=float) / h.lengthscales
    b = np.asarray(b, dtype=float) / h.lengthscales
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * a @ b.T
    return h.signal_var * np.exp(-0.5 * np.maximum(d2, 0.0))


def _sqdiff(X):
    """Per-dimension squared differences, shape (p, n, n)."""
    return (X.T[:, :, None] - X.T[:, None, :]) ** 2


@dataclass(frozen=True, eq=False)
class GpModel:
    X: np.ndarray
    y: np.ndarray
    y_mean: float
    y_std: float
    hyper: Hyperparams
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float

    @property
    def z(self):
        """Standardised targets."""
        return (self.y - self.y_mean) / self.y_std

    @property
    def noise_std(self):
        """Observation noise standard deviation in the caller's units."""
        return self.y_std * math.sqrt(self.hyper.noise_var)


def standardize(y):
    y = np.asarray(y, dtype=float)
    mean = float(y.mean())
    std = float(y.std())
    if not std > 1e-12 * max(1.0, abs(mean)):
        std = 1.0
    return mean, std


def gp_fit(X, y, h):
    """Factor ``K + noise_var I + jitter I``, escalating jitter x10 on failure."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(X) != len(y) or len(y) < 1:
        raise ParameterError("need n >= 1 inputs with one target each")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ParameterError("training data must be finite")
    if X.shape[1] != len(h.lengthscales):
        raise ParameterError("lengthscale count must match input dimension")
    mean, std = standardize(y)
    z = (y - mean) / std
    K = kernel_matrix(X, X, h)
    n = len(y)
    jitter = JITTER_START
    while True:
        try:
            L = np.linalg.cholesky(K + (h.noise_var + jitter) * np.eye(n))
            break
        except np.linalg.LinAlgError:
            jitter *= 10
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise NumericalError("Cholesky failed at maximum jitter") from None
    alpha = solve_triangular(L.T, solve_triangular(L, z, lower=True), lower=False)
    for a in (X, y, L, alpha):
        a.setflags(write=False)
    return GpModel(X, y, mean, std, h, L, alpha, jitter)


def predict(m, Xs):
    """Posterior mean and latent variance at each row of ``Xs`` (caller units)."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    Ks = kernel_matrix(Xs, m.X, m.hyper)
    mu = Ks @ m.alpha
    v = solve_triangular(m.chol, Ks.T, lower=True)
    var = np.maximum(m.hyper.signal_var - (v * v).sum(0), 0.0)
    return m.y_mean + m.y_std * mu, m.y_std**2 * var


def gp_predict(m, x):
    mu, var = predict(m, np.atleast_1d(np.asarray(x, dtype=float))[None, :])
    return float(mu[0]), float(var[0])


def log_marginal_likelihood(m):
    """Log evidence of the standardised targets under the fitted model."""
    z = m.z
    return float(-0.5 * z @ m.alpha - np.log(np.diag(m.chol)).sum() - 0.5 * len(z) * LOG_2PI)


def _lml_inplace(K, z):
    """LML from a kernel matrix that may be overwritten; -inf if not positive definite."""
    # K is symmetric, so its transpose is a Fortran-ordered view LAPACK can use in place
    L, info = dpotrf(K.T, lower=1, clean=0, overwrite_a=1)
    if info != 0:
        return -np.inf
    w, _ = dtrtrs(L, z, lower=1)
    return float(-0.5 * w @ w - np.log(L.diagonal()).sum() - 0.5 * len(z) * LOG_2PI)


def _golden_max(f, a, b, iters):
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def hyper_bounds(X):
    """Log-space box: lengthscales, signal and noise variance on the standardised scale."""
    X = np.atleast_2d(X)
    rng = np.ptp(X, axis=0)
    rng = np.where(rng > 0, rng, 1.0)
    lo = np.concatenate([[math.log(1e-4)], np.log(1e-2 * rng), [math.log(1e-8)]])
    hi = np.concatenate([[math.log(1e2)], np.log(1e2 * rng), [0.0]])
    return lo, hi


def median_heuristic(X, y=None):
    """Per-dimension median pairwise spread as lengthscales, unit signal variance."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, p = X.shape
    ls = np.ones(p)
    if n > 1:
        iu = np.triu_indices(n, 1)
        for d in range(p):
            diff = np.abs(X[:, d][:, None] - X[:, d][None, :])[iu]
            diff = diff[diff > 0]
            if diff.size:
                ls[d] = np.median(diff)
    lo, hi = hyper_bounds(X)
    v = np.clip(np.concatenate([[0.0], np.log(ls), [math.log(1e-2)]]), lo, hi)
    return Hyperparams.from_log(v)


class _Objective:
    """LML over log-hyperparameters with cached per-dimension distances."""

    def __init__(self, X, y):
        self.D = _sqdiff(X)
        mean, std = standardize(y)
        self.z = (np.asarray(y, float) - mean) / std
        self.n = len(self.z)
        self.buf = np.empty((self.n, self.n))

    def __call__(self, v):
        return self.coord(v, None)(None)

    def coord(self, v, d):
        """1D slice of the objective along coordinate ``d`` of ``v`` (``d=None``: constant)."""
        v = np.array(v, dtype=float)
        p = len(self.D)
        inv = np.exp(-2 * v[1:-1])
        buf, diag = self.buf, self.buf.reshape(-1)[:: self.n + 1]
        if d is not None and 1 <= d <= p:
            k = d - 1
            mask = np.ones(p, dtype=bool)
            mask[k] = False
            base = math.exp(v[0]) * np.exp(-0.5 * np.tensordot(inv[mask], self.D[mask], axes=1))
            Dk = self.D[k]
            shift = math.exp(v[-1]) + JITTER_START

            def f(t):
                np.multiply(Dk, -0.5 * math.exp(-2 * t), out=buf)
                np.exp(buf, out=buf)
                np.multiply(buf, base, out=buf)
                np.add(diag, shift, out=diag)
                return _lml_inplace(buf, self.z)

            return f
        S = np.exp(-0.5 * np.tensordot(inv, self.D, axes=1))

        def g(t):
            w = v.copy()
            if d is not None:
                w[d] = t
            np.multiply(S, math.exp(w[0]), out=buf)
            np.add(diag, math.exp(w[-1]) + JITTER_START, out=diag)
            return _lml_inplace(buf, self.z)

        return g


def _sweep(obj, v, f_v, lo, hi, iters, tol):
    moved = False
    for d in range(len(v)):
        t, ft = _golden_max(obj.coord(v, d), lo[d], hi[d], iters)
        if ft > f_v + tol:
            v[d], f_v, moved = t, ft, True
    return v, f_v, moved


def fit_hyperparams(X, y, n_restarts=5, seed=0, init=None, starts=None, golden_iters=16, max_sweeps=30, tol=1e-7):
    """Maximise the log marginal likelihood by multi-start coordinate search.

    Every start (the ``init`` warm start if given, the median heuristic, then
    seeded uniform draws in the log box) receives one golden-section sweep
    over all coordinates; the best then keeps sweeping until a full pass
    improves by no more than ``tol``. A coordinate only moves when it strictly
    improves, so a converged result is a fixed point of the search. Passing
    ``starts`` replaces the default start list.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(y) < 3:
        raise ParameterError("need at least 3 points to fit hyperparameters")
    lo, hi = hyper_bounds(X)
    obj = _Objective(X, y)
    fallback = median_heuristic(X)
    if starts is None:
        starts = ([init] if init is not None else []) + [fallback]
        rng = np.random.default_rng(seed)
        while len(starts) < n_restarts:
            starts.append(Hyperparams.from_log(rng.uniform(lo, hi)))
    cands = []
    for h in starts:
        v = np.clip(h.to_log(), lo, hi)
        f = obj(v)
        v, f, moved = _sweep(obj, v, f, lo, hi, golden_iters, tol)
        cands.append((f, moved, v))
    best = max(range(len(cands)), key=lambda i: cands[i][0])
    f, moved, v = cands[best]
    if not np.isfinite(f):
        return fallback
    sweeps = 1
    while moved and sweeps < max_sweeps:
        v, f, moved = _sweep(obj, v, f, lo, hi, golden_iters, tol)
        sweeps += 1
    return Hyperparams.from_log(v)
