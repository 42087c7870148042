"""Sequential Bayesian optimisation over a unit box.

The optimiser always works on raw points in ``[0, 1]^p``. A *space* object
(anything with ``dim`` and ``from_unit``) maps raw points to the values the
objective expects; :class:`Box` is the plain affine case and
:class:`cardiovi.cardiosim.ParameterSpace` adds the ordering constraints.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import ParameterError
from .gp import fit_hyperparams, gp_fit, predict

ACQUISITIONS = ("EI", "AugmentedEI")
NOISELESS_VAR = 1e-6
_INV_SQRT_2PI = 1.0 / math.sqrt(2 * math.pi)


@dataclass(frozen=True)
class BoConfig:
    """Budget and acquisition settings.

    ``gp_refresh`` controls how often the hyperparameters get a full
    multi-start search; in between, the previous optimum is the single
    (warm) start and at most ``gp_max_sweeps`` coordinate sweeps are run.
    ``log_objective`` models ``log(objective)`` instead of the raw value,
    which suits strictly positive costs spanning decades such as MSE.
    """

    budget: int = 30
    n_init: int = 6
    acquisition: str = "AugmentedEI"
    xi: float = 0.01
    n_acq_starts: int = 10
    n_acq_candidates: int = 2000
    seed: int = 0
    gp_restarts: int = 5
    gp_refresh: int = 10
    gp_max_sweeps: int = 6
    log_objective: bool = False

    def __post_init__(self):
        if self.n_init < 2 or self.budget < self.n_init:
            raise ParameterError(f"need n_init >= 2 and budget >= n_init (got {self.n_init}, {self.budget})")
        if self.acquisition not in ACQUISITIONS:
            raise ParameterError(f"acquisition must be one of {ACQUISITIONS}")
        if self.xi < 0 or self.n_acq_starts < 1:
            raise ParameterError("xi must be >= 0 and n_acq_starts >= 1")

    @classmethod
    def for_dim(cls, p, **kw):
        """Defaults scaled to dimension: ``n_init = 2p``, ``budget = 10p``."""
        kw.setdefault("n_init", 2 * p)
        kw.setdefault("budget", 10 * p)
        return cls(**kw)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, float))
        hi = np.atleast_1d(np.asarray(self.hi, float))
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ParameterError("box needs lo < hi per dimension")
        object.__setattr__(self, "lo", tuple(lo.tolist()))
        object.__setattr__(self, "hi", tuple(hi.tolist()))

    @property
    def dim(self):
        return len(self.lo)

    @property
    def bounds(self):
        return np.array(self.lo), np.array(self.hi)

    def from_unit(self, raw):
        lo, hi = self.bounds
        return lo + np.clip(raw, 0.0, 1.0) * (hi - lo)

    def to_unit(self, x):
        lo, hi = self.bounds
        return (np.asarray(x, float) - lo) / (hi - lo)


def latin_hypercube(n, bounds, seed=0):
    """``n`` points, one per equal-width stratum in every dimension."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    lo, hi = (np.atleast_1d(np.asarray(b, float)) for b in bounds)
    rng = np.random.default_rng(seed)
    u = np.empty((n, len(lo)))
    for d in range(len(lo)):
        u[:, d] = (rng.permutation(n) + rng.uniform(size=n)) / n
    return lo + u * (hi - lo)


def ei_from_moments(mu, s, best, xi=0.0):
    """Expected improvement below ``best`` for a Gaussian with mean ``mu`` and std ``s``."""
    scalar = np.ndim(mu) == 0 and np.ndim(s) == 0
    mu, s = np.broadcast_arrays(np.atleast_1d(np.asarray(mu, float)), np.atleast_1d(np.asarray(s, float)))
    imp = best - mu - xi
    out = np.maximum(imp, 0.0)
    pos = s > 0
    # a vanishing s sends z to +-inf, where the limits below are exact
    with np.errstate(over="ignore"):
        z = imp[pos] / s[pos]
        out[pos] = imp[pos] * ndtr(z) + s[pos] * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return float(out[0]) if scalar else out


def _ei(m, Xs, best, xi):
    mu, var = predict(m, Xs)
    return ei_from_moments(mu, np.sqrt(var), best, xi * m.y_std)


def expected_improvement(m, x, best, xi=0.0):
    """EI of the model at ``x`` below ``best`` (minimisation).

    ``xi`` is measured in standard deviations of the training targets so the
    same setting works whatever the scale of the objective.
    """
    return float(_ei(m, np.atleast_2d(x), best, xi)[0])


def effective_best(m, c=1.0):
    """Minimum over training inputs of ``mu(x_i) + c * s(x_i)``."""
    mu, var = predict(m, m.X)
    return float(np.min(mu + c * np.sqrt(var)))


def _aei(m, Xs, xi, c=1.0, u=None):
    if m.hyper.noise_var < NOISELESS_VAR:
        return _ei(m, Xs, float(np.min(m.y)), xi)
    if u is None:
        u = effective_best(m, c)
    mu, var = predict(m, Xs)
    s = np.sqrt(var)
    sn = m.noise_std
    return ei_from_moments(mu, s, u, xi * m.y_std) * (1.0 - sn / np.sqrt(var + sn * sn))


def augmented_ei(m, x, xi=0.0, c=1.0):
    """Augmented EI for noisy observations.

    EI is taken against the effective best of :func:`effective_best` and
    shrunk by ``1 - sigma_n / sqrt(s(x)^2 + sigma_n^2)``. When the fitted
    noise variance is negligible (below ``1e-6`` on the standardised scale)
    this is exactly EI against the best observed target.
    """
    return float(_aei(m, np.atleast_2d(x), xi, c)[0])


def aei_multiplier(s, noise_std):
    return 1.0 - noise_std / math.sqrt(s * s + noise_std * noise_std)


def make_acquisition(m, cfg):
    """Vectorised acquisition ``Xs -> values`` for the configured criterion."""
    if cfg.acquisition == "EI":
        best = float(np.min(m.y))
        return lambda Xs: _ei(m, Xs, best, cfg.xi)
    u = None if m.hyper.noise_var < NOISELESS_VAR else effective_best(m)
    return lambda Xs: _aei(m, Xs, cfg.xi, u=u)


def _golden_batch(f, x, d, a, b, iters):
    """Maximise ``f`` along coordinate ``d`` of every row of ``x`` within [a, b]."""
    g = (math.sqrt(5) - 1) / 2
    c, e = b - g * (b - a), a + g * (b - a)
    xc, xe = x.copy(), x.copy()
    xc[:, d], xe[:, d] = c, e
    fc, fe = f(xc), f(xe)
    xp = x.copy()
    for _ in range(iters):
        left = fc >= fe
        # left: keep [a, e]; right: keep [c, b]
        b = np.where(left, e, b)
        a = np.where(left, a, c)
        new_c = np.where(left, b - g * (b - a), e)
        new_e = np.where(left, c, a + g * (b - a))
        fc_old, fe_old = fc, fe
        c, e = new_c, new_e
        xp[:, d] = np.where(left, c, e)
        fp = f(xp)
        fc = np.where(left, fp, fe_old)
        fe = np.where(left, fc_old, fp)
    take_c = fc >= fe
    return np.where(take_c, c, e), np.where(take_c, fc, fe)


def coordinate_ascent(f, starts, lo, hi, widths=(0.25, 0.08, 0.02), iters=12):
    """Coordinate-wise golden-section refinement of each start inside [lo, hi].

    Each sweep searches a window of the given relative width around the
    current value; a coordinate only moves if the value strictly improves.
    """
    x = np.array(starts, dtype=float)
    fx = f(x)
    span = hi - lo
    for w in widths:
        for d in range(x.shape[1]):
            a = np.maximum(lo[d], x[:, d] - w * span[d])
            b = np.minimum(hi[d], x[:, d] + w * span[d])
            t, ft = _golden_batch(f, x, d, a, b, iters)
            better = ft > fx
            x[better, d] = t[better]
            fx = np.where(better, ft, fx)
    return x, fx


def maximize_acquisition(m, bounds, cfg, rng=None, incumbent=None, local_scale=0.05):
    """Best of ``n_acq_starts`` refined starts.

    ``n_acq_candidates`` seeded points are screened by acquisition value:
    uniform draws over the box, or, when ``incumbent`` is given, half
    uniform and half Gaussian perturbations of it (``local_scale`` times the
    box width). The top scorers, plus the incumbent itself, are refined by
    :func:`coordinate_ascent`.
    """
    lo, hi = (np.asarray(b, float) for b in bounds)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    acq = make_acquisition(m, cfg)
    n = cfg.n_acq_candidates
    n_local = n // 2 if incumbent is not None else 0
    cand = lo + rng.uniform(size=(n - n_local, len(lo))) * (hi - lo)
    if n_local:
        incumbent = np.clip(incumbent, lo, hi)
        near = incumbent + local_scale * (hi - lo) * rng.standard_normal((n_local, len(lo)))
        cand = np.vstack([cand, np.clip(near, lo, hi)])
    vals = acq(cand)
    k = min(cfg.n_acq_starts, len(cand))
    starts = cand[np.argsort(-vals, kind="stable")[:k]]
    if incumbent is not None:
        starts = np.vstack([starts, incumbent])
    x, fx = coordinate_ascent(acq, starts, lo, hi)
    i = int(np.argmax(fx))
    return x[i], float(fx[i])


@dataclass(eq=False)
class BoTrace:
    raw: np.ndarray
    theta: np.ndarray
    values: np.ndarray
    best_so_far: np.ndarray
    hypers: list = field(default_factory=list, repr=False)

    @property
    def best_index(self):
        return int(np.argmin(self.values))

    @property
    def best_value(self):
        return float(self.values[self.best_index])

    @property
    def best_theta(self):
        return self.theta[self.best_index]

    @property
    def best_raw(self):
        return self.raw[self.best_index]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        p = self.theta.shape[1]
        w.writerow(["iter", "objective", "best_so_far"] + [f"theta_{i}" for i in range(p)])
        for i, (v, b, th) in enumerate(zip(self.values, self.best_so_far, self.theta)):
            w.writerow([i, repr(float(v)), repr(float(b))] + [repr(float(t)) for t in th])
        return buf.getvalue()


def read_trace_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:3] != ["iter", "objective", "best_so_far"]:
        raise ParameterError("trace CSV needs an iter,objective,best_so_far header")
    if len(rows) < 2:
        raise ParameterError("trace CSV has no iterations")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return BoTrace(np.full((len(data), data.shape[1] - 3), np.nan), data[:, 3:], data[:, 1], data[:, 2])


def _penalise(v, finite):
    if np.isfinite(v):
        return float(v)
    if not finite:
        return 1.0
    worst = max(finite)
    return worst + 9.0 * max(abs(worst), 1e-300)


def bo_minimize(objective, space, cfg, callback=None):
    """Minimise ``objective(space.from_unit(raw))`` over the unit box.

    A Latin-hypercube design of ``n_init`` points is followed by GP-guided
    evaluations until ``budget``. Non-finite objective values are replaced
    by ten times the worst finite value seen so far.
    """
    p = space.dim
    rng = np.random.default_rng(cfg.seed)
    unit = (np.zeros(p), np.ones(p))
    design = latin_hypercube(cfg.n_init, unit, seed=int(rng.integers(2**32)))
    raws, thetas, values, finite, hypers = [], [], [], [], []

    def evaluate(raw):
        theta = np.asarray(space.from_unit(raw), dtype=float)
        try:
            v = float(objective(theta))
        except (TypeError, ValueError):
            v = math.nan
        recorded = _penalise(v, finite)
        if math.isfinite(v):
            finite.append(v)
        raws.append(np.array(raw, float))
        thetas.append(theta)
        values.append(recorded)
        if callback is not None:
            callback(len(values) - 1, theta, recorded)

    for raw in design:
        evaluate(raw)

    hyper = None
    for it in range(cfg.n_init, cfg.budget):
        X = np.array(raws)
        y = np.array(values)
        if cfg.log_objective:
            y = np.log(np.maximum(y, 1e-300))
        k = it - cfg.n_init
        if hyper is None or k % cfg.gp_refresh == 0:
            hyper = fit_hyperparams(X, y, n_restarts=cfg.gp_restarts, seed=int(rng.integers(2**32)), init=hyper)
        else:
            hyper = fit_hyperparams(X, y, starts=[hyper], max_sweeps=cfg.gp_max_sweeps)
        hypers.append(hyper)
        model = gp_fit(X, y, hyper)
        acq_rng = np.random.default_rng(int(rng.integers(2**32)))
        x, _ = maximize_acquisition(model, unit, cfg, acq_rng, incumbent=X[int(np.argmin(y))])
        evaluate(x)

    values = np.array(values)
    return BoTrace(np.array(raws), np.array(thetas), values, np.minimum.accumulate(values), hypers)
