"""Deterministic forward model: parameters -> activation map -> 12-lead ECG.

Activation spreads from a handful of endocardial stimulus sites through the
conduction graph (multi-source shortest paths). Every vertex then emits a
Gaussian-derivative upstroke at its activation time, and nine body-surface
electrodes see the inverse-square weighted sum of those sources. Limb,
augmented and precordial leads are formed from the electrode potentials.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import dijkstra

from .errors import ConfigurationError, ParameterError
from .manifold import ManifoldEmbedding, nearest_node
from .mesh import Conductivities, build_conduction_graph

LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
ELECTRODES = ("RA", "LA", "LL", "V1", "V2", "V3", "V4", "V5", "V6")

# x: patient left, y: anterior, z: superior; heart apex points down (-z)
DEFAULT_ELECTRODES = {
    "RA": (-120.0, 30.0, 100.0),
    "LA": (120.0, 30.0, 100.0),
    "LL": (40.0, 20.0, -150.0),
    "V1": (-25.0, 60.0, -10.0),
    "V2": (10.0, 65.0, -10.0),
    "V3": (35.0, 60.0, -20.0),
    "V4": (55.0, 50.0, -30.0),
    "V5": (70.0, 25.0, -30.0),
    "V6": (75.0, 0.0, -30.0),
}


class ClampWarning(UserWarning):
    """A parameter vector outside the box was clamped before simulation."""


@dataclass(frozen=True)
class LeadConfig:
    electrodes: dict = field(default_factory=lambda: dict(DEFAULT_ELECTRODES))
    dt: float = 1.0
    n_samples: int = 200
    sigma_s: float = 5.0
    eps: float = 1.0

    def __post_init__(self):
        missing = [e for e in ELECTRODES if e not in self.electrodes]
        if missing:
            raise ConfigurationError(f"missing electrode positions: {missing}")
        if self.dt <= 0 or self.n_samples < 1 or self.sigma_s <= 0 or self.eps <= 0:
            raise ConfigurationError("dt, n_samples, sigma_s and eps must be positive")

    def positions(self):
        return np.array([self.electrodes[e] for e in ELECTRODES], dtype=float)


@dataclass(frozen=True, eq=False)
class EcgTrace:
    """Twelve leads by ``T`` samples at interval ``dt`` (ms)."""

    samples: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[0] != len(LEAD_NAMES) or s.shape[1] < 1:
            raise ParameterError(f"expected (12, T) samples, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ParameterError("ECG samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __getitem__(self, lead):
        return self.samples[LEAD_NAMES.index(lead)]

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def times(self):
        return self.dt * np.arange(self.n_samples)


def upstroke(t, sigma):
    """Gaussian-derivative source template ``(t / sigma^2) exp(-t^2 / (2 sigma^2))``."""
    return (t / sigma**2) * np.exp(-(t * t) / (2 * sigma**2))


def electrode_weights(vertices, electrodes, eps):
    d = electrodes[:, None, :] - vertices[None, :, :]
    r2 = (d * d).sum(axis=-1)
    return 1.0 / np.maximum(r2, eps)


def combine_leads(phi):
    """Map the nine electrode potentials (rows RA, LA, LL, V1..V6) to 12 leads."""
    ra, la, ll = phi[0], phi[1], phi[2]
    wct = (ra + la + ll) / 3.0
    limb = [
        la - ra,
        ll - ra,
        ll - la,
        ra - (la + ll) / 2,
        la - (ra + ll) / 2,
        ll - (ra + la) / 2,
    ]
    return np.vstack(limb + [v - wct for v in phi[3:9]])


def activation_times(graph, stimuli):
    """Earliest arrival time at each vertex from any stimulus (ms)."""
    stimuli = np.unique(np.asarray(stimuli, dtype=np.int64))
    if stimuli.size == 0:
        raise ParameterError("at least one stimulus vertex is required")
    if stimuli.min() < 0 or stimuli.max() >= graph.n_vertices:
        raise ParameterError("stimulus index out of range")
    tau = dijkstra(graph.to_csr(), directed=False, indices=stimuli, min_only=True)
    tau[stimuli] = 0.0
    return tau


def synthesize_ecg(mesh, tau, cfg=None, weights=None):
    """Body-surface 12-lead ECG for activation times ``tau``."""
    cfg = cfg or LeadConfig()
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (mesh.n_vertices,) or not np.all(np.isfinite(tau)):
        raise ParameterError("activation map must be finite with one entry per vertex")
    need = tau.max() + 4 * cfg.sigma_s
    if cfg.n_samples * cfg.dt < need:
        raise ConfigurationError(
            f"time window {cfg.n_samples * cfg.dt} ms shorter than max activation + 4 sigma ({need:.1f} ms)"
        )
    if weights is None:
        weights = electrode_weights(mesh.vertices, cfg.positions(), cfg.eps)
    t = cfg.dt * np.arange(cfg.n_samples)
    src = upstroke(t[:, None] - tau[None, :], cfg.sigma_s)
    phi = (src @ weights.T).T
    return EcgTrace(combine_leads(phi), cfg.dt)


def ecg_mse(a, b):
    """Mean squared difference over all 12 x T samples."""
    if a.samples.shape != b.samples.shape or a.dt != b.dt:
        raise ParameterError(f"trace mismatch: {a.samples.shape}@{a.dt} vs {b.samples.shape}@{b.dt}")
    d = a.samples - b.samples
    return float(np.mean(d * d))


def _stick_forward(r):
    """Map [0,1]^n onto ordered sequences 0 <= u_1 <= ... <= u_n <= 1."""
    n = len(r)
    u = np.empty(n)
    prev = 0.0
    for k in range(n):
        prev = prev + (1.0 - prev) * (1.0 - (1.0 - r[k]) ** (1.0 / (n - k)))
        u[k] = prev
    return u


def _stick_inverse(u):
    n = len(u)
    r = np.empty(n)
    prev = 0.0
    for k in range(n):
        r[k] = 0.0 if prev >= 1.0 else 1.0 - ((1.0 - u[k]) / (1.0 - prev)) ** (n - k)
        prev = u[k]
    return np.clip(r, 0.0, 1.0)


@dataclass(frozen=True)
class ParameterSpace:
    """Layout, bounds and ordered reparameterisation of the simulator inputs.

    Dimensions: two endocardial velocities, the ordered anisotropic triple
    ``(fiber, sheet, normal)`` sharing one range, then ``n_stimuli`` position
    blocks of ``len(position_lo)`` coordinates each. Velocity bounds are the
    reference values times ``[0.5, 1.5]``; the first coordinate of the
    stimulus blocks is kept ascending, which removes the relabelling symmetry
    of the stimulus set.
    """

    position_lo: tuple
    position_hi: tuple
    n_stimuli: int = 6
    endo_reference: tuple = (1.8, 1.5)
    aniso_reference: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "position_lo", tuple(float(v) for v in self.position_lo))
        object.__setattr__(self, "position_hi", tuple(float(v) for v in self.position_hi))
        object.__setattr__(self, "endo_reference", tuple(float(v) for v in self.endo_reference))
        if self.n_stimuli < 1 or len(self.endo_reference) != 2:
            raise ParameterError("need n_stimuli >= 1 and two endocardial reference velocities")
        if len(self.position_lo) != len(self.position_hi) or not all(
            lo < hi for lo, hi in zip(self.position_lo, self.position_hi)
        ):
            raise ParameterError("position bounds must satisfy lo < hi")
        if min(self.endo_reference) * 0.5 < self.aniso_reference * 1.5:
            raise ParameterError("endocardial velocity range must lie above the anisotropic range")

    @classmethod
    def for_embedding(cls, emb, n_stimuli=6, **kw):
        lo, hi = emb.bounds
        return cls(tuple(lo), tuple(hi), n_stimuli, **kw)

    @property
    def pos_dim(self):
        return len(self.position_lo)

    @property
    def dim(self):
        return 5 + self.pos_dim * self.n_stimuli

    @property
    def bounds(self):
        lo = [0.5 * v for v in self.endo_reference] + [0.5 * self.aniso_reference] * 3
        hi = [1.5 * v for v in self.endo_reference] + [1.5 * self.aniso_reference] * 3
        lo += list(self.position_lo) * self.n_stimuli
        hi += list(self.position_hi) * self.n_stimuli
        return np.array(lo), np.array(hi)

    def names(self):
        out = ["endo_fiber", "endo_sheet", "v_fiber", "v_sheet", "v_normal"]
        for s in range(self.n_stimuli):
            out += [f"stim{s}_z{c + 1}" for c in range(self.pos_dim)]
        return out

    def from_unit(self, raw):
        return ordered_transform(raw, self)

    def to_unit(self, theta):
        return ordered_inverse(theta, self)

    def conductivities(self, theta):
        return Conductivities(tuple(theta[0:2]), tuple(theta[2:5]))

    def positions(self, theta):
        return np.asarray(theta[5:], dtype=float).reshape(self.n_stimuli, self.pos_dim)


def ordered_transform(raw, space):
    """Map a unit-box point to a parameter vector obeying both orderings.

    The anisotropic triple is built top-down (each velocity interpolates
    between the shared lower bound and its predecessor) and the stimulus
    first coordinates come from a stick-breaking construction whose outputs
    are non-decreasing. The map is onto the constrained set.
    """
    raw = np.clip(np.asarray(raw, dtype=float), 0.0, 1.0)
    if raw.shape != (space.dim,):
        raise ParameterError(f"expected {space.dim} raw coordinates, got {raw.shape}")
    lo, hi = space.bounds
    theta = lo + raw * (hi - lo)
    alo = lo[2]
    theta[3] = alo + raw[3] * (theta[2] - alo)
    theta[4] = alo + raw[4] * (theta[3] - alo)
    first = 5 + space.pos_dim * np.arange(space.n_stimuli)
    u = _stick_forward(raw[first])
    theta[first] = lo[first] + u * (hi[first] - lo[first])
    return np.clip(theta, lo, hi)


def ordered_inverse(theta, space):
    """Unit-box preimage of a constrained parameter vector."""
    theta = np.asarray(theta, dtype=float)
    lo, hi = space.bounds
    raw = (theta - lo) / (hi - lo)
    alo = lo[2]
    raw[3] = (theta[3] - alo) / (theta[2] - alo) if theta[2] > alo else 0.0
    raw[4] = (theta[4] - alo) / (theta[3] - alo) if theta[3] > alo else 0.0
    first = 5 + space.pos_dim * np.arange(space.n_stimuli)
    raw[first] = _stick_inverse((theta[first] - lo[first]) / (hi[first] - lo[first]))
    return np.clip(raw, 0.0, 1.0)


def cartesian_embedding(mesh):
    """Identity 'embedding' of the endocardium in its own 3D coordinates.

    Used as the baseline parameterisation in which stimulus positions are
    Cartesian points snapped to the nearest endocardial vertex.
    """
    ids = mesh.endocardial
    return ManifoldEmbedding(ids, mesh.vertices[ids])


class CardiacSimulator:
    """``f(theta)``: constrained parameter vector -> :class:`EcgTrace`.

    Holds only immutable precomputed data, so a single instance can be
    shared by concurrent callers.
    """

    def __init__(self, mesh, emb, space, leads=None):
        if emb.dim != space.pos_dim:
            raise ParameterError("embedding and parameter space disagree on position dimension")
        self.mesh = mesh
        self.emb = emb
        self.space = space
        self.leads = leads or LeadConfig()
        self.weights = electrode_weights(mesh.vertices, self.leads.positions(), self.leads.eps)
        self.weights.setflags(write=False)

    def clamp(self, theta):
        lo, hi = self.space.bounds
        theta = np.asarray(theta, dtype=float)
        clipped = np.clip(theta, lo, hi)
        if not np.array_equal(clipped, theta):
            warnings.warn("parameter vector clamped to bounds", ClampWarning, stacklevel=3)
        return clipped

    def stimuli(self, theta):
        return [nearest_node(self.emb, z) for z in self.space.positions(theta)]

    def activation(self, theta):
        theta = self.clamp(theta)
        graph = build_conduction_graph(self.mesh, self.space.conductivities(theta))
        return activation_times(graph, self.stimuli(theta))

    def __call__(self, theta):
        theta = self.clamp(theta)
        graph = build_conduction_graph(self.mesh, self.space.conductivities(theta))
        tau = activation_times(graph, self.stimuli(theta))
        return synthesize_ecg(self.mesh, tau, self.leads, self.weights)

    def from_unit(self, raw):
        return self(self.space.from_unit(raw))


def simulate(theta, mesh, emb, space, cfg=None):
    """One-shot forward simulation; prefer :class:`CardiacSimulator` in loops."""
    return CardiacSimulator(mesh, emb, space, cfg)(theta)


def ecg_csv(trace):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_ms", *LEAD_NAMES])
    for t, col in zip(trace.times, trace.samples.T):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in col])
    return buf.getvalue()


def read_ecg_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["t_ms", *LEAD_NAMES]:
        raise ParameterError("ECG CSV header must be t_ms followed by the 12 lead names")
    if len(rows) < 2:
        raise ParameterError("ECG CSV has no samples")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    dt = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 1.0
    return EcgTrace(data[:, 1:].T, dt)
