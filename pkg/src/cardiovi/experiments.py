"""End-to-end experiments driven by a :class:`~cardiovi.config.RunConfig`.

Each runner writes its artifacts into ``cfg.out`` and finishes with a
``manifest.json`` holding the config hash, the seed and a SHA-256 checksum
of every deterministic artifact. Wall-clock times go to ``timing.json``,
which the manifest deliberately leaves out so that repeated runs produce
identical manifests.
"""
from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from .cardiosim import CardiacSimulator, ParameterSpace, cartesian_embedding, ecg_csv, ecg_mse
from .errors import ConfigurationError, MeshParseError, ParameterError, ValidationError
from .manifold import embed_endocardium, embedding_csv, geodesic_distances, knn_graph, reconstruction_error, stress
from .mesh import generate_ellipsoid_shell, load_mesh
from .vi import PriorSpec, default_noise_std, fit_mean_stage, fit_variance_stage

UNTRACKED = ("timing.json", "manifest.json")


class RunWriter:
    """Collects artifacts for one run directory."""

    def __init__(self, out):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written = []

    def text(self, name, content):
        (self.dir / name).write_text(content)
        self.written.append(name)

    def json(self, name, obj):
        self.text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def manifest(self, verb, cfg):
        sums = {}
        for name in sorted(set(self.written)):
            if name not in UNTRACKED:
                sums[name] = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
        self.json("manifest.json", {"verb": verb, "config_hash": cfg.digest(), "seed": cfg.seed, "artifacts": sums})


def verify_manifest(run_dir):
    """Names of artifacts whose checksum no longer matches the manifest."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    bad = []
    for name, digest in manifest["artifacts"].items():
        p = run_dir / name
        if not p.is_file() or hashlib.sha256(p.read_bytes()).hexdigest() != digest:
            bad.append(name)
    return bad


def build_mesh(cfg):
    m = cfg.mesh
    if m.path is not None:
        try:
            return load_mesh(Path(m.path).read_text())
        except (MeshParseError, ValidationError) as err:
            raise ConfigurationError(f"mesh.path {m.path}: {err}") from None
    try:
        return generate_ellipsoid_shell(m.n_theta, m.n_phi, tuple(m.inner_radii), m.wall_thickness, m.n_layers, seed=m.seed)
    except ParameterError as err:
        raise ConfigurationError(f"mesh: {err}") from None


def build_problem(cfg, embedding=None):
    """Mesh, embedding, parameter space and simulator for a config."""
    mesh = build_mesh(cfg)
    emb = embedding(mesh) if embedding is not None else embed_endocardium(mesh, k=cfg.isomap_k)
    space = make_space(cfg, emb)
    return mesh, emb, space, CardiacSimulator(mesh, emb, space, cfg.leads.to_lead_config())


def make_space(cfg, emb):
    s = cfg.space
    try:
        return ParameterSpace.for_embedding(
            emb, s.n_stimuli, endo_reference=tuple(s.endo_reference), aniso_reference=s.aniso_reference
        )
    except (ParameterError, TypeError) as err:
        raise ConfigurationError(f"space: {err}") from None


def ground_truth(cfg, space, rng):
    """Raw and constrained ``theta*``: the configured ``theta`` or a prior draw."""
    if cfg.theta is not None:
        theta = np.asarray(cfg.theta, float)
        if theta.shape != (space.dim,):
            raise ConfigurationError(f"theta: expected {space.dim} values, got {theta.size}")
        return space.to_unit(theta), theta
    prior = PriorSpec.for_box(np.zeros(space.dim), np.ones(space.dim))
    raw = prior.sample(rng, np.zeros(space.dim), np.ones(space.dim))
    return raw, space.from_unit(raw)


def observe(cfg, sim, theta, rng):
    obs = sim(theta)
    if cfg.obs_noise > 0:
        obs = type(obs)(obs.samples + cfg.obs_noise * rng.standard_normal(obs.samples.shape), obs.dt)
    return obs


def _floats(a):
    return [float(v) for v in np.asarray(a).ravel()]


def posterior_csv(space, post, prior, theta_true):
    mu_c = space.from_unit(post.mu)
    lines = ["name,mu_raw,sigma_raw,prior_mean,prior_std,mu_constrained,theta_true"]
    for row in zip(space.names(), post.mu, post.sigma, prior.mean, prior.std, mu_c, theta_true):
        lines.append(",".join([row[0]] + [repr(float(v)) for v in row[1:]]))
    return "\n".join(lines) + "\n"


def posterior_summary(space, post, theta_true):
    mu_c = space.from_unit(post.mu)
    lines = [f"{'parameter':<12} {'mu':>12} {'sigma(raw)':>12} {'truth':>12}"]
    for name, m, s, t in zip(space.names(), mu_c, post.sigma, theta_true):
        lines.append(f"{name:<12} {m:12.5g} {s:12.5g} {t:12.5g}")
    return "\n".join(lines) + "\n"


def run_recovery(cfg):
    """Synthetic ground-truth recovery with both inference stages."""
    clock = {}
    t0 = time.perf_counter()
    mesh, emb, space, sim = build_problem(cfg)
    p = space.dim
    cfg1 = cfg.bo_config("stage1", p)
    cfg2 = cfg.bo_config("stage2", p, seed_offset=1)
    rng = np.random.default_rng(cfg.seed)
    raw_true, theta_true = ground_truth(cfg, space, rng)
    obs = observe(cfg, sim, theta_true, rng)
    baseline = sim(space.from_unit(np.full(p, 0.5)))
    clock["setup_s"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    mu, trace1 = fit_mean_stage(obs, sim, space, cfg1)
    fitted = sim(space.from_unit(mu))
    clock["stage1_s"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    noise_std = cfg.noise_std if cfg.noise_std is not None else default_noise_std(obs)
    prior = PriorSpec.for_box(np.zeros(p), np.ones(p))
    unit = (np.zeros(p), np.ones(p))
    post, trace2 = fit_variance_stage(
        mu, obs, prior, sim.from_unit, unit, cfg2, cfg.n_mc, noise_std, mc_seed=cfg.seed, workers=cfg.workers
    )
    clock["stage2_s"] = time.perf_counter() - t2
    clock["total_s"] = time.perf_counter() - t0

    mu_c = space.from_unit(mu)
    base_mse = ecg_mse(obs, baseline)
    final_mse = ecg_mse(obs, fitted)
    report = {
        "dim": p,
        "baseline_mse": base_mse,
        "final_mse": final_mse,
        "mse_ratio": final_mse / base_mse if base_mse > 0 else None,
        "noise_std": noise_std,
        "neg_elbo": trace2.best_value,
        "parameters": space.names(),
        "theta_true": _floats(theta_true),
        "mu_constrained": _floats(mu_c),
        "abs_error": _floats(np.abs(mu_c - theta_true)),
        "sigma_raw": _floats(post.sigma),
        "stimulus_vertices_true": [int(v) for v in sim.stimuli(theta_true)],
        "stimulus_vertices_fit": [int(v) for v in sim.stimuli(mu_c)],
    }

    w = RunWriter(cfg.out)
    w.json("config.json", cfg.to_dict())
    w.text("trace_stage1.csv", trace1.to_csv())
    w.text("trace_stage2.csv", trace2.to_csv())
    w.text("ecg_observed.csv", ecg_csv(obs))
    w.text("ecg_baseline.csv", ecg_csv(baseline))
    w.text("ecg_fitted.csv", ecg_csv(fitted))
    w.text("posterior.csv", posterior_csv(space, post, prior, theta_true))
    w.text("posterior.txt", posterior_summary(space, post, theta_true))
    w.text("embedding.csv", embedding_csv(emb))
    w.json("report.json", report)
    w.json("timing.json", {k: round(v, 3) for k, v in clock.items()})
    w.manifest("recover", cfg)
    return report


def cartesian_problem(cfg, mesh):
    emb = cartesian_embedding(mesh)
    space = make_space(cfg, emb)
    return space, CardiacSimulator(mesh, emb, space, cfg.leads.to_lead_config())


def run_manifold_comparison(cfg):
    """Stage one over the isomap parameterisation and over raw 3D positions.

    Both runs fit the same observation with the same optimiser settings and
    seed; the budget is the one the manifold dimension implies.
    """
    t0 = time.perf_counter()
    mesh, emb, space_m, sim_m = build_problem(cfg)
    space_c, sim_c = cartesian_problem(cfg, mesh)
    bo = cfg.bo_config("stage1", space_m.dim)
    rng = np.random.default_rng(cfg.seed)
    _, theta_true = ground_truth(cfg, space_m, rng)
    obs = observe(cfg, sim_m, theta_true, rng)
    baseline = ecg_mse(obs, sim_m(space_m.from_unit(np.full(space_m.dim, 0.5))))
    _, trace_m = fit_mean_stage(obs, sim_m, space_m, bo)
    _, trace_c = fit_mean_stage(obs, sim_c, space_c, bo)
    report = {
        "budget": bo.budget,
        "dim_manifold": space_m.dim,
        "dim_cartesian": space_c.dim,
        "baseline_mse": baseline,
        "final_mse_manifold": trace_m.best_value,
        "final_mse_cartesian": trace_c.best_value,
    }
    w = RunWriter(cfg.out)
    w.json("config.json", cfg.to_dict())
    w.text("trace_manifold.csv", trace_m.to_csv())
    w.text("trace_cartesian.csv", trace_c.to_csv())
    w.text("embedding.csv", embedding_csv(emb))
    w.json("report.json", report)
    w.json("timing.json", {"total_s": round(time.perf_counter() - t0, 3)})
    w.manifest("compare-manifold", cfg)
    return report


def run_embed(cfg):
    """Isomap of the endocardium with its distortion diagnostics."""
    mesh = build_mesh(cfg)
    emb = embed_endocardium(mesh, k=cfg.isomap_k)
    geo = geodesic_distances(knn_graph(mesh.vertices[emb.vertex_ids], cfg.isomap_k))
    rec = reconstruction_error(emb, mesh)
    report = {
        "n_vertices": int(len(emb.vertex_ids)),
        "k": cfg.isomap_k,
        "stress": stress(geo, emb.latent),
        "reconstruction_error_mm": rec.mean_error_mm,
        "identity_fraction": rec.identity_fraction,
    }
    w = RunWriter(cfg.out)
    w.json("config.json", cfg.to_dict())
    w.text("embedding.csv", embedding_csv(emb))
    w.json("report.json", report)
    w.manifest("embed", cfg)
    return report


def run_simulate(cfg):
    """One forward simulation at ``cfg.theta`` or at a seeded prior draw."""
    _, _, space, sim = build_problem(cfg)
    raw, theta = ground_truth(cfg, space, np.random.default_rng(cfg.seed))
    trace = sim(theta)
    w = RunWriter(cfg.out)
    w.json("config.json", cfg.to_dict())
    w.text("ecg.csv", ecg_csv(trace))
    w.json(
        "theta.json",
        {
            "names": space.names(),
            "theta": _floats(theta),
            "raw": _floats(raw),
            "stimulus_vertices": [int(v) for v in sim.stimuli(theta)],
        },
    )
    w.manifest("simulate", cfg)
    return trace


RUNNERS = {
    "recover": run_recovery,
    "compare-manifold": run_manifold_comparison,
    "embed": run_embed,
    "simulate": run_simulate,
}

__all__ = ["RUNNERS", "run_recovery", "run_manifold_comparison", "run_embed", "run_simulate", "verify_manifest"]
