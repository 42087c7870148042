"""Run configuration: JSON files, dotted-path overrides and a stable hash.

A config file is a JSON object whose keys mirror :class:`RunConfig`. Every
field has a default except ``seed``, which must come from the file or the
command line so that no run depends on an implicit random state.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .bayesopt import BoConfig
from .cardiosim import DEFAULT_ELECTRODES, ELECTRODES, LeadConfig
from .errors import ConfigurationError, ParameterError


@dataclass
class MeshConfig:
    """Either a ``cardiomesh 1`` file or synthetic-shell parameters."""

    path: Optional[str] = None
    n_theta: int = 12
    n_phi: int = 20
    inner_radii: list = field(default_factory=lambda: [20.0, 20.0, 40.0])
    wall_thickness: float = 6.0
    n_layers: int = 2
    seed: int = 0


@dataclass
class LeadsConfig:
    electrodes: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_ELECTRODES.items()})
    dt: float = 1.0
    n_samples: int = 200
    sigma_s: float = 5.0

    def to_lead_config(self):
        missing = [e for e in ELECTRODES if e not in self.electrodes]
        if missing:
            raise ConfigurationError(f"leads.electrodes: missing {', '.join(missing)}")
        pos = {e: tuple(float(c) for c in self.electrodes[e]) for e in ELECTRODES}
        return LeadConfig(pos, self.dt, self.n_samples, self.sigma_s)


@dataclass
class SpaceConfig:
    n_stimuli: int = 6
    endo_reference: list = field(default_factory=lambda: [1.8, 1.5])
    aniso_reference: float = 0.5


@dataclass
class RunConfig:
    """Everything needed to reproduce one experiment.

    ``stage1`` and ``stage2`` hold :class:`~cardiovi.bayesopt.BoConfig`
    fields; a missing ``budget`` or ``n_init`` is scaled to the problem
    dimension (``10 p`` and ``2 p``). ``noise_std`` is the likelihood noise
    (``null`` = 5% of the observed peak-to-peak amplitude); ``obs_noise`` is
    the standard deviation of Gaussian noise added to the synthetic
    observation.
    """

    seed: Optional[int] = None
    out: str = "runs/latest"
    mesh: MeshConfig = field(default_factory=MeshConfig)
    leads: LeadsConfig = field(default_factory=LeadsConfig)
    space: SpaceConfig = field(default_factory=SpaceConfig)
    stage1: dict = field(default_factory=lambda: {"log_objective": True})
    stage2: dict = field(default_factory=lambda: {"budget": 60, "n_init": 17})
    n_mc: int = 16
    noise_std: Optional[float] = None
    obs_noise: float = 0.0
    isomap_k: int = 16
    workers: int = 1
    theta: Optional[list] = None

    def bo_config(self, stage, dim, seed_offset=0):
        """BoConfig for ``stage`` ('stage1'/'stage2') at dimension ``dim``."""
        kw = dict(getattr(self, stage))
        kw.setdefault("seed", self.seed + seed_offset)
        try:
            return BoConfig.for_dim(dim, **kw)
        except TypeError as err:
            raise ConfigurationError(f"{stage}: {err}") from None
        except ParameterError as err:
            raise ConfigurationError(f"{stage}: {err}") from None

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        """SHA-256 of the canonical JSON form, ignoring the output directory."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigurationError(f"unknown field {prefix}{unknown[0]}")
    kw = {}
    for name, value in data.items():
        sub = fields[name].default_factory if fields[name].default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub()):
            kw[name] = _build(type(sub()), value, f"{where}.{name}" if where else name)
        else:
            kw[name] = value
    return cls(**kw)


def _set_path(d, dotted, value):
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"override {dotted}: {k} is not an object")
    node[keys[-1]] = value


def parse_override(text):
    """``a.b=value`` with ``value`` read as JSON, falling back to a plain string."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} must look like path=value")
    path, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path.strip(), value


def load_config(path=None, overrides=(), seed=None, out=None):
    """Read, override and validate a :class:`RunConfig`."""
    data = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as err:
            raise ConfigurationError(f"{p}: invalid JSON ({err})") from None
    for item in overrides:
        _set_path(data, *parse_override(item))
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["out"] = out
    cfg = _build(RunConfig, data, "")
    validate(cfg, base=Path(path).parent if path else Path.cwd())
    return cfg


def validate(cfg, base=Path(".")):
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        raise ConfigurationError("seed: required integer (set it in the config or pass --seed)")
    if cfg.mesh.path is not None:
        p = Path(cfg.mesh.path)
        if not p.is_absolute():
            p = base / p
        if not p.is_file():
            raise ConfigurationError(f"mesh.path: file not found: {p}")
        cfg.mesh.path = str(p)
    if not isinstance(cfg.isomap_k, int) or cfg.isomap_k < 1:
        raise ConfigurationError("isomap_k: must be a positive integer")
    if not isinstance(cfg.n_mc, int) or cfg.n_mc < 1:
        raise ConfigurationError("n_mc: must be a positive integer")
    if cfg.noise_std is not None and not cfg.noise_std > 0:
        raise ConfigurationError("noise_std: must be positive or null")
    if not cfg.obs_noise >= 0:
        raise ConfigurationError("obs_noise: must be >= 0")
    if not isinstance(cfg.space.n_stimuli, int) or cfg.space.n_stimuli < 1:
        raise ConfigurationError("space.n_stimuli: must be a positive integer")
    for stage in ("stage1", "stage2"):
        if not isinstance(getattr(cfg, stage), dict):
            raise ConfigurationError(f"{stage}: expected an object of optimiser settings")
        cfg.bo_config(stage, 4)
    cfg.leads.to_lead_config()
    return cfg
