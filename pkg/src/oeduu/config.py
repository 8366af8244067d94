"""Experiment configuration: nested dataclasses loaded from TOML.

Unknown keys are rejected with the dotted path of the offending field.
"""

import dataclasses
import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class GridConfig:
    nx: int = 49
    ny: int = 33
    a: float = 1.5
    b: float = 1.0


@dataclass
class PriorConfig:
    rho: float = 0.008
    delta: float = 0.02
    mean: float = 0.0


@dataclass
class DarcyConfig:
    rho_theta: float = 0.005
    delta_theta: float = 0.05
    theta_mean: float = -2.7
    t0_min: float = -1.0
    t0_max: float = 1.0


@dataclass
class TransportSection:
    kappa: float = 1e-3
    t1: float = 16.0
    n_steps: int = 120
    obs_times: list = field(default_factory=lambda: [7.0, 9.0, 11.0, 13.0, 15.0])
    obs_halfwidth: float = 0.5


@dataclass
class SensorConfig:
    counts: list = field(default_factory=lambda: [10, 6])
    margins: list = field(default_factory=lambda: [0.1, 0.1])
    locations: list = None


@dataclass
class NoiseConfig:
    sigma: float = 0.01


@dataclass
class ReductionConfig:
    mu: float = 2e-3
    mu_eval: float = 1e-4
    n_clusters: int = 1
    r_sketch: int = 40
    r_sketch_eval: int = 80
    mode: str = "two-pass"
    rule: str = "standard"
    probe_centers: list = field(default_factory=lambda: [[0.4, 0.3], [0.8, 0.7], [1.2, 0.45]])
    probe_widths: list = field(default_factory=lambda: [0.08, 0.12, 0.1])
    probe_amplitudes: list = field(default_factory=lambda: [1.0, 0.7, 1.3])


@dataclass
class PenaltySection:
    alpha: float = 0.1
    eps_ratio: float = 2.0 / 3.0
    binary_tol: float = 1e-3
    max_stages: int = 40
    pgtol: float = 1e-6
    max_iter: int = 500


@dataclass
class ExperimentSection:
    n_saa: int = 20
    n_eval: int = 50
    n_deterministic: int = 20
    gamma_grid: list = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0, 8.0])
    seed: int = 20231017
    workers: int = 1
    modes: list = field(default_factory=lambda: ["oeduu", "deterministic"])


@dataclass
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    darcy: DarcyConfig = field(default_factory=DarcyConfig)
    transport: TransportSection = field(default_factory=TransportSection)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    reduction: ReductionConfig = field(default_factory=ReductionConfig)
    penalty: PenaltySection = field(default_factory=PenaltySection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **sections):
        """Copy with some fields overridden, e.g. ``replace(transport={"obs_times": [12, 15]})``."""
        data = self.to_dict()
        for name, values in sections.items():
            data[name].update(values)
        return from_dict(data)


MODES = ("oeduu", "deterministic", "validate")


def _coerce(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", path)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    if isinstance(default, list) or default is None:
        if value is None and default is None:
            return None
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", path)
        return value
    return value


def _section(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError("expected a table", path)
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError("unknown key", f"{path}.{key}" if path else key)
    kwargs = {}
    defaults = cls()
    for name, f in known.items():
        if name not in data:
            continue
        default = getattr(defaults, name)
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _section(type(default), data[name], sub)
        else:
            kwargs[name] = _coerce(data[name], default, sub)
    return cls(**kwargs)


def from_dict(data):
    cfg = _section(ExperimentConfig, data, "")
    validate(cfg)
    return cfg


def load_config(path):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from exc
    return from_dict(data)


def _positive(value, path):
    if not (np.isfinite(value) and value > 0):
        raise ConfigError(f"must be positive, got {value}", path)


def validate(cfg):
    g = cfg.grid
    if g.nx < 3 or g.ny < 3:
        raise ConfigError("need at least 3 nodes per axis", "grid.nx")
    _positive(g.a, "grid.a")
    _positive(g.b, "grid.b")
    for name in ("rho", "delta"):
        _positive(getattr(cfg.prior, name), f"prior.{name}")
    for name in ("rho_theta", "delta_theta"):
        _positive(getattr(cfg.darcy, name), f"darcy.{name}")
    if cfg.darcy.t0_max < cfg.darcy.t0_min:
        raise ConfigError("t0_max must be >= t0_min", "darcy.t0_max")
    t = cfg.transport
    _positive(t.kappa, "transport.kappa")
    if t.n_steps < 10:
        raise ConfigError("must be at least 10", "transport.n_steps")
    if not t.obs_times or sorted(t.obs_times) != list(t.obs_times):
        raise ConfigError("must be a nonempty increasing list", "transport.obs_times")
    if t.obs_times[0] - t.obs_halfwidth <= cfg.darcy.t0_max:
        raise ConfigError("first window must start after the latest T0", "transport.obs_times")
    if t.obs_times[-1] + t.obs_halfwidth > t.t1:
        raise ConfigError("last window must end by t1", "transport.obs_times")
    s = cfg.sensors
    if s.locations is None and (len(s.counts) != 2 or min(s.counts) < 1):
        raise ConfigError("need two positive lattice counts", "sensors.counts")
    _positive(cfg.noise.sigma, "noise.sigma")
    r = cfg.reduction
    for name in ("mu", "mu_eval"):
        v = getattr(r, name)
        if not 0 < v < 1:
            raise ConfigError("must lie in (0, 1)", f"reduction.{name}")
    if r.mode not in ("two-pass", "single-pass"):
        raise ConfigError("must be 'two-pass' or 'single-pass'", "reduction.mode")
    if r.rule not in ("standard", "literal"):
        raise ConfigError("must be 'standard' or 'literal'", "reduction.rule")
    if r.n_clusters < 1 or r.n_clusters > cfg.experiment.n_saa:
        raise ConfigError("must lie in [1, n_saa]", "reduction.n_clusters")
    if not (len(r.probe_centers) == len(r.probe_widths) == len(r.probe_amplitudes) > 0):
        raise ConfigError("probe lists must have equal nonzero length", "reduction.probe_centers")
    p = cfg.penalty
    _positive(p.alpha, "penalty.alpha")
    if not 0 < p.eps_ratio < 1:
        raise ConfigError("must lie in (0, 1)", "penalty.eps_ratio")
    e = cfg.experiment
    if e.n_saa < 1 or e.n_eval < 1:
        raise ConfigError("sample counts must be positive", "experiment.n_saa")
    if e.n_deterministic > e.n_saa:
        raise ConfigError("cannot exceed n_saa", "experiment.n_deterministic")
    if any(gm < 0 for gm in e.gamma_grid) or not e.gamma_grid:
        raise ConfigError("must be a nonempty list of nonnegative values", "experiment.gamma_grid")
    for m in e.modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}", "experiment.modes")
    return cfg


PHASES = {"saa": 1, "eval": 2, "sketch": 3, "sketch_eval": 4, "cluster": 5, "reference": 6}


def derive_seed(master, phase, index=None):
    """Seed entropy for one phase (and item) of a run.

    The result is the tuple ``(master, phase_tag, index)``; distinct phase tags
    make the streams of different phases disjoint by construction.
    """
    tag = PHASES[phase]
    return [int(master), tag] if index is None else [int(master), tag, int(index)]
