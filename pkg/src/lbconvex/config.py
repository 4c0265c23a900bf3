"""Run configuration: sectioned key = value files with environment overrides.

Every key has a typed default; a file only needs the keys it changes.  An
environment variable LBCONVEX_<SECTION>_<KEY> (upper case) overrides the file.
Validation errors name the file and line of the offending key.
"""
from __future__ import annotations

import configparser
import os
import re
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .velocity import LEBEDEV_ORDERS

ENV_PREFIX = "LBCONVEX_"


class ConfigError(ValueError):
    """A config value that cannot be used; str() is a one-line, located message."""


@dataclass(frozen=True)
class DomainSection:
    name: str = "sphere"
    radius: float = 1.0
    axes: tuple = (1.0, 1.5, 2.0)
    kappa: float = 0.5
    center: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ModelSection:
    gamma: float = 1.0
    beta0: float = 0.5
    nu_scale: float = 1.0
    kernel_c1: float = 0.5
    kernel_c2: float = 1.0


@dataclass(frozen=True)
class GridSection:
    n_radial: int = 12
    angular_order: int = 7
    zeta_max: float = 6.0
    grazing_cutoff: float = 1e-3
    volume_shells: int = 12
    volume_order: int = 11
    mesh_theta: int = 16


@dataclass(frozen=True)
class TemperatureSection:
    kind: str = "constant"
    t0: float = 0.05
    slope: tuple = (0.0, 0.0, 0.0)
    amplitude: float = 0.0
    center: tuple = (0.0, 0.0, 0.0)
    width: float = 0.5


@dataclass(frozen=True)
class SolverSection:
    tol: float = 1e-6
    max_iters: int = 400
    anchor: float = 0.0
    anderson: int = 5
    n_probes: int = 100


@dataclass(frozen=True)
class VerifySection:
    samples: int = 500
    potential_distances: tuple = (0.2, 0.1, 0.05, 0.02, 0.01)
    random_psi: int = 10
    flux_points: int = 3
    decomposition_probes: int = 50
    volume_form_probes: int = 3


@dataclass(frozen=True)
class ProbeSection:
    epsilon: float = 0.05
    epsilon_prime: float = 0.05
    exponent_slack: float = 0.2
    h_exponent_slack: float = 0.15
    ratio_slack: float = 10.0
    ladder: tuple = (0.2, 0.1, 0.05, 0.025)
    speed_min: float = 0.5
    n_base: int = 4
    n_pairs: int = 3
    separation_min: float = 1e-3
    separation_max: float = 0.3
    n_separations: int = 10


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out_dir: str = "out"
    jobs: int = 1


SECTIONS = {
    "domain": DomainSection,
    "model": ModelSection,
    "grid": GridSection,
    "temperature": TemperatureSection,
    "solver": SolverSection,
    "verify": VerifySection,
    "probe": ProbeSection,
    "run": RunSection,
}


@dataclass(frozen=True)
class RunConfig:
    domain: DomainSection = field(default_factory=DomainSection)
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    temperature: TemperatureSection = field(default_factory=TemperatureSection)
    solver: SolverSection = field(default_factory=SolverSection)
    verify: VerifySection = field(default_factory=VerifySection)
    probe: ProbeSection = field(default_factory=ProbeSection)
    run: RunSection = field(default_factory=RunSection)

    # -- serialisation -------------------------------------------------------
    def to_dict(self):
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def to_ini(self):
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for f in fields(SECTIONS[name]):
                lines.append(f"{f.name} = {_format(getattr(getattr(self, name), f.name))}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, text, source="<config>", environ=None):
        return _parse(text, source, os.environ if environ is None else environ)

    @classmethod
    def load(cls, path, environ=None):
        with open(path) as fh:
            return cls.from_ini(fh.read(), str(path), environ)

    def with_updates(self, **sections):
        """RunConfig with some keys replaced, e.g. with_updates(grid={"zeta_max": 8.0})."""
        out = self
        for name, values in sections.items():
            out = replace(out, **{name: replace(getattr(out, name), **values)})
        validate(out)
        return out

    # -- builders -------------------------------------------------------------
    def build_domain(self):
        from .geometry import make_domain

        d = self.domain
        center = np.array(d.center)
        if d.name == "sphere":
            return make_domain("sphere", radius=d.radius, center=center)
        if d.name == "ellipsoid":
            return make_domain("ellipsoid", axes=d.axes, center=center)
        return make_domain(d.name, axes=d.axes, kappa=d.kappa, center=center)

    def build_model(self):
        from .collision import KineticModel

        m = self.model
        return KineticModel(m.gamma, m.beta0, (m.kernel_c1, m.kernel_c2), m.nu_scale)

    def build_grid(self):
        from .velocity import VelocityGrid

        g = self.grid
        return VelocityGrid(g.n_radial, g.angular_order, g.zeta_max, g.grazing_cutoff)

    def build_volume(self, domain):
        from .volume import star_shells

        return star_shells(domain, self.grid.volume_shells, self.grid.volume_order)

    def build_mesh(self, domain):
        return domain.mesh(self.grid.mesh_theta)

    def build_temperature(self):
        from .boundary_flux import BoundaryTemperature

        t = self.temperature
        if t.kind == "constant":
            return BoundaryTemperature.constant(t.t0)
        if t.kind == "linear":
            return BoundaryTemperature.linear(t.t0, t.slope)
        return BoundaryTemperature(t.t0, tuple(t.slope), t.amplitude, tuple(t.center), t.width)

    def regularity(self):
        from .regularity import RegularityConfig

        p = self.probe
        seps = tuple(float(s) for s in np.geomspace(p.separation_min, p.separation_max, p.n_separations))
        return RegularityConfig(
            epsilon=p.epsilon,
            epsilon_prime=p.epsilon_prime,
            exponent_slack=p.exponent_slack,
            ratio_slack=p.ratio_slack,
            ladder=tuple(p.ladder),
            speed_min=p.speed_min,
            n_base=p.n_base,
            n_pairs=p.n_pairs,
            separations=seps,
            seed=self.run.seed,
        )


# -- values ---------------------------------------------------------------------
def _format(v):
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(default, raw):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"expected a number, got {raw!r}") from None
    if isinstance(default, tuple):
        parts = [p for p in re.split(r"[,\s]+", raw) if p]
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            raise ValueError(f"expected a comma-separated list of numbers, got {raw!r}") from None
    return raw


def _key_lines(text):
    """(section, key) -> 1-based line number of its assignment."""
    out, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            out[(section, None)] = i
            continue
        m = re.match(r"([^=:]+)[=:]", s)
        if m and section is not None:
            out[(section, m.group(1).strip().lower())] = i
    return out


def _parse(text, source, environ):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError(f"{source}:{e.lineno}: key outside any [section]") from None
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"{source}:{e.lineno}: [{e.section}] {e.option}: duplicate key") from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"{source}:{e.lineno}: [{e.section}]: duplicate section") from None
    except configparser.ParsingError as e:
        lineno, line = e.errors[0]
        raise ConfigError(f"{source}:{lineno}: cannot parse {line.strip()!r}") from None
    where = _key_lines(text)
    values = {}
    for section in parser.sections():
        name = section.lower()
        if name not in SECTIONS:
            raise ConfigError(f"{source}:{where.get((name, None), '?')}: unknown section [{section}]")
        defaults = {f.name: f.default for f in fields(SECTIONS[name])}
        for key, raw in parser.items(section):
            loc = f"{source}:{where.get((name, key), '?')}"
            if key not in defaults:
                raise ConfigError(f"{loc}: [{name}] unknown key {key!r}")
            try:
                values[(name, key)] = (_convert(defaults[key], raw), loc)
            except ValueError as e:
                raise ConfigError(f"{loc}: [{name}] {key}: {e}") from None
    for var, raw in sorted(environ.items()):
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX) :].lower()
        name = next((s for s in SECTIONS if rest.startswith(s + "_")), None)
        if name is None:
            raise ConfigError(f"environment {var}: no section matches")
        key = rest[len(name) + 1 :]
        defaults = {f.name: f.default for f in fields(SECTIONS[name])}
        if key not in defaults:
            raise ConfigError(f"environment {var}: [{name}] unknown key {key!r}")
        try:
            values[(name, key)] = (_convert(defaults[key], raw), f"environment {var}")
        except ValueError as e:
            raise ConfigError(f"environment {var}: [{name}] {key}: {e}") from None
    sections = {}
    for name, cls in SECTIONS.items():
        kw = {k: v for (s, k), (v, _) in values.items() if s == name}
        sections[name] = cls(**kw)
    cfg = RunConfig(**sections)
    validate(cfg, {k: loc for k, (_, loc) in values.items()}, source)
    return cfg


# -- validation --------------------------------------------------------------------
def _rules(cfg):
    d, m, g, t, s, v, p, r = (getattr(cfg, n) for n in SECTIONS)
    yield ("domain", "name"), d.name in ("sphere", "ellipsoid", "quartic", "superquadric"), "must be sphere, ellipsoid or quartic"
    yield ("domain", "radius"), d.radius > 0, "must be positive"
    yield ("domain", "axes"), len(d.axes) == 3 and min(d.axes) > 0, "needs three positive semi-axes"
    yield ("domain", "kappa"), d.kappa >= 0, "must be non-negative"
    yield ("domain", "center"), len(d.center) == 3, "needs three components"
    yield ("model", "gamma"), m.gamma == 1.0, "only the hard-sphere model gamma = 1 is supported"
    yield ("model", "beta0"), m.beta0 > 0, "must be positive"
    yield ("model", "nu_scale"), m.nu_scale > 0, "must be positive"
    yield ("model", "kernel_c1"), m.kernel_c1 > 0, "must be positive"
    yield ("model", "kernel_c2"), m.kernel_c2 > 0, "must be positive"
    yield ("grid", "n_radial"), g.n_radial >= 4, "must be at least 4"
    yield ("grid", "angular_order"), g.angular_order in LEBEDEV_ORDERS, f"must be one of {LEBEDEV_ORDERS}"
    yield ("grid", "zeta_max"), g.zeta_max > 0, "must be positive"
    yield ("grid", "grazing_cutoff"), 0 < g.grazing_cutoff < 1, "must lie in (0, 1)"
    yield ("grid", "volume_shells"), g.volume_shells >= 2, "must be at least 2"
    yield ("grid", "volume_order"), g.volume_order in LEBEDEV_ORDERS, f"must be one of {LEBEDEV_ORDERS}"
    yield ("grid", "mesh_theta"), g.mesh_theta >= 4, "must be at least 4"
    yield ("temperature", "kind"), t.kind in ("constant", "linear", "bump"), "must be constant, linear or bump"
    yield ("temperature", "slope"), len(t.slope) == 3, "needs three components"
    yield ("temperature", "center"), len(t.center) == 3, "needs three components"
    yield ("temperature", "width"), t.width > 0, "must be positive"
    yield ("solver", "tol"), s.tol > 0, "must be positive"
    yield ("solver", "max_iters"), s.max_iters >= 1, "must be at least 1"
    yield ("solver", "anderson"), s.anderson >= 0, "must be non-negative"
    yield ("solver", "n_probes"), s.n_probes >= 0, "must be non-negative"
    yield ("verify", "samples"), v.samples >= 1, "must be at least 1"
    yield ("verify", "potential_distances"), len(v.potential_distances) >= 2 and min(v.potential_distances) > 0, "needs two or more positive distances"
    yield ("verify", "random_psi"), v.random_psi >= 0, "must be non-negative"
    yield ("verify", "flux_points"), v.flux_points >= 1, "must be at least 1"
    yield ("verify", "decomposition_probes"), v.decomposition_probes >= 1, "must be at least 1"
    yield ("verify", "volume_form_probes"), v.volume_form_probes >= 1, "must be at least 1"
    yield ("probe", "epsilon"), 0 < p.epsilon < 1 / 6, "must lie in (0, 1/6)"
    yield ("probe", "epsilon_prime"), 0 < p.epsilon_prime < 1 / 6, "must lie in (0, 1/6)"
    yield ("probe", "exponent_slack"), p.exponent_slack >= 0, "must be non-negative"
    yield ("probe", "h_exponent_slack"), p.h_exponent_slack >= 0, "must be non-negative"
    yield ("probe", "ratio_slack"), p.ratio_slack >= 1, "must be at least 1"
    yield ("probe", "ladder"), len(p.ladder) >= 2 and min(p.ladder) > 0, "needs two or more positive distances"
    yield ("probe", "speed_min"), p.speed_min > 0, "must be positive"
    yield ("probe", "n_base"), p.n_base >= 1, "must be at least 1"
    yield ("probe", "n_pairs"), p.n_pairs >= 1, "must be at least 1"
    yield ("probe", "separation_min"), 0 < p.separation_min < p.separation_max, "must be positive and below separation_max"
    yield ("probe", "n_separations"), p.n_separations >= 2, "must be at least 2"
    yield ("run", "jobs"), r.jobs >= 1, "must be at least 1"


def validate(cfg, locations=None, source="<config>"):
    locations = locations or {}
    for (section, key), ok, message in _rules(cfg):
        if not ok:
            value = getattr(getattr(cfg, section), key)
            loc = locations.get((section, key), f"{source}: default")
            raise ConfigError(f"{loc}: [{section}] {key} = {_format(value)}: {message}")
    return cfg
