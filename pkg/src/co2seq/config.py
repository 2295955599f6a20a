"""Simulation configuration and its INI file format.

Grammar (standard INI; ``#`` or ``;`` start comments, every key optional)::

    [run]
    preset = uniform | nonuniform

    [mesh]
    elements = 100          # spline elements per axis
    degree = 2
    length_x = 50.0         # m
    length_y = 50.0

    [time]
    tau = 5000.0            # s
    steps = 500
    cadence = 10            # saturation steps per pressure update

    [fluids]
    rho_g = 479.0
    rho_w = 1045.0
    mu_g = 3.95e-5
    mu_w = 25.35e-5
    gravity = 9.81

    [maps]
    permeability = constant:1      # or builtin:K1 or a CSV/PGM path
    porosity = builtin:K1
    permeability_units = mdarcy    # or m2

    [sources]
    well = 25.0, 25.0, 3.0, 1e-6, gas    # x, y, radius (m), strength, phase

    [training]
    collocation = 100
    pretrain_epochs = 20000
    update_epochs = 100
    lr = 1e-4
    hidden = 64, 64, 64
    activation = tanh
    input_scale = 3.0
    seed = 0

    [output]
    directory = run
    snapshot_every = 50
    sample_n = 101

Relative map paths resolve against the config file's directory. A preset
fills every value first; explicit keys then override it.
"""
from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

from .reservoir import (BUILTIN_MAPS, FluidParams, Reservoir, SimDomain, SourceDisk,
                        resolve_map)


def _default_sources():
    return (SourceDisk((25.0, 25.0), 3.0, 1e-6),)


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to reproduce one run."""

    n_elements: int = 100
    degree: int = 2
    collocation_n: int = 100
    tau: float = 5000.0
    steps: int = 500
    cadence: int = 10
    pretrain_epochs: int = 20000
    update_epochs: int = 100
    lr: float = 1e-4
    fluids: FluidParams = field(default_factory=FluidParams)
    permeability: str = "constant:1"
    porosity: str = "builtin:K1"
    permeability_units: str = "mdarcy"
    sources: tuple[SourceDisk, ...] = field(default_factory=_default_sources)
    domain: SimDomain = field(default_factory=SimDomain)
    output_dir: str | None = None
    seed: int = 0
    snapshot_every: int = 50
    sample_n: int = 101
    hidden: tuple[int, ...] = (64, 64, 64)
    activation: str = "tanh"
    input_scale: float = 3.0
    base_dir: str | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("n_elements", "degree", "collocation_n", "cadence", "pretrain_epochs",
                     "update_epochs", "snapshot_every"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.steps, int) or self.steps < 0:
            raise ValueError(f"steps must be a non-negative integer, got {self.steps!r}")
        if self.collocation_n < 2:
            raise ValueError("collocation_n must be at least 2")
        if self.sample_n < 2:
            raise ValueError("sample_n must be at least 2")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau!r}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr!r}")
        if not self.input_scale > 0:
            raise ValueError(f"input_scale must be positive, got {self.input_scale!r}")
        if not self.hidden or any(w < 1 for w in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden!r}")
        if self.permeability_units not in ("mdarcy", "m2"):
            raise ValueError(f"permeability_units must be mdarcy or m2, got {self.permeability_units!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (2,) + tuple(self.hidden) + (1,)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def build_reservoir(self) -> Reservoir:
        perm = resolve_map(self.permeability, "permeability", self.domain,
                           self.permeability_units, self.base_dir)
        poro = resolve_map(self.porosity, "porosity", self.domain, base_dir=self.base_dir)
        return Reservoir(self.fluids, perm, poro, tuple(self.sources), self.domain, self.tau)


PRESETS = {
    # constant permeability K_A with a porosity map
    "uniform": dict(tau=5000.0, permeability="constant:1", porosity="builtin:K1",
                    sources=(SourceDisk((25.0, 25.0), 3.0, 1e-6),)),
    # permeability map with its matching porosity map
    "nonuniform": dict(tau=1000.0, permeability="builtin:K1", porosity="builtin:K1",
                       sources=(SourceDisk((25.0, 25.0), 3.0, 5e-6),)),
}


def preset(name: str, **overrides) -> SimConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return SimConfig(**{**PRESETS[name], **overrides})


class ConfigError(ValueError):
    pass


# (section, key) -> (SimConfig field, converter)
_INT = int
_FLOAT = float


def _str(v):
    return v.strip()


def _ints(v):
    return tuple(int(t) for t in v.replace(",", " ").split())


_SCALARS = {
    ("mesh", "elements"): ("n_elements", _INT),
    ("mesh", "degree"): ("degree", _INT),
    ("time", "tau"): ("tau", _FLOAT),
    ("time", "steps"): ("steps", _INT),
    ("time", "cadence"): ("cadence", _INT),
    ("maps", "permeability"): ("permeability", _str),
    ("maps", "porosity"): ("porosity", _str),
    ("maps", "permeability_units"): ("permeability_units", _str),
    ("training", "collocation"): ("collocation_n", _INT),
    ("training", "pretrain_epochs"): ("pretrain_epochs", _INT),
    ("training", "update_epochs"): ("update_epochs", _INT),
    ("training", "lr"): ("lr", _FLOAT),
    ("training", "hidden"): ("hidden", _ints),
    ("training", "activation"): ("activation", _str),
    ("training", "input_scale"): ("input_scale", _FLOAT),
    ("training", "seed"): ("seed", _INT),
    ("output", "directory"): ("output_dir", _str),
    ("output", "snapshot_every"): ("snapshot_every", _INT),
    ("output", "sample_n"): ("sample_n", _INT),
}
_FLUID_KEYS = ("rho_g", "rho_w", "mu_g", "mu_w", "gravity")
_DOMAIN_KEYS = ("length_x", "length_y")
_SECTIONS = ("run", "mesh", "time", "fluids", "maps", "sources", "training", "output")


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of every ``key = value`` entry, keyed by (section, key)."""
    lines = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            lines[(section, None)] = lineno
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), lineno)
    return lines


def _parse_source(value: str) -> SourceDisk:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) not in (4, 5):
        raise ValueError("expected 'x, y, radius, strength[, phase]'")
    x, y, r, s = (float(p) for p in parts[:4])
    phase = parts[4] if len(parts) == 5 else "gas"
    return SourceDisk((x, y), r, s, phase)


def parse_config_text(text: str, source: str = "<config>", base_dir=None) -> SimConfig:
    """Parse INI text into a validated :class:`SimConfig`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    lines = _key_lines(text)

    def where(section, key=None):
        n = lines.get((section, key))
        return f"{source}:{n}" if n else source

    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{where(section)}: unknown section [{section}]")

    values: dict = {}
    name = cp.get("run", "preset", fallback="uniform").strip()
    if cp.has_section("run"):
        for key in cp["run"]:
            if key != "preset":
                raise ConfigError(f"{where('run', key)}: unknown key '{key}' in [run]")
    if name not in PRESETS:
        raise ConfigError(f"{where('run', 'preset')}: preset: unknown preset {name!r}")
    values.update(PRESETS[name])

    fluid_kw, domain_kw = {}, {}
    for section in cp.sections():
        if section == "run":
            continue
        for key, raw in cp[section].items():
            loc = where(section, key)
            try:
                if section == "sources":
                    values.setdefault("_sources", []).append(_parse_source(raw))
                elif section == "fluids" and key in _FLUID_KEYS:
                    fluid_kw[key] = float(raw)
                elif section == "mesh" and key in _DOMAIN_KEYS:
                    domain_kw[key] = float(raw)
                elif (section, key) in _SCALARS:
                    fname, conv = _SCALARS[(section, key)]
                    values[fname] = conv(raw)
                else:
                    raise ConfigError(f"{loc}: unknown key '{key}' in [{section}]")
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{loc}: {key}: {exc}") from None
    if cp.has_section("sources"):
        values["sources"] = tuple(values.pop("_sources", ()))
    if fluid_kw:
        values["fluids"] = FluidParams(**fluid_kw)
    if domain_kw:
        values["domain"] = SimDomain(**domain_kw)
    values["base_dir"] = None if base_dir is None else str(base_dir)

    try:
        cfg = SimConfig(**values)
    except ValueError as exc:
        msg = str(exc)
        field_name = msg.split()[0]
        key = next(((s, k) for (s, k), (f, _) in _SCALARS.items() if f == field_name), None)
        raise ConfigError(f"{where(*key) if key else source}: {msg}") from None
    for kind in ("permeability", "porosity"):
        spec = getattr(cfg, kind)
        head, _, rest = spec.partition(":")
        loc = where("maps", kind)
        if head == "builtin":
            if rest not in BUILTIN_MAPS:
                raise ConfigError(f"{loc}: {kind}: unknown builtin map {rest!r}")
        elif head == "constant":
            try:
                float(rest)
            except ValueError:
                raise ConfigError(f"{loc}: {kind}: bad constant {rest!r}") from None
        else:
            path = Path(spec)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            if not path.is_file():
                raise ConfigError(f"{loc}: {kind}: map file not found: {path}")
    for s in cfg.sources:
        try:
            s.check_inside(cfg.domain)
        except ValueError as exc:
            raise ConfigError(f"{where('sources')}: {exc}") from None
    return cfg


def parse_config(path) -> SimConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path), base_dir=path.parent)


def format_config(cfg: SimConfig) -> str:
    """INI text that :func:`parse_config_text` turns back into ``cfg``."""
    f, d = cfg.fluids, cfg.domain
    out = [
        "[mesh]",
        f"elements = {cfg.n_elements}",
        f"degree = {cfg.degree}",
        f"length_x = {d.length_x!r}",
        f"length_y = {d.length_y!r}",
        "",
        "[time]",
        f"tau = {cfg.tau!r}",
        f"steps = {cfg.steps}",
        f"cadence = {cfg.cadence}",
        "",
        "[fluids]",
        *(f"{k} = {getattr(f, k)!r}" for k in _FLUID_KEYS),
        "",
        "[maps]",
        f"permeability = {cfg.permeability}",
        f"porosity = {cfg.porosity}",
        f"permeability_units = {cfg.permeability_units}",
        "",
        "[sources]",
        *(f"source{i} = {s.center[0]!r}, {s.center[1]!r}, {s.radius!r}, {s.strength!r}, {s.phase}"
          for i, s in enumerate(cfg.sources)),
        "",
        "[training]",
        f"collocation = {cfg.collocation_n}",
        f"pretrain_epochs = {cfg.pretrain_epochs}",
        f"update_epochs = {cfg.update_epochs}",
        f"lr = {cfg.lr!r}",
        "hidden = " + ", ".join(str(w) for w in cfg.hidden),
        f"activation = {cfg.activation}",
        f"input_scale = {cfg.input_scale!r}",
        f"seed = {cfg.seed}",
        "",
        "[output]",
    ]
    if cfg.output_dir is not None:
        out.append(f"directory = {cfg.output_dir}")
    out += [f"snapshot_every = {cfg.snapshot_every}", f"sample_n = {cfg.sample_n}", ""]
    return "\n".join(out)


def write_config(cfg: SimConfig, path) -> Path:
    path = Path(path)
    path.write_text(format_config(cfg))
    return path
