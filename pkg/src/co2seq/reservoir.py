"""Physical configuration: fluids, rock property maps, injection sources.

Everything downstream works on the reference square [0, 1]^2. A physical
point is ``(x * length_x, y * length_y)``; gradients taken in reference
coordinates pick up a ``1 / length`` factor per derivative.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MDARCY_TO_M2 = 1e-15

DATA_DIR = Path(__file__).with_name("data")
BUILTIN_MAPS = ("K1", "K2", "K3")


@dataclass(frozen=True)
class FluidParams:
    """Densities (kg/m^3), viscosities (Pa s) and gravity magnitude (m/s^2).

    Gravity points in -y. Defaults are the CO2/brine values used throughout.
    """

    rho_g: float = 479.0
    rho_w: float = 1045.0
    mu_g: float = 3.95e-5
    mu_w: float = 25.35e-5
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("rho_g", "rho_w", "mu_g", "mu_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not self.gravity >= 0:
            raise ValueError(f"gravity must be non-negative, got {self.gravity!r}")
        if self.mu_w <= self.mu_g or self.rho_w <= self.rho_g:
            warnings.warn("fluid parameters outside the gas-lighter-and-less-viscous regime",
                          stacklevel=3)


@dataclass(frozen=True)
class SimDomain:
    length_x: float = 50.0
    length_y: float = 50.0

    def __post_init__(self):
        if not (self.length_x > 0 and self.length_y > 0):
            raise ValueError("domain lengths must be positive")


class MaterialField:
    """Cell-centred raster over the domain, sampled bilinearly.

    ``values[row, col]``: rows run along y (row 0 at y = 0), columns along x.
    Permeability is stored in m^2, porosity as a fraction.
    """

    def __init__(self, values, extent: SimDomain = SimDomain(), kind: str = "permeability"):
        values = np.array(values, dtype=float, ndmin=2)
        if values.ndim != 2 or values.size == 0:
            raise ValueError("material grid must be a non-empty 2D array")
        if not np.all(np.isfinite(values)):
            raise ValueError("material grid contains non-finite values")
        if kind == "permeability":
            if np.any(values <= 0):
                raise ValueError("permeability must be strictly positive everywhere")
        elif kind == "porosity":
            if np.any(values <= 0) or np.any(values > 1):
                raise ValueError("porosity must lie in (0, 1] everywhere")
        else:
            raise ValueError(f"unknown material kind {kind!r}")
        values.setflags(write=False)
        self.values = values
        self.extent = extent
        self.kind = kind

    @classmethod
    def constant(cls, value, kind="permeability", extent=SimDomain()):
        return cls([[value]], extent, kind)

    @property
    def shape(self):
        return self.values.shape

    @property
    def min(self) -> float:
        return float(self.values.min())

    @property
    def max(self) -> float:
        return float(self.values.max())

    def __call__(self, x, y):
        return sample(self, x, y)


def sample(field: MaterialField, x, y):
    """Bilinear interpolation of the cell-centred raster at reference coordinates.

    Outside the outermost cell centres the value is held constant (clamped).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)):
        raise ValueError("non-finite sample coordinates")
    if np.any(x < 0) or np.any(x > 1) or np.any(y < 0) or np.any(y > 1):
        raise ValueError("sample point outside the reference square [0, 1]^2")
    rows, cols = field.values.shape
    fx = np.clip(x * cols - 0.5, 0.0, cols - 1)
    fy = np.clip(y * rows - 0.5, 0.0, rows - 1)
    c0 = np.minimum(np.floor(fx).astype(int), max(cols - 2, 0))
    r0 = np.minimum(np.floor(fy).astype(int), max(rows - 2, 0))
    c1 = np.minimum(c0 + 1, cols - 1)
    r1 = np.minimum(r0 + 1, rows - 1)
    tx = fx - c0
    ty = fy - r0
    v = field.values
    out = ((1 - ty) * ((1 - tx) * v[r0, c0] + tx * v[r0, c1])
           + ty * ((1 - tx) * v[r1, c0] + tx * v[r1, c1]))
    return float(out) if out.ndim == 0 else out


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval; '#' comments allowed
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    if magic == "P5":
        raw = np.frombuffer(data[pos + 1:pos + 1 + width * height], dtype=np.uint8)
    elif magic == "P2":
        raw = np.array(data[pos:].split(), dtype=np.int64)[:width * height]
    else:
        raise ValueError(f"{path}: not a PGM file (magic {magic!r})")
    if raw.size != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    img = raw.reshape(height, width).astype(float) / maxval
    return img[::-1]  # image row 0 is the top edge


def read_grid(path) -> np.ndarray:
    """Read a rectangular numeric CSV grid (row 0 at y = 0)."""
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: empty grid")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged grid (row widths {sorted(widths)})")
    return np.array(rows)


def load_map(grid_file, extent: SimDomain = SimDomain(), kind: str = "permeability",
             units: str = "mdarcy", value_range: tuple[float, float] | None = None) -> MaterialField:
    """Load a permeability or porosity raster from CSV or 8-bit PGM.

    Permeability in ``mdarcy`` is converted to m^2 (1 mD = 1e-15 m^2); pass
    ``units="m2"`` for grids already in SI. PGM pixels are rescaled linearly
    onto ``value_range`` (required for PGM input).
    """
    path = Path(grid_file)
    if path.suffix.lower() == ".pgm":
        if value_range is None:
            raise ValueError(f"{path}: PGM maps need a value range")
        lo, hi = value_range
        values = lo + (hi - lo) * _read_pgm(path)
    else:
        values = read_grid(path)
    if kind == "permeability":
        if units == "mdarcy":
            values = values * MDARCY_TO_M2
        elif units != "m2":
            raise ValueError(f"unknown permeability units {units!r}")
    return MaterialField(values, extent, kind)


def alpha_at(s_g, k, fluids: FluidParams):
    """Total mobility times permeability, ``((1 - s)/mu_w + s/mu_g) k``."""
    s = np.asarray(s_g, dtype=float)
    if np.any(s < 0) or np.any(s > 1):
        log.warning("alpha_at: clamping %d saturation values to [0, 1]",
                    int(np.count_nonzero((s < 0) | (s > 1))))
        s = np.clip(s, 0.0, 1.0)
    out = ((1.0 - s) / fluids.mu_w + s / fluids.mu_g) * np.asarray(k, dtype=float)
    return float(out) if np.ndim(out) == 0 else out


def gravity_coefficient(s_g, k, fluids: FluidParams):
    """Density-weighted mobility ``K ((1 - s) rho_w / mu_w + s rho_g / mu_g)``.

    Multiply by the gravity vector ``(0, -g)`` to get the buoyancy flux.
    """
    s = np.clip(np.asarray(s_g, dtype=float), 0.0, 1.0)
    return np.asarray(k, dtype=float) * ((1.0 - s) * fluids.rho_w / fluids.mu_w
                                        + s * fluids.rho_g / fluids.mu_g)


@dataclass(frozen=True)
class SourceDisk:
    """Injection disk in physical coordinates (m).

    ``strength`` is the saturation increment per time step inside the disk;
    the volumetric rate entering the equations is ``strength * phi / tau``.
    """

    center: tuple[float, float]
    radius: float
    strength: float
    phase: str = "gas"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("source radius must be positive")
        if self.phase not in ("gas", "water"):
            raise ValueError(f"source phase must be 'gas' or 'water', got {self.phase!r}")

    def check_inside(self, domain: SimDomain):
        cx, cy = self.center
        r = self.radius
        if cx - r < 0 or cy - r < 0 or cx + r > domain.length_x or cy + r > domain.length_y:
            raise ValueError(f"source disk at {self.center} with radius {r} leaves the domain")

    @property
    def area(self) -> float:
        return math.pi * self.radius ** 2


def source_value(source: SourceDisk, x, y):
    """Sharp indicator ``strength * [|(x, y) - center| <= radius]`` (physical coordinates)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cx, cy = source.center
    inside = (x - cx) ** 2 + (y - cy) ** 2 <= source.radius ** 2
    out = np.where(inside, source.strength, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class Reservoir:
    """Bundle of everything the solvers need to know about the physics."""

    fluids: FluidParams
    permeability: MaterialField
    porosity: MaterialField
    sources: tuple[SourceDisk, ...] = ()
    domain: SimDomain = SimDomain()
    tau: float = 5000.0

    def __post_init__(self):
        for s in self.sources:
            s.check_inside(self.domain)
        if not self.tau > 0:
            raise ValueError("time step must be positive")

    def k(self, x, y):
        return sample(self.permeability, x, y)

    def phi(self, x, y):
        return sample(self.porosity, x, y)

    def strength(self, x, y, phase="gas"):
        """Sum of source strengths of one phase at reference coordinates."""
        px = np.asarray(x, dtype=float) * self.domain.length_x
        py = np.asarray(y, dtype=float) * self.domain.length_y
        total = np.zeros(np.broadcast(px, py).shape)
        for s in self.sources:
            if s.phase == phase:
                total = total + source_value(s, px, py)
        return total

    def rate(self, x, y, phase="gas"):
        """Volumetric source rate q (1/s) so that ``tau q / phi`` equals the strength."""
        return self.strength(x, y, phase) * self.phi(x, y) / self.tau

    def alpha(self, s_g, x, y):
        return alpha_at(s_g, self.k(x, y), self.fluids)

    def alpha_bounds(self) -> tuple[float, float]:
        """Lower/upper bounds of alpha over the domain for any saturation."""
        f = self.fluids
        return (self.permeability.min / max(f.mu_w, f.mu_g),
                self.permeability.max / min(f.mu_w, f.mu_g))

    @property
    def pressure_scale(self) -> float:
        """Hydrostatic brine pressure over the domain height, rho_w g L (Pa)."""
        return self.fluids.rho_w * self.fluids.gravity * self.domain.length_y


# -- stand-in rock maps --------------------------------------------------------
#
# Synthetic rasters with layered / channel / blocky structure. They are
# generated here (and shipped under data/) because the original reservoir
# rasters are not available; they are not measured data.

def _smooth_noise(rng, n, passes):
    a = rng.standard_normal((n, n))
    for _ in range(passes):
        a = (a + np.roll(a, 1, 0) + np.roll(a, -1, 0) + np.roll(a, 1, 1) + np.roll(a, -1, 1)) / 5
    return (a - a.mean()) / a.std()


def standin_maps(name: str, n: int = 64, seed: int = 7) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(permeability_mdarcy, porosity)`` rasters of size ``n x n``.

    ``K1`` is layered in y, ``K2`` has a sinuous high-permeability channel,
    ``K3`` is a patchwork of blocks. Contrast is about one order of magnitude.
    """
    rng = np.random.default_rng(seed + {"K1": 0, "K2": 1, "K3": 2}[name])
    y, x = np.meshgrid((np.arange(n) + 0.5) / n, (np.arange(n) + 0.5) / n, indexing="ij")
    noise = _smooth_noise(rng, n, 12)
    if name == "K1":
        logk = 0.45 * np.sin(2 * np.pi * 2.5 * y + 0.6 * np.sin(2 * np.pi * x)) + 0.12 * noise
    elif name == "K2":
        centre = 0.5 + 0.18 * np.sin(2 * np.pi * 1.3 * x + 0.4)
        logk = -0.35 + 0.9 * np.exp(-((y - centre) / 0.12) ** 2) + 0.1 * noise
    elif name == "K3":
        blocks = rng.uniform(-0.5, 0.5, (4, 4))
        bi = np.minimum((y * 4).astype(int), 3)
        bj = np.minimum((x * 4).astype(int), 3)
        raw = blocks[bi, bj]
        for _ in range(n // 8):  # soften block edges
            raw = (raw + np.roll(raw, 1, 0) + np.roll(raw, -1, 0)
                   + np.roll(raw, 1, 1) + np.roll(raw, -1, 1)) / 5
        logk = raw + 0.1 * noise
    else:
        raise ValueError(f"unknown stand-in map {name!r}")
    perm = 10.0 ** logk
    poro = np.clip(0.2 + 0.08 * (logk - logk.mean()) / max(logk.std(), 1e-12), 0.05, 0.35)
    return perm, poro


def builtin_map(name: str, kind: str, extent: SimDomain = SimDomain()) -> MaterialField:
    """Load a shipped stand-in map, e.g. ``builtin_map("K2", "permeability")``."""
    if name not in BUILTIN_MAPS:
        raise ValueError(f"unknown builtin map {name!r}; choose from {', '.join(BUILTIN_MAPS)}")
    path = DATA_DIR / f"{kind}_{name}.csv"
    return load_map(path, extent, kind)


def resolve_map(spec: str, kind: str, extent: SimDomain = SimDomain(),
                units: str = "mdarcy", base_dir=None) -> MaterialField:
    """Build a material field from a map spec.

    ``constant:<value>``, ``builtin:<K1|K2|K3>`` or a path to a CSV/PGM grid
    (relative paths resolve against ``base_dir``). Permeability values are in
    ``units`` (mDarcy by default); the shipped maps are in mDarcy.
    """
    spec = spec.strip()
    head, _, rest = spec.partition(":")
    if head == "constant" and rest:
        value = float(rest)
        if kind == "permeability":
            if units == "mdarcy":
                value *= MDARCY_TO_M2
            elif units != "m2":
                raise ValueError(f"unknown permeability units {units!r}")
        return MaterialField.constant(value, kind, extent)
    if head == "builtin" and rest:
        return builtin_map(rest, kind, extent)
    path = Path(spec)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    if not path.is_file():
        raise FileNotFoundError(f"{kind} map not found: {path}")
    return load_map(path, extent, kind, units)
