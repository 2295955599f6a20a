"""Two-phase CO2/brine flow: isogeometric saturation updates coupled to a
direct or a collocation-network pressure solver."""

__version__ = "0.1.0"

from .config import SimConfig, parse_config, preset, write_config  # noqa: E402
from .driver import compare_pressures, run_direct, run_hybrid  # noqa: E402
from .kernels import BACKEND  # noqa: E402

__all__ = ["SimConfig", "parse_config", "preset", "write_config", "compare_pressures",
           "run_direct", "run_hybrid", "BACKEND", "__version__"]
