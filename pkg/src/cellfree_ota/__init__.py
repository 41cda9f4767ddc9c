"""Uplink cell-free massive MIMO with an analog over-the-air fronthaul."""

from .config import ConfigError, SystemConfig, load_config
from .geometry import (
    CorrelationSet,
    NetworkLayout,
    build_correlations,
    generate_layout,
    path_loss_db,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "SystemConfig",
    "load_config",
    "CorrelationSet",
    "NetworkLayout",
    "build_correlations",
    "generate_layout",
    "path_loss_db",
    "__version__",
]
