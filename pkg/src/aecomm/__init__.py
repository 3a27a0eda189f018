"""Autoencoder OFDM communications: link simulation, robust training, tooling."""

from .errors import ConfigError, FormatError, NumericsError
from .phy import ChannelParams, JammerParams, LinkConfig

__version__ = "0.1.0"

__all__ = [
    "ChannelParams",
    "ConfigError",
    "FormatError",
    "JammerParams",
    "LinkConfig",
    "NumericsError",
    "__version__",
]
