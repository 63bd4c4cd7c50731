"""incforge: compiler and placement toolchain for in-network computing programs."""

__version__ = "0.1.0"
