"""Stream-based line-buffer CNN accelerator: bit-exact simulator and analytic models."""

__version__ = "0.1.0"
