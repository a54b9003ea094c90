"""Periodic homogenisation of diffusion in pulsating perforated media."""

__version__ = "0.1.0"

from .errors import PulshomError  # noqa: E402

__all__ = ["PulshomError", "__version__"]
