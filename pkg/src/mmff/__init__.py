"""Proactive mmWave beam tracking from fused sensing and sub-6 GHz CSI."""

from .raycast import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
