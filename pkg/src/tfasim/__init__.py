"""Time-fractional user association for mmWave MIMO downlink networks."""

__version__ = "0.1.0"
