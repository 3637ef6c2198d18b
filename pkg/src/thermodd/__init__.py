"""2D electro-thermal drift-diffusion device simulator."""

__version__ = "0.1.0"
