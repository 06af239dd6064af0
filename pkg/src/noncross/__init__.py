"""Non-cross diffusion laboratory: self-conditioned denoisers on toy flows."""

__version__ = "0.1.0"
