"""Point-cloud transformer toolkit: geometry kernels, LFA/GFL blocks and a small autodiff engine."""

__version__ = "0.1.0"
