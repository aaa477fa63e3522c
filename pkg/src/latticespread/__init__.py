"""Single-excitation spreading on lattices with long-range couplings."""

__version__ = "0.1.0"
