"""Post-selected scattering protocols as homogeneous tensor matrix polynomials."""

__version__ = "0.1.0"
