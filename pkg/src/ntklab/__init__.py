"""Two-layer network averaged SGD, its reference kernel dynamics, and the
spectral analysis of the induced tangent kernel on the sphere."""

__version__ = "0.1.0"
