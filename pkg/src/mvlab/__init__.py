"""Numerical laboratory for McKean-Vlasov SDEs with convolution drift."""

__version__ = "0.1.0"
