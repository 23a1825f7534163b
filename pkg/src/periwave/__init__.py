"""Spectra of periodic elliptic operators with an open waveguide.

Q1 finite elements on the unit cell, on cross-section strips and on truncated
planes; band functions, guided-mode dispersion, the essential-spectrum union
and Weyl-sequence residual checks.
"""
__version__ = "0.1.0"
