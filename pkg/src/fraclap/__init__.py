"""Finite elements for the integral fractional Laplacian on the unit disk.

Submodules: ``mesh``, ``quadrature``, ``assembly``, ``clustering``,
``solvers``, ``analysis``, ``timestepping``; ``studies`` and ``cli`` drive
the experiments.
"""
from __future__ import annotations

__version__ = "0.1.0"
