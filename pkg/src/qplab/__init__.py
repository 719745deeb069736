"""Finite-volume numerics for quasi-periodic Schrodinger operators with cosine potential."""
from __future__ import annotations

__version__ = "0.1.0"
