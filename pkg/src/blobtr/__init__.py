"""Exact generalized and blobbed topological recursion with KP integrability checks."""

from __future__ import annotations

__version__ = "0.1.0"
