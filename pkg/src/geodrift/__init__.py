"""geodrift: desk-scale toolkit for energy growth in geodesic flows driven by
recurrent external dynamics."""

from __future__ import annotations

__version__ = "0.1.0"
