"""Globally unique 3D instance identities from view-inconsistent 2D instance maps."""
from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
