"""Module principal de spinpol."""

__version__ = "0.3.0"

from . import core
from . import storage

__all__ = [
    'core',
    'storage',
]
