"""Module core de spinpol : espace des spins, propagateurs, états et protocoles."""

from . import errors
from . import spinspace
from . import hamiltonian
from . import propagator
from . import states
from . import protocol
from . import largek

__all__ = ['errors', 'spinspace', 'hamiltonian', 'propagator', 'states', 'protocol', 'largek']
