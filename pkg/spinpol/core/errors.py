"""Exceptions du moteur spinpol.

Chaque classe porte une catégorie lisible par machine, reprise par la CLI
pour choisir le code de sortie.
"""

from typing import Any, Dict


class SpinpolError(Exception):
    """Erreur de base de spinpol."""

    category = "internal"
    exit_code = 1

    def to_dict(self) -> Dict[str, Any]:
        """Convertit l'erreur en dictionnaire sérialisable."""
        return {
            "category": self.category,
            "error": type(self).__name__,
            "message": str(self),
        }


class DomainError(SpinpolError, ValueError):
    """Paramètres hors du domaine de validité (secteur, parité, plage...)."""

    category = "domain"
    exit_code = 2


class ConfigError(DomainError):
    """Configuration invalide ; le message nomme la clé fautive."""

    category = "config"
    exit_code = 2


class CapacityError(DomainError):
    """Dimension de secteur au-delà du plafond du mode exact."""

    category = "capacity"
    exit_code = 4


class NumericalError(SpinpolError, ArithmeticError):
    """Échec numérique (solveur propre, sous-dépassement de probabilité)."""

    category = "numerical"
    exit_code = 3
