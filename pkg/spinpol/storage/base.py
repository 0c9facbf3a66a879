"""Module de base pour l'écriture des résultats."""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import pandas as pd
from pydantic import BaseModel


@dataclass
class ResultPayload:
    """Résultat prêt à écrire : document complet et table optionnelle."""

    document: BaseModel
    table: Optional[pd.DataFrame] = None


class ResultWriter(ABC):
    """Classe de base des écrivains de résultats."""

    suffix: str = ""

    @abstractmethod
    def write(self, payload: ResultPayload, path: Union[str, Path]) -> Path:
        """Écrit le résultat.

        Args:
            payload: Résultat à écrire
            path: Fichier de destination

        Returns:
            Chemin écrit
        """
        pass

    def _prepare(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        return path
