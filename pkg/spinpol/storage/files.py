"""Écriture des résultats en CSV et JSON, et fichier annexe de métadonnées."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

from spinpol.core.errors import DomainError
from spinpol.core.models.records import RunMetadata
from spinpol.storage.base import ResultPayload, ResultWriter

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.12g"


def dump_json(document: Dict[str, Any], path: Path) -> None:
    """JSON canonique : indentation 2, clés triées, fin de ligne finale."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")


class CsvWriter(ResultWriter):
    """Écrit la table du résultat (colonnes fixes, sans index)."""

    suffix = ".csv"

    def write(self, payload: ResultPayload, path: Union[str, Path]) -> Path:
        if payload.table is None:
            raise DomainError("Ce résultat n'a pas de représentation tabulaire ; utiliser --format json")
        path = self._prepare(path)
        payload.table.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        logger.info(f"{len(payload.table)} lignes écrites dans {path}")
        return path


class JsonWriter(ResultWriter):
    """Écrit le document complet."""

    suffix = ".json"

    def write(self, payload: ResultPayload, path: Union[str, Path]) -> Path:
        path = self._prepare(path)
        dump_json(payload.document.model_dump(mode="json"), path)
        logger.info(f"Résultat écrit dans {path}")
        return path


WRITERS = {"csv": CsvWriter, "json": JsonWriter}


def get_writer(fmt: str) -> ResultWriter:
    """Retourne l'écrivain associé au format."""
    try:
        return WRITERS[fmt]()
    except KeyError:
        raise DomainError(f"Format de sortie inconnu: {fmt}") from None


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_sidecar(path: Union[str, Path], metadata: RunMetadata) -> Path:
    """Écrit <sortie>.meta.json à côté du fichier de résultats."""
    target = sidecar_path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    dump_json(metadata.model_dump(mode="json"), target)
    logger.debug(f"Métadonnées écrites dans {target}")
    return target
