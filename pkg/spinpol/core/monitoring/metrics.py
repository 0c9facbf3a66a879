"""Métriques d'exécution des simulations.

Les instruments Prometheus vivent dans un registre privé : aucun serveur HTTP
n'est lancé, la CLI peut seulement les écrire au format textfile du
node_exporter.
"""

import logging
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, Union

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

logger = logging.getLogger(__name__)

REGISTRY = CollectorRegistry(auto_describe=True)

SECTORS_BUILT = Counter(
    'spinpol_sectors_built',
    'Nombre de secteurs J_z construits et exponentiés',
    ['stage'],
    registry=REGISTRY,
)

STAGE_SECONDS = Histogram(
    'spinpol_stage_seconds',
    'Durée des étapes de calcul en secondes',
    ['stage'],
    buckets=(0.001, 0.01, 0.1, 0.5, 1.0, 5.0, 30.0, 120.0),
    registry=REGISTRY,
)

PROTOCOL_STEPS = Counter(
    'spinpol_protocol_steps',
    'Mesures conditionnées appliquées',
    ['branch'],
    registry=REGISTRY,
)

TRAJECTORIES = Counter(
    'spinpol_trajectories',
    'Trajectoires échantillonnées',
    ['status'],
    registry=REGISTRY,
)


@contextmanager
def timed(stage: str) -> Iterator[None]:
    """Mesure la durée d'une étape et l'enregistre dans l'histogramme."""
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed = time.perf_counter() - start
        STAGE_SECONDS.labels(stage=stage).observe(elapsed)
        logger.debug(f"Étape {stage} terminée en {elapsed:.4f}s")


def snapshot() -> Dict[str, float]:
    """Retourne les valeurs courantes des compteurs, indexées par nom d'échantillon."""
    values: Dict[str, float] = {}
    for metric in REGISTRY.collect():
        for sample in metric.samples:
            if sample.name.endswith('_created'):
                continue
            labels = ",".join(f"{k}={v}" for k, v in sorted(sample.labels.items()))
            key = f"{sample.name}{{{labels}}}" if labels else sample.name
            values[key] = sample.value
    return values


def write_metrics(path: Union[str, Path]) -> Path:
    """Écrit les métriques au format textfile Prometheus.

    Args:
        path: Fichier de destination (les répertoires parents sont créés)

    Returns:
        Path: Chemin écrit
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_to_textfile(str(path), REGISTRY)
    logger.info(f"Métriques écrites dans {path}")
    return path
