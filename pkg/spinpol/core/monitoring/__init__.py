"""Module de monitoring : format de log et métriques d'exécution."""

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

__all__ = ['LOG_FORMAT']
