"""Module de stockage des résultats."""

from .base import ResultPayload, ResultWriter
from .files import CsvWriter, JsonWriter, get_writer, write_sidecar

__all__ = ['ResultPayload', 'ResultWriter', 'CsvWriter', 'JsonWriter', 'get_writer', 'write_sidecar']
