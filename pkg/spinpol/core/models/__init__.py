"""Modèles de données sérialisables."""

from spinpol.core.models.records import (
    EnsembleModel,
    ProtocolRecordModel,
    RequiredMModel,
    RunMetadata,
    SectorSpectrumModel,
    SeriesPoint,
    SpectralReportModel,
    TrajectoryRecordModel,
)

__all__ = [
    "EnsembleModel",
    "ProtocolRecordModel",
    "RequiredMModel",
    "RunMetadata",
    "SectorSpectrumModel",
    "SeriesPoint",
    "SpectralReportModel",
    "TrajectoryRecordModel",
]
