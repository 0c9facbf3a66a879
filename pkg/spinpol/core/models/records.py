"""Modèles de sérialisation des résultats."""

from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class SeriesPoint(BaseModel):
    """Point d'une série de protocole."""

    M: int
    expected_Iz: float
    log10_P_M: float


class ProtocolRecordModel(BaseModel):
    """Série (M, ⟨I_z⟩_M, log10 P_M) exportée."""

    model_config = ConfigDict(extra="forbid")

    model: str = "exact"
    K_total: float
    fingerprint: Optional[str] = None
    series: List[SeriesPoint]
    # Résumé de décroissance de P_M au niveau stop_probability
    stop_probability: float = 0.1
    M_at_stop_probability: Optional[float] = None
    log_P_slope: Optional[float] = None


class SectorSpectrumModel(BaseModel):
    sector_two_Iz: int
    eigen_moduli: List[float]
    degenerate_count: int
    threshold: float


class SpectralReportModel(BaseModel):
    """Modules propres de V(τ) par secteur."""

    model_config = ConfigDict(extra="forbid")

    threshold: float
    degenerate: bool
    spectral_gap: float
    sectors: List[SectorSpectrumModel]
    fingerprint: Optional[str] = None


class TrajectoryRecordModel(BaseModel):
    seed: int
    outcomes: str
    restarts: int
    streak_lengths: List[int]
    final_expected_Iz: float
    reached_target: bool
    expected_Iz_history: List[float] = Field(default_factory=list)


class EnsembleModel(BaseModel):
    """Ensemble de trajectoires indépendantes."""

    model_config = ConfigDict(extra="forbid")

    seed: int
    n_trajectories: int
    successes: int
    success_fraction: float
    mean_final_Iz: float
    stderr_final_Iz: float
    trajectories: List[TrajectoryRecordModel]
    fingerprint: Optional[str] = None


class RequiredMModel(BaseModel):
    """Résultat des modes largek."""

    model_config = ConfigDict(extra="forbid")

    model: str = "diagonal-average"
    K: int
    a: float
    Vbar: float
    theta: float
    uneven: bool = False
    required_M: int
    asymptotic_leading: Optional[float] = None
    asymptotic_refined: Optional[float] = None
    stop_probability: float = 0.1
    M_at_stop_probability: Optional[float] = None
    series: List[SeriesPoint] = Field(default_factory=list)
    fingerprint: Optional[str] = None


class RunMetadata(BaseModel):
    """Fichier annexe <sortie>.meta.json ; seul wall_time_s varie entre deux exécutions."""

    fingerprint: str
    version: str
    mode: str
    model: str
    seed: Optional[int] = None
    wall_time_s: float
    flags: Dict[str, bool] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
