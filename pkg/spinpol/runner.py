"""
Orchestration d'une exécution : choix du pipeline selon le mode, écriture des
résultats et du fichier annexe de métadonnées.
"""

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd

from spinpol import __version__
from spinpol.config import RunConfig
from spinpol.core.errors import DomainError
from spinpol.core.hamiltonian import SystemParams
from spinpol.core.largek import (
    MODEL_NAME,
    asymptotic_required_M,
    diagonal_series,
    required_M,
    required_M_uneven,
)
from spinpol.core.models.records import (
    EnsembleModel,
    ProtocolRecordModel,
    RequiredMModel,
    RunMetadata,
    SeriesPoint,
    SpectralReportModel,
    TrajectoryRecordModel,
)
from spinpol.core.propagator import ConditionedPropagator, conditioned_blocks, spectral_report
from spinpol.core.protocol import (
    ProtocolRecord,
    expected_success_decay,
    run_conditioned,
    run_ensemble,
    run_trajectory,
    run_uneven,
)
from spinpol.core.states import BlockedDensity, polarized_product, uneven_polarized
from spinpol.storage import ResultPayload, get_writer, write_sidecar

logger = logging.getLogger(__name__)


@dataclass
class RunOutcome:
    """Fichiers produits par une exécution."""

    output: Path
    sidecar: Path
    payload: ResultPayload
    wall_time_s: float


def default_output(config: RunConfig) -> Path:
    return Path("results") / f"spinpol_{config.mode}.{config.format}"


def _exact_system(
    config: RunConfig,
) -> Tuple[Optional[SystemParams], Optional[ConditionedPropagator], BlockedDensity]:
    """Paramètres, propagateur et état initial ; rien à propager sans spin dynamique."""
    if config.is_uneven:
        rho = uneven_polarized(config.K, config.a)
        if rho.K == 0:
            logger.info("État inégal sans spin dynamique : série constante")
            return None, None, rho
    else:
        rho = polarized_product(config.K, config.a, max_dim=config.max_dim)
    params = config.system_params(residual=config.is_uneven)
    prop = conditioned_blocks(params, 1.0, n_jobs=config.threads, max_dim=config.max_dim)
    return params, prop, rho


def _series_points(record: ProtocolRecord) -> List[SeriesPoint]:
    return [
        SeriesPoint(M=int(M), expected_Iz=float(e), log10_P_M=float(p))
        for M, e, p in zip(record.M, record.expected_Iz, record.log10_P)
    ]


def _run_exact(config: RunConfig, fingerprint: str) -> Tuple[ResultPayload, Dict[str, bool]]:
    _, prop, rho = _exact_system(config)
    if config.is_uneven:
        record = run_uneven(rho, prop, config.M_max, fingerprint=fingerprint)
    else:
        record = run_conditioned(rho, prop, config.M_max, fingerprint=fingerprint)
    decay = expected_success_decay(record, config.stop_probability)
    document = ProtocolRecordModel(
        model=record.model,
        K_total=record.K_total,
        fingerprint=fingerprint,
        series=_series_points(record),
        stop_probability=config.stop_probability,
        M_at_stop_probability=decay.M_at_level,
        log_P_slope=decay.slope,
    )
    return ResultPayload(document, record.to_frame()), {}


def _run_spectrum(config: RunConfig, fingerprint: str) -> Tuple[ResultPayload, Dict[str, bool]]:
    params = config.system_params()
    prop = conditioned_blocks(params, 1.0, n_jobs=config.threads, max_dim=config.max_dim)
    report = spectral_report(prop, config.degeneracy_threshold)
    document = SpectralReportModel(**report.to_dict(), fingerprint=fingerprint)
    table = pd.DataFrame(
        [
            {
                "sector_two_Iz": s.two_Iz,
                "rank": rank,
                "modulus": float(modulus),
                "degenerate": bool(not s.is_top and modulus >= 1.0 - report.threshold),
            }
            for s in report.sectors
            for rank, modulus in enumerate(s.moduli)
        ],
        columns=["sector_two_Iz", "rank", "modulus", "degenerate"],
    )
    if report.degenerate:
        logger.info("V(τ) dégénérée : la polarisation complète est impossible")
    return ResultPayload(document, table), {"degenerate": report.degenerate}


def _run_trajectory(config: RunConfig, fingerprint: str) -> Tuple[ResultPayload, Dict[str, bool]]:
    _, prop, rho = _exact_system(config)
    if prop is None:
        raise DomainError("Mode trajectory sans spin dynamique (a = 1 sur l'état inégal)")
    policy = config.streak_policy()
    flags = {"down_branch_kraus_update": True, "reset_on_failure": policy.on_failure == "reset"}

    if config.n_trajectories == 1:
        record = run_trajectory(rho, prop, config.seed, policy)
        document = TrajectoryRecordModel(**record.to_dict())
        table = pd.DataFrame(
            {
                "step": range(len(record.expected_Iz_history)),
                "outcome": [""] + list(record.outcomes),
                "expected_Iz": record.expected_Iz_history,
            }
        )
        return ResultPayload(document, table), flags

    summary = run_ensemble(
        rho, prop, config.seed, config.n_trajectories, policy, n_jobs=config.threads
    )
    document = EnsembleModel(**summary.to_dict(), fingerprint=fingerprint)
    table = pd.DataFrame(
        [
            {
                "seed": r.seed,
                "attempts": r.attempts,
                "restarts": r.restarts,
                "reached_target": r.reached_target,
                "final_expected_Iz": r.final_expected_Iz,
            }
            for r in summary.records
        ]
    )
    return ResultPayload(document, table), flags


def _run_largek(config: RunConfig, fingerprint: str) -> Tuple[ResultPayload, Dict[str, bool]]:
    params = config.diagonal_params()
    uneven = config.mode == "largek-uneven"
    leading = refined = None
    if uneven:
        residual, offset = params.residual()
        M = required_M_uneven(params, config.theta)
        record = diagonal_series(residual, config.M_max, offset, fingerprint=fingerprint)
    else:
        M = required_M(params, config.theta)
        leading, refined = asymptotic_required_M(params, config.theta)
        record = diagonal_series(params, config.M_max, fingerprint=fingerprint)
    decay = expected_success_decay(record, config.stop_probability)
    document = RequiredMModel(
        K=config.K,
        a=config.a,
        Vbar=config.Vbar,
        theta=config.theta,
        uneven=uneven,
        required_M=M,
        asymptotic_leading=leading,
        asymptotic_refined=refined,
        stop_probability=config.stop_probability,
        M_at_stop_probability=decay.M_at_level,
        series=_series_points(record),
        fingerprint=fingerprint,
    )
    return ResultPayload(document, record.to_frame()), {}


PIPELINES = {
    "exact": _run_exact,
    "spectrum": _run_spectrum,
    "trajectory": _run_trajectory,
    "largek": _run_largek,
    "largek-uneven": _run_largek,
}


def execute(config: RunConfig, out: Optional[Path] = None) -> RunOutcome:
    """
    Exécute la configuration et écrit les résultats.

    Args:
        config: Configuration validée
        out: Fichier de sortie (par défaut config.out, puis results/spinpol_<mode>.<format>)

    Returns:
        RunOutcome: chemins écrits et document produit
    """
    start = time.perf_counter()
    fingerprint = config.fingerprint()
    logger.info(f"Exécution en mode {config.mode} (empreinte {fingerprint[:12]})")

    payload, flags = PIPELINES[config.mode](config, fingerprint)

    output = Path(out or config.out or default_output(config))
    written = get_writer(config.format).write(payload, output)
    wall_time = time.perf_counter() - start

    metadata = RunMetadata(
        fingerprint=fingerprint,
        version=__version__,
        mode=config.mode,
        model=MODEL_NAME if config.mode.startswith("largek") else "exact",
        seed=config.seed if config.mode == "trajectory" else None,
        wall_time_s=wall_time,
        flags=flags,
        outputs=[written.name],
    )
    sidecar = write_sidecar(written, metadata)
    logger.info(f"Exécution terminée en {wall_time:.3f}s")
    return RunOutcome(output=written, sidecar=sidecar, payload=payload, wall_time_s=wall_time)
