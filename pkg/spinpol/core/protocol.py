"""
Protocole de mesures répétées du spin électronique.

Une mesure « haut » applique V(τ) à la densité nucléaire, une mesure « bas »
applique le partenaire de Kraus W(τ) (I_z monte de 1). Les probabilités sont
suivies en logarithme pour rester finies sous post-sélection extrême.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from spinpol.core.errors import DomainError, NumericalError
from spinpol.core.monitoring.metrics import PROTOCOL_STEPS, TRAJECTORIES, timed
from spinpol.core.propagator import ConditionedPropagator, resolve_jobs
from spinpol.core.states import (
    LOG_WEIGHT_FLOOR,
    BlockedDensity,
    DensityBlock,
    expected_Iz,
    log_weight_array,
)

logger = logging.getLogger(__name__)

LOG_UNDERFLOW = float(np.log(1e-300))
CSV_COLUMNS = ["M", "expected_Iz", "log10_P_M"]


@dataclass
class ProtocolRecord:
    """Série (M, ⟨I_z⟩_M, ln P_M) d'un protocole conditionné."""

    M: np.ndarray
    expected_Iz: np.ndarray
    log_P: np.ndarray
    K_total: float
    model: str = "exact"
    fingerprint: Optional[str] = None

    def __len__(self) -> int:
        return len(self.M)

    @property
    def log10_P(self) -> np.ndarray:
        return self.log_P / np.log(10.0)

    @property
    def final_expected_Iz(self) -> float:
        return float(self.expected_Iz[-1])

    def to_frame(self) -> pd.DataFrame:
        """Tableau aux colonnes M, expected_Iz, log10_P_M."""
        return pd.DataFrame(
            {
                "M": self.M.astype(int),
                "expected_Iz": self.expected_Iz,
                "log10_P_M": self.log10_P,
            },
            columns=CSV_COLUMNS,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "K_total": self.K_total,
            "fingerprint": self.fingerprint,
            "series": self.to_frame().to_dict(orient="records"),
        }

    @classmethod
    def from_series(
        cls,
        expected: List[float],
        log_P: List[float],
        K_total: float,
        model: str = "exact",
        fingerprint: Optional[str] = None,
    ) -> "ProtocolRecord":
        return cls(
            M=np.arange(len(expected)),
            expected_Iz=np.asarray(expected, dtype=float),
            log_P=np.asarray(log_P, dtype=float),
            K_total=K_total,
            model=model,
            fingerprint=fingerprint,
        )


def _check_compatible(rho: BlockedDensity, prop: ConditionedPropagator) -> None:
    if rho.K != prop.K:
        raise DomainError(f"Densité sur K={rho.K} spins, propagateur sur K={prop.K}")


def _apply_branch(
    rho: BlockedDensity,
    blocks: Dict[int, np.ndarray],
    shift: int,
    floor: float = LOG_WEIGHT_FLOOR,
) -> Tuple[Optional[BlockedDensity], float]:
    """
    Applique un opérateur de Kraus bloc par bloc.

    Args:
        rho: Densité courante
        blocks: Blocs de l'opérateur, indexés par le secteur de départ
        shift: Décalage de two_Iz (0 pour V, +2 pour W)

    Returns:
        Tuple: (densité normalisée ou None si la branche est impossible, ln p)
    """
    log_norm = rho.log_norm()
    entries: List[DensityBlock] = []
    for b in rho.blocks:
        op = blocks[b.two_Iz]
        if op.shape[0] == 0:
            continue
        new = op @ b.block @ op.conj().T
        trace = float(np.trace(new).real)
        if trace <= 0.0:
            continue
        log_weight = b.log_weight - log_norm + np.log(trace)
        entries.append(DensityBlock(b.two_Iz + shift, log_weight, new / trace))
    if not entries:
        return None, -np.inf

    log_p = float(logsumexp([e.log_weight for e in entries]))
    kept = [
        DensityBlock(e.two_Iz, e.log_weight - log_p, e.block)
        for e in entries
        if e.log_weight - log_p > floor
    ]
    return rho.with_blocks(kept), min(log_p, 0.0)


def step_conditioned(
    rho: BlockedDensity, prop: ConditionedPropagator
) -> Tuple[BlockedDensity, float]:
    """
    Une mesure réussie : ρ → VρV†/P₁.

    Args:
        rho: Densité nucléaire
        prop: Propagateur conditionné compatible

    Returns:
        Tuple[BlockedDensity, float]: densité renormalisée et ln P₁

    Raises:
        NumericalError: probabilité de succès sous 1e-300
    """
    _check_compatible(rho, prop)
    updated, log_p = _apply_branch(rho, prop.V, 0)
    if updated is None or log_p < LOG_UNDERFLOW:
        raise NumericalError(
            f"Probabilité de succès sous 1e-300 (ln p = {log_p:.3g}) ; "
            f"utiliser les observables en logarithme (modèle diagonal)"
        )
    PROTOCOL_STEPS.labels(branch="up").inc()
    return updated, log_p


def step_failed(
    rho: BlockedDensity, prop: ConditionedPropagator
) -> Tuple[Optional[BlockedDensity], float]:
    """Mesure « bas » : ρ → WρW†/(1 - P₁), chaque secteur monte de I_z à I_z + 1."""
    _check_compatible(rho, prop)
    if prop.W is None:
        raise DomainError("Le propagateur n'a pas de blocs W (branche bas indisponible)")
    updated, log_p = _apply_branch(rho, prop.W, 2)
    if updated is not None:
        PROTOCOL_STEPS.labels(branch="down").inc()
    return updated, log_p


def run_conditioned(
    rho: BlockedDensity,
    prop: ConditionedPropagator,
    M_max: int,
    fingerprint: Optional[str] = None,
) -> ProtocolRecord:
    """
    Applique M_max mesures réussies et enregistre ⟨I_z⟩_M et ln P_M.

    Args:
        rho: Densité initiale
        prop: Propagateur conditionné
        M_max: Nombre de mesures (>= 1)
        fingerprint: Empreinte de la configuration

    Returns:
        ProtocolRecord: M+1 points, M = 0..M_max
    """
    if M_max < 1:
        raise DomainError(f"M_max doit être >= 1 (reçu {M_max})")
    _check_compatible(rho, prop)

    expected = [expected_Iz(rho)]
    log_P = [0.0]
    with timed("protocol"):
        for _ in range(M_max):
            rho, log_p = step_conditioned(rho, prop)
            expected.append(expected_Iz(rho))
            log_P.append(log_P[-1] + log_p)

    logger.info(
        f"Protocole conditionné : M={M_max}, ⟨I_z⟩={expected[-1]:.6f}, "
        f"log10 P={log_P[-1] / np.log(10.0):.4f}"
    )
    return ProtocolRecord.from_series(
        expected, log_P, K_total=rho.K + 2 * rho.frozen_offset, fingerprint=fingerprint
    )


def run_uneven(
    rho_uneven: BlockedDensity,
    prop_residual: ConditionedPropagator,
    M_max: int,
    fingerprint: Optional[str] = None,
) -> ProtocolRecord:
    """
    Protocole sur l'état inégal : dynamique des spins résiduels, décalage gelé.

    ⟨I_z⟩_M = aK/2 + ⟨I_z⟩'_M où ⟨I_z⟩' est la série du système résiduel.
    """
    if rho_uneven.K == 0:
        constant = [rho_uneven.frozen_offset] * (M_max + 1)
        return ProtocolRecord.from_series(
            constant, [0.0] * (M_max + 1), K_total=2 * rho_uneven.frozen_offset,
            fingerprint=fingerprint,
        )
    return run_conditioned(rho_uneven, prop_residual, M_max, fingerprint=fingerprint)


def even_state_expectation(
    prop: ConditionedPropagator, a: float, M_max: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Évaluation directe de ⟨I_z⟩_M pour l'état uniformément polarisé.

    ⟨I_z⟩_M = Σ c(I_z, a) I_z Tr[V^M V†^M] / (d_{I_z} P_M), avec
    P_M = Σ c(I_z, a) Tr[V^M V†^M] / d_{I_z}.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (⟨I_z⟩_M, ln P_M) pour M = 0..M_max
    """
    K = prop.K
    log_c = log_weight_array(K, a)
    sectors = np.arange(-K, K + 1, 2)
    powers = {t: np.eye(len(prop.V[t]), dtype=complex) for t in sectors}

    expected = np.empty(M_max + 1)
    log_P = np.empty(M_max + 1)
    for M in range(M_max + 1):
        if M:
            powers = {t: prop.V[t] @ powers[t] for t in sectors}
        # Tr[V^M V†^M] / d = ‖V^M‖_F² / d
        traces = np.array([np.sum(np.abs(powers[t]) ** 2) / len(powers[t]) for t in sectors])
        with np.errstate(divide="ignore"):
            log_terms = log_c + np.log(traces)
        log_P[M] = min(float(logsumexp(log_terms)), 0.0)
        weights = np.exp(log_terms - logsumexp(log_terms))
        expected[M] = float(np.dot(weights, sectors / 2))
    return expected, log_P


@dataclass
class DecaySummary:
    """Décroissance de P_M : passage sous un niveau et pentes de ln P_M."""

    level: float
    M_at_level: Optional[float]
    initial_slope: float
    slope: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def expected_success_decay(record: ProtocolRecord, level: float = 0.1) -> DecaySummary:
    """
    M interpolé où P_M passe sous level, et pentes de ln P_M.

    Args:
        record: Série avec au moins deux points
        level: Niveau de probabilité (0.1 par défaut)

    Returns:
        DecaySummary: M_at_level vaut None si P_M ne franchit pas le niveau ;
        initial_slope est la pente entre M=0 et M=1, slope celle des deux
        derniers points (ln P par mesure)
    """
    if len(record) < 2:
        raise DomainError("La série doit contenir au moins deux points")
    log_level = np.log(level)
    log_P = record.log_P
    M = record.M.astype(float)

    M_at_level = None
    below = np.nonzero(log_P <= log_level)[0]
    if below.size:
        j = int(below[0])
        if j == 0:
            M_at_level = float(M[0])
        else:
            frac = (log_P[j - 1] - log_level) / (log_P[j - 1] - log_P[j])
            M_at_level = float(M[j - 1] + frac * (M[j] - M[j - 1]))

    initial = (log_P[1] - log_P[0]) / (M[1] - M[0])
    final = (log_P[-1] - log_P[-2]) / (M[-1] - M[-2])
    return DecaySummary(
        level=level, M_at_level=M_at_level, initial_slope=float(initial), slope=float(final)
    )


@dataclass
class RoundSummary:
    """Résultat d'une manche : arrêt quand P de la manche atteint le niveau."""

    index: int
    M_stop: int
    log_P: float
    expected_Iz: float


def run_rounds(
    rho: BlockedDensity,
    prop: ConditionedPropagator,
    n_rounds: int,
    stop_probability: float = 0.1,
    stop_M: Optional[int] = None,
    max_M: int = 10_000,
) -> List[RoundSummary]:
    """
    Enchaîne des manches de mesures : chaque manche s'arrête quand sa propre
    probabilité de succès tombe à stop_probability (ou à stop_M mesures), puis
    la suivante repart de l'état renormalisé.
    """
    if not 0.0 < stop_probability < 1.0:
        raise DomainError(f"stop_probability={stop_probability} hors de ]0, 1[")
    log_stop = np.log(stop_probability)
    limit = stop_M if stop_M is not None else max_M

    rounds: List[RoundSummary] = []
    for index in range(n_rounds):
        log_P, M = 0.0, 0
        while M < limit and (stop_M is not None or log_P > log_stop):
            rho, log_p = step_conditioned(rho, prop)
            log_P += log_p
            M += 1
        summary = RoundSummary(index=index, M_stop=M, log_P=log_P, expected_Iz=expected_Iz(rho))
        rounds.append(summary)
        logger.debug(
            f"Manche {index} : M={M}, P={np.exp(log_P):.4g}, ⟨I_z⟩={summary.expected_Iz:.6f}"
        )
    return rounds


@dataclass(frozen=True)
class StreakPolicy:
    """
    Politique de la boucle injection-mesure-redémarrage.

    Attributes:
        max_attempts: Nombre maximal de mesures
        target_streak: Succès consécutifs visés
        on_failure: "reuse" garde l'état mis à jour par W, "reset" repart de l'état initial
    """

    max_attempts: int = 1000
    target_streak: int = 50
    on_failure: str = "reuse"

    def __post_init__(self) -> None:
        if self.max_attempts < 1 or self.target_streak < 1:
            raise DomainError("max_attempts et target_streak doivent être >= 1")
        if self.on_failure not in ("reuse", "reset"):
            raise DomainError(f"on_failure inconnu: {self.on_failure}")


@dataclass
class TrajectoryRecord:
    """Trajectoire de mesures échantillonnée."""

    seed: int
    outcomes: str
    restarts: int
    streak_lengths: List[int]
    final_expected_Iz: float
    reached_target: bool
    expected_Iz_history: List[float] = field(default_factory=list)

    @property
    def attempts(self) -> int:
        return len(self.outcomes)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def run_trajectory(
    rho: BlockedDensity,
    prop: ConditionedPropagator,
    seed: int,
    policy: StreakPolicy = StreakPolicy(),
) -> TrajectoryRecord:
    """
    Échantillonne une suite de mesures « u » (haut) et « d » (bas).

    Après un « d », l'électron est écarté et un nouvel électron est injecté à
    t = 0 ; la série de succès repart de zéro.

    Args:
        rho: Densité initiale
        prop: Propagateur avec blocs W
        seed: Graine 64 bits, détermine entièrement la trajectoire
        policy: Politique de série et d'échec

    Raises:
        NumericalError: les deux branches ont une probabilité nulle
    """
    _check_compatible(rho, prop)
    rng = np.random.default_rng(seed)
    initial = rho
    outcomes: List[str] = []
    streaks: List[int] = []
    history = [expected_Iz(rho)]
    streak = restarts = 0

    for _ in range(policy.max_attempts):
        rho_up, log_up = _apply_branch(rho, prop.V, 0)
        if rho_up is not None and rng.random() < np.exp(log_up):
            rho = rho_up
            outcomes.append("u")
            streak += 1
            PROTOCOL_STEPS.labels(branch="up").inc()
        else:
            rho_down, _ = step_failed(rho, prop)
            if rho_down is None:
                if rho_up is None:
                    raise NumericalError("Probabilité nulle sur les deux branches de mesure")
                # Branche bas impossible : le tirage au-delà de p est un arrondi
                rho = rho_up
                outcomes.append("u")
                streak += 1
            else:
                outcomes.append("d")
                streaks.append(streak)
                streak = 0
                restarts += 1
                rho = rho_down if policy.on_failure == "reuse" else initial
        history.append(expected_Iz(rho))
        if streak >= policy.target_streak:
            break

    streaks.append(streak)
    reached = streak >= policy.target_streak
    TRAJECTORIES.labels(status="success" if reached else "exhausted").inc()
    if not reached:
        logger.warning(
            f"Trajectoire seed={seed} : cible non atteinte en {policy.max_attempts} mesures"
        )
    return TrajectoryRecord(
        seed=int(seed),
        outcomes="".join(outcomes),
        restarts=restarts,
        streak_lengths=streaks,
        final_expected_Iz=history[-1],
        reached_target=reached,
        expected_Iz_history=history,
    )


def spawn_seeds(seed: int, n: int) -> List[int]:
    """Graines 64 bits indépendantes dérivées par SeedSequence.spawn."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def _trajectory_worker(
    payload: Tuple[BlockedDensity, ConditionedPropagator, int, StreakPolicy]
) -> TrajectoryRecord:
    rho, prop, seed, policy = payload
    return run_trajectory(rho, prop, seed, policy)


@dataclass
class EnsembleSummary:
    """Résumé d'un ensemble de copies indépendantes."""

    seed: int
    n_trajectories: int
    successes: int
    mean_final_Iz: float
    stderr_final_Iz: float
    records: List[TrajectoryRecord] = field(default_factory=list)

    @property
    def success_fraction(self) -> float:
        return self.successes / self.n_trajectories

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "n_trajectories": self.n_trajectories,
            "successes": self.successes,
            "success_fraction": self.success_fraction,
            "mean_final_Iz": self.mean_final_Iz,
            "stderr_final_Iz": self.stderr_final_Iz,
            "trajectories": [r.to_dict() for r in self.records],
        }


def run_ensemble(
    rho: BlockedDensity,
    prop: ConditionedPropagator,
    seed: int,
    n_trajectories: int,
    policy: StreakPolicy = StreakPolicy(),
    n_jobs: int = 1,
) -> EnsembleSummary:
    """
    Lance n_trajectories copies indépendantes.

    Args:
        rho: Densité initiale commune
        prop: Propagateur partagé (lecture seule)
        seed: Graine racine
        n_trajectories: Nombre de copies
        policy: Politique de série
        n_jobs: Nombre de processus (-1 = tous les cœurs, 1 = séquentiel)

    Returns:
        EnsembleSummary: résultats dans l'ordre des graines dérivées
    """
    if n_trajectories < 1:
        raise DomainError("n_trajectories doit être >= 1")
    payloads = [(rho, prop, s, policy) for s in spawn_seeds(seed, n_trajectories)]

    with timed("ensemble"):
        if n_jobs == 1:
            records = [_trajectory_worker(p) for p in payloads]
        else:
            with ProcessPoolExecutor(max_workers=resolve_jobs(n_jobs)) as executor:
                records = list(executor.map(_trajectory_worker, payloads))

    finals = np.array([r.final_expected_Iz for r in records])
    stderr = float(finals.std(ddof=1) / np.sqrt(len(finals))) if len(finals) > 1 else 0.0
    summary = EnsembleSummary(
        seed=seed,
        n_trajectories=n_trajectories,
        successes=sum(r.reached_target for r in records),
        mean_final_Iz=float(finals.mean()),
        stderr_final_Iz=stderr,
        records=records,
    )
    logger.info(
        f"Ensemble de {n_trajectories} trajectoires : {summary.successes} succès, "
        f"⟨I_z⟩ final moyen {summary.mean_final_Iz:.6f} ± {stderr:.2g}"
    )
    return summary
