"""
Modèle diagonal moyen pour les grands K.

Toutes les valeurs propres de V hors du secteur polarisé sont remplacées par
une constante V̄ < 1, le secteur polarisé gardant V_top = 1. Les sommes sur les
K+1 secteurs sont évaluées exactement en logarithme, sans approximation de
col, ce qui reste rapide jusqu'à K = 10⁶.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from spinpol.core.errors import DomainError
from spinpol.core.hamiltonian import SystemParams, check_unitary, mode_lowering, mode_matrix
from spinpol.core.propagator import COSINE_CONSTANT, ConditionedPropagator
from spinpol.core.protocol import ProtocolRecord, RoundSummary
from spinpol.core.spinspace import SectorIndex, enumerate_sector
from spinpol.core.states import log_weight_array

logger = logging.getLogger(__name__)

MODEL_NAME = "diagonal-average"
MAX_DOUBLINGS = 60


@dataclass(frozen=True)
class DiagonalModelParams:
    """Paramètres du modèle diagonal : V̄ hors secteur polarisé, V_top = 1."""

    K: int
    a: float
    Vbar: float
    V_top: float = 1.0

    def __post_init__(self) -> None:
        if self.K < 0:
            raise DomainError(f"K doit être positif ou nul (reçu {self.K})")
        if not 0.0 <= self.a <= 1.0:
            raise DomainError(f"a={self.a} hors de [0, 1]")
        if not 0.0 < self.Vbar < 1.0:
            raise DomainError(f"Vbar={self.Vbar} hors de ]0, 1[")
        if not self.Vbar < self.V_top <= 1.0:
            raise DomainError(f"V_top={self.V_top} doit vérifier Vbar < V_top <= 1")

    def residual(self) -> Tuple["DiagonalModelParams", float]:
        """
        Sous-système dynamique de l'état inégal et son décalage gelé.

        Returns:
            Tuple: ((1-a)K spins thermiques, aK/2)
        """
        n_frozen = round(self.a * self.K)
        if abs(self.a * self.K - n_frozen) > 1e-9:
            raise DomainError(f"aK={self.a * self.K} n'est pas entier")
        residual = DiagonalModelParams(K=self.K - n_frozen, a=0.5, Vbar=self.Vbar, V_top=self.V_top)
        return residual, n_frozen / 2


class _SectorTable(NamedTuple):
    log_c: np.ndarray
    Iz: np.ndarray
    log_v2: np.ndarray


def _table(params: DiagonalModelParams) -> _SectorTable:
    log_c = log_weight_array(params.K, params.a)
    Iz = np.arange(params.K + 1) - params.K / 2
    log_v2 = np.full(params.K + 1, 2.0 * np.log(params.Vbar))
    log_v2[-1] = 2.0 * np.log(params.V_top)
    return _SectorTable(log_c, Iz, log_v2)


def _evaluate(table: _SectorTable, M: float) -> Tuple[float, float]:
    terms = table.log_c + M * table.log_v2
    log_P = float(logsumexp(terms))
    weights = np.exp(terms - log_P)
    return float(np.dot(weights, table.Iz)), log_P


def diagonal_expectation(
    params: DiagonalModelParams, M: int, frozen_offset: float = 0.0
) -> Tuple[float, float]:
    """
    ⟨I_z⟩_M et ln P_M du modèle diagonal.

    ⟨I_z⟩_M = [c_top K/2 + V̄^{2M} Σ_{I_z<K/2} c I_z] / P_M,
    P_M = c_top + V̄^{2M}(1 - c_top).

    Args:
        params: Paramètres du modèle
        M: Nombre de mesures réussies
        frozen_offset: Contribution des spins gelés

    Returns:
        Tuple[float, float]: (⟨I_z⟩_M, ln P_M)
    """
    if M < 0:
        raise DomainError(f"M doit être >= 0 (reçu {M})")
    expected, log_P = _evaluate(_table(params), M)
    return expected + frozen_offset, log_P


def diagonal_series(
    params: DiagonalModelParams,
    M_max: int,
    frozen_offset: float = 0.0,
    fingerprint: Optional[str] = None,
) -> ProtocolRecord:
    """Série M = 0..M_max du modèle diagonal, au format ProtocolRecord."""
    table = _table(params)
    points = [_evaluate(table, M) for M in range(M_max + 1)]
    return ProtocolRecord.from_series(
        [e + frozen_offset for e, _ in points],
        [p for _, p in points],
        K_total=params.K + 2 * frozen_offset,
        model=MODEL_NAME,
        fingerprint=fingerprint,
    )


def _smallest_M(reached: Callable[[int], bool]) -> int:
    """Plus petit M vérifiant un prédicat monotone (doublement puis bissection)."""
    if reached(0):
        return 0
    lo, hi = 0, 1
    for _ in range(MAX_DOUBLINGS):
        if reached(hi):
            break
        lo, hi = hi, 2 * hi
    else:
        raise DomainError("Seuil de polarisation inatteignable dans ce modèle")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if reached(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _check_theta(theta: float) -> None:
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta={theta} hors de ]0, 1[")


def required_M(params: DiagonalModelParams, theta: float) -> int:
    """
    Plus petit M tel que ⟨I_z⟩_M >= θ K/2.

    Args:
        params: Paramètres du modèle
        theta: Fraction de polarisation visée, 0 < θ < 1

    Returns:
        int: nombre de mesures réussies nécessaires
    """
    _check_theta(theta)
    table = _table(params)
    target = theta * params.K / 2
    M = _smallest_M(lambda m: _evaluate(table, m)[0] >= target)
    logger.info(f"Modèle diagonal K={params.K}, a={params.a}, V̄={params.Vbar} : M requis = {M}")
    return M


def required_M_uneven(params: DiagonalModelParams, theta: float) -> int:
    """
    M requis pour l'état inégal : aK spins gelés, (1-a)K spins thermiques.

    Le seuil porte sur le total : aK/2 + ⟨I_z⟩'_M >= θ K/2.
    """
    _check_theta(theta)
    residual, offset = params.residual()
    if residual.K == 0:
        return 0
    table = _table(residual)
    target = theta * params.K / 2 - offset
    M = _smallest_M(lambda m: _evaluate(table, m)[0] >= target)
    logger.info(
        f"Modèle diagonal inégal K={params.K} ({residual.K} spins résiduels) : M requis = {M}"
    )
    return M


class AsymptoticEstimate(NamedTuple):
    """Estimations analytiques de M requis (continues, non arrondies)."""

    leading: float
    refined: float


def asymptotic_required_M(params: DiagonalModelParams, theta: float) -> AsymptoticEstimate:
    """
    Formes fermées de M requis.

    leading = ln c_top / (2 ln V̄)
    refined = ln[c_top (1-θ) K/2 / (θ K/2 (1 - c_top) - S)] / (2 ln V̄)

    où S = Σ_{I_z<K/2} c I_z ; refined résout exactement le rapport à deux
    termes, donc required_M = ⌈refined⌉.
    """
    _check_theta(theta)
    if params.V_top != 1.0:
        raise DomainError("Formes asymptotiques établies pour V_top = 1")
    log_c_top = float(log_weight_array(params.K, params.a)[-1])
    two_log_v = 2.0 * np.log(params.Vbar)
    half = params.K / 2
    c_top = math.exp(log_c_top)
    rest = params.K * (params.a - 0.5) - c_top * half
    denominator = theta * half * (1.0 - c_top) - rest
    if not np.isfinite(log_c_top) or denominator <= 0.0:
        refined = 0.0 if denominator <= 0.0 else np.inf
    else:
        log_x = log_c_top + np.log1p(-theta) + np.log(half) - np.log(denominator)
        refined = max(0.0, log_x / two_log_v)
    return AsymptoticEstimate(leading=log_c_top / two_log_v, refined=float(refined))


def diagonal_rounds(
    params: DiagonalModelParams,
    n_rounds: int,
    stop_probability: float = 0.1,
    max_M: int = 1_000_000,
) -> List[RoundSummary]:
    """
    Manches successives du modèle diagonal, chacune arrêtée quand sa
    probabilité de succès atteint stop_probability.
    """
    if not 0.0 < stop_probability < 1.0:
        raise DomainError(f"stop_probability={stop_probability} hors de ]0, 1[")
    log_stop = np.log(stop_probability)
    table = _table(params)
    log_w = table.log_c.copy()

    rounds: List[RoundSummary] = []
    for index in range(n_rounds):
        M, log_P = 0, 0.0
        while M < max_M and log_P > log_stop:
            M += 1
            log_P = float(logsumexp(log_w + M * table.log_v2))
        log_w = log_w + M * table.log_v2 - log_P
        expected = float(np.dot(np.exp(log_w), table.Iz))
        rounds.append(RoundSummary(index=index, M_stop=M, log_P=log_P, expected_Iz=expected))
        logger.debug(f"Manche diagonale {index} : M={M}, ⟨I_z⟩={expected:.6f}")
    return rounds


def diagonal_propagator(K: int, Vbar: float, tau: float = 1.0) -> ConditionedPropagator:
    """Propagateur imposé V = V̄·1 hors secteur polarisé, V_top = 1 (sans blocs W)."""
    V = {}
    for two_Iz in range(-K, K + 1, 2):
        d = enumerate_sector(SectorIndex(K, two_Iz)).dim
        scale = 1.0 if two_Iz == K else Vbar
        V[two_Iz] = scale * np.eye(d, dtype=complex)
    return ConditionedPropagator.from_blocks(K, tau, V)


def bosonic_eigenvalue(n0: int, A: float, tau: float, c: float = COSINE_CONSTANT) -> float:
    """
    Valeur propre v_{n₀}(τ) = cos(c𝒜τ√n₀) du mode collectif occupé n₀ fois.

    Raises:
        DomainError: n0 négatif
    """
    if n0 < 0:
        raise DomainError(f"n0 doit être >= 0 (reçu {n0})")
    return float(np.cos(c * A * tau * np.sqrt(n0)))


def fourier_modes(alphas: np.ndarray) -> np.ndarray:
    """Modes de Fourier délocalisés ; la ligne 0 est le mode collectif homogène."""
    K = len(alphas)
    modes = linalg.dft(K) / np.sqrt(K)
    modes[0] = alphas
    return modes


def boson_commutator_residual(
    params: SystemParams, sector: SectorIndex, modes: Optional[np.ndarray] = None
) -> float:
    """
    max_{k,k'} ‖[A_{k+}, A_{k'-}] - δ_{kk'}‖ sur le secteur.

    Mesure la validité de la bosonisation : nul sur le secteur polarisé,
    d'ordre 1/K près de la polarisation complète et d'ordre 1 en I_z = 0.

    Args:
        params: Paramètres du système (couplages α)
        sector: Secteur I_z
        modes: Matrice unitaire des modes ; par défaut modes de Fourier si le
            couplage est homogène, complétion orthogonale sinon
    """
    alphas = params.alpha_array
    if modes is None:
        modes = fourier_modes(alphas) if params.is_homogeneous else mode_matrix(alphas)
    modes = check_unitary(modes)

    basis = enumerate_sector(sector)
    below, above = sector.shifted(-1), sector.shifted(+1)
    below_basis = enumerate_sector(below) if below is not None else None
    above_basis = enumerate_sector(above) if above is not None else None

    def lower_from_here(k: int) -> np.ndarray:
        # A_{k-} : secteur -> secteur - 1
        if below_basis is None:
            return np.zeros((0, basis.dim), dtype=complex)
        return mode_lowering(modes, k, basis, below_basis, alphas)

    def lower_into_here(k: int) -> np.ndarray:
        # A_{k-} : secteur + 1 -> secteur
        if above_basis is None:
            return np.zeros((basis.dim, 0), dtype=complex)
        return mode_lowering(modes, k, above_basis, basis, alphas)

    K = params.K
    down = [lower_from_here(k) for k in range(K)]
    into = [lower_into_here(k) for k in range(K)]
    identity = np.eye(basis.dim)
    residual = 0.0
    for k in range(K):
        for kp in range(K):
            commutator = down[k].conj().T @ down[kp] - into[kp] @ into[k].conj().T
            deviation = commutator - (identity if k == kp else 0.0)
            residual = max(residual, float(np.linalg.norm(deviation, 2)))
    return residual
