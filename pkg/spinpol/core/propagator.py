"""
Propagateur conditionné V(τ) et partenaire de Kraus W(τ).

Chaque secteur J_z est exponentié par décomposition spectrale hermitienne ;
V_{I_z} est le coin haut-haut de exp(-iH_Jτ) (I_z = J - 1/2) et W_{I_z} le coin
bas-haut, qui envoie le secteur I_z sur I_z + 1.

Ce module fournit aussi les spectres non hermitiens de V, les formes
analytiques de la limite flip-flop et le contrôle des moments de ⟨↑|H^n|↑⟩.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Any, Callable, Dict, Iterable, List, NamedTuple, Optional, Tuple, TypeVar

import numpy as np
from scipy import linalg

from spinpol.core.errors import CapacityError, DomainError, NumericalError
from spinpol.core.hamiltonian import (
    SectorHamiltonian,
    SystemParams,
    build_sector_hamiltonian,
    collective_lowering,
    nuclear_diagonal,
    sector_range,
)
from spinpol.core.monitoring.metrics import SECTORS_BUILT, timed
from spinpol.core.spinspace import SectorIndex, enumerate_sector, max_sector_pair_dimension

logger = logging.getLogger(__name__)

# Constante c du cosinus cos(c𝒜τ√h) pour des éléments d'échelle unité
COSINE_CONSTANT = 0.5

DEFAULT_DIM_CAP = 4096
DEGENERACY_THRESHOLD = 1e-9
NULL_THRESHOLD = 1e-10
MAX_MOMENT_ORDER = 6

T = TypeVar("T")
R = TypeVar("R")


def resolve_jobs(n_jobs: int) -> int:
    """Nombre de workers : -1 (ou 0) = tous les cœurs disponibles."""
    return n_jobs if n_jobs > 0 else (os.cpu_count() or 1)


def map_sectors(fn: Callable[[T], R], items: Iterable[T], n_jobs: int = 1) -> List[R]:
    """
    Applique fn à chaque élément, en parallèle si n_jobs != 1.

    LAPACK relâche le GIL, un pool de threads suffit. L'ordre des résultats
    suit celui des entrées.
    """
    items = list(items)
    if n_jobs == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=resolve_jobs(n_jobs)) as executor:
        return list(executor.map(fn, items))


def check_capacity(K: int, max_dim: int = DEFAULT_DIM_CAP) -> int:
    """Vérifie que le plus grand secteur J_z reste sous le plafond du mode exact."""
    largest = max_sector_pair_dimension(K)
    if largest > max_dim:
        raise CapacityError(
            f"K={K} donne des secteurs de dimension {largest} > {max_dim} ; "
            f"utiliser le modèle diagonal (modes largek)"
        )
    return largest


def _eigh(H: SectorHamiltonian) -> Tuple[np.ndarray, np.ndarray]:
    try:
        return linalg.eigh(H.matrix)
    except (linalg.LinAlgError, ValueError) as e:
        raise NumericalError(f"Échec de eigh sur le secteur J={H.J_times2}/2: {e}") from e


def evolve_sector(H: SectorHamiltonian, tau: float) -> np.ndarray:
    """
    Calcule U = exp(-iHτ) par décomposition spectrale.

    Args:
        H: Hamiltonien de secteur (hermitien)
        tau: Durée d'évolution

    Returns:
        np.ndarray: matrice unitaire du secteur

    Raises:
        NumericalError: échec du solveur propre
    """
    energies, vectors = _eigh(H)
    return (vectors * np.exp(-1j * energies * tau)) @ vectors.conj().T


def sector_energies(params: SystemParams, n_jobs: int = 1) -> Dict[int, np.ndarray]:
    """Énergies propres de chaque secteur, indexées par J_times2."""
    check_capacity(params.K)

    def energies(J_times2: int) -> np.ndarray:
        return _eigh(build_sector_hamiltonian(params, J_times2))[0]

    J_values = list(sector_range(params))
    return dict(zip(J_values, map_sectors(energies, J_values, n_jobs)))


@dataclass(frozen=True, eq=False)
class ConditionedPropagator:
    """Blocs V_{I_z} (haut-haut) et W_{I_z} (bas-haut) par secteur nucléaire."""

    K: int
    tau: float
    V: Dict[int, np.ndarray]
    W: Optional[Dict[int, np.ndarray]] = None

    @property
    def sectors(self) -> List[int]:
        """Valeurs de two_Iz couvertes, croissantes."""
        return sorted(self.V)

    @property
    def top_phase(self) -> complex:
        """Phase e^{-iE_{J_m}τ} du secteur totalement polarisé."""
        return complex(self.V[self.K][0, 0])

    @property
    def has_kraus_partner(self) -> bool:
        return self.W is not None

    def kraus_defect(self) -> float:
        """max ‖V†V + W†W - 1‖ sur tous les secteurs."""
        if self.W is None:
            raise DomainError("Propagateur sans blocs W")
        defect = 0.0
        for two_Iz, V in self.V.items():
            W = self.W[two_Iz]
            total = V.conj().T @ V + W.conj().T @ W
            defect = max(defect, float(np.max(np.abs(total - np.eye(len(V))))))
        return defect

    def max_singular_value(self) -> float:
        return max(float(linalg.svdvals(V)[0]) for V in self.V.values() if V.size)

    @classmethod
    def from_blocks(
        cls,
        K: int,
        tau: float,
        V: Dict[int, np.ndarray],
        W: Optional[Dict[int, np.ndarray]] = None,
    ) -> "ConditionedPropagator":
        """Construit un propagateur à partir de blocs fournis (modèles imposés)."""
        missing = {two_Iz for two_Iz in range(-K, K + 1, 2)} - set(V)
        if missing:
            raise DomainError(f"Blocs V manquants pour two_Iz={sorted(missing)}")
        for two_Iz, block in V.items():
            d = enumerate_sector(SectorIndex(K, two_Iz)).dim
            if np.shape(block) != (d, d):
                raise DomainError(f"Bloc V de forme {np.shape(block)} pour two_Iz={two_Iz}")
        return cls(K=K, tau=tau, V=dict(V), W=dict(W) if W is not None else None)


def _corners(H: SectorHamiltonian, tau: float) -> Tuple[int, np.ndarray, np.ndarray]:
    U = evolve_sector(H, tau)
    d_up = H.d_up
    two_Iz = H.J_times2 - 1
    return two_Iz, U[:d_up, :d_up], U[d_up:, :d_up]


def conditioned_blocks(
    params: SystemParams,
    tau: float,
    n_jobs: int = 1,
    max_dim: int = DEFAULT_DIM_CAP,
) -> ConditionedPropagator:
    """
    Construit V(τ) et W(τ) secteur par secteur.

    Args:
        params: Paramètres du système
        tau: Intervalle entre deux mesures
        n_jobs: Nombre de threads (-1 = tous les cœurs, 1 = séquentiel)
        max_dim: Plafond de dimension d'un secteur J_z

    Returns:
        ConditionedPropagator: blocs immuables, partageables entre workers

    Raises:
        CapacityError: secteur au-delà du plafond
        NumericalError: échec de diagonalisation
    """
    largest = check_capacity(params.K, max_dim)
    # J = -J_m n'a pas de bloc électron haut
    J_values = [J for J in sector_range(params) if J - 1 >= -params.K]
    logger.info(
        f"Construction de V(τ={tau:g}) : K={params.K}, {len(J_values)} secteurs, "
        f"dimension max {largest}"
    )

    def build(J_times2: int) -> Tuple[int, np.ndarray, np.ndarray]:
        result = _corners(build_sector_hamiltonian(params, J_times2), tau)
        SECTORS_BUILT.labels(stage="propagator").inc()
        return result

    with timed("propagator"):
        corners = map_sectors(build, J_values, n_jobs)

    V = {two_Iz: block for two_Iz, block, _ in corners}
    W = {two_Iz: block for two_Iz, _, block in corners}
    return ConditionedPropagator(K=params.K, tau=tau, V=V, W=W)


@dataclass
class SectorSpectrum:
    """Spectre de V sur un secteur."""

    two_Iz: int
    eigenvalues: np.ndarray
    moduli: np.ndarray
    degenerate_count: int
    is_top: bool = False

    @property
    def degenerate(self) -> bool:
        """Vrai si un bloc non polarisé a une valeur propre de module 1."""
        return not self.is_top and self.degenerate_count > 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sector_two_Iz": self.two_Iz,
            "eigen_moduli": [float(m) for m in self.moduli],
            "degenerate_count": self.degenerate_count,
        }


@dataclass
class SpectralReport:
    """Modules des valeurs propres de V par secteur et drapeaux de dégénérescence."""

    threshold: float
    sectors: List[SectorSpectrum] = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return any(s.degenerate for s in self.sectors)

    @property
    def max_nontop_modulus(self) -> float:
        moduli = [float(s.moduli[0]) for s in self.sectors if not s.is_top and len(s.moduli)]
        return max(moduli, default=0.0)

    @property
    def spectral_gap(self) -> float:
        """1 - plus grand module hors secteur polarisé."""
        return 1.0 - self.max_nontop_modulus

    def sector(self, two_Iz: int) -> SectorSpectrum:
        for spectrum in self.sectors:
            if spectrum.two_Iz == two_Iz:
                return spectrum
        raise DomainError(f"Secteur two_Iz={two_Iz} absent du rapport")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "threshold": self.threshold,
            "degenerate": self.degenerate,
            "spectral_gap": self.spectral_gap,
            "sectors": [
                {**s.to_dict(), "threshold": self.threshold} for s in self.sectors
            ],
        }


def spectral_report(
    prop: ConditionedPropagator, threshold: float = DEGENERACY_THRESHOLD
) -> SpectralReport:
    """
    Valeurs propres (non hermitiennes) de chaque bloc V_{I_z}.

    Args:
        prop: Propagateur conditionné
        threshold: Seuil sur 1 - |v| pour compter une valeur propre de module 1

    Returns:
        SpectralReport: modules triés par ordre décroissant

    Raises:
        NumericalError: non-convergence du solveur
    """
    report = SpectralReport(threshold=threshold)
    for two_Iz in prop.sectors:
        try:
            eigenvalues = linalg.eigvals(prop.V[two_Iz])
        except (linalg.LinAlgError, ValueError) as e:
            raise NumericalError(f"Échec de eigvals sur two_Iz={two_Iz}: {e}") from e
        order = np.argsort(-np.abs(eigenvalues), kind="stable")
        eigenvalues = eigenvalues[order]
        moduli = np.abs(eigenvalues)
        spectrum = SectorSpectrum(
            two_Iz=two_Iz,
            eigenvalues=eigenvalues,
            moduli=moduli,
            degenerate_count=int(np.sum(moduli >= 1.0 - threshold)),
            is_top=two_Iz == prop.K,
        )
        if spectrum.degenerate:
            logger.debug(
                f"Secteur two_Iz={two_Iz} : {spectrum.degenerate_count} valeur(s) "
                f"propre(s) de module 1"
            )
        report.sectors.append(spectrum)
    return report


class NumberOperators(NamedTuple):
    """h₀ = A₊A₋ et h = A₋A₊ restreints à un secteur."""

    h0: np.ndarray
    h: np.ndarray


def _raising(params: SystemParams, sector: SectorIndex) -> np.ndarray:
    """A₊ du secteur I_z vers I_z + 1 (zéro ligne pour le secteur polarisé)."""
    basis = enumerate_sector(sector)
    above = sector.shifted(+1)
    if above is None:
        return np.zeros((0, basis.dim), dtype=complex)
    return collective_lowering(params.alphas, enumerate_sector(above), basis).conj().T


def _lowering(params: SystemParams, sector: SectorIndex) -> np.ndarray:
    basis = enumerate_sector(sector)
    below = sector.shifted(-1)
    if below is None:
        return np.zeros((0, basis.dim), dtype=complex)
    return collective_lowering(params.alphas, basis, enumerate_sector(below))


def collective_number_operators(params: SystemParams, sector: SectorIndex) -> NumberOperators:
    """Construit h₀ = A₊A₋ et h = A₋A₊ sur le secteur donné."""
    Ap = _raising(params, sector)
    Am = _lowering(params, sector)
    return NumberOperators(h0=Am.conj().T @ Am, h=Ap.conj().T @ Ap)


def _diagonal_scalars(params: SystemParams, sector: SectorIndex) -> Tuple[float, float]:
    """Énergies scalaires (haut sur I_z, bas sur I_z + 1) hors flip-flop."""
    if params.overhauser and not params.is_homogeneous:
        raise DomainError(
            "Forme analytique limitée au couplage homogène quand le terme Overhauser est actif"
        )
    alpha = params.alphas[0] if params.K else 0.0
    overhauser = params.hyperfine_A * alpha if params.overhauser else 0.0
    Iz_up, Iz_down = sector.Iz, sector.Iz + 1
    ez, nz = params.electron_zeeman, params.nuclear_zeeman
    up = 0.5 * ez + nz * Iz_up + 0.5 * overhauser * Iz_up
    down = -0.5 * ez + nz * Iz_down - 0.5 * overhauser * Iz_down
    return up, down


def analytic_flipflop_v(params: SystemParams, tau: float, sector: SectorIndex) -> np.ndarray:
    """
    Forme fermée de V_{I_z}(τ) quand les blocs diagonaux sont scalaires.

    Avec a (haut) et b (bas) les énergies diagonales, μ = (a+b)/2,
    δ = (a-b)/2 et Λ = √(δ² + (𝒜/2)² h), h = A₋A₊ :

        V = e^{-iμτ} [cos(τΛ) - iδ sin(τΛ)/Λ]

    qui se réduit à cos(c𝒜τ√h) e^{-iμτ} pour δ = 0 (c = 1/2).

    Raises:
        DomainError: H_nuc non nul, ou couplage inhomogène avec terme Overhauser
    """
    if not params.hnuc.is_none:
        raise DomainError("La forme flip-flop analytique exige H_nuc = none")
    up, down = _diagonal_scalars(params, sector)
    if sector.is_top:
        return np.array([[np.exp(-1j * up * tau)]])

    h = collective_number_operators(params, sector).h
    lam, Q = linalg.eigh(h)
    lam = np.clip(lam, 0.0, None)
    mu, delta = 0.5 * (up + down), 0.5 * (up - down)
    Lambda = np.sqrt(delta**2 + (COSINE_CONSTANT * params.hyperfine_A) ** 2 * lam)
    # sin(τΛ)/Λ = τ sinc(τΛ/π), fini en Λ = 0
    values = np.exp(-1j * mu * tau) * (
        np.cos(tau * Lambda) - 1j * delta * tau * np.sinc(tau * Lambda / np.pi)
    )
    return (Q * values) @ Q.conj().T


def dark_states(params: SystemParams, sector: SectorIndex) -> np.ndarray:
    """
    Base orthonormée du noyau de A₊ restreint au secteur.

    Returns:
        np.ndarray: matrice (d, n) dont les colonnes sont les états noirs
    """
    Ap = _raising(params, sector)
    d = Ap.shape[1]
    if Ap.shape[0] == 0:
        return np.eye(d, dtype=complex)
    _, s, vh = linalg.svd(Ap, full_matrices=True)
    rank = int(np.sum(s > NULL_THRESHOLD))
    return vh[rank:].conj().T


def moment_check(
    params: SystemParams, n: int, J_times2: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Compare ⟨↑|H^n|↑⟩ calculé directement et reconstruit par chemins.

    La reconstruction somme, sur tous les chemins haut/bas de longueur n
    partant et revenant en haut, les produits de ℋ_↑, ℋ_↓ et des facteurs
    de flip-flop (𝒜/2)A₋ et (𝒜/2)A₊.

    Args:
        params: Paramètres du système
        n: Ordre du moment (1 <= n <= 6)
        J_times2: Secteur J_z

    Returns:
        Tuple[np.ndarray, np.ndarray]: (direct, reconstruit)
    """
    if not 1 <= n <= MAX_MOMENT_ORDER:
        raise DomainError(f"moment_check limité à 1 <= n <= {MAX_MOMENT_ORDER} (reçu {n})")
    H = build_sector_hamiltonian(params, J_times2)
    if H.up_basis is None:
        raise DomainError(f"Le secteur J={J_times2}/2 n'a pas de bloc électron haut")
    direct = np.linalg.matrix_power(H.matrix, n)[: H.d_up, : H.d_up]

    up = nuclear_diagonal(params, H.up_basis, +0.5)
    if H.down_basis is None:
        return direct, np.linalg.matrix_power(up, n)

    down = nuclear_diagonal(params, H.down_basis, -0.5)
    Am = COSINE_CONSTANT * params.hyperfine_A * collective_lowering(
        params.alphas, H.down_basis, H.up_basis
    )
    blocks = {(0, 0): up, (0, 1): Am, (1, 0): Am.conj().T, (1, 1): down}

    reconstructed = np.zeros_like(up)
    for middle in product((0, 1), repeat=n - 1):
        path = (0, *middle, 0)
        term = np.eye(len(up), dtype=complex)
        for step in zip(path[:-1], path[1:]):
            term = term @ blocks[step]
        reconstructed += term
    return direct, reconstructed


def generic_tau(
    params: SystemParams,
    seed: Optional[int] = None,
    tau_max: Optional[float] = None,
    margin: float = 1e-6,
    max_draws: int = 1000,
) -> float:
    """
    Tire un τ générique : aucun |cos(c𝒜τ√λ)| ne s'approche de 1 pour λ > 0.

    Args:
        params: Paramètres du système (petit K)
        seed: Graine du générateur
        tau_max: Borne supérieure du tirage (10/𝒜 par défaut)
        margin: Distance minimale de |cos| à 1
        max_draws: Nombre maximal de tirages

    Raises:
        NumericalError: aucun τ acceptable trouvé
    """
    check_capacity(params.K)
    tau_max = tau_max if tau_max is not None else 10.0 / params.hyperfine_A
    spectrum = np.concatenate(
        [
            linalg.eigvalsh(collective_number_operators(params, s).h)
            for s in (SectorIndex(params.K, t) for t in range(-params.K, params.K, 2))
        ]
        or [np.zeros(0)]
    )
    roots = np.sqrt(spectrum[spectrum > NULL_THRESHOLD])

    rng = np.random.default_rng(seed)
    for _ in range(max_draws):
        tau = float(rng.uniform(0.0, tau_max))
        if tau == 0.0:
            continue
        phases = np.cos(COSINE_CONSTANT * params.hyperfine_A * tau * roots)
        if not np.any(np.abs(phases) > 1.0 - margin):
            return tau
    raise NumericalError(f"Aucun τ générique trouvé en {max_draws} tirages")
