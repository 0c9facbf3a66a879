"""
États initiaux nucléaires sous forme de somme directe par secteur I_z.

Les poids c(I_z, a) sont toujours stockés en logarithme : pour K = 10³ certains
secteurs pèsent ~10⁻⁹⁷ et pour K = 10⁵ les coefficients binomiaux dépassent
toute représentation flottante.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, xlogy

from spinpol.core.errors import CapacityError, DomainError, NumericalError
from spinpol.core.spinspace import SectorIndex, enumerate_sector, log_binomial, sector_dimension

logger = logging.getLogger(__name__)

# exp(-745) est le plus petit double sous-normal
LOG_WEIGHT_FLOOR = -745.0
DENSITY_TOL = 1e-10
DEFAULT_BLOCK_CAP = 4096


@dataclass(frozen=True, eq=False)
class DensityBlock:
    """Bloc de densité normalisé (trace 1) d'un secteur et son log-poids."""

    two_Iz: int
    log_weight: float
    block: np.ndarray

    @property
    def Iz(self) -> float:
        return self.two_Iz / 2

    @property
    def weight(self) -> float:
        return float(np.exp(self.log_weight))


@dataclass(frozen=True, eq=False)
class BlockedDensity:
    """
    Matrice densité nucléaire ρ = Σ⊕ c(I_z) ρ^{I_z}.

    Attributes:
        K: Nombre de spins dynamiques
        blocks: Blocs par secteur, two_Iz croissant
        frozen_offset: Contribution à I_z des spins exclus de la dynamique
    """

    K: int
    blocks: Tuple[DensityBlock, ...]
    frozen_offset: float = 0.0

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.blocks, key=lambda b: b.two_Iz))
        object.__setattr__(self, "blocks", ordered)

    def __iter__(self) -> Iterator[DensityBlock]:
        return iter(self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def sectors(self) -> List[int]:
        return [b.two_Iz for b in self.blocks]

    @property
    def log_weights(self) -> np.ndarray:
        return np.array([b.log_weight for b in self.blocks])

    def block_for(self, two_Iz: int) -> Optional[DensityBlock]:
        for block in self.blocks:
            if block.two_Iz == two_Iz:
                return block
        return None

    def log_norm(self) -> float:
        """log Σ c(I_z) ; nul pour un état normalisé."""
        if not self.blocks:
            return -np.inf
        return float(logsumexp(self.log_weights))

    def validate(self, tol: float = DENSITY_TOL) -> None:
        """
        Vérifie la normalisation et la positivité de chaque bloc.

        Raises:
            NumericalError: invariant violé au-delà de la tolérance
        """
        if abs(self.log_norm()) > tol:
            raise NumericalError(f"Poids totaux non normalisés (log Σ = {self.log_norm():.3e})")
        for b in self.blocks:
            block = b.block
            if np.max(np.abs(block - block.conj().T), initial=0.0) > tol:
                raise NumericalError(f"Bloc two_Iz={b.two_Iz} non hermitien")
            if abs(np.trace(block).real - 1.0) > tol:
                raise NumericalError(f"Bloc two_Iz={b.two_Iz} de trace {np.trace(block).real}")
            if np.min(np.linalg.eigvalsh(block)) < -tol:
                raise NumericalError(f"Bloc two_Iz={b.two_Iz} non positif")

    def with_blocks(self, blocks: Iterable[DensityBlock]) -> "BlockedDensity":
        return replace(self, blocks=tuple(blocks))

    def to_dense(self) -> np.ndarray:
        """Matrice 2^K × 2^K indexée par mot d'occupation (petits K)."""
        rho = np.zeros((2**self.K, 2**self.K), dtype=complex)
        for b in self.blocks:
            words = enumerate_sector(SectorIndex(self.K, b.two_Iz)).words
            rho[np.ix_(words, words)] += b.weight * b.block
        return rho

    @classmethod
    def from_weights(
        cls,
        K: int,
        log_weights: Dict[int, float],
        blocks: Optional[Dict[int, np.ndarray]] = None,
        frozen_offset: float = 0.0,
        floor: float = LOG_WEIGHT_FLOOR,
    ) -> "BlockedDensity":
        """
        Assemble un état à partir de log-poids par secteur.

        Les secteurs sans bloc fourni reçoivent l'état maximalement mélangé ;
        ceux sous le plancher sont écartés et les poids renormalisés.
        """
        blocks = blocks or {}
        kept = {t: w for t, w in log_weights.items() if w > floor}
        dropped = len(log_weights) - len(kept)
        if not kept:
            raise DomainError("Aucun secteur au-dessus du plancher de poids")
        if dropped:
            finite = [w for t, w in log_weights.items() if t not in kept and np.isfinite(w)]
            if finite:
                logger.warning(f"{len(finite)} secteur(s) sous le plancher {floor} écartés")
        log_total = float(logsumexp(list(kept.values())))
        entries = []
        for two_Iz, log_weight in kept.items():
            block = blocks.get(two_Iz)
            if block is None:
                d = sector_dimension(K, two_Iz).exact
                block = np.eye(d, dtype=complex) / d
            block = np.asarray(block, dtype=complex)
            entries.append(DensityBlock(two_Iz, log_weight - log_total, block))
        return cls(K=K, blocks=tuple(entries), frozen_offset=frozen_offset)

    @classmethod
    def pure(cls, K: int, two_Iz: int, state: np.ndarray) -> "BlockedDensity":
        """État pur |ψ⟩⟨ψ| confiné à un secteur."""
        basis = enumerate_sector(SectorIndex(K, two_Iz))
        psi = np.asarray(state, dtype=complex).reshape(-1)
        if psi.shape != (basis.dim,):
            raise DomainError(f"Vecteur de taille {psi.size} pour un secteur de dimension {basis.dim}")
        psi = psi / np.linalg.norm(psi)
        return cls.from_weights(K, {two_Iz: 0.0}, {two_Iz: np.outer(psi, psi.conj())})

    @classmethod
    def fully_polarized(cls, K: int) -> "BlockedDensity":
        """Masse ponctuelle sur |𝟘⟩ (I_z = K/2)."""
        return cls.from_weights(K, {K: 0.0})


def weight_c(two_Iz: int, a: float, K: int) -> float:
    """
    log c(I_z, a) = log[d_{I_z} a^{K/2+I_z} (1-a)^{K/2-I_z}].

    Args:
        two_Iz: Deux fois I_z
        a: Fraction de polarisation de chaque spin (0 <= a <= 1)
        K: Nombre de spins

    Returns:
        float: log-poids ; -inf hors du support pour a ∈ {0, 1}
    """
    n_up = SectorIndex(K, two_Iz).n_up
    return float(log_weight_array(K, a, np.array([n_up]))[0])


def log_weight_array(K: int, a: float, n_up: Optional[np.ndarray] = None) -> np.ndarray:
    """log c pour chaque nombre de spins haut n_up (0..K par défaut), vectorisé."""
    if not 0.0 <= a <= 1.0:
        raise DomainError(f"a={a} hors de [0, 1]")
    n_up = np.arange(K + 1) if n_up is None else np.asarray(n_up)
    # xlogy(0, 0) = 0 : a ∈ {0, 1} donne des masses ponctuelles exactes
    return log_binomial(K, n_up) + xlogy(n_up, a) + xlogy(K - n_up, 1.0 - a)


def polarized_product(
    K: int,
    a: float,
    floor: float = LOG_WEIGHT_FLOOR,
    max_dim: int = DEFAULT_BLOCK_CAP,
) -> BlockedDensity:
    """
    État produit ⊗ᵢ(a|↑⟩⟨↑| + (1-a)|↓⟩⟨↓|) mis en blocs, pour tout K.

    Raises:
        CapacityError: bloc de secteur au-delà de max_dim
    """
    largest = math.comb(K, K // 2)
    if largest > max_dim:
        raise CapacityError(f"K={K} : blocs de dimension {largest} > {max_dim}")
    log_weights = log_weight_array(K, a)
    weights = {2 * n - K: float(w) for n, w in enumerate(log_weights)}
    return BlockedDensity.from_weights(K, weights, floor=floor)


def even_polarized(K: int, a: float, floor: float = LOG_WEIGHT_FLOOR) -> BlockedDensity:
    """
    État uniformément polarisé : chaque bloc vaut 1/d_{I_z} et pèse c(I_z, a).

    Raises:
        DomainError: K impair (l'état est construit pour K pair)
    """
    if K % 2:
        raise DomainError(f"even_polarized suppose K pair (reçu K={K})")
    return polarized_product(K, a, floor=floor)


def uneven_polarized(K: int, a: float) -> BlockedDensity:
    """
    aK spins totalement polarisés et gelés, (1-a)K spins thermiques (a = 1/2).

    Args:
        K: Nombre total de spins
        a: Fraction de spins polarisés

    Returns:
        BlockedDensity: partie dynamique sur les (1-a)K spins résiduels,
        frozen_offset = aK/2

    Raises:
        DomainError: aK non entier ou (1-a)K impair
    """
    if not 0.0 <= a <= 1.0:
        raise DomainError(f"a={a} hors de [0, 1]")
    n_frozen = round(a * K)
    if abs(a * K - n_frozen) > 1e-9:
        raise DomainError(f"aK={a * K} n'est pas entier")
    residual = K - n_frozen
    if residual % 2:
        raise DomainError(f"(1-a)K={residual} doit être pair")
    dynamic = even_polarized(residual, 0.5)
    logger.debug(f"État inégal : {n_frozen} spins gelés, {residual} spins thermiques")
    return replace(dynamic, frozen_offset=n_frozen / 2)


def split_uneven(K: int, a: float) -> Tuple[int, int]:
    """(spins gelés, spins résiduels) de l'état inégal."""
    n_frozen = round(a * K)
    return n_frozen, K - n_frozen


def log_ratio_R(K: int, a: float) -> float:
    """log R = log[C(K, K/2) ((1-a)/a)^{K/2}]."""
    if K % 2:
        raise DomainError(f"R suppose K pair (reçu K={K})")
    if not 0.0 < a < 1.0:
        raise DomainError(f"R exige 0 < a < 1 (reçu a={a})")
    half = K // 2
    return float(log_binomial(K, half) + half * (np.log1p(-a) - np.log(a)))


def ratio_R(K: int, a: float) -> float:
    """
    Rapport c(0, a)/c(K/2, a) entre le secteur I_z = 0 et le secteur polarisé.

    Args:
        K: Nombre de spins (pair)
        a: Fraction de polarisation, 0 < a < 1

    Returns:
        float: C(K, K/2) ((1-a)/a)^{K/2}, calculé en logarithme
    """
    return float(np.exp(log_ratio_R(K, a)))


def expected_Iz(rho: BlockedDensity) -> float:
    """⟨I_z⟩ = frozen_offset + Σ c(I_z) I_z."""
    if not rho.blocks:
        return rho.frozen_offset
    weights = np.exp(rho.log_weights - rho.log_norm())
    return float(rho.frozen_offset + np.dot(weights, np.array(rho.sectors) / 2))
