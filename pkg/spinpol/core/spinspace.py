"""
Espace des spins nucléaires.

Ce module énumère les configurations de K spins nucléaires 1/2, les range par
secteur de projection totale I_z et fournit les formules de dimension
(exactes en petits K, en espace logarithmique pour les grands K).

Convention : le bit i d'un mot d'occupation vaut 1 si le noyau i est dans
l'état m = +1/2. Les bases sont triées par mot croissant.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from itertools import combinations
from typing import Dict, Iterator, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy.special import gammaln

from spinpol.core.errors import DomainError

# Au-delà, seules les valeurs logarithmiques sont calculées
EXACT_CROSSOVER = 60


@dataclass(frozen=True, order=True)
class SectorIndex:
    """Secteur de projection totale I_z = two_Iz / 2 pour K spins 1/2."""

    K: int
    two_Iz: int

    def __post_init__(self) -> None:
        if self.K < 0:
            raise DomainError(f"K doit être positif ou nul (reçu {self.K})")
        if abs(self.two_Iz) > self.K:
            raise DomainError(f"|two_Iz|={abs(self.two_Iz)} dépasse K={self.K}")
        if (self.two_Iz - self.K) % 2:
            raise DomainError(
                f"two_Iz={self.two_Iz} et K={self.K} doivent avoir la même parité"
            )

    @property
    def Iz(self) -> float:
        return self.two_Iz / 2

    @property
    def n_up(self) -> int:
        """Nombre de noyaux dans l'état +1/2."""
        return (self.K + self.two_Iz) // 2

    @property
    def is_top(self) -> bool:
        """Vrai pour le secteur totalement polarisé I_z = K/2."""
        return self.two_Iz == self.K

    def shifted(self, steps: int) -> Optional["SectorIndex"]:
        """Secteur voisin I_z + steps, ou None s'il n'existe pas."""
        two_Iz = self.two_Iz + 2 * steps
        if abs(two_Iz) > self.K:
            return None
        return SectorIndex(self.K, two_Iz)


@dataclass(frozen=True)
class SpinConfiguration:
    """Configuration produit de K spins, codée par un mot d'occupation."""

    bits: int
    K: int

    @property
    def two_Iz(self) -> int:
        return 2 * self.bits.bit_count() - self.K

    @property
    def Iz(self) -> float:
        return self.two_Iz / 2

    def spin(self, i: int) -> float:
        """Projection m_i du noyau i (+1/2 ou -1/2)."""
        return 0.5 if (self.bits >> i) & 1 else -0.5

    def __str__(self) -> str:
        # Noyau 0 à droite, comme un mot binaire
        return format(self.bits, f"0{self.K}b") if self.K else ""


@dataclass(frozen=True, eq=False)
class SectorBasis:
    """Base ordonnée d'un secteur I_z."""

    sector: SectorIndex
    words: np.ndarray
    index: Dict[int, int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.words)

    @property
    def dim(self) -> int:
        return len(self.words)

    @property
    def configs(self) -> Tuple[SpinConfiguration, ...]:
        return tuple(SpinConfiguration(int(w), self.sector.K) for w in self.words)

    @cached_property
    def spins(self) -> np.ndarray:
        """Matrice (d, K) des projections m_i de chaque configuration."""
        K = self.sector.K
        if K == 0 or self.dim == 0:
            return np.zeros((self.dim, K))
        bits = (self.words[:, None] >> np.arange(K, dtype=np.int64)[None, :]) & 1
        return bits.astype(float) - 0.5


class SectorDimension(NamedTuple):
    """Dimension d'un secteur : entier exact (petits K) et logarithme."""

    exact: Optional[int]
    log: float


def log_binomial(n: Union[int, np.ndarray], k: Union[int, np.ndarray]) -> np.ndarray:
    """ln C(n, k) via log-gamma, vectorisé."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def sector_dimension(K: int, two_Iz: int) -> SectorDimension:
    """
    Dimension d_{I_z} = C(K, K/2 + I_z) d'un secteur.

    Args:
        K: Nombre de spins nucléaires
        two_Iz: Deux fois la projection totale I_z

    Returns:
        SectorDimension: valeur exacte si K <= EXACT_CROSSOVER, et logarithme

    Raises:
        DomainError: parité incompatible ou |two_Iz| > K
    """
    sector = SectorIndex(K, two_Iz)
    log_value = float(log_binomial(K, sector.n_up))
    exact = math.comb(K, sector.n_up) if K <= EXACT_CROSSOVER else None
    return SectorDimension(exact=exact, log=log_value)


def omega_count(K: int, N: int) -> int:
    """
    Nombre d'états électron + noyaux du secteur J = J_m - N/2 (I = 1/2).

    Args:
        K: Nombre de spins nucléaires
        N: Nombre de quanta retournés depuis l'état totalement polarisé

    Returns:
        int: C(K+1, N)
    """
    if not 0 <= N <= K + 1:
        raise DomainError(f"N={N} hors de [0, {K + 1}]")
    return math.comb(K + 1, N)


def iter_sectors(K: int) -> Iterator[SectorIndex]:
    """Secteurs de K spins, de I_z = -K/2 à I_z = K/2."""
    for two_Iz in range(-K, K + 1, 2):
        yield SectorIndex(K, two_Iz)


@lru_cache(maxsize=256)
def enumerate_sector(sector: SectorIndex) -> SectorBasis:
    """
    Énumère la base d'un secteur, triée par mot d'occupation croissant.

    Args:
        sector: Secteur à énumérer

    Returns:
        SectorBasis: base déterministe et son index inverse
    """
    words = sorted(
        sum(1 << i for i in ups) for ups in combinations(range(sector.K), sector.n_up)
    )
    array = np.array(words, dtype=np.int64)
    array.setflags(write=False)
    return SectorBasis(
        sector=sector,
        words=array,
        index={w: j for j, w in enumerate(words)},
    )


def max_sector_pair_dimension(K: int) -> int:
    """Plus grande dimension d'un secteur J_z du système électron + noyaux."""
    return max(omega_count(K, N) for N in range(K + 2))
