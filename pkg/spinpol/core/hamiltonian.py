"""
Hamiltoniens par secteur J_z.

Le Hamiltonien électron + noyaux

    H = E_e S_z + E_n I_z + 𝒜 (A_z S_z + ½ A₊S₋ + ½ A₋S₊) + H_nuc

conserve J_z = S_z + I_z. Pour chaque valeur J, la matrice est assemblée sur
le bloc « électron haut » (I_z = J - 1/2) suivi du bloc « électron bas »
(I_z = J + 1/2).

Convention des opérateurs d'échelle : S₋|↑⟩ = |↓⟩ et I₋|+½⟩ = |-½⟩ avec des
éléments de matrice unité. Les éléments de flip-flop valent donc 𝒜αᵢ/2.
Les énergies Zeeman sont des produits déjà multipliés (E_e = g*μ_B B,
E_n = g_nμ_n B).
"""

import logging
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space

from spinpol.core.errors import DomainError
from spinpol.core.spinspace import SectorBasis, SectorIndex, enumerate_sector

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-12
HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10

# Facteur appliqué aux produits 𝒜αᵢτ selon la constante c de cos(𝒜τ√h·c) sous
# laquelle ils sont donnés ; le moteur travaille toujours avec c = 1/2
COUPLING_CONVENTIONS = {"half": 1.0, "quarter": 0.5}

HNucProvider = Callable[[SectorBasis], np.ndarray]


@dataclass(frozen=True, eq=False)
class HNucSpec:
    """Modèle d'interaction noyau-noyau conservant I_z."""

    variant: str = "none"
    b: Optional[np.ndarray] = None
    provider: Optional[HNucProvider] = None

    VARIANTS = ("none", "secular_dipolar", "custom")

    def __post_init__(self) -> None:
        if self.variant not in self.VARIANTS:
            raise DomainError(f"Variante H_nuc inconnue: {self.variant}")
        if self.variant == "secular_dipolar":
            if self.b is None:
                raise DomainError("secular_dipolar exige une matrice b")
            b = np.asarray(self.b, dtype=float)
            if b.ndim != 2 or b.shape[0] != b.shape[1]:
                raise DomainError(f"b doit être carrée (forme {b.shape})")
            if not np.all(np.isfinite(b)):
                raise DomainError("b contient des valeurs non finies")
            if not np.allclose(b, b.T, atol=NORMALIZATION_TOL):
                raise DomainError("b doit être symétrique")
            if np.any(np.abs(np.diag(b)) > NORMALIZATION_TOL):
                raise DomainError("La diagonale de b doit être nulle")
            object.__setattr__(self, "b", b)
        if self.variant == "custom" and self.provider is None:
            raise DomainError("custom exige un fournisseur de matrices")

    @classmethod
    def none(cls) -> "HNucSpec":
        return cls()

    @classmethod
    def secular_dipolar(cls, b: np.ndarray) -> "HNucSpec":
        return cls(variant="secular_dipolar", b=np.asarray(b, dtype=float))

    @classmethod
    def pair(cls, K: int, b12: float, i: int = 0, j: int = 1) -> "HNucSpec":
        """Couplage dipolaire séculaire d'une seule paire (i, j)."""
        b = np.zeros((K, K))
        b[i, j] = b[j, i] = b12
        return cls.secular_dipolar(b)

    @classmethod
    def custom(cls, provider: HNucProvider) -> "HNucSpec":
        return cls(variant="custom", provider=provider)

    @property
    def is_none(self) -> bool:
        return self.variant == "none"


@dataclass(frozen=True, eq=False)
class SystemParams:
    """Paramètres physiques du point quantique (ħ = 1, énergies en 1/τ)."""

    K: int
    hyperfine_A: float
    alphas: Tuple[float, ...]
    electron_zeeman: float = 0.0
    nuclear_zeeman: float = 0.0
    hnuc: HNucSpec = field(default_factory=HNucSpec.none)
    # Terme Overhauser 𝒜A_zS_z ; False donne la limite flip-flop pure
    overhauser: bool = True

    def __post_init__(self) -> None:
        alphas = tuple(float(a) for a in self.alphas)
        object.__setattr__(self, "alphas", alphas)
        if len(alphas) != self.K:
            raise DomainError(f"{len(alphas)} coefficients alpha pour K={self.K}")
        norm = sum(a * a for a in alphas)
        if self.K and abs(norm - 1.0) > NORMALIZATION_TOL:
            raise DomainError(f"Σα² = {norm:.15g} au lieu de 1")
        energies = (self.hyperfine_A, self.electron_zeeman, self.nuclear_zeeman)
        if not all(np.isfinite(e) for e in energies):
            raise DomainError(f"Énergies non finies: {energies}")
        if self.hnuc.variant == "secular_dipolar" and self.hnuc.b.shape != (self.K, self.K):
            raise DomainError(f"b de forme {self.hnuc.b.shape} pour K={self.K}")

    @property
    def alpha_array(self) -> np.ndarray:
        return np.asarray(self.alphas, dtype=float)

    @property
    def J_m_times2(self) -> int:
        """Deux fois J_m = K/2 + 1/2."""
        return self.K + 1

    @property
    def is_homogeneous(self) -> bool:
        a = self.alpha_array
        return bool(np.allclose(a, a[0], atol=1e-12)) if self.K else True

    @classmethod
    def from_coupling_products(
        cls,
        A_alpha_tau: Sequence[float],
        b_tau: Optional[float] = None,
        electron_zeeman_tau: float = 0.0,
        nuclear_zeeman_tau: float = 0.0,
        overhauser: bool = True,
        convention: str = "half",
    ) -> "SystemParams":
        """
        Construit les paramètres à partir des produits 𝒜αᵢτ (unité τ = 1).

        Args:
            A_alpha_tau: Produits 𝒜αᵢτ pour chaque noyau
            b_tau: Constante dipolaire de la paire (0, 1) multipliée par τ
            electron_zeeman_tau: E_e τ
            nuclear_zeeman_tau: E_n τ
            overhauser: Inclure le terme 𝒜A_zS_z
            convention: Constante du cosinus sous laquelle les produits sont
                donnés ("half" pour c = 1/2, "quarter" pour c = 1/4)

        Returns:
            SystemParams: 𝒜τ = ‖𝒜ατ‖ et α normalisés

        Raises:
            DomainError: convention inconnue ou produits tous nuls
        """
        if convention not in COUPLING_CONVENTIONS:
            raise DomainError(f"Convention de couplage inconnue: {convention}")
        products = COUPLING_CONVENTIONS[convention] * np.asarray(A_alpha_tau, dtype=float)
        A = float(np.linalg.norm(products))
        if A == 0.0:
            raise DomainError("Tous les produits 𝒜αᵢτ sont nuls")
        K = len(products)
        hnuc = HNucSpec.pair(K, b_tau) if b_tau and K >= 2 else HNucSpec.none()
        return cls(
            K=K,
            hyperfine_A=A,
            alphas=tuple(products / A),
            electron_zeeman=electron_zeeman_tau,
            nuclear_zeeman=nuclear_zeeman_tau,
            hnuc=hnuc,
            overhauser=overhauser,
        )


@dataclass(frozen=True, eq=False)
class SectorHamiltonian:
    """Matrice hermitienne d'un secteur J_z, bloc haut puis bloc bas."""

    J_times2: int
    up_basis: Optional[SectorBasis]
    down_basis: Optional[SectorBasis]
    matrix: np.ndarray

    @property
    def d_up(self) -> int:
        return self.up_basis.dim if self.up_basis is not None else 0

    @property
    def d_down(self) -> int:
        return self.down_basis.dim if self.down_basis is not None else 0

    @property
    def up_block(self) -> np.ndarray:
        return self.matrix[: self.d_up, : self.d_up]

    @property
    def down_block(self) -> np.ndarray:
        return self.matrix[self.d_up :, self.d_up :]

    @property
    def flipflop_block(self) -> np.ndarray:
        """Bloc (𝒜/2)A₋ : lignes haut, colonnes bas."""
        return self.matrix[: self.d_up, self.d_up :]


def _ladder(coeffs: np.ndarray, from_basis: SectorBasis, to_basis: SectorBasis) -> np.ndarray:
    """Matrice de Σᵢ cᵢ I₋ⁱ entre deux bases (règle d'un seul bit retourné)."""
    out = np.zeros((to_basis.dim, from_basis.dim), dtype=complex)
    if out.size == 0:
        return out
    words = from_basis.words
    for i, c in enumerate(coeffs):
        if c == 0:
            continue
        cols = np.nonzero((words >> i) & 1)[0]
        rows = np.searchsorted(to_basis.words, words[cols] ^ (1 << i))
        out[rows, cols] += c
    return out


def _check_lowering_pair(from_basis: SectorBasis, to_basis: SectorBasis) -> None:
    if from_basis.sector.K != to_basis.sector.K:
        raise DomainError("Bases de K différents")
    if to_basis.sector.two_Iz != from_basis.sector.two_Iz - 2:
        raise DomainError(
            f"A₋ relie I_z à I_z-1 : {from_basis.sector.Iz} -> {to_basis.sector.Iz}"
        )


def collective_lowering(
    alphas: Sequence[float], from_basis: SectorBasis, to_basis: SectorBasis
) -> np.ndarray:
    """
    Matrice de A₋ = Σᵢ αᵢ I₋ⁱ de from_basis (I_z) vers to_basis (I_z - 1).

    Args:
        alphas: Coefficients αᵢ
        from_basis: Base de départ
        to_basis: Base d'arrivée

    Returns:
        np.ndarray: matrice (d_to, d_from) ; A₊ en est l'adjointe
    """
    _check_lowering_pair(from_basis, to_basis)
    return _ladder(np.asarray(alphas), from_basis, to_basis)


def check_unitary(modes: np.ndarray, tol: float = UNITARY_TOL) -> np.ndarray:
    """Valide une matrice de modes {αᵢᵏ} (lignes k, colonnes i)."""
    modes = np.asarray(modes)
    if modes.ndim != 2 or modes.shape[0] != modes.shape[1]:
        raise DomainError(f"Matrice de modes non carrée: {modes.shape}")
    deviation = np.max(np.abs(modes @ modes.conj().T - np.eye(len(modes))))
    if deviation > tol:
        raise DomainError(f"Matrice de modes non unitaire (écart {deviation:.3e})")
    return modes


def mode_matrix(alphas: Sequence[float]) -> np.ndarray:
    """Complète α en une matrice orthogonale réelle dont la ligne 0 vaut α."""
    alphas = np.asarray(alphas, dtype=float)
    rest = null_space(alphas[None, :]).T
    return np.vstack([alphas, rest])


def mode_lowering(
    modes: np.ndarray,
    k: int,
    from_basis: SectorBasis,
    to_basis: SectorBasis,
    alphas: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """
    Matrice de A_{k-} = Σᵢ αᵢᵏ I₋ⁱ pour le mode k.

    Args:
        modes: Matrice unitaire K×K des modes (ligne 0 = mode collectif)
        k: Indice du mode
        from_basis: Base de départ (I_z)
        to_basis: Base d'arrivée (I_z - 1)
        alphas: Couplages du mode collectif ; si fournis, la ligne 0 doit les égaler

    Raises:
        DomainError: ligne 0 différente de alphas ou paire de secteurs invalide
    """
    modes = check_unitary(modes)
    if alphas is not None and not np.allclose(modes[0], alphas, atol=UNITARY_TOL):
        raise DomainError("La ligne 0 des modes n'est pas le mode collectif α")
    _check_lowering_pair(from_basis, to_basis)
    return _ladder(modes[k], from_basis, to_basis)


def build_hnuc(spec: HNucSpec, basis: SectorBasis) -> np.ndarray:
    """
    Matrice de H_nuc restreinte à un secteur I_z.

    Pour la variante séculaire :
    Σ_{i<j} b_ij (I_zⁱI_zʲ - ¼(I₊ⁱI₋ʲ + I₋ⁱI₊ʲ)).

    Raises:
        DomainError: matrice fournie non hermitienne ou de mauvaise forme
    """
    d = basis.dim
    if spec.variant == "none":
        return np.zeros((d, d), dtype=complex)

    if spec.variant == "custom":
        matrix = np.asarray(spec.provider(basis), dtype=complex)
        if matrix.shape != (d, d):
            raise DomainError(f"H_nuc personnalisé de forme {matrix.shape}, attendu {(d, d)}")
        scale = max(1.0, float(np.max(np.abs(matrix), initial=0.0)))
        if np.max(np.abs(matrix - matrix.conj().T), initial=0.0) > HERMITIAN_TOL * scale:
            raise DomainError("H_nuc personnalisé non hermitien")
        return matrix

    b = spec.b
    if b.shape[0] != basis.sector.K:
        raise DomainError(f"b de taille {b.shape[0]} pour K={basis.sector.K}")
    spins = basis.spins
    # Partie Ising : ½ mᵀ b m (b symétrique, diagonale nulle)
    matrix = np.diag(0.5 * np.einsum("ci,ij,cj->c", spins, b, spins)).astype(complex)
    words = basis.words
    for i, j in zip(*np.nonzero(np.triu(b))):
        flip = (1 << int(i)) | (1 << int(j))
        cols = np.nonzero(((words >> i) & 1) != ((words >> j) & 1))[0]
        rows = np.searchsorted(words, words[cols] ^ flip)
        matrix[rows, cols] += -0.25 * b[i, j]
    return matrix


def overhauser_field(params: SystemParams, basis: SectorBasis) -> np.ndarray:
    """Valeurs diagonales de A_z = Σᵢ αᵢ mᵢ par configuration."""
    if basis.dim == 0:
        return np.zeros(0)
    return basis.spins @ params.alpha_array


def nuclear_diagonal(params: SystemParams, basis: SectorBasis, electron: float) -> np.ndarray:
    """Bloc nucléaire pour l'électron dans l'état S_z = electron (±1/2)."""
    energy = electron * params.electron_zeeman + params.nuclear_zeeman * basis.sector.Iz
    diag = np.full(basis.dim, energy)
    if params.overhauser:
        diag = diag + electron * params.hyperfine_A * overhauser_field(params, basis)
    return np.diag(diag).astype(complex) + build_hnuc(params.hnuc, basis)


def build_sector_hamiltonian(params: SystemParams, J_times2: int) -> SectorHamiltonian:
    """
    Assemble la matrice du secteur J = J_times2 / 2.

    Args:
        params: Paramètres du système
        J_times2: Deux fois la valeur propre J de J_z

    Returns:
        SectorHamiltonian: [[H_up, (𝒜/2)A₋], [(𝒜/2)A₊, H_down]]

    Raises:
        DomainError: J hors de [-J_m, J_m] ou de mauvaise parité
    """
    K = params.K
    if abs(J_times2) > K + 1 or (J_times2 - K - 1) % 2:
        raise DomainError(f"J={J_times2}/2 invalide pour K={K}")

    two_up, two_down = J_times2 - 1, J_times2 + 1
    up_basis = enumerate_sector(SectorIndex(K, two_up)) if abs(two_up) <= K else None
    down_basis = enumerate_sector(SectorIndex(K, two_down)) if abs(two_down) <= K else None

    blocks: List[np.ndarray] = []
    if up_basis is not None:
        blocks.append(nuclear_diagonal(params, up_basis, +0.5))
    if down_basis is not None:
        blocks.append(nuclear_diagonal(params, down_basis, -0.5))

    if len(blocks) == 1:
        matrix = blocks[0]
    else:
        coupling = 0.5 * params.hyperfine_A * collective_lowering(
            params.alphas, down_basis, up_basis
        )
        matrix = np.block([[blocks[0], coupling], [coupling.conj().T, blocks[1]]])

    logger.debug(f"Secteur J={J_times2}/2 assemblé (dimension {matrix.shape[0]})")
    return SectorHamiltonian(
        J_times2=J_times2, up_basis=up_basis, down_basis=down_basis, matrix=matrix
    )


def sector_range(params: SystemParams) -> range:
    """Valeurs de J_times2 de -J_m à J_m."""
    return range(-(params.K + 1), params.K + 2, 2)


def effective_field(params: SystemParams, sector: SectorIndex) -> np.ndarray:
    """
    Énergie g*μ_B B_eff = E_e - (E_n + 𝒜 Σᵢ αᵢ I_zⁱ) par configuration.

    Le décalage Overhauser n'est inclus que si params.overhauser est vrai.
    """
    basis = enumerate_sector(sector)
    shift = np.full(basis.dim, params.nuclear_zeeman)
    if params.overhauser:
        shift = shift + params.hyperfine_A * overhauser_field(params, basis)
    return params.electron_zeeman - shift


# Construction de référence sur l'espace complet (petits K)

_SZ = np.diag([-0.5, 0.5])
_SP = np.array([[0.0, 0.0], [1.0, 0.0]])
_SM = _SP.T


def _site_operator(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    # Le site 0 est le bit de poids faible
    factors = [np.eye(2)] * n_sites
    factors[n_sites - 1 - site] = op
    return reduce(np.kron, factors)


def full_space_hamiltonian(params: SystemParams) -> np.ndarray:
    """
    Hamiltonien sur l'espace complet 2^(K+1) par produits de Kronecker.

    L'indice d'un état vaut (e << K) | mot, avec e = 1 pour l'électron haut.
    Réservé aux vérifications (K petit).
    """
    K = params.K
    n = K + 1
    Sz, Sp, Sm = (_site_operator(o, K, n) for o in (_SZ, _SP, _SM))
    Iz = [_site_operator(_SZ, i, n) for i in range(K)]
    Ip = [_site_operator(_SP, i, n) for i in range(K)]
    Im = [_site_operator(_SM, i, n) for i in range(K)]

    a = params.alpha_array
    Az = sum(a[i] * Iz[i] for i in range(K))
    Ap = sum(a[i] * Ip[i] for i in range(K))
    Am = sum(a[i] * Im[i] for i in range(K))

    H = params.electron_zeeman * Sz + params.nuclear_zeeman * sum(Iz)
    if params.overhauser:
        H = H + params.hyperfine_A * Az @ Sz
    H = H + 0.5 * params.hyperfine_A * (Ap @ Sm + Am @ Sp)

    if params.hnuc.variant == "secular_dipolar":
        b = params.hnuc.b
        for i in range(K):
            for j in range(i + 1, K):
                if b[i, j]:
                    H = H + b[i, j] * (
                        Iz[i] @ Iz[j] - 0.25 * (Ip[i] @ Im[j] + Im[i] @ Ip[j])
                    )
    elif params.hnuc.variant == "custom":
        raise DomainError("La construction complète ne couvre pas H_nuc personnalisé")
    return H.astype(complex)


def full_space_sector_order(K: int) -> np.ndarray:
    """Permutation de l'espace complet vers l'ordre des secteurs J croissants."""
    order: List[int] = []
    for J_times2 in range(-(K + 1), K + 2, 2):
        for two_Iz, electron in ((J_times2 - 1, 1), (J_times2 + 1, 0)):
            if abs(two_Iz) <= K:
                words = enumerate_sector(SectorIndex(K, two_Iz)).words
                order.extend(int((electron << K) | w) for w in words)
    return np.asarray(order)
