"""Fixtures partagées des tests spinpol."""

import numpy as np
import pytest

from spinpol.core.hamiltonian import HNucSpec, SystemParams
from spinpol.core.propagator import conditioned_blocks

# Expérience à deux spins : 𝒜α₁τ=8, 𝒜α₂τ=4, b₁₂τ=0.2
TWO_SPIN_PRODUCTS = (8.0, 4.0)
TWO_SPIN_B_TAU = 0.2
# Produits donnés pour cos(¼ 𝒜τ√h)
TWO_SPIN_CONVENTION = "quarter"


def random_alphas(rng: np.random.Generator, K: int) -> np.ndarray:
    """Coefficients α positifs normalisés."""
    raw = rng.uniform(0.2, 1.0, size=K)
    return raw / np.linalg.norm(raw)


@pytest.fixture
def rng():
    """Générateur déterministe."""
    return np.random.default_rng(20240601)


@pytest.fixture
def two_spin_params():
    """Paramètres de l'expérience à deux spins, avec couplage dipolaire."""
    return SystemParams.from_coupling_products(
        TWO_SPIN_PRODUCTS, b_tau=TWO_SPIN_B_TAU, convention=TWO_SPIN_CONVENTION
    )


@pytest.fixture
def flipflop_params():
    """Deux spins, flip-flop seul (sans terme Overhauser ni H_nuc)."""
    return SystemParams.from_coupling_products(TWO_SPIN_PRODUCTS, overhauser=False)


@pytest.fixture
def two_spin_propagator(two_spin_params):
    """V(τ) et W(τ) de l'expérience à deux spins."""
    return conditioned_blocks(two_spin_params, 1.0)


@pytest.fixture
def dipolar_params():
    """Trois spins inhomogènes avec Zeeman et couplage dipolaire complet."""
    b = np.array([[0.0, 0.3, -0.1], [0.3, 0.0, 0.2], [-0.1, 0.2, 0.0]])
    alphas = np.array([0.7, 0.5, 0.3])
    alphas = alphas / np.linalg.norm(alphas)
    return SystemParams(
        K=3,
        hyperfine_A=2.5,
        alphas=tuple(alphas),
        electron_zeeman=0.4,
        nuclear_zeeman=0.05,
        hnuc=HNucSpec.secular_dipolar(b),
    )
