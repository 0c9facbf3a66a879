"""
Configuration d'une exécution.

Le document de configuration est un fichier YAML plat (clé: valeur) validé par
un modèle pydantic. Un fichier à sections (config/config.yml) est aussi
accepté : seule la section ``run`` décrit l'exécution, la section ``logging``
est lue par la CLI.

Toutes les énergies sont exprimées en unités de 1/τ et réduites en produits
énergie × τ avant la simulation (τ = 1 en interne).
"""

import hashlib
import json
import logging
import math
import os
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from spinpol.core.errors import ConfigError, DomainError
from spinpol.core.hamiltonian import HNucSpec, SystemParams
from spinpol.core.largek import DiagonalModelParams
from spinpol.core.propagator import DEFAULT_DIM_CAP, check_capacity
from spinpol.core.protocol import StreakPolicy

logger = logging.getLogger(__name__)

Mode = Literal["exact", "trajectory", "spectrum", "largek", "largek-uneven"]
EXACT_MODES = ("exact", "trajectory", "spectrum")
LARGEK_MODES = ("largek", "largek-uneven")

# Champs d'exécution sans effet sur les résultats, exclus de l'empreinte
RUNTIME_FIELDS = {"out", "format", "threads"}

NORMALIZATION_WARN = 1e-6
NORMALIZATION_FIX = 1e-12


class RunConfig(BaseModel):
    """Paramètres d'une exécution ; les clés inconnues sont refusées."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: Mode = "exact"
    K: Optional[int] = Field(default=None, ge=1)
    a: float = Field(default=0.5, ge=0.0, le=1.0)
    initial_state: Literal["even", "uneven"] = "even"
    tau: float = Field(default=1.0, gt=0.0)

    # Couplage hyperfin : produits 𝒜αᵢτ, ou 𝒜 avec une forme de α
    A_alpha_tau: Optional[List[float]] = None
    hyperfine_A: Optional[float] = Field(default=None, gt=0.0)
    alpha_spec: Literal["explicit", "uniform", "exponential"] = "uniform"
    alphas: Optional[List[float]] = None
    decay: Optional[float] = Field(default=None, gt=0.0)
    coupling_convention: Literal["half", "quarter"] = "half"
    overhauser: bool = True

    electron_zeeman: float = 0.0
    nuclear_zeeman: float = 0.0

    hnuc: Literal["none", "dipolar", "custom-file"] = "none"
    b_tau: Optional[float] = None
    b_matrix: Optional[List[List[float]]] = None
    hnuc_file: Optional[str] = None

    M_max: int = Field(default=50, ge=1)
    theta: float = Field(default=0.999, gt=0.0, lt=1.0)
    Vbar: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    stop_probability: float = Field(default=0.1, gt=0.0, lt=1.0)
    degeneracy_threshold: float = Field(default=1e-9, gt=0.0)
    max_dim: int = Field(default=DEFAULT_DIM_CAP, ge=1)

    seed: int = Field(default=0, ge=0)
    target_streak: int = Field(default=50, ge=1)
    max_attempts: int = Field(default=1000, ge=1)
    on_failure: Literal["reuse", "reset"] = "reuse"
    n_trajectories: int = Field(default=1, ge=1)

    out: Optional[str] = None
    format: Literal["csv", "json"] = "csv"
    threads: int = 1

    @model_validator(mode="before")
    @classmethod
    def _infer_couplings(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        products = data.get("A_alpha_tau")
        if isinstance(products, list) and data.get("K") is None:
            data["K"] = len(products)
        if "hnuc" not in data and (data.get("b_tau") or data.get("b_matrix") is not None):
            data["hnuc"] = "dipolar"
        if (
            data.get("mode", "exact") in EXACT_MODES
            and products is None
            and isinstance(data.get("K"), int)
            and data["K"] >= 1
        ):
            data["alphas"] = _normalized_alphas(
                data["K"], data.get("alpha_spec", "uniform"), data.get("alphas"), data.get("decay")
            )
        return data

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        if self.A_alpha_tau is not None:
            if self.hyperfine_A is not None or self.alphas is not None:
                raise ValueError("A_alpha_tau exclut hyperfine_A et alphas")
            if not self.A_alpha_tau:
                raise ValueError("A_alpha_tau est vide")
            if self.K != len(self.A_alpha_tau):
                raise ValueError(f"K={self.K} mais A_alpha_tau a {len(self.A_alpha_tau)} entrées")

        if self.K is None:
            raise ValueError("K est requis (ou déduit de A_alpha_tau)")

        if self.mode in EXACT_MODES:
            if self.A_alpha_tau is None and self.hyperfine_A is None:
                raise ValueError("hyperfine_A ou A_alpha_tau est requis en mode exact")
            if self.hnuc == "dipolar" and self.b_tau is None and self.b_matrix is None:
                raise ValueError("hnuc=dipolar exige b_tau ou b_matrix")
            if self.hnuc == "custom-file" and not self.hnuc_file:
                raise ValueError("hnuc=custom-file exige hnuc_file")
            if self.b_matrix is not None and np.shape(self.b_matrix) != (self.K, self.K):
                raise ValueError(f"b_matrix doit être {self.K}×{self.K}")
        elif self.Vbar is None:
            raise ValueError(f"Vbar est requis en mode {self.mode}")
        return self

    @property
    def is_uneven(self) -> bool:
        return self.mode == "largek-uneven" or self.initial_state == "uneven"

    def fingerprint(self) -> str:
        """SHA-256 du JSON canonique des champs qui déterminent les résultats."""
        document = self.model_dump(mode="json", exclude=RUNTIME_FIELDS)
        canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def coupling_products(self) -> np.ndarray:
        """Produits 𝒜αᵢτ."""
        if self.A_alpha_tau is not None:
            return np.asarray(self.A_alpha_tau, dtype=float)
        return self.hyperfine_A * self.tau * np.asarray(self.alphas, dtype=float)

    def split_uneven(self) -> Tuple[int, int]:
        """(spins gelés, spins dynamiques) ; les aK premiers noyaux sont gelés."""
        n_frozen = round(self.a * self.K)
        if abs(self.a * self.K - n_frozen) > 1e-9:
            raise DomainError(f"aK={self.a * self.K} n'est pas entier")
        return n_frozen, self.K - n_frozen

    def system_params(self, residual: bool = False) -> SystemParams:
        """
        Paramètres physiques en unités de 1/τ.

        Args:
            residual: Restreindre aux spins dynamiques de l'état inégal

        Returns:
            SystemParams: 𝒜τ, α normalisés, énergies Zeeman × τ
        """
        products = self.coupling_products()
        keep = slice(self.split_uneven()[0], None) if residual else slice(None)
        products = products[keep]
        params = SystemParams.from_coupling_products(
            products,
            electron_zeeman_tau=self.electron_zeeman * self.tau,
            nuclear_zeeman_tau=self.nuclear_zeeman * self.tau,
            overhauser=self.overhauser,
            convention=self.coupling_convention,
        )
        hnuc = self._hnuc(len(products), keep)
        return params if hnuc.is_none else replace(params, hnuc=hnuc)

    def _hnuc(self, K: int, keep: slice) -> HNucSpec:
        if self.hnuc == "none":
            return HNucSpec.none()
        if self.hnuc == "dipolar":
            if self.b_matrix is not None:
                b = np.asarray(self.b_matrix, dtype=float)[keep, keep]
                return HNucSpec.secular_dipolar(b)
            return HNucSpec.pair(K, self.b_tau) if K >= 2 else HNucSpec.none()
        if keep != slice(None):
            raise ConfigError("hnuc_file n'est pas compatible avec l'état inégal")
        return load_hnuc_file(self.hnuc_file, K)

    def diagonal_params(self) -> DiagonalModelParams:
        return DiagonalModelParams(K=self.K, a=self.a, Vbar=self.Vbar)

    def streak_policy(self) -> StreakPolicy:
        return StreakPolicy(
            max_attempts=self.max_attempts,
            target_streak=self.target_streak,
            on_failure=self.on_failure,
        )


def _normalized_alphas(
    K: int, alpha_spec: str, alphas: Optional[List[float]], decay: Optional[float]
) -> List[float]:
    """Coefficients α normalisés selon la forme demandée."""
    if alpha_spec == "uniform":
        return [1.0 / math.sqrt(K)] * K
    if alpha_spec == "exponential":
        if decay is None:
            raise ValueError("alpha_spec=exponential exige decay")
        raw = np.exp(-np.arange(K) / float(decay))
    else:
        if alphas is None or len(alphas) != K:
            raise ValueError(f"alpha_spec=explicit exige {K} valeurs dans alphas")
        raw = np.asarray(alphas, dtype=float)

    norm2 = float(np.dot(raw, raw))
    if norm2 == 0.0:
        raise ValueError("alphas est nul")
    if abs(norm2 - 1.0) <= NORMALIZATION_FIX:
        return [float(x) for x in raw]
    if abs(norm2 - 1.0) > NORMALIZATION_WARN and alpha_spec == "explicit":
        logger.warning(f"alphas renormalisés (Σα² = {norm2:.6g})")
    return [float(x) for x in raw / math.sqrt(norm2)]


def load_hnuc_file(path: Union[str, Path], K: int) -> HNucSpec:
    """
    Charge un H_nuc complet 2^K × 2^K (fichier .npy) indexé par mot d'occupation.

    Raises:
        ConfigError: fichier illisible, forme invalide ou éléments entre secteurs
    """
    try:
        matrix = np.load(path)
    except (OSError, ValueError) as e:
        raise ConfigError(f"hnuc_file: lecture impossible de {path}: {e}") from e
    if matrix.shape != (2**K, 2**K):
        raise ConfigError(f"hnuc_file: forme {matrix.shape}, attendu {(2**K, 2**K)}")
    popcount = np.array([bin(w).count("1") for w in range(2**K)])
    if np.max(np.abs(matrix[popcount[:, None] != popcount[None, :]]), initial=0.0) > 1e-12:
        raise ConfigError("hnuc_file: la matrice ne conserve pas I_z")

    def provider(basis) -> np.ndarray:
        return matrix[np.ix_(basis.words, basis.words)]

    return HNucSpec.custom(provider)


def _select_run_section(data: Any) -> Dict[str, Any]:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("La configuration doit être un document clé: valeur")
    if "run" in data:
        run = data["run"] or {}
        unknown = set(data) - {"run", "logging"}
        if unknown:
            raise ConfigError(f"Sections inconnues: {sorted(unknown)}")
        return dict(run)
    return dict(data)


def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        key = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{key}: {item['msg']}")
    return "; ".join(parts)


def validate_config(data: Dict[str, Any]) -> RunConfig:
    """
    Valide un dictionnaire de configuration.

    Raises:
        ConfigError: clé inconnue ou valeur invalide (le message nomme la clé)
        CapacityError: mode exact au-delà du plafond de dimension
    """
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e)) from None
    if config.mode in EXACT_MODES:
        K = config.split_uneven()[1] if config.is_uneven else config.K
        check_capacity(K, config.max_dim)
    return config


def parse_config(text: str) -> RunConfig:
    """
    Analyse un document YAML de configuration.

    Args:
        text: Contenu YAML (plat ou à section ``run``)

    Returns:
        RunConfig: configuration validée
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML invalide: {e}") from e
    return validate_config(_select_run_section(data))


def emit_config(config: RunConfig) -> str:
    """Sérialise la configuration en YAML ; parse_config(emit_config(c)) == c."""
    document = config.model_dump(mode="json", exclude_none=True)
    return yaml.safe_dump(document, sort_keys=True, allow_unicode=True)


def load_config_file(path: Union[str, Path]) -> Tuple[RunConfig, Dict[str, Any]]:
    """
    Charge un fichier de configuration.

    Returns:
        Tuple[RunConfig, Dict]: configuration et section ``logging`` éventuelle
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Lecture impossible de {path}: {e}") from e
    data = yaml.safe_load(text) if text.strip() else {}
    logging_section = data.get("logging", {}) if isinstance(data, dict) else {}
    return parse_config(text), logging_section or {}


def apply_overrides(config: RunConfig, **updates: Any) -> RunConfig:
    """Nouvelle configuration avec les valeurs non nulles de updates."""
    updates = {k: v for k, v in updates.items() if v is not None}
    if not updates:
        return config
    return validate_config({**config.model_dump(exclude_none=True), **updates})


def environment_defaults(dotenv_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Valeurs par défaut lues dans l'environnement (et un fichier .env).

    SPINPOL_THREADS donne le nombre de threads, SPINPOL_LOG_LEVEL le niveau de log.
    """
    load_dotenv(dotenv_path)
    defaults: Dict[str, Any] = {}
    threads = os.getenv("SPINPOL_THREADS")
    if threads:
        try:
            defaults["threads"] = int(threads)
        except ValueError:
            raise ConfigError(f"SPINPOL_THREADS invalide: {threads}") from None
    level = os.getenv("SPINPOL_LOG_LEVEL")
    if level:
        defaults["log_level"] = level.upper()
    return defaults
