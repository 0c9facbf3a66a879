"""Tests unitaires de la configuration d'exécution."""

import logging
from pathlib import Path

import numpy as np
import pytest

from spinpol.config import (
    RunConfig,
    apply_overrides,
    emit_config,
    environment_defaults,
    load_config_file,
    load_hnuc_file,
    parse_config,
    validate_config,
)
from spinpol.core.errors import CapacityError, ConfigError
from spinpol.core.spinspace import SectorIndex, enumerate_sector

pytestmark = pytest.mark.unit

DEFAULT_CONFIG = Path(__file__).resolve().parents[2] / "config" / "config.yml"

TWO_SPIN_YAML = """
mode: exact
A_alpha_tau: [8.0, 4.0]
b_tau: 0.2
a: 0.8
M_max: 50
"""


@pytest.fixture
def two_spin_config():
    return parse_config(TWO_SPIN_YAML)


class TestParsing:
    """Analyse et validation des documents YAML."""

    def test_two_spin_experiment_accepted(self, two_spin_config):
        assert two_spin_config.K == 2
        assert two_spin_config.hnuc == "dipolar"
        params = two_spin_config.system_params()
        assert params.hyperfine_A == pytest.approx(np.hypot(8.0, 4.0))
        assert params.hnuc.b[0, 1] == pytest.approx(0.2)

    def test_default_config_file(self):
        config, logging_section = load_config_file(DEFAULT_CONFIG)
        assert config.mode == "exact"
        assert config.K == 2
        assert config.coupling_convention == "quarter"
        assert logging_section["level"] == "INFO"

    def test_products_normalized(self):
        params = parse_config("A_alpha_tau: [3, 4]").system_params()
        assert params.hyperfine_A == pytest.approx(5.0)
        assert params.alphas == pytest.approx((0.6, 0.8))

    def test_quarter_convention_halves_products(self):
        params = parse_config("A_alpha_tau: [3, 4]\ncoupling_convention: quarter").system_params()
        assert params.hyperfine_A == pytest.approx(2.5)
        assert params.alphas == pytest.approx((0.6, 0.8))
        with pytest.raises(ConfigError, match="coupling_convention"):
            parse_config("A_alpha_tau: [3, 4]\ncoupling_convention: third")

    def test_capacity_error(self):
        with pytest.raises(CapacityError) as excinfo:
            parse_config("mode: exact\nK: 30\nhyperfine_A: 1.0")
        assert excinfo.value.exit_code == 4

    def test_largek_has_no_capacity_limit(self):
        config = parse_config("mode: largek\nK: 100000\na: 0.8\nVbar: 0.9")
        assert config.diagonal_params().K == 100_000

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="colour"):
            parse_config("A_alpha_tau: [1, 1]\ncolour: blue")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="extra"):
            parse_config("run:\n  K: 2\n  hyperfine_A: 1.0\nextra: {}")

    def test_invalid_yaml(self):
        with pytest.raises(ConfigError):
            parse_config("K: [1, 2")

    def test_missing_vbar(self):
        with pytest.raises(ConfigError, match="Vbar"):
            parse_config("mode: largek\nK: 1000\na: 0.8")

    def test_missing_hyperfine(self):
        with pytest.raises(ConfigError):
            parse_config("mode: exact\nK: 2")

    def test_conflicting_couplings(self):
        with pytest.raises(ConfigError):
            parse_config("A_alpha_tau: [1, 1]\nhyperfine_A: 2.0")

    def test_out_of_range_value(self):
        with pytest.raises(ConfigError, match="a"):
            parse_config("A_alpha_tau: [1, 1]\na: 1.5")


class TestCouplings:
    """Formes des coefficients α."""

    def test_uniform(self):
        config = parse_config("K: 4\nhyperfine_A: 2.0")
        assert config.alphas == pytest.approx([0.5] * 4)

    def test_exponential(self):
        config = parse_config("K: 3\nhyperfine_A: 2.0\nalpha_spec: exponential\ndecay: 2.0")
        alphas = np.array(config.alphas)
        assert np.dot(alphas, alphas) == pytest.approx(1.0)
        assert np.all(np.diff(alphas) < 0)

    def test_exponential_requires_decay(self):
        with pytest.raises(ConfigError, match="decay"):
            parse_config("K: 3\nhyperfine_A: 2.0\nalpha_spec: exponential")

    def test_explicit_renormalized_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            config = parse_config("K: 2\nhyperfine_A: 1.0\nalpha_spec: explicit\nalphas: [3, 4]")
        assert config.alphas == pytest.approx([0.6, 0.8])
        assert "renormalisés" in caplog.text

    def test_tau_scaling(self):
        config = parse_config("K: 1\nhyperfine_A: 2.0\ntau: 0.5\nelectron_zeeman: 4.0")
        params = config.system_params()
        assert params.hyperfine_A == pytest.approx(1.0)
        assert params.electron_zeeman == pytest.approx(2.0)

    def test_b_matrix(self):
        config = parse_config(
            "K: 3\nhyperfine_A: 1.0\nb_matrix: [[0, 0.1, 0], [0.1, 0, 0.2], [0, 0.2, 0]]"
        )
        assert config.hnuc == "dipolar"
        assert config.system_params().hnuc.b[1, 2] == pytest.approx(0.2)

    def test_uneven_residual(self):
        config = parse_config(
            "A_alpha_tau: [1, 1, 1, 1, 1, 2, 3, 4, 5, 6]\na: 0.8\ninitial_state: uneven"
        )
        assert config.split_uneven() == (8, 2)
        residual = config.system_params(residual=True)
        assert residual.K == 2
        assert residual.hyperfine_A == pytest.approx(np.hypot(5.0, 6.0))


class TestHnucFile:
    """H_nuc personnalisé lu dans un fichier .npy."""

    def test_valid_file(self, tmp_path):
        K = 2
        counts = np.array([bin(w).count("1") for w in range(2**K)], dtype=float)
        matrix = np.diag(0.1 * counts)
        matrix[1, 2] = matrix[2, 1] = 0.05
        path = tmp_path / "hnuc.npy"
        np.save(path, matrix)
        spec = load_hnuc_file(path, K)
        block = spec.provider(enumerate_sector(SectorIndex(K, 0)))
        np.testing.assert_allclose(block, [[0.1, 0.05], [0.05, 0.1]])

        config = parse_config(f"A_alpha_tau: [1, 2]\nhnuc: custom-file\nhnuc_file: {path}")
        assert config.system_params().hnuc.variant == "custom"

    def test_wrong_shape(self, tmp_path):
        path = tmp_path / "hnuc.npy"
        np.save(path, np.zeros((3, 3)))
        with pytest.raises(ConfigError, match="forme"):
            load_hnuc_file(path, 2)

    def test_not_conserving(self, tmp_path):
        path = tmp_path / "hnuc.npy"
        matrix = np.zeros((4, 4))
        matrix[0, 3] = matrix[3, 0] = 1.0
        np.save(path, matrix)
        with pytest.raises(ConfigError, match="I_z"):
            load_hnuc_file(path, 2)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_hnuc_file(tmp_path / "absent.npy", 2)


class TestRoundTrip:
    """Sérialisation et empreinte."""

    def test_emit_parse(self, two_spin_config):
        again = parse_config(emit_config(two_spin_config))
        assert again.model_dump() == two_spin_config.model_dump()

    def test_emit_parse_largek(self):
        config = parse_config("mode: largek-uneven\nK: 1000\na: 0.8\nVbar: 0.9\nformat: json")
        assert parse_config(emit_config(config)).model_dump() == config.model_dump()

    def test_fingerprint_ignores_runtime_fields(self, two_spin_config):
        moved = apply_overrides(two_spin_config, out="elsewhere.csv", threads=4, format="json")
        assert moved.fingerprint() == two_spin_config.fingerprint()
        changed = apply_overrides(two_spin_config, a=0.5)
        assert changed.fingerprint() != two_spin_config.fingerprint()

    def test_apply_overrides_ignores_none(self, two_spin_config):
        assert apply_overrides(two_spin_config, mode=None) is two_spin_config
        assert apply_overrides(two_spin_config, mode="spectrum").mode == "spectrum"

    def test_frozen(self, two_spin_config):
        with pytest.raises(Exception):
            two_spin_config.a = 0.1

    def test_validate_config_direct(self):
        config = validate_config({"mode": "trajectory", "A_alpha_tau": [8, 4], "seed": 3})
        assert isinstance(config, RunConfig)
        assert config.streak_policy().target_streak == 50


class TestEnvironment:
    """Valeurs par défaut lues dans l'environnement."""

    def test_reads_variables(self, monkeypatch, tmp_path):
        monkeypatch.setenv("SPINPOL_THREADS", "3")
        monkeypatch.setenv("SPINPOL_LOG_LEVEL", "debug")
        assert environment_defaults(str(tmp_path / ".env")) == {"threads": 3, "log_level": "DEBUG"}

    def test_dotenv_file(self, monkeypatch, tmp_path):
        monkeypatch.delenv("SPINPOL_THREADS", raising=False)
        monkeypatch.delenv("SPINPOL_LOG_LEVEL", raising=False)
        path = tmp_path / ".env"
        path.write_text("SPINPOL_THREADS=2\n")
        assert environment_defaults(str(path))["threads"] == 2
        monkeypatch.delenv("SPINPOL_THREADS", raising=False)

    def test_invalid_threads(self, monkeypatch, tmp_path):
        monkeypatch.setenv("SPINPOL_THREADS", "many")
        with pytest.raises(ConfigError):
            environment_defaults(str(tmp_path / ".env"))
