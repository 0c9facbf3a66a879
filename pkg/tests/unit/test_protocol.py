"""Tests unitaires du protocole de mesures répétées."""

import logging
import math

import numpy as np
import pytest
from scipy.linalg import expm

from spinpol.core.errors import DomainError, NumericalError
from spinpol.core.hamiltonian import SystemParams, full_space_hamiltonian
from spinpol.core.largek import DiagonalModelParams, diagonal_propagator, diagonal_rounds
from spinpol.core.propagator import ConditionedPropagator, conditioned_blocks, spectral_report
from spinpol.core.protocol import (
    CSV_COLUMNS,
    ProtocolRecord,
    StreakPolicy,
    even_state_expectation,
    expected_success_decay,
    run_conditioned,
    run_ensemble,
    run_rounds,
    run_trajectory,
    run_uneven,
    spawn_seeds,
    step_conditioned,
    step_failed,
)
from spinpol.core.states import expected_Iz, polarized_product, uneven_polarized
from tests.unit.test_states import product_state

pytestmark = pytest.mark.unit


def brute_force_series(params: SystemParams, tau: float, a: float, M_max: int):
    """⟨I_z⟩_M et ln P_M sur l'espace complet, V = ⟨↑|exp(-iHτ)|↑⟩."""
    K = params.K
    U = expm(-1j * tau * full_space_hamiltonian(params))
    V = U[2**K :, 2**K :]
    Iz = np.array([bin(w).count("1") - K / 2 for w in range(2**K)])
    rho = product_state(K, a).astype(complex)
    expected, log_P = [], []
    for _ in range(M_max + 1):
        trace = np.trace(rho).real
        expected.append(float(np.diag(rho).real @ Iz / trace))
        log_P.append(math.log(trace))
        rho = V @ rho @ V.conj().T
    return np.array(expected), np.array(log_P)


class TestConditionedSeries:
    """Séries conditionnées ⟨I_z⟩_M et P_M."""

    @pytest.mark.parametrize("a", [0.5, 0.8])
    def test_full_space_oracle(self, dipolar_params, a):
        record = run_conditioned(
            polarized_product(3, a), conditioned_blocks(dipolar_params, 0.9), 20
        )
        expected, log_P = brute_force_series(dipolar_params, 0.9, a, 20)
        np.testing.assert_allclose(record.expected_Iz, expected, atol=1e-10)
        np.testing.assert_allclose(record.log_P, log_P, atol=1e-10)

    @pytest.mark.parametrize("a", [0.5, 0.8])
    def test_dual_path_agreement(self, two_spin_propagator, a):
        record = run_conditioned(polarized_product(2, a), two_spin_propagator, 40)
        expected, log_P = even_state_expectation(two_spin_propagator, a, 40)
        np.testing.assert_allclose(record.expected_Iz, expected, atol=1e-10)
        np.testing.assert_allclose(record.log_P, log_P, atol=1e-10)

    def test_dual_path_odd_K(self, dipolar_params):
        prop = conditioned_blocks(dipolar_params, 1.0)
        record = run_conditioned(polarized_product(3, 0.7), prop, 25)
        expected, log_P = even_state_expectation(prop, 0.7, 25)
        np.testing.assert_allclose(record.expected_Iz, expected, atol=1e-10)
        np.testing.assert_allclose(record.log_P, log_P, atol=1e-10)

    def test_log_P_nonincreasing(self, two_spin_propagator, dipolar_params):
        for prop, K in ((two_spin_propagator, 2), (conditioned_blocks(dipolar_params, 1.0), 3)):
            record = run_conditioned(polarized_product(K, 0.6), prop, 50)
            assert record.log_P[0] == 0.0
            assert np.all(np.diff(record.log_P) <= 1e-12)

    @pytest.mark.parametrize("a", [0.5, 0.8])
    def test_two_spin_experiment(self, two_spin_propagator, a):
        """⟨I_z⟩_M croît et atteint 0,99·K/2 en 50 mesures."""
        record = run_conditioned(polarized_product(2, a), two_spin_propagator, 50)
        assert len(record.to_frame()) == 51
        assert record.expected_Iz[0] == pytest.approx(2 * (a - 0.5))
        assert np.all(np.diff(record.expected_Iz) >= -1e-12)
        assert record.final_expected_Iz >= 0.99 * 1.0

    def test_flipflop_only_stays_mixed(self, flipflop_params):
        """Sans Overhauser ni H_nuc, l'état sombre du secteur central bloque ⟨I_z⟩."""
        prop = conditioned_blocks(flipflop_params, 1.0)
        record = run_conditioned(polarized_product(2, 0.5), prop, 2000)
        assert record.final_expected_Iz < 0.9
        assert record.final_expected_Iz == pytest.approx(0.5, abs=0.05)

    def test_dipolar_three_spins_converge(self, dipolar_params):
        prop = conditioned_blocks(dipolar_params, 1.0)
        gap = spectral_report(prop).spectral_gap
        assert gap > 0.0
        record = run_conditioned(polarized_product(3, 0.5), prop, math.ceil(10 / gap))
        assert record.final_expected_Iz >= 0.99 * 1.5

    def test_fully_polarized_is_stationary(self, two_spin_propagator):
        record = run_conditioned(polarized_product(2, 1.0), two_spin_propagator, 10)
        np.testing.assert_allclose(record.expected_Iz, 1.0)
        np.testing.assert_allclose(record.log_P, 0.0, atol=1e-12)

    def test_frame_columns(self, two_spin_propagator):
        frame = run_conditioned(polarized_product(2, 0.5), two_spin_propagator, 5).to_frame()
        assert list(frame.columns) == CSV_COLUMNS
        assert list(frame["M"]) == list(range(6))
        assert frame["log10_P_M"].iloc[0] == 0.0

    def test_rejects_incompatible(self, two_spin_propagator):
        with pytest.raises(DomainError):
            step_conditioned(polarized_product(3, 0.5), two_spin_propagator)
        with pytest.raises(DomainError):
            run_conditioned(polarized_product(2, 0.5), two_spin_propagator, 0)

    def test_underflow_raises(self):
        tiny = {1: 1e-200 * np.eye(1), -1: 1e-200 * np.eye(1)}
        prop = ConditionedPropagator.from_blocks(1, 1.0, tiny)
        with pytest.raises(NumericalError):
            step_conditioned(polarized_product(1, 0.5), prop)


class TestFailedBranch:
    """Branche « bas » : partenaire de Kraus W."""

    def test_probabilities_sum_to_one(self, two_spin_propagator):
        rho = polarized_product(2, 0.5)
        _, log_up = step_conditioned(rho, two_spin_propagator)
        rho_down, log_down = step_failed(rho, two_spin_propagator)
        assert math.exp(log_up) + math.exp(log_down) == pytest.approx(1.0, abs=1e-10)
        assert set(rho_down.sectors) <= {0, 2}
        assert expected_Iz(rho_down) > expected_Iz(rho)

    def test_polarized_state_never_fails(self, two_spin_propagator):
        rho_down, log_down = step_failed(polarized_product(2, 1.0), two_spin_propagator)
        assert rho_down is None
        assert log_down == -np.inf

    def test_requires_kraus_partner(self):
        with pytest.raises(DomainError):
            step_failed(polarized_product(2, 0.5), diagonal_propagator(2, 0.9))


class TestUneven:
    """Protocole sur l'état inégal."""

    def test_offset_added(self, two_spin_propagator):
        record = run_uneven(uneven_polarized(10, 0.8), two_spin_propagator, 30)
        residual = run_conditioned(polarized_product(2, 0.5), two_spin_propagator, 30)
        np.testing.assert_allclose(record.expected_Iz, residual.expected_Iz + 4.0, atol=1e-12)
        np.testing.assert_allclose(record.log_P, residual.log_P, atol=1e-12)
        assert record.K_total == pytest.approx(10.0)

    def test_no_residual_spins(self):
        record = run_uneven(uneven_polarized(4, 1.0), None, 5)
        np.testing.assert_allclose(record.expected_Iz, 2.0)
        np.testing.assert_allclose(record.log_P, 0.0)
        assert len(record) == 6


class TestDecay:
    """Résumé de décroissance de P_M."""

    def test_interpolated_crossing(self):
        M = np.arange(8)
        record = ProtocolRecord.from_series(np.zeros(8), M * np.log(0.5), K_total=2)
        decay = expected_success_decay(record, 0.1)
        assert decay.M_at_level == pytest.approx(np.log(0.1) / np.log(0.5))
        assert decay.slope == pytest.approx(np.log(0.5))
        assert decay.initial_slope == pytest.approx(np.log(0.5))

    def test_no_crossing(self, two_spin_propagator):
        record = run_conditioned(polarized_product(2, 1.0), two_spin_propagator, 5)
        assert expected_success_decay(record).M_at_level is None

    def test_too_short(self):
        with pytest.raises(DomainError):
            expected_success_decay(ProtocolRecord.from_series([0.0], [0.0], K_total=2))


class TestRounds:
    """Manches successives arrêtées sur la probabilité de succès."""

    def test_matches_diagonal_model(self):
        params = DiagonalModelParams(K=4, a=0.5, Vbar=0.9)
        exact = run_rounds(
            polarized_product(4, 0.5), diagonal_propagator(4, 0.9), 2, 0.1, max_M=200
        )
        model = diagonal_rounds(params, 2, 0.1, max_M=200)
        assert [r.M_stop for r in exact] == [r.M_stop for r in model]
        for e, m in zip(exact, model):
            assert e.log_P == pytest.approx(m.log_P, abs=1e-10)
            assert e.expected_Iz == pytest.approx(m.expected_Iz, abs=1e-10)

    def test_first_round_stops_at_level(self, two_spin_propagator):
        first = run_rounds(polarized_product(2, 0.5), two_spin_propagator, 1, 0.5)[0]
        assert first.log_P <= np.log(0.5)
        assert first.M_stop >= 1

    def test_fixed_length_rounds(self, two_spin_propagator):
        rounds = run_rounds(polarized_product(2, 0.5), two_spin_propagator, 3, stop_M=10)
        assert [r.M_stop for r in rounds] == [10, 10, 10]
        assert [r.index for r in rounds] == [0, 1, 2]
        assert rounds[-1].expected_Iz >= rounds[0].expected_Iz - 1e-12

    def test_rejects_probability(self, two_spin_propagator):
        with pytest.raises(DomainError):
            run_rounds(polarized_product(2, 0.5), two_spin_propagator, 1, 1.5)


class TestTrajectories:
    """Boucle injection-mesure-redémarrage."""

    def test_deterministic(self, two_spin_propagator):
        rho = polarized_product(2, 0.5)
        first = run_trajectory(rho, two_spin_propagator, 42, StreakPolicy(target_streak=10))
        second = run_trajectory(rho, two_spin_propagator, 42, StreakPolicy(target_streak=10))
        assert first.outcomes == second.outcomes
        assert first.expected_Iz_history == second.expected_Iz_history

    def test_record_bookkeeping(self, two_spin_propagator):
        record = run_trajectory(
            polarized_product(2, 0.8), two_spin_propagator, 3, StreakPolicy(target_streak=5)
        )
        assert record.reached_target
        assert record.outcomes.endswith("u" * 5)
        assert record.restarts == record.outcomes.count("d")
        assert record.streak_lengths[-1] == 5
        assert sum(record.streak_lengths) == record.outcomes.count("u")
        assert len(record.expected_Iz_history) == record.attempts + 1

    def test_exhausted(self, two_spin_propagator, caplog):
        policy = StreakPolicy(max_attempts=3, target_streak=50)
        with caplog.at_level(logging.WARNING):
            record = run_trajectory(polarized_product(2, 0.5), two_spin_propagator, 1, policy)
        assert not record.reached_target
        assert record.attempts == 3
        assert "cible non atteinte" in caplog.text

    @pytest.mark.parametrize("on_failure", ["reuse", "reset"])
    def test_streaks_increase_polarization(self, two_spin_propagator, on_failure):
        """Chaque « u » de l'expérience à deux spins augmente ⟨I_z⟩ au sens large."""
        policy = StreakPolicy(max_attempts=500, target_streak=50, on_failure=on_failure)
        for seed in range(20):
            record = run_trajectory(polarized_product(2, 0.5), two_spin_propagator, seed, policy)
            history = record.expected_Iz_history
            start = 0
            for step, outcome in enumerate(record.outcomes):
                if outcome == "u":
                    assert history[step + 1] >= history[step] - 1e-12
                else:
                    assert history[step] >= history[start] - 1e-12
                    start = step + 1
            assert history[-1] >= history[start] - 1e-12

    def test_policy_validation(self):
        with pytest.raises(DomainError):
            StreakPolicy(on_failure="retry")
        with pytest.raises(DomainError):
            StreakPolicy(target_streak=0)

    @pytest.mark.slow
    def test_post_selection_consistency(self, two_spin_propagator):
        """Fraction de succès au premier essai = P₁ à 3σ sur 10⁴ graines."""
        rho = polarized_product(2, 0.5)
        rho_up, log_up = step_conditioned(rho, two_spin_propagator)
        p = math.exp(log_up)
        policy = StreakPolicy(max_attempts=1, target_streak=1)
        summary = run_ensemble(rho, two_spin_propagator, 2024, 10_000, policy)

        sigma = math.sqrt(p * (1 - p) / 10_000)
        assert abs(summary.success_fraction - p) <= 3 * sigma
        successes = [r for r in summary.records if r.outcomes == "u"]
        assert all(r.final_expected_Iz == pytest.approx(expected_Iz(rho_up)) for r in successes)

    def test_reset_and_reuse(self, two_spin_propagator):
        rho = polarized_product(2, 0.5)
        initial = expected_Iz(rho)
        failed = expected_Iz(step_failed(rho, two_spin_propagator)[0])
        for on_failure, after_first_failure in (("reset", initial), ("reuse", failed)):
            policy = StreakPolicy(max_attempts=1, target_streak=1, on_failure=on_failure)
            summary = run_ensemble(rho, two_spin_propagator, 11, 1000, policy)
            failures = [r for r in summary.records if r.outcomes == "d"]
            assert failures
            for r in failures:
                assert r.final_expected_Iz == pytest.approx(after_first_failure)

    def test_spawn_seeds(self):
        seeds = spawn_seeds(7, 100)
        assert seeds == spawn_seeds(7, 100)
        assert len(set(seeds)) == 100
        assert all(0 <= s < 2**64 for s in seeds)

    @pytest.mark.slow
    def test_process_pool_matches_sequential(self, two_spin_propagator):
        rho = polarized_product(2, 0.5)
        policy = StreakPolicy(max_attempts=200, target_streak=20)
        sequential = run_ensemble(rho, two_spin_propagator, 5, 8, policy, n_jobs=1)
        parallel = run_ensemble(rho, two_spin_propagator, 5, 8, policy, n_jobs=2)
        assert [r.outcomes for r in sequential.records] == [r.outcomes for r in parallel.records]
        assert sequential.mean_final_Iz == parallel.mean_final_Iz
