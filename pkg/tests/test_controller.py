"""Controller synthesis, closed-loop assembly, and saturation-map checks."""

from __future__ import annotations

import numpy as np
import pytest

from rdsat.controller import (
    HypothesisViolationError,
    NeedsMoreModesError,
    SaturationMap,
    assemble_closed_loop,
    deadzone,
    determine_N0,
    saturate,
    synthesize_gains,
)
from rdsat.spectral import project_modes
from rdsat.sturm_liouville import constant_coefficients, solve_eigenproblem

from benchmark import REFERENCE_K, REFERENCE_L, make_benchmark_plant


@pytest.fixture(scope="module")
def benchmark(benchmark_plant, benchmark_modal):
    return benchmark_plant, benchmark_modal


class TestDetermineN0:
    def test_benchmark_value(self, dirichlet_basis):
        assert determine_N0(dirichlet_basis, q_c=11.0, delta=1.0) == 1

    def test_all_modes_stable_clamps_to_one(self, dirichlet_basis):
        assert determine_N0(dirichlet_basis, q_c=-5.0, delta=1.0) == 1

    def test_two_slow_modes(self, dirichlet_basis):
        # lambda_2 ~ 40.48 < 51 while lambda_3 ~ 89.83 > 51
        assert determine_N0(dirichlet_basis, q_c=50.0, delta=1.0) == 2

    def test_needs_more_modes(self, dirichlet_basis):
        with pytest.raises(NeedsMoreModesError):
            determine_N0(dirichlet_basis, q_c=1e6, delta=1.0)


class TestSynthesizeGains:
    def test_reference_gains_validate(self, dirichlet_basis, benchmark):
        _, modal = benchmark
        A0 = np.atleast_2d(-dirichlet_basis.eigenvalues[0] + 11.0)
        B0 = modal.b_coeffs[:1, :]
        C0 = modal.c_coeffs[:1][None, :]
        K, L = synthesize_gains(
            A0, B0, C0, delta=1.0, strategy="user-supplied", K=REFERENCE_K, L=REFERENCE_L
        )
        assert np.allclose(K, REFERENCE_K) and np.allclose(L.ravel(), REFERENCE_L)

    def test_uncontrollable_mode_rejected(self):
        A0 = np.atleast_2d(0.5)
        B0 = np.zeros((1, 2))
        C0 = np.atleast_2d(0.3)
        with pytest.raises(HypothesisViolationError, match="mode 1"):
            synthesize_gains(A0, B0, C0, delta=1.0)

    def test_riccati_meets_margin(self):
        A0 = np.atleast_2d(0.13)
        B0 = np.array([[0.16, -0.21]])
        C0 = np.atleast_2d(0.14)
        K, L = synthesize_gains(A0, B0, C0, delta=1.0, strategy="riccati")
        assert np.max(np.real(np.linalg.eigvals(A0 + B0 @ K))) < -1.0
        assert np.max(np.real(np.linalg.eigvals(A0 - L @ C0))) < -1.0

    def test_pole_placement_scalar(self):
        A0 = np.atleast_2d(0.13)
        B0 = np.array([[0.16, -0.21]])
        C0 = np.atleast_2d(0.14)
        K, L = synthesize_gains(A0, B0, C0, delta=1.0, strategy="pole-placement")
        assert np.max(np.real(np.linalg.eigvals(A0 + B0 @ K))) < -1.0
        assert np.max(np.real(np.linalg.eigvals(A0 - L @ C0))) < -1.0

    def test_destabilizing_user_gains_rejected(self, dirichlet_basis, benchmark):
        _, modal = benchmark
        A0 = np.atleast_2d(-dirichlet_basis.eigenvalues[0] + 11.0)
        B0 = modal.b_coeffs[:1, :]
        C0 = modal.c_coeffs[:1][None, :]
        with pytest.raises(HypothesisViolationError, match="non-Hurwitz"):
            synthesize_gains(
                A0, B0, C0, delta=1.0, strategy="user-supplied", K=np.zeros((2, 1)), L=[0.0]
            )


class TestAssembleClosedLoop:
    def test_benchmark_dimensions_and_diagonal(self, dirichlet_basis, benchmark):
        plant, modal = benchmark
        real = assemble_closed_loop(
            dirichlet_basis,
            modal,
            (REFERENCE_K, REFERENCE_L),
            N0=1,
            N=4,
            q_c=11.0,
            saturation=SaturationMap(plant.saturation_levels),
        )
        assert real.F.shape == (8, 8)
        lam = dirichlet_basis.eigenvalues
        assert np.allclose(np.diag(real.A1), -lam[1:4] + 11.0)
        # stacked-block bookkeeping
        assert real.Emat.shape == (1, 8) and real.Ktilde.shape == (2, 8)
        assert np.allclose(real.Lcal.ravel(), [15.13, -15.13, 0, 0, 0, 0, 0, 0])

    def test_zero_gains_decouple(self, dirichlet_basis, benchmark):
        plant, modal = benchmark
        real = assemble_closed_loop(
            dirichlet_basis,
            modal,
            (np.zeros((2, 1)), np.zeros(1)),
            N0=1,
            N=4,
            q_c=11.0,
            saturation=SaturationMap(plant.saturation_levels),
        )
        lam = dirichlet_basis.eigenvalues
        expected = np.repeat(-lam[:4] + 11.0, 2)
        got = np.sort(np.real(np.linalg.eigvals(real.F)))
        assert np.allclose(np.sort(expected), got, atol=1e-12)

    def test_dirichlet_mode_rescales_C1(self):
        coeffs = constant_coefficients(1.0, 1.0)
        basis = solve_eigenproblem(coeffs, np.pi / 4, 0.0, n_max=20)
        from rdsat.spectral import DIRICHLET_LEFT, PlantSpec, indicator_samples

        grid = basis.grid
        plant = PlantSpec(
            grid=grid,
            p_values=np.ones_like(grid),
            q_tilde_values=np.full_like(grid, -10.0),
            theta1=np.pi / 4,
            theta2=0.0,
            q_c=11.0,
            actuators=[indicator_samples(grid, np.cos, (0.1, 0.3))],
            sensor=DIRICHLET_LEFT,
            saturation_levels=np.array([1.0]),
        )
        modal = project_modes(basis, plant)
        real = assemble_closed_loop(
            basis, modal, (np.array([[-2.0]]), np.array([5.0])), 1, 4, 11.0,
            SaturationMap(np.array([1.0])),
        )
        lam = basis.eigenvalues
        expected = np.linalg.norm(basis.phi_at_0[1:4] / np.sqrt(lam[1:4]))
        assert np.linalg.norm(real.C1) == pytest.approx(expected, rel=1e-12)
        assert np.allclose(real.error_scaling(), np.sqrt(lam[1:4]))

    def test_needs_more_modes_guard(self, dirichlet_basis, benchmark):
        plant, modal = benchmark
        with pytest.raises(NeedsMoreModesError):
            assemble_closed_loop(
                dirichlet_basis, modal, (REFERENCE_K, REFERENCE_L), 1, 60, 11.0,
                SaturationMap(plant.saturation_levels),
            )


class TestSaturationMaps:
    def test_inside_limits(self):
        sm = SaturationMap(np.array([1.0, 2.0]))
        v = np.array([0.5, -1.5])
        assert np.array_equal(saturate(v, sm), v)
        assert np.array_equal(deadzone(v, sm), np.zeros(2))

    def test_clamped(self):
        sm = SaturationMap(np.array([1.0, 2.0]))
        v = np.array([3.0, -5.0])
        assert np.array_equal(saturate(v, sm), [1.0, -2.0])
        assert np.array_equal(deadzone(v, sm), [-2.0, 3.0])

    def test_generalized_sector_condition(self):
        # phi(v)^T T (phi(v) + w) <= 0 whenever |v - w| <= l, T diagonal > 0
        rng = np.random.default_rng(2024)
        sm = SaturationMap(np.array([1.0, 2.0]))
        n_draws = 100_000
        v = rng.normal(scale=3.0, size=(n_draws, 2))
        w = v - rng.uniform(-1.0, 1.0, size=(n_draws, 2)) * sm.levels
        t_diag = rng.uniform(0.05, 5.0, size=(n_draws, 2))
        phi = np.clip(v, -sm.levels, sm.levels) - v
        vals = np.sum(phi * t_diag * (phi + w), axis=1)
        assert np.all(vals <= 0.0)
