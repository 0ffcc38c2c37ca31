"""Integrator correctness, saturation consistency, and decay evaluation."""

from __future__ import annotations

import numpy as np
import pytest

from rdsat.controller import SaturationMap, assemble_closed_loop
from rdsat.sim import ConfigError, SimulationConfig, check_decay, simulate

from benchmark import Q_C, initial_parabola


@pytest.fixture(scope="module")
def decoupled_setup(dirichlet_basis, benchmark_plant, benchmark_modal):
    """K = L = 0: every mode is an independent scalar linear ODE."""
    real = assemble_closed_loop(
        dirichlet_basis, benchmark_modal, (np.zeros((2, 1)), np.zeros(1)),
        1, 4, Q_C, SaturationMap(benchmark_plant.saturation_levels),
    )
    return real


class TestIntegrator:
    def test_single_mode_exponential(self, dirichlet_basis, benchmark_plant, benchmark_modal, decoupled_setup):
        # with zero gains nothing saturates and z_n(t) = e^{(-lambda_n + q_c) t} z_n(0)
        phi2 = dirichlet_basis.eigenfunctions[1]
        config = SimulationConfig(z0_samples=phi2, n_sim=6, t_final=0.5)
        trace = simulate(
            dirichlet_basis, benchmark_plant, decoupled_setup, config, modal=benchmark_modal
        )
        rate = -dirichlet_basis.eigenvalues[1] + Q_C
        expected = np.exp(rate * trace.times)
        assert np.max(np.abs(trace.modal_states[:, 1] - expected)) < 1e-7
        assert np.max(np.abs(trace.modal_states[:, 0])) < 1e-9

    def test_fourth_order_convergence(self, dirichlet_basis, benchmark_plant, benchmark_modal, margin_realization):
        # halving dt shrinks the terminal error against a quarter-step
        # reference by about 16x
        # small IC keeps the loop out of saturation (the clamp kinks would
        # spoil the smoothness the order estimate needs); t_final is an exact
        # multiple of every step so terminal states compare at equal times
        z0 = 0.01 * initial_parabola(dirichlet_basis.grid)
        base_dt = 6.4e-4
        terminal = {}
        for dt in (base_dt, base_dt / 2, base_dt / 4):
            config = SimulationConfig(
                z0_samples=z0, n_sim=12, dt=dt, t_final=0.0384, record_stride=10**9
            )
            trace = simulate(
                dirichlet_basis, benchmark_plant, margin_realization, config,
                modal=benchmark_modal,
            )
            terminal[dt] = np.concatenate(
                [trace.modal_states[-1], trace.observer_states[-1]]
            )
        err_coarse = np.linalg.norm(terminal[base_dt] - terminal[base_dt / 4])
        err_fine = np.linalg.norm(terminal[base_dt / 2] - terminal[base_dt / 4])
        ratio = err_coarse / err_fine
        assert 10.0 < ratio < 24.0

    def test_stiffness_guard(self, dirichlet_basis, benchmark_plant, benchmark_modal, margin_realization):
        config = SimulationConfig(
            z0_samples=initial_parabola(dirichlet_basis.grid), n_sim=50, dt=1e-3, t_final=0.1
        )
        with pytest.raises(ConfigError, match="dt"):
            simulate(
                dirichlet_basis, benchmark_plant, margin_realization, config,
                modal=benchmark_modal,
            )

    def test_n_sim_bounds(self, dirichlet_basis, benchmark_plant, benchmark_modal, margin_realization):
        config = SimulationConfig(z0_samples=initial_parabola(dirichlet_basis.grid), n_sim=2)
        with pytest.raises(ConfigError, match="n_sim"):
            simulate(
                dirichlet_basis, benchmark_plant, margin_realization, config,
                modal=benchmark_modal,
            )


class TestBenchmarkTrace:
    def test_saturation_consistency(self, benchmark_trace):
        trace, _ = benchmark_trace
        levels = np.array([1.0, 2.0])
        expected = np.clip(trace.inputs, -levels, levels)
        assert np.array_equal(trace.inputs_sat, expected)

    def test_input_saturates_during_transient(self, benchmark_trace):
        trace, _ = benchmark_trace
        assert np.max(np.abs(trace.inputs[:, 0])) >= 1.0

    def test_state_decays(self, benchmark_trace):
        trace, _ = benchmark_trace
        assert trace.l2_norm[-1] <= 1e-3 * trace.l2_norm[0]

    def test_lyapunov_guarantee_along_trace(self, benchmark_trace):
        trace, cert = benchmark_trace
        report = check_decay(trace, cert)
        assert not report.degenerate
        assert report.max_ratio <= 1.02
        assert report.stays_in_level_set

    def test_level_set_never_left(self, benchmark_trace):
        # once V(0) <= 1/mu the trajectory cannot exit the certified set
        trace, cert = benchmark_trace
        assert trace.lyapunov[0] <= 1.0 / cert.mu
        assert np.all(trace.lyapunov <= (1.0 / cert.mu) * (1.0 + 1e-9))

    def test_reconstruction_error_field_shape(self, benchmark_trace, dirichlet_basis):
        trace, _ = benchmark_trace
        field = trace.reconstruction_error(dirichlet_basis, time_stride=400)
        assert field.shape[1] == len(dirichlet_basis.grid)
        # the field decays along with the state
        assert np.max(np.abs(field[-1])) < 1e-4 * np.max(np.abs(field[0]))


class TestCheckDecay:
    def test_zero_ic_degenerate(self, dirichlet_basis, benchmark_plant, benchmark_modal, margin_realization, doa_results):
        config = SimulationConfig(
            z0_samples=np.zeros_like(dirichlet_basis.grid), n_sim=8, t_final=0.2
        )
        cert = doa_results["thm1"]["certificate"]
        trace = simulate(
            dirichlet_basis, benchmark_plant, margin_realization, config,
            certificate=cert, modal=benchmark_modal,
        )
        report = check_decay(trace, cert)
        assert report.degenerate

    def test_outside_ellipsoid_no_claim(self, dirichlet_basis, benchmark_plant, benchmark_modal, margin_realization, doa_results):
        # far outside the certified set the ratio may exceed one; the report
        # must still come back rather than assert
        cert = doa_results["thm1"]["certificate"]
        config = SimulationConfig(
            z0_samples=10.0 * initial_parabola(dirichlet_basis.grid), n_sim=8, t_final=0.2
        )
        trace = simulate(
            dirichlet_basis, benchmark_plant, margin_realization, config,
            certificate=cert, modal=benchmark_modal,
        )
        report = check_decay(trace, cert)
        assert report.initial_value > report.threshold
        assert report.stays_in_level_set is None
