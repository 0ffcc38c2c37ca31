"""Shared fixtures: the constant-coefficient Dirichlet basis, the two-input
benchmark plant, and the expensive certificate/simulation artifacts reused
across test modules."""

from __future__ import annotations

import numpy as np
import pytest

from rdsat import lmi
from rdsat.controller import SaturationMap, assemble_closed_loop, synthesize_gains
from rdsat.spectral import project_modes
from rdsat.sturm_liouville import constant_coefficients, solve_eigenproblem

from benchmark import DELTA, REFERENCE_K, REFERENCE_L, Q_C, make_benchmark_plant


@pytest.fixture(scope="session")
def dirichlet_basis():
    """p = 1, q = 1, Dirichlet both ends, 60 modes on the default grid."""
    coeffs = constant_coefficients(1.0, 1.0)
    return solve_eigenproblem(coeffs, 0.0, 0.0, n_max=60)


@pytest.fixture(scope="session")
def dirichlet_coeffs():
    return constant_coefficients(1.0, 1.0)


@pytest.fixture(scope="session")
def benchmark_plant(dirichlet_basis):
    return make_benchmark_plant(dirichlet_basis.grid)


@pytest.fixture(scope="session")
def benchmark_modal(dirichlet_basis, benchmark_plant):
    return project_modes(dirichlet_basis, benchmark_plant)


@pytest.fixture(scope="session")
def reference_realization(dirichlet_basis, benchmark_plant, benchmark_modal):
    """N = 4 closed loop with the benchmark reference gains."""
    return assemble_closed_loop(
        dirichlet_basis,
        benchmark_modal,
        (REFERENCE_K, REFERENCE_L),
        N0=1,
        N=4,
        q_c=Q_C,
        saturation=SaturationMap(benchmark_plant.saturation_levels),
        delta=DELTA,
    )


@pytest.fixture(scope="session")
def margin_realization(dirichlet_basis, benchmark_plant, benchmark_modal):
    """N = 4 closed loop with Riccati gains meeting the -delta margin."""
    A0 = np.atleast_2d(-dirichlet_basis.eigenvalues[0] + Q_C)
    K, L = synthesize_gains(
        A0,
        benchmark_modal.b_coeffs[:1, :],
        benchmark_modal.c_coeffs[:1][None, :],
        delta=DELTA,
        strategy="riccati",
    )
    return assemble_closed_loop(
        dirichlet_basis,
        benchmark_modal,
        (K, L),
        N0=1,
        N=4,
        q_c=Q_C,
        saturation=SaturationMap(benchmark_plant.saturation_levels),
        delta=DELTA,
    )


DOA_ALPHA = {"thm1": 0.1, "thm2": 2.0}


@pytest.fixture(scope="session")
def doa_R():
    return np.diag([1.0, 1.0, 1.0, 1.0, 0.005])


@pytest.fixture(scope="session")
def doa_results(dirichlet_basis, benchmark_plant, benchmark_modal, margin_realization, doa_R):
    """Shaped kappa = 0 certificates for both bounded-sensing theorems."""
    results = {}
    for tag in ("thm1", "thm2"):
        problem = lmi.build_problem(
            dirichlet_basis, benchmark_plant, benchmark_modal, margin_realization,
            tag, kappa=0.0, alpha=DOA_ALPHA[tag],
        )
        r_final, cert, seq = lmi.minimize_r(problem, doa_R)
        results[tag] = {"problem": problem, "r": r_final, "certificate": cert, "sequence": seq}
    return results


@pytest.fixture(scope="session")
def benchmark_trace(dirichlet_basis, benchmark_plant, benchmark_modal, margin_realization, doa_results):
    """Fifty-mode simulation of the benchmark loop under its shaped certificate."""
    from dataclasses import replace

    from benchmark import initial_parabola
    from rdsat.sim import SimulationConfig, simulate

    cert = doa_results["thm1"]["certificate"]
    kappa = lmi.kappa_margin(doa_results["thm1"]["problem"], cert)
    cert = replace(cert, kappa=kappa)
    config = SimulationConfig(
        z0_samples=initial_parabola(dirichlet_basis.grid), n_sim=50, t_final=10.0
    )
    trace = simulate(
        dirichlet_basis, benchmark_plant, margin_realization, config,
        certificate=cert, modal=benchmark_modal,
    )
    return trace, cert
