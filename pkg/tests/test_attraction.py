"""Membership functionals, inclusion soundness, and state embedding."""

from __future__ import annotations

import numpy as np
import pytest

from rdsat import attraction
from rdsat.sturm_liouville import quadratic_form_A, simpson_weights

from benchmark import initial_parabola


@pytest.fixture(scope="module")
def thm1_setup(doa_results, dirichlet_basis, benchmark_plant):
    cert = doa_results["thm1"]["certificate"]
    return attraction.ellipsoid_from_certificate(cert), cert


class TestMembership:
    def test_origin_inside(self, thm1_setup, dirichlet_basis, benchmark_plant):
        ellipsoid, _ = thm1_setup
        res = attraction.membership(
            np.zeros_like(dirichlet_basis.grid), ellipsoid, dirichlet_basis, benchmark_plant
        )
        assert res.value == 0.0 and res.inside

    def test_benchmark_ic_inside_both(self, doa_results, dirichlet_basis, benchmark_plant):
        z0 = initial_parabola(dirichlet_basis.grid)
        for tag in ("thm1", "thm2"):
            cert = doa_results[tag]["certificate"]
            ellipsoid = attraction.ellipsoid_from_certificate(cert)
            res = attraction.membership(z0, ellipsoid, dirichlet_basis, benchmark_plant)
            assert res.inside, f"{tag}: {res.value} vs {res.threshold}"

    def test_scaled_ic_outside(self, thm1_setup, dirichlet_basis, benchmark_plant):
        ellipsoid, _ = thm1_setup
        z0 = 10.0 * initial_parabola(dirichlet_basis.grid)
        res = attraction.membership(z0, ellipsoid, dirichlet_basis, benchmark_plant)
        assert not res.inside

    def test_quadratic_homogeneity(self, thm1_setup, dirichlet_basis, benchmark_plant):
        ellipsoid, _ = thm1_setup
        z0 = initial_parabola(dirichlet_basis.grid)
        base = attraction.membership(z0, ellipsoid, dirichlet_basis, benchmark_plant).value
        for s in (0.5, 2.0, 3.0):
            scaled = attraction.membership(
                s * z0, ellipsoid, dirichlet_basis, benchmark_plant
            ).value
            assert scaled == pytest.approx(s**2 * base, rel=1e-9)

    def test_e2_requires_domain_membership(self, doa_results, dirichlet_basis, benchmark_plant):
        cert = doa_results["thm2"]["certificate"]
        ellipsoid = attraction.ellipsoid_from_certificate(cert)
        bad = 1.0 + dirichlet_basis.grid  # violates the Dirichlet ends
        with pytest.raises(attraction.DomainMembershipError):
            attraction.membership(bad, ellipsoid, dirichlet_basis, benchmark_plant)

    def test_e2_value_uses_energy_tail(self, doa_results, dirichlet_basis, benchmark_plant):
        cert = doa_results["thm2"]["certificate"]
        ellipsoid = attraction.ellipsoid_from_certificate(cert)
        z0 = initial_parabola(dirichlet_basis.grid)
        res = attraction.membership(z0, ellipsoid, dirichlet_basis, benchmark_plant)
        dz0 = 8.5 * (1.0 - 2.0 * dirichlet_basis.grid)
        energy = quadratic_form_A(z0, dz0, benchmark_plant.operator_coefficients())
        modal = float(
            np.sum(dirichlet_basis.eigenvalues[:4] * dirichlet_basis.project(z0, 4) ** 2)
        )
        assert res.tail == pytest.approx(energy - modal, abs=1e-6)


class TestInscribedBall:
    def test_large_r_always_passes(self, thm1_setup, doa_R, doa_results):
        _, cert = thm1_setup
        assert attraction.inscribed_ball_check(cert, doa_R, 1e9)

    def test_boundary_of_optimized_inclusion(self, doa_results, doa_R):
        cert = doa_results["thm1"]["certificate"]
        r = doa_results["thm1"]["r"]
        assert attraction.inscribed_ball_check(cert, doa_R, r * (1 + 1e-6))
        assert not attraction.inscribed_ball_check(cert, doa_R, r / 2)

    def test_monte_carlo_inclusion_soundness(
        self, doa_results, doa_R, dirichlet_basis, benchmark_plant
    ):
        # every draw from the R-ball must pass the membership test
        cert = doa_results["thm1"]["certificate"]
        r = doa_results["thm1"]["r"]
        ellipsoid = attraction.ellipsoid_from_certificate(cert)
        assert attraction.inscribed_ball_check(cert, doa_R, r * (1 + 1e-9))
        rng = np.random.default_rng(17)
        sqrt_inv_R = np.diag(1.0 / np.sqrt(np.diag(doa_R)))
        funcs = dirichlet_basis.eigenfunctions
        carrier = funcs[9]  # unit-norm residual carrier beyond the first N modes
        failures = 0
        for _ in range(10_000):
            direction = rng.normal(size=5)
            direction /= np.linalg.norm(direction)
            radius = rng.uniform() ** (1.0 / 5.0) / np.sqrt(r * (1 + 1e-6))
            v = sqrt_inv_R @ direction * radius
            z = v[:4] @ funcs[:4] + abs(v[4]) * carrier
            res = attraction.membership(z, ellipsoid, dirichlet_basis, benchmark_plant)
            failures += not res.inside
        assert failures == 0


class TestInitialStateEmbedding:
    def test_single_mode(self, dirichlet_basis, margin_realization):
        phi1 = dirichlet_basis.eigenfunctions[0]
        x0 = attraction.initial_state_embedding(phi1, dirichlet_basis, margin_realization)
        expected = np.zeros(8)
        expected[1] = 1.0
        assert np.allclose(x0, expected, atol=1e-8)

    def test_perfect_observer_cancels_error(self, dirichlet_basis, margin_realization):
        z0 = initial_parabola(dirichlet_basis.grid)
        coeffs = dirichlet_basis.project(z0, 4)
        x0 = attraction.initial_state_embedding(
            z0, dirichlet_basis, margin_realization, observer_ic=coeffs
        )
        assert np.allclose(x0[1:2], 0.0, atol=1e-12)
        assert np.allclose(x0[5:], 0.0, atol=1e-12)
        assert np.allclose(x0[0], coeffs[0])

    def test_wrong_length_rejected(self, dirichlet_basis, margin_realization):
        with pytest.raises(ValueError, match="length"):
            attraction.initial_state_embedding(
                initial_parabola(dirichlet_basis.grid),
                dirichlet_basis,
                margin_realization,
                observer_ic=np.zeros(7),
            )

    def test_membership_equals_lyapunov_at_zero(
        self, doa_results, dirichlet_basis, benchmark_plant, margin_realization
    ):
        # the membership value reproduces V(X(0), z0) for a zero observer IC
        cert = doa_results["thm1"]["certificate"]
        ellipsoid = attraction.ellipsoid_from_certificate(cert)
        z0 = initial_parabola(dirichlet_basis.grid)
        member = attraction.membership(z0, ellipsoid, dirichlet_basis, benchmark_plant)
        x0 = attraction.initial_state_embedding(z0, dirichlet_basis, margin_realization)
        coeffs_all = dirichlet_basis.project(z0)
        v0 = float(x0 @ (cert.P @ x0)) + cert.gamma * float(np.sum(coeffs_all[4:] ** 2))
        assert member.value == pytest.approx(v0, rel=1e-6)


def test_kind_mismatch_for_bounded_plant(doa_results, dirichlet_basis, benchmark_plant):
    # an H1-trace ellipsoid cannot be evaluated against a bounded-measurement plant
    from dataclasses import replace

    cert = doa_results["thm1"]["certificate"]
    e1 = attraction.ellipsoid_from_certificate(cert)
    e3 = replace(e1, kind="E3", strict=True)
    with pytest.raises(attraction.KindMismatchError):
        attraction.membership(
            initial_parabola(dirichlet_basis.grid), e3, dirichlet_basis, benchmark_plant
        )
