"""Attraction-region ellipsoids built from certificates, and membership tests.

The four ellipsoid kinds share one membership functional: a quadratic form of
the first-N modal coordinates (scaled per kind) through the error-block
submatrix of P, plus gamma times a residual tail term,

    E1: coords (pi_N0 z, pi_N0N z),            tail ||R_N z||^2          (<=)
    E2: coords (pi_N0 z, pi_N0N z),            tail ||R_N A^(1/2) z||^2  (<=)
    E3: coords (pi_N0 z, pi_N0N A^(1/2) z),    tail ||R_N A^(1/2) z||^2  (<)
    E4: coords (pi_N0 z, pi_N0N A z),          tail ||R_N A^(1/2) z||^2  (<)

against the threshold 1 / mu.  Tail terms are evaluated through the residual
identities ||R_N z||^2 = ||z||^2 - ||pi_N z||^2 and ||R_N A^(1/2) z||^2 =
<A z, z> - sum_(n<=N) lambda_n <z, phi_n>^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lmi import CertificateSolution, ellipsoid_block
from .spectral import BOUNDED, PlantSpec
from .sturm_liouville import SpectralBasis, quadratic_form_A, simpson_weights

__all__ = [
    "AttractionEllipsoid",
    "KindMismatchError",
    "DomainMembershipError",
    "MembershipResult",
    "ellipsoid_from_certificate",
    "membership",
    "inscribed_ball_check",
    "ball_form_value",
    "initial_state_embedding",
]

KINDS = ("E1", "E2", "E3", "E4")
KIND_BY_CERT = {
    ("thm1", BOUNDED): "E1",
    ("thm2", BOUNDED): "E2",
    ("thm3", "dirichlet-left"): "E3",
    ("thm4", "neumann-left"): "E4",
}
# strict "<" memberships shaved by a relative margin; floating point cannot
# witness strict inequalities
STRICT_MARGIN = 1e-9
BOUNDARY_CONDITION_TOL = 1e-6


class KindMismatchError(ValueError):
    """Requested ellipsoid kind does not match the certificate's theorem."""


class DomainMembershipError(ValueError):
    """The candidate function violates the operator-domain boundary conditions."""


@dataclass(frozen=True)
class AttractionEllipsoid:
    kind: str
    block: np.ndarray
    gamma: float
    mu: float
    N0: int
    N: int
    strict: bool

    @property
    def threshold(self) -> float:
        return 1.0 / self.mu


@dataclass(frozen=True)
class MembershipResult:
    value: float
    threshold: float
    inside: bool
    coordinates: np.ndarray
    tail: float


def ellipsoid_from_certificate(sol: CertificateSolution) -> AttractionEllipsoid:
    try:
        kind = KIND_BY_CERT[(sol.theorem_tag, sol.measurement_mode)]
    except KeyError as exc:
        raise KindMismatchError(
            f"no ellipsoid for {sol.theorem_tag} under {sol.measurement_mode} sensing"
        ) from exc
    return AttractionEllipsoid(
        kind=kind,
        block=ellipsoid_block(sol.P, sol.N0, sol.N),
        gamma=sol.gamma,
        mu=sol.mu,
        N0=sol.N0,
        N=sol.N,
        strict=kind in ("E3", "E4"),
    )


def _check_domain(z: np.ndarray, dz: np.ndarray, plant: PlantSpec) -> None:
    scale = float(np.max(np.abs(z)) + np.max(np.abs(dz)) + 1e-30)
    left = np.cos(plant.theta1) * z[0] - np.sin(plant.theta1) * dz[0]
    right = np.cos(plant.theta2) * z[-1] + np.sin(plant.theta2) * dz[-1]
    if abs(left) > BOUNDARY_CONDITION_TOL * scale or abs(right) > BOUNDARY_CONDITION_TOL * scale:
        raise DomainMembershipError(
            f"boundary conditions violated (left {left:.2e}, right {right:.2e}); "
            "the H1-type ellipsoids are defined on the operator domain only"
        )


def require_kind(ellipsoid: AttractionEllipsoid, plant: PlantSpec) -> None:
    if plant.measurement_mode == BOUNDED and ellipsoid.kind in ("E3", "E4"):
        raise KindMismatchError(
            f"{ellipsoid.kind} is defined for boundary sensing, plant is bounded-measurement"
        )


def membership(
    z_samples: np.ndarray,
    ellipsoid: AttractionEllipsoid,
    basis: SpectralBasis,
    plant: PlantSpec,
    dz_samples: np.ndarray | None = None,
) -> MembershipResult:
    """Evaluate the membership functional of a grid function.

    For E2-E4 the candidate must lie in the operator domain; its derivative
    is taken from ``dz_samples`` or finite-differenced.
    """
    require_kind(ellipsoid, plant)
    z = np.asarray(z_samples, dtype=float)
    w = simpson_weights(basis.grid)
    coeffs_n = basis.project(z, ellipsoid.N)
    lam = basis.eigenvalues[: ellipsoid.N]

    if ellipsoid.kind == "E1":
        coords = coeffs_n
        tail = max(float(z @ (w * z)) - float(np.sum(coeffs_n**2)), 0.0)
    else:
        dz = (
            np.gradient(z, basis.grid, edge_order=2)
            if dz_samples is None
            else np.asarray(dz_samples, dtype=float)
        )
        _check_domain(z, dz, plant)
        energy = quadratic_form_A(z, dz, plant.operator_coefficients())
        tail = max(energy - float(np.sum(lam * coeffs_n**2)), 0.0)
        if ellipsoid.kind == "E2":
            coords = coeffs_n
        elif ellipsoid.kind == "E3":
            scaling = np.concatenate(
                [np.ones(ellipsoid.N0), np.sqrt(lam[ellipsoid.N0 :])]
            )
            coords = scaling * coeffs_n
        else:
            scaling = np.concatenate([np.ones(ellipsoid.N0), lam[ellipsoid.N0 :]])
            coords = scaling * coeffs_n

    value = float(coords @ (ellipsoid.block @ coords)) + ellipsoid.gamma * tail
    threshold = ellipsoid.threshold
    if ellipsoid.strict:
        inside = value <= threshold * (1.0 - STRICT_MARGIN)
    else:
        inside = value <= threshold
    return MembershipResult(value, threshold, inside, coords, tail)


def ball_form_value(
    z_samples: np.ndarray,
    R: np.ndarray,
    ellipsoid: AttractionEllipsoid,
    basis: SpectralBasis,
    plant: PlantSpec,
    dz_samples: np.ndarray | None = None,
) -> float:
    """The R-weighted form of (pi_N z, residual norm), compared against 1/r."""
    res = membership(z_samples, ellipsoid, basis, plant, dz_samples)
    v = np.concatenate([res.coordinates, [np.sqrt(res.tail)]])
    return float(v @ (R @ v))


def inscribed_ball_check(
    sol: CertificateSolution, R: np.ndarray, r: float, tol: float = 1e-9
) -> bool:
    """True iff blkdiag(P_err, gamma) <= (r / mu) R.

    When true, the R-ball of radius 1/sqrt(r) in (pi_N z, residual-norm)
    coordinates is contained in the certificate's ellipsoid.
    """
    N = sol.N
    block = np.zeros((N + 1, N + 1))
    block[:N, :N] = ellipsoid_block(sol.P, sol.N0, sol.N)
    block[N, N] = sol.gamma
    gap = block - (r / sol.mu) * np.asarray(R, dtype=float)
    return float(np.linalg.eigvalsh(gap)[-1]) <= tol * max(1.0, r / sol.mu)


def initial_state_embedding(
    z0_samples: np.ndarray,
    basis: SpectralBasis,
    realization,
    observer_ic: np.ndarray | None = None,
) -> np.ndarray:
    """Stacked closed-loop state X(0) for a plant IC and an observer IC.

    With a zero observer state this is col(0, pi_N0 z0, 0, pi_N0N z0) with
    the boundary-sensing scaling applied to the trailing error block; a
    nonzero observer IC shifts the estimate blocks and the error blocks
    accordingly.
    """
    N0, N = realization.N0, realization.N
    coeffs = basis.project(np.asarray(z0_samples, dtype=float), N)
    if observer_ic is None:
        observer_ic = np.zeros(N)
    else:
        observer_ic = np.asarray(observer_ic, dtype=float)
        if observer_ic.shape != (N,):
            raise ValueError(f"observer IC must have length N = {N}")
    scale = realization.error_scaling()
    zhat_head = observer_ic[:N0]
    zhat_tail = observer_ic[N0:]
    return np.concatenate(
        [
            zhat_head,
            coeffs[:N0] - zhat_head,
            zhat_tail,
            scale * (coeffs[N0:] - zhat_tail),
        ]
    )
