"""Modal projections, residual norms, and the certified tail constants.

The tail constants bound the measurement coupling of the unmodeled modes in
the boundary-sensing cases: M1 sums phi_n(0)^2 / lambda_n and M2(eps) sums
phi_n'(0)^2 / lambda_n^(3/2+eps) over n > N.  Both are returned as certified
upper bounds: the computed partial sum over the available modes plus an
analytic remainder driven by the eigenvalue lower bound
lambda_n >= pi^2 (n-1)^2 p_*, never by extrapolated eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import polygamma, zeta

from .sturm_liouville import (
    CoefficientField,
    GridMismatchError,
    SpectralBasis,
    simpson_weights,
)

__all__ = [
    "PlantSpec",
    "ModalData",
    "InvalidSensorError",
    "indicator_samples",
    "select_q_c",
    "project_modes",
    "residual_norm_sq",
    "tail_constant_M1",
    "tail_constant_M2",
]

BOUNDED = "bounded"
DIRICHLET_LEFT = "dirichlet-left"
NEUMANN_LEFT = "neumann-left"

# safety inflation on the empirically estimated trace-growth constant
# phi_n'(0)^2 <= C lambda_n used in the M2 remainder
TRACE_CONSTANT_INFLATION = 2.0


class InvalidSensorError(ValueError):
    """Sensor tag incompatible with the boundary angle."""


def indicator_samples(grid: np.ndarray, amplitude, interval: tuple[float, float]) -> np.ndarray:
    """Sample amplitude(x) * 1_[a,b](x), with half weight at on-grid jump points."""
    a, b = interval
    if not (0.0 <= a < b <= 1.0):
        raise ValueError(f"indicator interval must satisfy 0 <= a < b <= 1, got {interval}")
    tol = 1e-9
    vals = np.where(
        (grid >= a - tol) & (grid <= b + tol), np.asarray(amplitude(grid), dtype=float), 0.0
    )
    h = grid[1] - grid[0]
    for endpoint in (a, b):
        j = int(round((endpoint - grid[0]) / h))
        if 0 <= j < len(grid) and abs(grid[j] - endpoint) < tol:
            vals[j] = 0.5 * float(np.asarray(amplitude(np.array([endpoint])))[0])
    return vals


def select_q_c(q_tilde_values: np.ndarray, q_margin: float = 0.0) -> float:
    """Shift constant making q = q_tilde + q_c nonnegative (positive for q_margin > 0)."""
    return float(-np.min(q_tilde_values) + q_margin)


@dataclass(frozen=True)
class PlantSpec:
    """Reaction-diffusion plant: coefficients, in-domain actuators, sensor, limits.

    The stored reaction term is the original q_tilde; the operator reaction
    q = q_tilde + q_c must come out nonnegative.  ``sensor`` is either a grid
    function (bounded measurement) or one of the tags "dirichlet-left" /
    "neumann-left" for boundary sensing.
    """

    grid: np.ndarray
    p_values: np.ndarray
    q_tilde_values: np.ndarray
    theta1: float
    theta2: float
    q_c: float
    actuators: list[np.ndarray]
    sensor: np.ndarray | str
    saturation_levels: np.ndarray
    p_derivative_values: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float))
        object.__setattr__(self, "q_tilde_values", np.asarray(self.q_tilde_values, dtype=float))
        object.__setattr__(self, "p_values", np.asarray(self.p_values, dtype=float))
        object.__setattr__(
            self, "actuators", [np.asarray(bk, dtype=float) for bk in self.actuators]
        )
        object.__setattr__(
            self, "saturation_levels", np.asarray(self.saturation_levels, dtype=float)
        )
        if len(self.actuators) < 1:
            raise ValueError("at least one actuator is required")
        if len(self.saturation_levels) != len(self.actuators):
            raise ValueError("one saturation level per actuator is required")
        if np.any(self.saturation_levels <= 0):
            raise ValueError("saturation levels must be positive")
        for bk in self.actuators:
            if bk.shape != self.grid.shape:
                raise GridMismatchError("actuator samples must match the grid")
        if np.any(self.q_shifted_values < 0):
            raise ValueError("q_c too small: q_tilde + q_c must be nonnegative")
        if isinstance(self.sensor, str):
            if self.sensor == DIRICHLET_LEFT:
                if not 0.0 < self.theta1 <= np.pi / 2:
                    raise InvalidSensorError(
                        "dirichlet-left sensing needs theta1 in (0, pi/2], otherwise phi_n(0) = 0"
                    )
            elif self.sensor == NEUMANN_LEFT:
                if not 0.0 <= self.theta1 < np.pi / 2:
                    raise InvalidSensorError(
                        "neumann-left sensing needs theta1 in [0, pi/2), otherwise phi_n'(0) = 0"
                    )
            else:
                raise InvalidSensorError(f"unknown sensor tag {self.sensor!r}")
        else:
            sensor = np.asarray(self.sensor, dtype=float)
            if sensor.shape != self.grid.shape:
                raise GridMismatchError("sensor samples must match the grid")
            object.__setattr__(self, "sensor", sensor)

    @property
    def m(self) -> int:
        return len(self.actuators)

    @property
    def measurement_mode(self) -> str:
        return self.sensor if isinstance(self.sensor, str) else BOUNDED

    @property
    def q_shifted_values(self) -> np.ndarray:
        return self.q_tilde_values + self.q_c

    def operator_coefficients(self) -> CoefficientField:
        """Coefficient field of the shifted operator A f = -(p f')' + q f."""
        return CoefficientField(
            grid=self.grid,
            p_values=self.p_values,
            q_values=self.q_shifted_values,
            p_derivative_values=self.p_derivative_values,
        )


@dataclass(frozen=True)
class ModalData:
    """Projection coefficients and residual norms of actuators and sensor.

    ``b_coeffs[n, k]`` is <b_k, phi_{n+1}>; ``c_coeffs[n]`` is the sensor
    coefficient (quadrature in the bounded case, boundary traces otherwise).
    ``residual_b_sq[N, k]`` holds ||R_N b_k||^2 for N = 0..n_max.
    """

    b_coeffs: np.ndarray
    c_coeffs: np.ndarray
    b_norm_sq: np.ndarray
    c_norm_sq: float
    residual_b_sq: np.ndarray
    residual_c_sq: np.ndarray
    measurement_mode: str

    @property
    def n_max(self) -> int:
        return self.b_coeffs.shape[0]

    @property
    def m(self) -> int:
        return self.b_coeffs.shape[1]

    def export_csv(self, path) -> None:
        with open(path, "w") as fh:
            cols = ",".join(f"b_{k + 1}" for k in range(self.m))
            fh.write(f"n,{cols},c\n")
            for n in range(self.n_max):
                row = ",".join(f"{v:.17g}" for v in self.b_coeffs[n])
                fh.write(f"{n + 1},{row},{self.c_coeffs[n]:.17g}\n")


def project_modes(basis: SpectralBasis, plant: PlantSpec) -> ModalData:
    """Project actuators and sensor onto the eigenbasis.

    In the boundary-sensing modes the sensor coefficients are the traces
    c_n = phi_n(0) (Dirichlet) or c_n = phi_n'(0) (Neumann); the residual
    sensor norms are then meaningless and set to NaN (the certificates use
    the tail constants instead).
    """
    if plant.grid.shape != basis.grid.shape or np.max(np.abs(plant.grid - basis.grid)) > 1e-12:
        raise GridMismatchError("plant and basis are sampled on different grids")
    w = simpson_weights(basis.grid)
    b_coeffs = np.column_stack([basis.eigenfunctions @ (w * bk) for bk in plant.actuators])
    b_norm_sq = np.array([bk @ (w * bk) for bk in plant.actuators])

    mode = plant.measurement_mode
    if mode == BOUNDED:
        c_coeffs = basis.eigenfunctions @ (w * plant.sensor)
        c_norm_sq = float(plant.sensor @ (w * plant.sensor))
    elif mode == DIRICHLET_LEFT:
        c_coeffs = basis.phi_at_0.copy()
        c_norm_sq = float("nan")
    else:
        c_coeffs = basis.dphi_at_0.copy()
        c_norm_sq = float("nan")

    n_max = basis.n_max
    cum_b = np.vstack([np.zeros((1, b_coeffs.shape[1])), np.cumsum(b_coeffs**2, axis=0)])
    residual_b = np.maximum(b_norm_sq[None, :] - cum_b, 0.0)
    if mode == BOUNDED:
        cum_c = np.concatenate([[0.0], np.cumsum(c_coeffs**2)])
        residual_c = np.maximum(c_norm_sq - cum_c, 0.0)
    else:
        residual_c = np.full(n_max + 1, np.nan)

    return ModalData(
        b_coeffs=b_coeffs,
        c_coeffs=c_coeffs,
        b_norm_sq=b_norm_sq,
        c_norm_sq=c_norm_sq,
        residual_b_sq=residual_b,
        residual_c_sq=residual_c,
        measurement_mode=mode,
    )


def residual_norm_sq(f_samples: np.ndarray, basis: SpectralBasis, N: int) -> float:
    """||R_N f||^2 = ||f||^2 - sum_{n <= N} <f, phi_n>^2, clipped at zero."""
    if N > basis.n_max:
        raise ValueError(f"N={N} exceeds the {basis.n_max} computed modes")
    f = np.asarray(f_samples, dtype=float)
    w = simpson_weights(basis.grid)
    total = float(f @ (w * f))
    partial = float(np.sum(basis.project(f, N) ** 2)) if N > 0 else 0.0
    return max(total - partial, 0.0)


def tail_constant_M1(basis: SpectralBasis, N: int, p_star: float) -> float:
    """Certified upper bound on sum_{n > N} phi_n(0)^2 / lambda_n.

    The sum over computed modes is augmented with the exact remainder
    (sup_n |phi_n(0)|)^2 * sum_{n > n_max} 1 / (pi^2 (n-1)^2 p_*), the inner
    series evaluated through the trigamma function.
    """
    if basis.theta1 == 0.0:
        raise InvalidSensorError("theta1 = 0 makes every phi_n(0) vanish")
    if N > basis.n_max:
        raise ValueError("N exceeds the computed modes")
    lam = basis.eigenvalues
    if np.any(lam[N:] <= 0):
        raise ValueError("tail eigenvalues must be positive")
    # at N = n_max the partial sum is empty and only the remainder is left
    partial = float(np.sum(basis.phi_at_0[N:] ** 2 / lam[N:]))
    trace_sup_sq = float(np.max(basis.phi_at_0**2))
    # sum_{n > n_max} 1/(n-1)^2 = psi'(n_max)
    remainder = trace_sup_sq * float(polygamma(1, basis.n_max)) / (np.pi**2 * p_star)
    return partial + remainder


def tail_constant_M2(basis: SpectralBasis, N: int, epsilon: float, p_star: float) -> float:
    """Certified upper bound on sum_{n > N} phi_n'(0)^2 / lambda_n^(3/2+eps).

    The remainder uses phi_n'(0)^2 <= C lambda_n with C estimated over the
    computed modes and inflated by a factor of 2, together with the Hurwitz
    zeta evaluation of sum_{n > n_max} (n-1)^(-1-2 eps).
    """
    if not 0.0 < epsilon <= 0.5:
        raise ValueError(f"epsilon must lie in (0, 1/2], got {epsilon}")
    if basis.theta1 == np.pi / 2:
        raise InvalidSensorError("theta1 = pi/2 makes every phi_n'(0) vanish")
    if N > basis.n_max:
        raise ValueError("N exceeds the computed modes")
    lam = basis.eigenvalues
    if np.any(lam[N:] <= 0):
        raise ValueError("tail eigenvalues must be positive")
    partial = float(np.sum(basis.dphi_at_0[N:] ** 2 / lam[N:] ** (1.5 + epsilon)))
    positive = lam > 0
    trace_const = TRACE_CONSTANT_INFLATION * float(
        np.max(basis.dphi_at_0[positive] ** 2 / lam[positive])
    )
    # sum_{n > n_max} lambda_n^(-1/2-eps) <= (pi^2 p_*)^(-1/2-eps) zeta(1+2eps, n_max)
    s = 0.5 + epsilon
    remainder = trace_const * float(zeta(2.0 * s, basis.n_max)) / (np.pi**2 * p_star) ** s
    return partial + remainder
