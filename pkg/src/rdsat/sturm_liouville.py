"""Eigenvalue problems for the operator A f = -(p f')' + q f on (0, 1).

Robin boundary conditions are parameterized by angles theta1, theta2 in
[0, pi/2]:

    cos(theta1) f(0) - sin(theta1) f'(0) = 0
    cos(theta2) f(1) + sin(theta2) f'(1) = 0

so theta = 0 is a Dirichlet end and theta = pi/2 a Neumann end.  The
discretization is a symmetric second-order finite-difference scheme on a
uniform grid (Robin ends enter through half-cell flux balances), which keeps
the discrete operator self-adjoint and its eigenvalues real and increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "CoefficientField",
    "SpectralBasis",
    "InvalidCoefficientsError",
    "EigensolverError",
    "GridMismatchError",
    "simpson_weights",
    "constant_coefficients",
    "sampled_coefficients",
    "solve_eigenproblem",
    "richardson_eigenvalues",
    "check_eigenvalue_bounds",
    "quadratic_form_A",
]

# 2401 is the smallest odd grid compatible with the resolution guard
# grid_size >= 40 n_max at the default n_max of 60
DEFAULT_GRID_SIZE = 2401
DEFAULT_N_MAX = 60


class InvalidCoefficientsError(ValueError):
    """Coefficient samples violate p > 0 or q >= 0."""


class EigensolverError(RuntimeError):
    """The tridiagonal eigensolver failed to converge."""


class GridMismatchError(ValueError):
    """Operands are sampled on different grids."""


def simpson_weights(grid: np.ndarray) -> np.ndarray:
    """Composite-Simpson quadrature weights for a uniform grid.

    The grid must have an odd number of points.  Inner products throughout
    the package are discrete dot products against these weights, matching
    the second-order accuracy of the eigen-discretization.
    """
    n = len(grid)
    if n < 3 or n % 2 == 0:
        raise ValueError(f"Simpson quadrature needs an odd number of points, got {n}")
    h = grid[1] - grid[0]
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


@dataclass(frozen=True)
class CoefficientField:
    """Samples of the operator coefficients p, q on a uniform grid of [0, 1].

    ``p_derivative_values`` may be passed when p' is known in closed form;
    otherwise it is filled by second-order finite differences.
    """

    grid: np.ndarray
    p_values: np.ndarray
    q_values: np.ndarray
    p_derivative_values: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        p = np.asarray(self.p_values, dtype=float)
        q = np.asarray(self.q_values, dtype=float)
        if grid.ndim != 1 or len(grid) < 3:
            raise InvalidCoefficientsError("grid must be 1-D with at least 3 points")
        if not (np.all(np.diff(grid) > 0) and abs(grid[0]) < 1e-14 and abs(grid[-1] - 1.0) < 1e-14):
            raise InvalidCoefficientsError("grid must increase strictly from 0 to 1")
        if p.shape != grid.shape or q.shape != grid.shape:
            raise InvalidCoefficientsError("p and q samples must match the grid")
        if np.any(p <= 0):
            raise InvalidCoefficientsError("diffusion samples must satisfy p > 0")
        if np.any(q < 0):
            raise InvalidCoefficientsError("reaction samples must satisfy q >= 0")
        dp = self.p_derivative_values
        if dp is None:
            dp = np.gradient(p, grid, edge_order=2)
        else:
            dp = np.asarray(dp, dtype=float)
            if dp.shape != grid.shape:
                raise InvalidCoefficientsError("p' samples must match the grid")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "p_values", p)
        object.__setattr__(self, "q_values", q)
        object.__setattr__(self, "p_derivative_values", dp)

    @property
    def p_min(self) -> float:
        return float(np.min(self.p_values))

    @property
    def p_max(self) -> float:
        return float(np.max(self.p_values))

    @property
    def q_max(self) -> float:
        return float(np.max(self.q_values))


def constant_coefficients(p: float, q: float, grid_size: int = DEFAULT_GRID_SIZE) -> CoefficientField:
    """Constant-coefficient field; eigenvalues then have the closed form n^2 pi^2 p + q (Dirichlet)."""
    grid = np.linspace(0.0, 1.0, grid_size)
    return CoefficientField(
        grid=grid,
        p_values=np.full(grid_size, float(p)),
        q_values=np.full(grid_size, float(q)),
        p_derivative_values=np.zeros(grid_size),
    )


def sampled_coefficients(
    grid: np.ndarray,
    p_values: np.ndarray,
    q_values: np.ndarray,
    p_derivative_values: np.ndarray | None = None,
) -> CoefficientField:
    return CoefficientField(grid, p_values, q_values, p_derivative_values)


@dataclass(frozen=True)
class SpectralBasis:
    """The first ``n_max`` eigenpairs of A with L2-normalized eigenfunctions.

    ``eigenfunctions`` has one row per mode, sampled on ``grid``.  The sign
    convention makes the first nonzero entry of (phi_n'(0), phi_n(0))
    positive, so projection coefficients are reproducible.
    """

    theta1: float
    theta2: float
    grid: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    phi_at_0: np.ndarray
    dphi_at_0: np.ndarray
    n_max: int

    @property
    def quad_weights(self) -> np.ndarray:
        return simpson_weights(self.grid)

    def project(self, f_samples: np.ndarray, n_modes: int | None = None) -> np.ndarray:
        """Coefficients <f, phi_n> for n = 1..n_modes by Simpson quadrature."""
        n = self.n_max if n_modes is None else n_modes
        if n > self.n_max:
            raise ValueError(f"requested {n} modes but basis holds {self.n_max}")
        f = np.asarray(f_samples, dtype=float)
        if f.shape != self.grid.shape:
            raise GridMismatchError("sample vector does not match the basis grid")
        return self.eigenfunctions[:n] @ (self.quad_weights * f)

    def export_csv(self, path) -> None:
        """One row per mode: n, lambda_n, phi_n(0), phi_n'(0)."""
        with open(path, "w") as fh:
            fh.write("n,lambda,phi_at_0,dphi_at_0\n")
            for i in range(self.n_max):
                fh.write(
                    f"{i + 1},{self.eigenvalues[i]:.17g},"
                    f"{self.phi_at_0[i]:.17g},{self.dphi_at_0[i]:.17g}\n"
                )


def _robin_slope(theta: float) -> float:
    # cot(theta); only called for theta strictly inside (0, pi/2)
    return np.cos(theta) / np.sin(theta)


def _assemble_tridiagonal(
    coeffs: CoefficientField, theta1: float, theta2: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool, bool]:
    """Symmetric tridiagonal form of the generalized problem M f = lambda W f.

    Returns the diagonal and off-diagonal of W^{-1/2} M W^{-1/2} together
    with the diagonal of W and flags telling whether the end nodes were
    eliminated (Dirichlet ends).
    """
    grid, p, q = coeffs.grid, coeffs.p_values, coeffs.q_values
    h = grid[1] - grid[0]
    p_half = 0.5 * (p[:-1] + p[1:])  # p at cell midpoints

    dirichlet_left = theta1 == 0.0
    dirichlet_right = theta2 == 0.0
    i0 = 1 if dirichlet_left else 0
    i1 = len(grid) - 1 if dirichlet_right else len(grid)

    idx = np.arange(i0, i1)
    n = len(idx)
    diag = np.empty(n)
    weight = np.ones(n)

    # interior rows: flux balance over full cells
    interior = (idx > 0) & (idx < len(grid) - 1)
    j = idx[interior]
    diag[interior] = (p_half[j - 1] + p_half[j]) / h**2 + q[j]

    if not dirichlet_left:
        # half-cell balance at x=0; Neumann has zero boundary flux,
        # Robin contributes p(0) cot(theta1) f(0)
        a = 0.0 if theta1 == np.pi / 2 else _robin_slope(theta1)
        diag[0] = p_half[0] / h**2 + p[0] * a / h + 0.5 * q[0]
        weight[0] = 0.5
    if not dirichlet_right:
        b = 0.0 if theta2 == np.pi / 2 else _robin_slope(theta2)
        diag[-1] = p_half[-1] / h**2 + p[-1] * b / h + 0.5 * q[-1]
        weight[-1] = 0.5

    off = -p_half[i0 : i1 - 1] / h**2

    # reduce M f = lambda W f to standard form with g = W^{1/2} f
    sqrt_w = np.sqrt(weight)
    diag_std = diag / weight
    off_std = off / (sqrt_w[:-1] * sqrt_w[1:])
    return diag_std, off_std, sqrt_w, dirichlet_left, dirichlet_right


def solve_eigenproblem(
    coeffs: CoefficientField,
    theta1: float,
    theta2: float,
    n_max: int = DEFAULT_N_MAX,
    grid_size: int | None = None,
) -> SpectralBasis:
    """Compute the first ``n_max`` eigenpairs of A f = -(p f')' + q f.

    Parameters
    ----------
    coeffs:
        Coefficient samples.  When ``grid_size`` is given and differs from
        the sample grid, coefficients are linearly resampled.
    theta1, theta2:
        Robin angles in [0, pi/2]; 0 and pi/2 are imposed as exact
        Dirichlet/Neumann rows rather than as limits.
    n_max:
        Number of modes; the grid must resolve them (grid_size >= 40 n_max).

    Returns
    -------
    SpectralBasis with Simpson-normalized eigenfunctions and boundary traces.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if not (0.0 <= theta1 <= np.pi / 2 and 0.0 <= theta2 <= np.pi / 2):
        raise ValueError("boundary angles must lie in [0, pi/2]")
    if grid_size is not None and grid_size != len(coeffs.grid):
        grid = np.linspace(0.0, 1.0, grid_size)
        coeffs = CoefficientField(
            grid=grid,
            p_values=np.interp(grid, coeffs.grid, coeffs.p_values),
            q_values=np.interp(grid, coeffs.grid, coeffs.q_values),
            p_derivative_values=np.interp(grid, coeffs.grid, coeffs.p_derivative_values),
        )
    grid = coeffs.grid
    if len(grid) < 40 * n_max:
        raise ValueError(
            f"grid_size {len(grid)} too coarse for n_max={n_max}; need at least {40 * n_max}"
        )

    diag, off, sqrt_w, dir_left, dir_right = _assemble_tridiagonal(coeffs, theta1, theta2)
    try:
        lam, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, n_max - 1))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure path
        raise EigensolverError(f"tridiagonal eigensolver did not converge: {exc}") from exc

    # residual check of the discrete eigenproblem on the grid, relative to
    # the operator scale ~ p/h^2
    applied = diag[:, None] * vecs
    applied[1:] += off[:, None] * vecs[:-1]
    applied[:-1] += off[:, None] * vecs[1:]
    matrix_scale = float(np.max(np.abs(diag)) + 2.0 * np.max(np.abs(off)))
    residual = float(np.max(np.linalg.norm(applied - lam[None, :] * vecs, axis=0)))
    if residual > 1e-10 * matrix_scale:
        raise EigensolverError(
            f"eigenpair residual {residual:.3e} exceeds tolerance at operator scale "
            f"{matrix_scale:.3e}; grid {len(grid)}, n_max {n_max}"
        )

    # undo the similarity transform and pad eliminated Dirichlet nodes
    vecs = vecs / sqrt_w[:, None]
    funcs = np.zeros((n_max, len(grid)))
    lo = 1 if dir_left else 0
    hi = len(grid) - 1 if dir_right else len(grid)
    funcs[:, lo:hi] = vecs.T

    w = simpson_weights(grid)
    h = grid[1] - grid[0]
    phi0 = np.empty(n_max)
    dphi0 = np.empty(n_max)
    for i in range(n_max):
        f = funcs[i]
        f /= np.sqrt(f @ (w * f))
        df0 = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
        if theta1 == 0.0:
            sign_ref = df0
        elif theta1 == np.pi / 2:
            sign_ref = f[0]
        else:
            sign_ref = df0
        if sign_ref < 0:
            f *= -1.0
            df0 *= -1.0
        funcs[i] = f
        phi0[i] = f[0]
        # Robin ends tie the trace derivative to the trace value exactly
        dphi0[i] = _robin_slope(theta1) * f[0] if 0.0 < theta1 < np.pi / 2 else df0
        if theta1 == np.pi / 2:
            dphi0[i] = 0.0

    if np.any(np.diff(lam) <= 0):
        raise EigensolverError("computed eigenvalues are not strictly increasing")

    return SpectralBasis(
        theta1=float(theta1),
        theta2=float(theta2),
        grid=grid,
        eigenvalues=lam,
        eigenfunctions=funcs,
        phi_at_0=phi0,
        dphi_at_0=dphi0,
        n_max=n_max,
    )


def richardson_eigenvalues(
    coeffs: CoefficientField,
    theta1: float,
    theta2: float,
    n_max: int,
    grid_size: int,
) -> np.ndarray:
    """Eigenvalues extrapolated from grid_size and 2*grid_size - 1 solves.

    The base scheme is second order, so (4 lambda_fine - lambda_coarse)/3
    removes the leading h^2 error term.
    """
    coarse = solve_eigenproblem(coeffs, theta1, theta2, n_max, grid_size)
    fine = solve_eigenproblem(coeffs, theta1, theta2, n_max, 2 * grid_size - 1)
    return (4.0 * fine.eigenvalues - coarse.eigenvalues) / 3.0


def check_eigenvalue_bounds(
    basis: SpectralBasis,
    p_star: float,
    p_sup: float,
    q_sup: float,
    rtol: float = 1e-3,
) -> bool:
    """True iff every computed lambda_n lies in [pi^2 (n-1)^2 p_*, pi^2 n^2 p^* + q^*].

    ``rtol`` absorbs the second-order discretization error of the computed
    eigenvalues; it matters when a bound is tight, e.g. the lower bound for
    constant-coefficient Neumann ends.
    """
    n = np.arange(1, basis.n_max + 1)
    lower = np.pi**2 * (n - 1) ** 2 * p_star
    upper = np.pi**2 * n**2 * p_sup + q_sup
    lam = basis.eigenvalues
    tol = rtol * (1.0 + np.abs(lam))
    return bool(np.all(lam >= lower - tol) and np.all(lam <= upper + tol))


def quadratic_form_A(
    z_samples: np.ndarray,
    dz_samples: np.ndarray,
    coeffs: CoefficientField,
    boundary_traces: tuple[float, float, float, float] | None = None,
) -> float:
    """The energy <A z, z> evaluated by integration by parts.

    Computes p(0) z(0) z'(0) - p(1) z(1) z'(1) + int_0^1 p (z')^2 + q z^2 dx
    with composite Simpson quadrature.  ``boundary_traces`` may supply
    (z(0), z'(0), z(1), z'(1)) when known exactly; otherwise the grid samples
    are used.
    """
    z = np.asarray(z_samples, dtype=float)
    dz = np.asarray(dz_samples, dtype=float)
    if z.shape != coeffs.grid.shape or dz.shape != coeffs.grid.shape:
        raise GridMismatchError("sample vectors do not match the coefficient grid")
    if boundary_traces is None:
        boundary_traces = (z[0], dz[0], z[-1], dz[-1])
    z0, dz0, z1, dz1 = boundary_traces
    w = simpson_weights(coeffs.grid)
    bulk = float(w @ (coeffs.p_values * dz**2 + coeffs.q_values * z**2))
    return coeffs.p_values[0] * z0 * dz0 - coeffs.p_values[-1] * z1 * dz1 + bulk
