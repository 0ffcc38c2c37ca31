"""Observer-based finite-dimensional controller for the truncated modal plant.

The controller couples an N-dimensional Luenberger observer with a state
feedback acting on the first N0 modes.  The closed-loop truncated model in
the stacked coordinates X = col(Zhat^{N0}, E^{N0}, Zhat^{N-N0}, E^{N-N0})
reads Xdot = F X + Lcal zeta + Lphi phi(u) where zeta is the measurement
residual of the unmodeled modes and phi the deadzone.

In the boundary-sensing modes the error block E^{N-N0} is rescaled by
sqrt(lambda_n) (Dirichlet trace) or lambda_n (Neumann trace) and the C1 row
carries the inverse scaling; this keeps ||C1|| bounded as N grows and is
confined to assembly, membership, and trace evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_are

from .spectral import BOUNDED, DIRICHLET_LEFT, NEUMANN_LEFT, ModalData
from .sturm_liouville import SpectralBasis

__all__ = [
    "ControllerRealization",
    "SaturationMap",
    "HypothesisViolationError",
    "NeedsMoreModesError",
    "determine_N0",
    "synthesize_gains",
    "assemble_closed_loop",
    "saturate",
    "deadzone",
]

logger = logging.getLogger(__name__)

ABSCISSA_TOL = 1e-9


class HypothesisViolationError(ValueError):
    """A controllability/observability hypothesis fails for some mode."""


class NeedsMoreModesError(ValueError):
    """The computed basis does not reach the requested truncation order."""


@dataclass(frozen=True)
class SaturationMap:
    """Componentwise clamp to the levels +-l_k."""

    levels: np.ndarray

    def __post_init__(self) -> None:
        levels = np.atleast_1d(np.asarray(self.levels, dtype=float))
        if np.any(levels <= 0):
            raise ValueError("saturation levels must be positive")
        object.__setattr__(self, "levels", levels)

    @property
    def m(self) -> int:
        return len(self.levels)


def saturate(v: np.ndarray, sat_map: SaturationMap) -> np.ndarray:
    return np.clip(np.asarray(v, dtype=float), -sat_map.levels, sat_map.levels)


def deadzone(v: np.ndarray, sat_map: SaturationMap) -> np.ndarray:
    """phi(v) = sat(v) - v; zero inside the limits."""
    v = np.asarray(v, dtype=float)
    return saturate(v, sat_map) - v


def gains_from_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read gains back from the exported CSV (matrix, row, quoted values)."""
    import csv

    rows: dict[str, list[list[float]]] = {"K": [], "L": []}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["matrix", "row", "values"]:
            raise ValueError(f"{path} is not a gains CSV (unexpected header {header})")
        for name, _index, values in reader:
            rows[name].append([float(v) for v in values.split(",")])
    if not rows["K"] or not rows["L"]:
        raise ValueError(f"{path} is missing a K or L section")
    return np.array(rows["K"]), np.array(rows["L"])


def determine_N0(basis: SpectralBasis, q_c: float, delta: float) -> int:
    """Smallest N0 >= 1 with -lambda_n + q_c < -delta for every n > N0."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    lam = basis.eigenvalues
    if lam[-1] <= q_c + delta:
        raise NeedsMoreModesError(
            f"largest computed eigenvalue {lam[-1]:.4g} does not clear q_c + delta = "
            f"{q_c + delta:.4g}; raise n_max"
        )
    slow = np.nonzero(lam <= q_c + delta)[0]
    return int(slow[-1] + 1) if len(slow) else 1


def _abscissa(mat: np.ndarray) -> float:
    return float(np.max(np.real(np.linalg.eigvals(np.atleast_2d(mat)))))


def _riccati_gain(A: np.ndarray, B: np.ndarray, delta: float) -> np.ndarray:
    """State-feedback gain K with abscissa(A + B K) < -delta via a shifted CARE.

    Solving the Riccati equation for A + (delta + margin) I guarantees the
    shifted closed loop is Hurwitz, hence the margin on the original one.
    The input weight rho I is halved until the numerical check passes.
    """
    n, m = B.shape
    shift = delta + max(1e-2, 0.05 * delta)
    rho = 1.0
    for _ in range(60):
        X = solve_continuous_are(A + shift * np.eye(n), B, np.eye(n), rho * np.eye(m))
        K = -(B.T @ X) / rho
        if _abscissa(A + B @ K) < -delta - ABSCISSA_TOL:
            return K
        rho *= 0.5
    raise HypothesisViolationError("Riccati synthesis could not reach the required margin")


def _place_gain(A: np.ndarray, B: np.ndarray, delta: float) -> np.ndarray:
    from scipy.signal import place_poles

    n = A.shape[0]
    poles = -(delta + 1.0 + 0.5 * np.arange(n))
    if n == 1 and B.shape[1] >= 1:
        # least-norm solution of B0 K = pole - A0 for the scalar mode
        b = B[0]
        return np.atleast_2d(b * (poles[0] - A[0, 0]) / float(b @ b)).reshape(B.shape[1], 1)
    res = place_poles(A, B, poles)
    return -res.gain_matrix


def synthesize_gains(
    A0: np.ndarray,
    B0: np.ndarray,
    C0: np.ndarray,
    delta: float,
    strategy: str = "riccati",
    K: np.ndarray | None = None,
    L: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Feedback gain K (m x N0) and observer gain L (N0 x 1).

    Strategies: "riccati" (default; shifted CARE with bisected input weight),
    "pole-placement", or "user-supplied" (gains validated, never altered).
    For user-supplied gains only Hurwitz stability is enforced; a deficit
    against the -delta abscissa margin is logged rather than rejected, since
    a reference design can miss the margin while its matrix-inequality
    certificates remain valid.
    """
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    B0 = np.atleast_2d(np.asarray(B0, dtype=float))
    C0 = np.atleast_2d(np.asarray(C0, dtype=float))
    n0 = A0.shape[0]

    for n in range(n0):
        if not np.any(B0[n] != 0.0):
            raise HypothesisViolationError(f"mode {n + 1} is uncontrollable: b_(n,k) = 0 for all k")
        if C0[0, n] == 0.0:
            raise HypothesisViolationError(f"mode {n + 1} is unobservable: c_n = 0")

    if strategy == "user-supplied":
        if K is None or L is None:
            raise ValueError("user-supplied strategy requires both K and L")
        K = np.atleast_2d(np.asarray(K, dtype=float)).reshape(-1, n0)
        L = np.asarray(L, dtype=float).reshape(n0, 1)
        for name, mat in (("A0 + B0 K", A0 + B0 @ K), ("A0 - L C0", A0 - L @ C0)):
            a = _abscissa(mat)
            if a >= 0.0:
                raise HypothesisViolationError(f"user-supplied gains leave {name} non-Hurwitz")
            if a >= -delta + ABSCISSA_TOL:
                logger.warning(
                    "user-supplied gains: abscissa(%s) = %.4g misses the -delta = %.4g margin",
                    name,
                    a,
                    -delta,
                )
        return K, L

    if strategy == "riccati":
        K = _riccati_gain(A0, B0, delta)
        L = -_riccati_gain(A0.T, C0.T, delta).T
    elif strategy == "pole-placement":
        K = _place_gain(A0, B0, delta)
        L = -_place_gain(A0.T, C0.T, delta).T
    else:
        raise ValueError(f"unknown synthesis strategy {strategy!r}")

    for name, mat in (("A0 + B0 K", A0 + B0 @ K), ("A0 - L C0", A0 - L @ C0)):
        if _abscissa(mat) >= -delta - ABSCISSA_TOL:
            raise HypothesisViolationError(f"synthesized gains failed the margin check on {name}")
    return K, L


@dataclass(frozen=True)
class ControllerRealization:
    """Closed-loop truncated model matrices in the stacked coordinates."""

    N0: int
    N: int
    delta: float
    q_c: float
    measurement_mode: str
    K: np.ndarray
    L: np.ndarray
    A0: np.ndarray
    A1: np.ndarray
    B0: np.ndarray
    B1: np.ndarray
    C0: np.ndarray
    C1: np.ndarray
    F: np.ndarray
    Lcal: np.ndarray
    Lphi: np.ndarray
    Emat: np.ndarray
    Ktilde: np.ndarray
    eigenvalues: np.ndarray
    saturation: SaturationMap

    @property
    def m(self) -> int:
        return self.K.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.N

    def error_scaling(self) -> np.ndarray:
        """Per-mode weights applied to the pi_{N0,N} error coordinates."""
        tail = self.eigenvalues[self.N0 : self.N]
        if self.measurement_mode == DIRICHLET_LEFT:
            return np.sqrt(tail)
        if self.measurement_mode == NEUMANN_LEFT:
            return tail.copy()
        return np.ones(self.N - self.N0)

    def summary(self) -> str:
        lines = [
            f"N0 = {self.N0}, N = {self.N}, delta = {self.delta:.6g}, "
            f"measurement = {self.measurement_mode}",
            f"abscissa(A0+B0K) = {_abscissa(self.A0 + self.B0 @ self.K):.6g}, "
            f"abscissa(A0-LC0) = {_abscissa(self.A0 - self.L @ self.C0):.6g}",
            f"||B1|| = {np.linalg.norm(self.B1, 2):.6g}, ||C1|| = {np.linalg.norm(self.C1, 2):.6g}",
            f"spectrum of F: {np.sort(np.real(np.linalg.eigvals(self.F)))}",
        ]
        return "\n".join(lines)


def assemble_closed_loop(
    basis: SpectralBasis,
    modal: ModalData,
    gains: tuple[np.ndarray, np.ndarray],
    N0: int,
    N: int,
    q_c: float,
    saturation: SaturationMap,
    delta: float = 1.0,
) -> ControllerRealization:
    """Build F, Lcal, Lphi, E, Ktilde for the 2N-dimensional truncated loop."""
    if N < N0 + 1:
        raise ValueError(f"N must be at least N0 + 1 = {N0 + 1}, got {N}")
    if N + 1 > basis.n_max:
        raise NeedsMoreModesError(
            f"N = {N} needs lambda_(N+1); only {basis.n_max} modes computed"
        )
    K, L = gains
    K = np.atleast_2d(np.asarray(K, dtype=float)).reshape(-1, N0)
    L = np.asarray(L, dtype=float).reshape(N0, 1)
    m = K.shape[0]
    if m != modal.m:
        raise ValueError("gain K and modal data disagree on the number of inputs")

    lam = basis.eigenvalues
    A0 = np.diag(-lam[:N0] + q_c)
    A1 = np.diag(-lam[N0:N] + q_c)
    B0 = modal.b_coeffs[:N0, :]
    B1 = modal.b_coeffs[N0:N, :]
    C0 = modal.c_coeffs[:N0][None, :]

    mode = modal.measurement_mode
    tail = modal.c_coeffs[N0:N]
    if mode == DIRICHLET_LEFT:
        C1 = (tail / np.sqrt(lam[N0:N]))[None, :]
    elif mode == NEUMANN_LEFT:
        C1 = (tail / lam[N0:N])[None, :]
    else:
        C1 = tail[None, :]

    n1 = N - N0
    LC0 = L @ C0
    LC1 = L @ C1
    Z01 = np.zeros((N0, n1))
    Z10 = np.zeros((n1, N0))
    Z11 = np.zeros((n1, n1))
    F = np.block(
        [
            [A0 + B0 @ K, LC0, Z01, LC1],
            [np.zeros((N0, N0)), A0 - LC0, Z01, -LC1],
            [B1 @ K, Z10, A1, Z11],
            [Z10, Z10, Z11, A1],
        ]
    )
    Lcal = np.vstack([L, -L, np.zeros((2 * n1, 1))])
    Lphi = np.vstack([B0, np.zeros((N0, m)), B1, np.zeros((n1, m))])
    Emat = np.hstack([np.eye(N0), np.zeros((N0, 2 * N - N0))])
    Ktilde = K @ Emat

    return ControllerRealization(
        N0=N0,
        N=N,
        delta=delta,
        q_c=q_c,
        measurement_mode=mode,
        K=K,
        L=L,
        A0=A0,
        A1=A1,
        B0=B0,
        B1=B1,
        C0=C0,
        C1=C1,
        F=F,
        Lcal=Lcal,
        Lphi=Lphi,
        Emat=Emat,
        Ktilde=Ktilde,
        eigenvalues=lam[: max(N + 1, basis.n_max)].copy(),
        saturation=saturation,
    )
