"""Stability-certificate problems: Theta-matrix assembly and feasibility.

Each theorem variant shares the same Theta1/Theta2 structure and differs in
the scalar tail condition Theta3 (plus Theta4 in the Neumann-trace case):

  thm1  L2 decay, bounded sensing      Theta3 from ||R_N c||^2
  thm2  H1 decay, bounded sensing      Theta3 from ||R_N c||^2 / lambda_{N+1}
  thm3  H1 decay, Dirichlet trace      Theta3 from the tail constant M1
  thm4  H1 decay, Neumann trace        Theta3/Theta4 from M2(eps)

The nonlinear product T C is removed by fixing T = tau T0 and substituting
Ctilde = tau C, mu_tilde = tau^2 mu, which makes the system affine in
(P, beta, gamma, mu_tilde, tau, Ctilde); original variables are recovered
afterwards and every constraint is re-verified with dense eigenvalue
computations at a 1e-7 tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import sdp
from .controller import ControllerRealization
from .spectral import BOUNDED, DIRICHLET_LEFT, NEUMANN_LEFT, ModalData, PlantSpec
from .spectral import tail_constant_M1, tail_constant_M2
from .sturm_liouville import SpectralBasis

__all__ = [
    "CertificateProblem",
    "CertificateSolution",
    "FeasibilityOutcome",
    "NumericalFailureError",
    "build_problem",
    "build_theta1",
    "build_theta2",
    "build_theta3",
    "build_theta4",
    "ellipsoid_block",
    "solve_feasibility",
    "maximize_kappa",
    "find_min_N",
    "minimize_r",
    "verify_solution",
    "save_certificate",
    "load_certificate",
]

THEOREMS = ("thm1", "thm2", "thm3", "thm4")
VERIFY_TOL = 1e-7
VARIABLE_BOUND = 1e4
ASYMMETRY_TOL = 1e-12

DEFAULT_ALPHA = {"thm1": 1.0, "thm2": 2.0, "thm3": 2.0, "thm4": 2.0}
DEFAULT_EPSILON = 0.125


class NumericalFailureError(RuntimeError):
    """Interior-point solver stalled; carries the residual trace."""


@dataclass(frozen=True)
class CertificateProblem:
    """Frozen data of one theorem's constraint system at fixed N and kappa."""

    theorem_tag: str
    realization: ControllerRealization
    kappa: float
    alpha: float
    T0: np.ndarray
    lambda_next: float
    q_c: float
    residual_b_sq: np.ndarray
    residual_c_sq: float | None
    tail_m1: float | None
    tail_m2: float | None
    epsilon: float | None
    saturation_levels: np.ndarray

    def __post_init__(self) -> None:
        if self.theorem_tag not in THEOREMS:
            raise ValueError(f"theorem_tag must be one of {THEOREMS}")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.theorem_tag == "thm1":
            if self.alpha <= 0:
                raise ValueError("thm1 requires alpha > 0")
        elif self.alpha <= 1:
            raise ValueError(f"{self.theorem_tag} requires alpha > 1")
        if self.theorem_tag == "thm4":
            if self.epsilon is None:
                raise ValueError("thm4 requires epsilon")
            if not 0 < self.epsilon <= 0.5:
                raise ValueError("epsilon must lie in (0, 1/2]")
        if self.theorem_tag in ("thm1", "thm2") and self.residual_c_sq is None:
            raise ValueError(f"{self.theorem_tag} needs the bounded-sensor residual")
        if self.theorem_tag == "thm3" and self.tail_m1 is None:
            raise ValueError("thm3 needs the Dirichlet tail constant M1")
        if self.theorem_tag == "thm4" and self.tail_m2 is None:
            raise ValueError("thm4 needs the Neumann tail constant M2(eps)")

    @property
    def N(self) -> int:
        return self.realization.N

    @property
    def N0(self) -> int:
        return self.realization.N0

    @property
    def m(self) -> int:
        return self.realization.m

    @property
    def residual_b_total(self) -> float:
        return float(np.sum(self.residual_b_sq))

    def with_kappa(self, kappa: float) -> "CertificateProblem":
        return replace(self, kappa=kappa)


@dataclass(frozen=True)
class CertificateSolution:
    """Recovered decision variables of a feasible certificate."""

    theorem_tag: str
    kappa: float
    alpha: float
    epsilon: float | None
    N0: int
    N: int
    measurement_mode: str
    P: np.ndarray
    beta: float
    gamma: float
    mu: float
    tau: float
    T: np.ndarray
    C: np.ndarray
    residuals: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, value in (("beta", self.beta), ("gamma", self.gamma), ("mu", self.mu)):
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if np.any(np.diag(self.T) <= 0):
            raise ValueError("T must be diagonal positive definite")

    @property
    def worst_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else np.nan


@dataclass
class FeasibilityOutcome:
    feasible: bool
    solution: CertificateSolution | None
    phase1_slack: float
    residuals: dict
    message: str = ""


def build_problem(
    basis: SpectralBasis,
    plant: PlantSpec,
    modal: ModalData,
    realization: ControllerRealization,
    theorem_tag: str,
    kappa: float = 0.0,
    alpha: float | None = None,
    T0: np.ndarray | None = None,
    epsilon: float | None = None,
) -> CertificateProblem:
    """Assemble the certificate data for one theorem at the realization's N."""
    N = realization.N
    mode = realization.measurement_mode
    expected = {
        BOUNDED: ("thm1", "thm2"),
        DIRICHLET_LEFT: ("thm3",),
        NEUMANN_LEFT: ("thm4",),
    }[mode]
    if theorem_tag not in expected:
        raise ValueError(f"{theorem_tag} does not apply to {mode} sensing")
    if alpha is None:
        alpha = DEFAULT_ALPHA[theorem_tag]
    if theorem_tag == "thm4" and epsilon is None:
        epsilon = DEFAULT_EPSILON
    if T0 is None:
        T0 = np.eye(realization.m)

    p_star = float(np.min(plant.p_values))
    residual_c = float(modal.residual_c_sq[N]) if mode == BOUNDED else None
    tail_m1 = tail_constant_M1(basis, N, p_star) if theorem_tag == "thm3" else None
    tail_m2 = (
        tail_constant_M2(basis, N, epsilon, p_star) if theorem_tag == "thm4" else None
    )
    return CertificateProblem(
        theorem_tag=theorem_tag,
        realization=realization,
        kappa=kappa,
        alpha=alpha,
        T0=np.asarray(T0, dtype=float),
        lambda_next=float(basis.eigenvalues[N]),
        q_c=realization.q_c,
        residual_b_sq=modal.residual_b_sq[N].copy(),
        residual_c_sq=residual_c,
        tail_m1=tail_m1,
        tail_m2=tail_m2,
        epsilon=epsilon,
        saturation_levels=plant.saturation_levels.copy(),
    )


# -- Theta assembly ----------------------------------------------------------


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    asym = np.max(np.abs(mat - mat.T))
    if asym > ASYMMETRY_TOL * max(1.0, np.max(np.abs(mat))):
        raise AssertionError(f"assembled block asymmetric by {asym:.3e}")
    return 0.5 * (mat + mat.T)


def _theta1_core(
    problem: CertificateProblem,
    P: np.ndarray,
    beta: float,
    gamma: float,
    corner: np.ndarray,
    cross: np.ndarray,
) -> np.ndarray:
    """Common Theta1 skeleton; ``corner`` is the (3,3) block and ``cross``
    the E^T C^T T coupling already evaluated by the caller."""
    real = problem.realization
    F, Lcal, Lphi, Kt = real.F, real.Lcal, real.Lphi, real.Ktilde
    dim = real.dim
    m = real.m
    top = (
        F.T @ P
        + P @ F
        + 2.0 * problem.kappa * P
        + problem.alpha * gamma * problem.residual_b_total * (Kt.T @ Kt)
    )
    pl = P @ Lcal
    pphi = -cross + P @ Lphi
    theta = np.zeros((dim + 1 + m, dim + 1 + m))
    theta[:dim, :dim] = top
    theta[:dim, dim : dim + 1] = pl
    theta[dim : dim + 1, :dim] = pl.T
    theta[dim, dim] = -beta
    theta[:dim, dim + 1 :] = pphi
    theta[dim + 1 :, :dim] = pphi.T
    theta[dim + 1 :, dim + 1 :] = corner
    return _symmetrize(theta)


def build_theta1(
    problem: CertificateProblem,
    P: np.ndarray,
    beta: float,
    gamma: float,
    tau: float,
    Ctilde: np.ndarray,
) -> np.ndarray:
    """Reformulated Theta1(kappa), affine in (P, beta, gamma, tau, Ctilde)."""
    real = problem.realization
    corner = (
        problem.alpha * gamma * problem.residual_b_total * np.eye(real.m)
        - 2.0 * tau * problem.T0
    )
    cross = real.Emat.T @ Ctilde.T @ problem.T0
    return _theta1_core(problem, P, beta, gamma, corner, cross)


def theta1_original(
    problem: CertificateProblem,
    P: np.ndarray,
    beta: float,
    gamma: float,
    T: np.ndarray,
    C: np.ndarray,
) -> np.ndarray:
    """Theta1(kappa) in the original variables (bilinear in T and C)."""
    real = problem.realization
    corner = problem.alpha * gamma * problem.residual_b_total * np.eye(real.m) - 2.0 * T
    cross = real.Emat.T @ C.T @ T
    return _theta1_core(problem, P, beta, gamma, corner, cross)


def build_theta2(
    problem: CertificateProblem,
    P: np.ndarray,
    tau: float,
    Ctilde: np.ndarray,
    mu_tilde: float,
) -> np.ndarray:
    """Reformulated Theta2, congruent to the original via diag(I, tau I)."""
    real = problem.realization
    gap = (tau * real.K - Ctilde) @ real.Emat
    ell2 = np.diag(problem.saturation_levels**2)
    dim = real.dim
    m = real.m
    theta = np.zeros((dim + m, dim + m))
    theta[:dim, :dim] = P
    theta[:dim, dim:] = gap.T
    theta[dim:, :dim] = gap
    theta[dim:, dim:] = mu_tilde * ell2
    return _symmetrize(theta)


def theta2_original(
    problem: CertificateProblem, P: np.ndarray, C: np.ndarray, mu: float
) -> np.ndarray:
    real = problem.realization
    gap = (real.K - C) @ real.Emat
    ell2 = np.diag(problem.saturation_levels**2)
    dim = real.dim
    m = real.m
    theta = np.zeros((dim + m, dim + m))
    theta[:dim, :dim] = P
    theta[:dim, dim:] = gap.T
    theta[dim:, :dim] = gap
    theta[dim:, dim:] = mu * ell2
    return _symmetrize(theta)


def build_theta3(problem: CertificateProblem, gamma: float, beta: float) -> float:
    """Scalar tail condition of the tagged theorem."""
    lam = problem.lambda_next
    qc, kappa, alpha = problem.q_c, problem.kappa, problem.alpha
    if problem.theorem_tag == "thm1":
        return 2.0 * gamma * (-lam + qc + kappa + 1.0 / alpha) + beta * problem.residual_c_sq
    decay = 2.0 * gamma * (-(1.0 - 1.0 / alpha) * lam + qc + kappa)
    if problem.theorem_tag == "thm2":
        return decay + beta * problem.residual_c_sq / lam
    if problem.theorem_tag == "thm3":
        return decay + beta * problem.tail_m1
    return decay + beta * problem.tail_m2 * lam ** (0.5 + problem.epsilon)


def build_theta4(problem: CertificateProblem, gamma: float, beta: float) -> float:
    if problem.theorem_tag != "thm4":
        raise ValueError("Theta4 exists only for the Neumann-trace theorem")
    lam = problem.lambda_next
    return (
        2.0 * gamma * (1.0 - 1.0 / problem.alpha)
        - beta * problem.tail_m2 / lam ** (0.5 - problem.epsilon)
    )


def ellipsoid_block(P: np.ndarray, N0: int, N: int) -> np.ndarray:
    """The [[P22, P24], [P42, P44]] submatrix acting on the error coordinates."""
    idx = np.concatenate([np.arange(N0, 2 * N0), np.arange(N + N0, 2 * N)])
    return P[np.ix_(idx, idx)]


# -- feasibility -------------------------------------------------------------


def _ct_names(problem: CertificateProblem) -> list[str]:
    return [f"ct_{k}_{l}" for k in range(problem.m) for l in range(problem.N0)]


def _ct_matrix(values: dict, problem: CertificateProblem) -> np.ndarray:
    return np.array(
        [[values[f"ct_{k}_{l}"] for l in range(problem.N0)] for k in range(problem.m)]
    )


def _feasibility_system(problem: CertificateProblem) -> sdp.AffineLmiSystem:
    dim = problem.realization.dim
    system = sdp.AffineLmiSystem()
    system.add_matrix("P", dim, lower=None, upper=VARIABLE_BOUND)
    for name in ("beta", "gamma", "mu_tilde", "tau"):
        system.add_scalar(name, lower=0.0, upper=VARIABLE_BOUND)
    for name in _ct_names(problem):
        system.add_scalar(name, lower=-VARIABLE_BOUND, upper=VARIABLE_BOUND)

    system.add_constraint(
        "theta1",
        "<=0",
        lambda v: build_theta1(
            problem, v["P"], v["beta"], v["gamma"], v["tau"], _ct_matrix(v, problem)
        ),
    )
    system.add_constraint(
        "theta2",
        ">=0",
        lambda v: build_theta2(problem, v["P"], v["tau"], _ct_matrix(v, problem), v["mu_tilde"]),
    )
    system.add_constraint(
        "theta3", "<=0", lambda v: build_theta3(problem, v["gamma"], v["beta"])
    )
    if problem.theorem_tag == "thm4":
        system.add_constraint(
            "theta4", ">=0", lambda v: build_theta4(problem, v["gamma"], v["beta"])
        )
    system.add_constraint("P_pos", ">=0", lambda v: v["P"])
    return system


def verify_solution(problem: CertificateProblem, sol: CertificateSolution) -> dict:
    """Residuals of the original constraints at the recovered variables.

    All entries are violations: negative values mean the constraint holds
    strictly.  Independent of the solver (dense eigenvalue computations).
    """
    theta1 = theta1_original(problem, sol.P, sol.beta, sol.gamma, sol.T, sol.C)
    theta2 = theta2_original(problem, sol.P, sol.C, sol.mu)
    residuals = {
        "theta1": float(np.linalg.eigvalsh(theta1)[-1]),
        "theta2": float(-np.linalg.eigvalsh(theta2)[0]),
        "theta3": build_theta3(problem, sol.gamma, sol.beta),
        "P_pos": float(-np.linalg.eigvalsh(sol.P)[0]),
    }
    if problem.theorem_tag == "thm4":
        residuals["theta4"] = -build_theta4(problem, sol.gamma, sol.beta)
    return residuals


def _solution_from_assignment(
    problem: CertificateProblem, values: dict
) -> CertificateSolution:
    tau = float(values["tau"])
    ctilde = _ct_matrix(values, problem)
    # the constraint system is jointly homogeneous of degree one, so the
    # certificate is a ray; normalize its representative to ||P|| = 1
    # (C and every derived quantity such as mu * P are scale invariant)
    p_mat = 0.5 * (values["P"] + values["P"].T)
    scale = 1.0 / np.linalg.norm(p_mat, 2)
    sol = CertificateSolution(
        theorem_tag=problem.theorem_tag,
        kappa=problem.kappa,
        alpha=problem.alpha,
        epsilon=problem.epsilon,
        N0=problem.N0,
        N=problem.N,
        measurement_mode=problem.realization.measurement_mode,
        P=scale * p_mat,
        beta=scale * float(values["beta"]),
        gamma=scale * float(values["gamma"]),
        mu=float(values["mu_tilde"]) / tau**2 / scale,
        tau=scale * tau,
        T=scale * tau * problem.T0,
        C=ctilde / tau,
    )
    return replace(sol, residuals=verify_solution(problem, sol))


def solve_feasibility(
    problem: CertificateProblem, tolerance: float = VERIFY_TOL
) -> FeasibilityOutcome:
    """Solve the reformulated system and re-verify at the stated tolerance."""
    system = _feasibility_system(problem)
    result = sdp.solve(system, tolerance=1e-9)
    if result.status == "failed":
        raise NumericalFailureError(
            f"interior-point solver stalled: {result.message}; residuals {result.residuals}"
        )
    if result.status == "infeasible":
        return FeasibilityOutcome(
            False, None, result.phase1_slack, result.residuals, result.message
        )
    solution = _solution_from_assignment(problem, result.assignment)
    worst = solution.worst_residual
    feasible = worst <= tolerance
    return FeasibilityOutcome(
        feasible,
        solution if feasible else None,
        result.phase1_slack,
        solution.residuals,
        result.message,
    )


def maximize_kappa(
    problem: CertificateProblem,
    kappa_max: float | None = None,
    rel_tol: float = 1e-2,
) -> tuple[float, CertificateSolution]:
    """Largest certifiable decay rate by bisection on [0, kappa_max].

    Starts from the strict kappa = 0 system; by the monotonicity of
    Theta1/Theta3 in kappa the feasible set of rates is an interval.
    """
    if kappa_max is None:
        kappa_max = problem.realization.delta
    base = solve_feasibility(problem.with_kappa(0.0))
    if not base.feasible:
        raise NumericalFailureError("strict kappa = 0 system is infeasible; nothing to maximize")
    best_kappa, best_sol = 0.0, base.solution

    hi_probe = solve_feasibility(problem.with_kappa(kappa_max))
    if hi_probe.feasible:
        return kappa_max, hi_probe.solution

    lo, hi = 0.0, kappa_max
    while hi - lo > rel_tol * kappa_max:
        mid = 0.5 * (lo + hi)
        outcome = solve_feasibility(problem.with_kappa(mid))
        if outcome.feasible:
            lo, best_kappa, best_sol = mid, mid, outcome.solution
        else:
            hi = mid
    return best_kappa, best_sol


def kappa_margin(
    problem: CertificateProblem,
    sol: CertificateSolution,
    kappa_hi: float | None = None,
    tol: float = VERIFY_TOL,
) -> float:
    """Largest kappa at which the FIXED decision variables still certify decay.

    Theta1 and Theta3 are monotone in kappa (Theta1(kappa) = Theta1(0) +
    2 kappa P), so the admissible rates form an interval searched by
    bisection; no re-solve is involved.
    """
    if kappa_hi is None:
        kappa_hi = problem.realization.delta

    def holds(kappa: float) -> bool:
        trial = problem.with_kappa(kappa)
        theta1 = theta1_original(trial, sol.P, sol.beta, sol.gamma, sol.T, sol.C)
        return (
            float(np.linalg.eigvalsh(theta1)[-1]) <= tol
            and build_theta3(trial, sol.gamma, sol.beta) <= tol
        )

    if not holds(0.0):
        return 0.0
    if holds(kappa_hi):
        return kappa_hi
    lo, hi = 0.0, kappa_hi
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
    return lo


def find_min_N(
    problem_builder,
    N_range,
) -> tuple[int | None, CertificateSolution | None, dict]:
    """Smallest N in the range with a feasible certificate.

    ``problem_builder(N)`` must return the CertificateProblem at order N.
    Returns (N, solution, per-N report); N is None when nothing is feasible.
    """
    report: dict[int, str] = {}
    for N in N_range:
        problem = problem_builder(N)
        try:
            outcome = solve_feasibility(problem)
        except NumericalFailureError as exc:
            report[N] = f"numerical failure: {exc}"
            continue
        if outcome.feasible:
            report[N] = "feasible"
            return N, outcome.solution, report
        report[N] = (
            f"infeasible (slack {outcome.phase1_slack:.3e}, "
            f"worst residual {max(outcome.residuals.values()):.3e})"
        )
    return None, None, report


# -- domain-of-attraction shaping --------------------------------------------


def _doa_constraints(
    system: sdp.AffineLmiSystem,
    problem: CertificateProblem,
    R: np.ndarray,
    mu: float,
    theta1_eval,
    theta2_eval,
) -> None:
    system.add_constraint("theta1", "<=0", theta1_eval)
    system.add_constraint("theta2", ">=0", theta2_eval)
    system.add_constraint(
        "theta3", "<=0", lambda v: build_theta3(problem, v["gamma"], v["beta"])
    )
    if problem.theorem_tag == "thm4":
        system.add_constraint(
            "theta4", ">=0", lambda v: build_theta4(problem, v["gamma"], v["beta"])
        )
    system.add_constraint("P_pos", ">=0", lambda v: v["P"])

    N0, N = problem.N0, problem.N

    # rho = r / mu is the well-scaled decision variable
    def doa_gap(v):
        block = np.zeros((N + 1, N + 1))
        block[:N, :N] = ellipsoid_block(v["P"], N0, N)
        block[N, N] = v["gamma"]
        return block - v["rho"] * R

    system.add_constraint("doa", "<=0", doa_gap)


# the first alternation step inherits the base certificate's T direction but
# a much smaller scale; the max-margin base overestimates the useful sector
# weight by orders of magnitude, which would inflate the early r iterates
INITIAL_T_SCALE = 1e-2


def minimize_r(
    problem: CertificateProblem,
    R: np.ndarray,
    max_iters: int = 60,
    base_solution: CertificateSolution | None = None,
    rel_tol: float = 1e-3,
) -> tuple[float, CertificateSolution, list[float]]:
    """Shrink r in  P_blk(P, gamma) <= (r / mu) R  by alternating LMI steps.

    alpha and mu stay frozen at the base certificate's values.  Odd steps fix
    T and optimize (P, beta, gamma, C, r); even steps fix C and optimize
    (P, beta, gamma, T, r).  The returned sequence holds the scheme's
    successive optima and is non-increasing because each step's feasible set
    contains the previous iterate.
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (problem.N + 1, problem.N + 1):
        raise ValueError(f"R must be {(problem.N + 1, problem.N + 1)}, got {R.shape}")
    if base_solution is None:
        outcome = solve_feasibility(problem)
        if not outcome.feasible:
            raise NumericalFailureError("base certificate problem is infeasible")
        base_solution = outcome.solution

    mu = base_solution.mu

    def radius_of(s: CertificateSolution) -> float:
        block = np.zeros((problem.N + 1, problem.N + 1))
        block[: problem.N, : problem.N] = ellipsoid_block(s.P, problem.N0, problem.N)
        block[problem.N, problem.N] = s.gamma
        # smallest r with block <= (r/mu) R
        rinv = np.linalg.cholesky(np.linalg.inv(R))
        return mu * float(np.linalg.eigvalsh(rinv.T @ block @ rinv)[-1])

    # the rescaled T can make the first subproblem infeasible on some plants;
    # the base's own T is always a feasible anchor, so fall back to it
    last_error: NumericalFailureError | None = None
    for t_scale in (INITIAL_T_SCALE, 1.0):
        sol = replace(
            base_solution, T=t_scale * base_solution.T, tau=t_scale * base_solution.tau
        )
        try:
            return _alternate(problem, R, mu, sol, radius_of, max_iters, rel_tol)
        except NumericalFailureError as exc:
            last_error = exc
    raise last_error


def _alternate(problem, R, mu, sol, radius_of, max_iters, rel_tol):
    r_values: list[float] = []
    rho_bound = 10.0 * radius_of(sol) / mu + 1.0

    for it in range(max_iters):
        fix_T = it % 2 == 0
        system = sdp.AffineLmiSystem()
        system.add_matrix("P", problem.realization.dim, upper=VARIABLE_BOUND)
        system.add_scalar("beta", lower=0.0, upper=VARIABLE_BOUND)
        system.add_scalar("gamma", lower=0.0, upper=VARIABLE_BOUND)
        system.add_scalar("rho", lower=0.0, upper=rho_bound)
        if fix_T:
            T_fixed = sol.T.copy()
            for name in _ct_names(problem):
                system.add_scalar(name, lower=-VARIABLE_BOUND, upper=VARIABLE_BOUND)
            theta1_eval = lambda v: theta1_original(  # noqa: E731
                problem, v["P"], v["beta"], v["gamma"], T_fixed, _ct_matrix(v, problem)
            )
            theta2_eval = lambda v: theta2_original(  # noqa: E731
                problem, v["P"], _ct_matrix(v, problem), mu
            )
        else:
            C_fixed = sol.C.copy()
            for k in range(problem.m):
                system.add_scalar(f"t_{k}", lower=0.0, upper=VARIABLE_BOUND)
            theta1_eval = lambda v: theta1_original(  # noqa: E731
                problem,
                v["P"],
                v["beta"],
                v["gamma"],
                np.diag([v[f"t_{k}"] for k in range(problem.m)]),
                C_fixed,
            )
            theta2_eval = lambda v: theta2_original(problem, v["P"], C_fixed, mu)  # noqa: E731

        _doa_constraints(system, problem, R, mu, theta1_eval, theta2_eval)
        system.set_objective({"rho": 1.0})
        # warm start at the current certificate with a slightly inflated radius
        warm = {
            "P": sol.P,
            "beta": sol.beta,
            "gamma": sol.gamma,
            "rho": radius_of(sol) / mu * (1.0 + 1e-3) + 1e-12,
        }
        if fix_T:
            for k in range(problem.m):
                for l in range(problem.N0):
                    warm[f"ct_{k}_{l}"] = sol.C[k, l]
        else:
            for k in range(problem.m):
                warm[f"t_{k}"] = sol.T[k, k]
        result = sdp.solve(system, tolerance=1e-9, initial=warm)
        if result.status != "feasible":
            raise NumericalFailureError(
                f"alternation step {it + 1} ({'T' if fix_T else 'C'} fixed) "
                f"returned {result.status}: {result.message}"
            )
        values = result.assignment
        new_C = _ct_matrix(values, problem) if fix_T else sol.C.copy()
        new_T = sol.T.copy() if fix_T else np.diag([values[f"t_{k}"] for k in range(problem.m)])
        candidate = CertificateSolution(
            theorem_tag=problem.theorem_tag,
            kappa=problem.kappa,
            alpha=problem.alpha,
            epsilon=problem.epsilon,
            N0=problem.N0,
            N=problem.N,
            measurement_mode=problem.realization.measurement_mode,
            P=0.5 * (values["P"] + values["P"].T),
            beta=float(values["beta"]),
            gamma=float(values["gamma"]),
            mu=mu,
            tau=float(np.max(np.diag(new_T))),
            T=new_T,
            C=new_C,
        )
        candidate = replace(candidate, residuals=verify_solution(problem, candidate))
        if candidate.worst_residual > VERIFY_TOL:
            raise NumericalFailureError(
                f"alternation step {it + 1} violated re-verification: "
                f"{candidate.residuals}"
            )
        r_new = mu * float(values["rho"])
        if not r_values:
            sol = candidate
            r_values.append(r_new)
        elif r_new <= r_values[-1] + 1e-9 * max(1.0, r_values[-1]):
            # keep the iterate only if it does not regress (numerical safety)
            sol = candidate
            r_values.append(min(r_new, r_values[-1]))
        else:
            r_values.append(r_values[-1])
        if len(r_values) >= 3 and r_values[-2] - r_values[-1] < rel_tol * max(
            r_values[-1], 1e-12
        ):
            break
    return r_values[-1], sol, r_values


# -- serialization -----------------------------------------------------------


def save_certificate(path, sol: CertificateSolution) -> None:
    """Structured text: scalar header plus row-major CSV matrix sections."""
    with open(path, "w") as fh:
        fh.write("# rdsat certificate\n")
        fh.write(f"theorem = {sol.theorem_tag}\n")
        fh.write(f"kappa = {sol.kappa:.17g}\n")
        fh.write(f"alpha = {sol.alpha:.17g}\n")
        fh.write(f"epsilon = {'' if sol.epsilon is None else format(sol.epsilon, '.17g')}\n")
        fh.write(f"N0 = {sol.N0}\n")
        fh.write(f"N = {sol.N}\n")
        fh.write(f"measurement_mode = {sol.measurement_mode}\n")
        for name in ("beta", "gamma", "mu", "tau"):
            fh.write(f"{name} = {getattr(sol, name):.17g}\n")
        for name, mat in (("P", sol.P), ("T", sol.T), ("C", sol.C)):
            fh.write(f"[{name}]\n")
            for row in np.atleast_2d(mat):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        fh.write("[residuals]\n")
        for key, value in sol.residuals.items():
            fh.write(f"{key} = {value:.17g}\n")


def load_certificate(path) -> CertificateSolution:
    scalars: dict[str, str] = {}
    matrices: dict[str, list[list[float]]] = {}
    residuals: dict[str, float] = {}
    section = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
                if section != "residuals":
                    matrices[section] = []
                continue
            if section == "residuals":
                key, _, value = line.partition("=")
                residuals[key.strip()] = float(value)
            elif section is not None:
                matrices[section].append([float(v) for v in line.split(",")])
            else:
                key, _, value = line.partition("=")
                scalars[key.strip()] = value.strip()
    return CertificateSolution(
        theorem_tag=scalars["theorem"],
        kappa=float(scalars["kappa"]),
        alpha=float(scalars["alpha"]),
        epsilon=float(scalars["epsilon"]) if scalars.get("epsilon") else None,
        N0=int(scalars["N0"]),
        N=int(scalars["N"]),
        measurement_mode=scalars["measurement_mode"],
        P=np.array(matrices["P"]),
        beta=float(scalars["beta"]),
        gamma=float(scalars["gamma"]),
        mu=float(scalars["mu"]),
        tau=float(scalars["tau"]),
        T=np.array(matrices["T"]),
        C=np.array(matrices["C"]),
        residuals=residuals,
    )
