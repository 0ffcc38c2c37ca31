"""Dense primal barrier interior-point solver for small affine LMI systems.

The solver targets feasibility systems and linear objectives over a few
hundred scalar unknowns with matrix blocks up to roughly 30 x 30, which is
the scale of every certificate problem in this package.  Symmetric matrix
variables are stored as packed upper triangles so iterates are symmetric by
construction.  Each affine constraint map is compiled to the canonical form

    S_j(x) = G_j0 + sum_i x_i G_ji  >= 0  (positive semidefinite)

by probing the user-supplied evaluator on basis vectors.  Phase I minimizes
a uniform slack t over the system augmented as S_j(x) + t I >= 0, which both
finds a well-centered strictly feasible point (the max-margin point when run
to optimality) and exposes infeasibility through a nonnegative optimal
slack.  Phase II, used when a linear objective is present, is a standard
log-det barrier path following with damped Newton steps.

Every returned assignment is re-verified against the original constraint
evaluators with dense eigenvalue computations, independent of the solver
state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

__all__ = [
    "ScalarVariable",
    "MatrixVariable",
    "LmiConstraint",
    "AffineLmiSystem",
    "SdpResult",
    "describe",
    "solve",
    "verify_assignment",
    "lyapunov_solve",
]

DEFAULT_BOUND = 1e6
_SENSES = ("<=0", ">=0")


@dataclass(frozen=True)
class ScalarVariable:
    name: str
    lower: float | None = None
    upper: float | None = None


@dataclass(frozen=True)
class MatrixVariable:
    """Symmetric size x size variable; bounds are spectral: lower I <= X <= upper I."""

    name: str
    size: int
    lower: float | None = None
    upper: float | None = None


@dataclass(frozen=True)
class LmiConstraint:
    """Affine symmetric-matrix- or scalar-valued map with an inequality sense.

    ``func`` receives a dict of variable values (floats and symmetric
    ndarrays) and must be affine in them; affinity is checked at compile
    time on a random superposition.
    """

    name: str
    sense: str
    func: Callable[[dict], np.ndarray | float]


@dataclass
class AffineLmiSystem:
    variables: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    objective: dict | None = None  # linear: {var_name: coefficient}, scalars only

    def add_scalar(self, name: str, lower: float | None = None, upper: float | None = None):
        self.variables.append(ScalarVariable(name, lower, upper))
        return self

    def add_matrix(self, name: str, size: int, lower: float | None = None, upper: float | None = None):
        self.variables.append(MatrixVariable(name, size, lower, upper))
        return self

    def add_constraint(self, name: str, sense: str, func) -> "AffineLmiSystem":
        if sense not in _SENSES:
            raise ValueError(f"sense must be one of {_SENSES}, got {sense!r}")
        self.constraints.append(LmiConstraint(name, sense, func))
        return self

    def set_objective(self, coefficients: dict) -> "AffineLmiSystem":
        self.objective = dict(coefficients)
        return self


@dataclass
class SdpResult:
    status: str  # "feasible" | "infeasible" | "failed"
    assignment: dict | None
    objective: float | None
    phase1_slack: float
    residuals: dict
    newton_iterations: int
    message: str = ""

    @property
    def max_violation(self) -> float:
        return max(self.residuals.values()) if self.residuals else np.inf


# -- packing ---------------------------------------------------------------


def _pack_indices(size: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.triu_indices(size)
    return rows, cols


def _unpack(x: np.ndarray, size: int) -> np.ndarray:
    mat = np.zeros((size, size))
    rows, cols = _pack_indices(size)
    mat[rows, cols] = x
    mat[cols, rows] = x
    return mat


class _Compiled:
    """Canonical blocks S_j(x) = G0 + sum_i x_i G_i >= 0 plus bookkeeping."""

    def __init__(self, system: AffineLmiSystem):
        self.system = system
        self.slices: dict[str, tuple] = {}
        offset = 0
        for var in system.variables:
            if isinstance(var, ScalarVariable):
                self.slices[var.name] = (offset, None)
                offset += 1
            else:
                self.slices[var.name] = (offset, var.size)
                offset += var.size * (var.size + 1) // 2
        self.n = offset

        self.block_names: list[str] = []
        self.blocks: list[tuple[np.ndarray, np.ndarray]] = []
        for con in system.constraints:
            g0, gstack = self._probe(con)
            self.block_names.append(con.name)
            self.blocks.append((g0, gstack))
        self._add_bound_blocks()

        self.c = np.zeros(self.n)
        if system.objective:
            for name, coeff in system.objective.items():
                start, size = self.slices[name]
                if size is not None:
                    raise ValueError("linear objectives are supported on scalar variables only")
                self.c[start] = coeff

    # -- vector <-> assignment ------------------------------------------

    def assignment(self, x: np.ndarray) -> dict:
        out = {}
        for var in self.system.variables:
            start, size = self.slices[var.name]
            if size is None:
                out[var.name] = float(x[start])
            else:
                out[var.name] = _unpack(x[start : start + size * (size + 1) // 2], size)
        return out

    def vectorize(self, assignment: dict) -> np.ndarray:
        x = np.zeros(self.n)
        for var in self.system.variables:
            start, size = self.slices[var.name]
            if size is None:
                x[start] = float(assignment[var.name])
            else:
                rows, cols = _pack_indices(size)
                mat = np.asarray(assignment[var.name], dtype=float)
                x[start : start + len(rows)] = mat[rows, cols]
        return x

    # -- compilation ------------------------------------------------------

    def _probe(self, con: LmiConstraint) -> tuple[np.ndarray, np.ndarray]:
        def evaluate(x: np.ndarray) -> np.ndarray:
            val = np.atleast_2d(np.asarray(con.func(self.assignment(x)), dtype=float))
            return -val if con.sense == "<=0" else val

        g0 = evaluate(np.zeros(self.n))
        s = g0.shape[0]
        if g0.shape != (s, s) or np.max(np.abs(g0 - g0.T)) > 1e-12 * (1 + np.abs(g0).max()):
            raise ValueError(f"constraint {con.name!r} is not symmetric")
        gstack = np.empty((self.n, s, s))
        unit = np.zeros(self.n)
        for i in range(self.n):
            unit[i] = 1.0
            gstack[i] = evaluate(unit) - g0
            unit[i] = 0.0
        # affinity spot check on a random superposition
        rng = np.random.default_rng(0)
        x_test = rng.normal(size=self.n)
        direct = evaluate(x_test)
        linear = g0 + np.tensordot(x_test, gstack, axes=1)
        scale = 1.0 + np.abs(direct).max()
        if np.max(np.abs(direct - linear)) > 1e-8 * scale:
            raise ValueError(f"constraint {con.name!r} is not affine in the decision variables")
        return g0, gstack

    def _add_bound_blocks(self) -> None:
        for var in self.system.variables:
            start, size = self.slices[var.name]
            lower = var.lower if var.lower is not None else -DEFAULT_BOUND
            upper = var.upper if var.upper is not None else DEFAULT_BOUND
            if size is None:
                for sense_val, tag in ((lower, "lower"), (upper, "upper")):
                    g0 = np.atleast_2d(-sense_val if tag == "lower" else sense_val)
                    gi = np.zeros((self.n, 1, 1))
                    gi[start, 0, 0] = 1.0 if tag == "lower" else -1.0
                    self.block_names.append(f"bound:{var.name}:{tag}")
                    self.blocks.append((g0.astype(float), gi))
            else:
                rows, cols = _pack_indices(size)
                npacked = size * (size + 1) // 2
                for bound, tag, sign in ((lower, "lower", 1.0), (upper, "upper", -1.0)):
                    g0 = -sign * bound * np.eye(size)
                    gi = np.zeros((self.n, size, size))
                    for k in range(npacked):
                        a, b = rows[k], cols[k]
                        gi[start + k, a, b] = sign
                        gi[start + k, b, a] = sign
                    self.block_names.append(f"bound:{var.name}:{tag}")
                    self.blocks.append((g0, gi))

    # -- scaling ------------------------------------------------------------

    def normalized_blocks(self) -> list[tuple[np.ndarray, np.ndarray, float]]:
        out = []
        for g0, gstack in self.blocks:
            coeff_scale = float(np.max(np.sqrt(np.sum(gstack**2, axis=(1, 2)))))
            sigma = max(coeff_scale, 1e-8)
            out.append((g0 / sigma, gstack / sigma, sigma))
        return out


# -- barrier machinery -------------------------------------------------------


class _BarrierProblem:
    """min c.x - (1/mu) sum_j logdet S_j(x) over the strictly feasible set."""

    def __init__(self, blocks: list[tuple[np.ndarray, np.ndarray]], c: np.ndarray):
        self.blocks = blocks
        self.c = c
        self.n = len(c)

    def block_values(self, x: np.ndarray) -> list[np.ndarray]:
        return [g0 + np.tensordot(x, gstack, axes=1) for g0, gstack in self.blocks]

    def cholesky_all(self, x: np.ndarray) -> list[np.ndarray] | None:
        chols = []
        for s_val in self.block_values(x):
            try:
                chols.append(np.linalg.cholesky(s_val))
            except np.linalg.LinAlgError:
                return None
        return chols

    def barrier_value(self, x: np.ndarray, mu: float) -> float:
        chols = self.cholesky_all(x)
        if chols is None:
            return np.inf
        logdet = sum(2.0 * float(np.sum(np.log(np.diag(l)))) for l in chols)
        return mu * float(self.c @ x) - logdet

    def gradient_hessian(self, x: np.ndarray, mu: float) -> tuple[np.ndarray, np.ndarray]:
        grad = mu * self.c.copy()
        hess = np.zeros((self.n, self.n))
        for (g0, gstack), s_val in zip(self.blocks, self.block_values(x)):
            size = s_val.shape[0]
            l = np.linalg.cholesky(s_val)
            # B_i = L^{-1} G_i L^{-T} (symmetric); grad_i -= tr(B_i) and
            # H_ik = tr(B_i B_k) makes the Hessian PSD by construction
            gmat = gstack.transpose(1, 0, 2).reshape(size, self.n * size)
            half = solve_triangular(l, gmat, lower=True)  # columns (i, t): L^{-1} G_i
            half_t = (
                half.reshape(size, self.n, size)  # (s, i, t) = (L^{-1} G_i)[s, t]
                .transpose(2, 1, 0)  # (t, i, s)
                .reshape(size, self.n * size)
            )
            full = solve_triangular(l, half_t, lower=True)  # (a, (i, s)) = B_i[s, a]
            b = full.reshape(size, self.n, size).transpose(1, 2, 0)
            grad -= np.trace(b, axis1=1, axis2=2)
            bf = b.reshape(self.n, size * size)
            hess += bf @ bf.T
        return grad, hess

    def newton(
        self,
        x: np.ndarray,
        mu: float,
        tol: float = 1e-9,
        max_steps: int = 60,
    ) -> tuple[np.ndarray, int, bool]:
        """Damped Newton to the analytic center at barrier weight mu."""
        steps = 0
        for _ in range(max_steps):
            grad, hess = self.gradient_hessian(x, mu)
            # Jacobi equilibration: variables live on wildly different scales
            # (certificate entries span many orders of magnitude), and the
            # raw Hessian is too ill-conditioned for a reliable direction
            d = np.sqrt(np.maximum(np.diag(hess), 1e-300))
            hs = hess / d[:, None] / d[None, :]
            direction = None
            decrement_sq = -1.0
            ridge = 1e-13
            for _attempt in range(6):
                try:
                    factor = cho_factor(hs + ridge * np.eye(self.n))
                    candidate = -cho_solve(factor, grad / d) / d
                except np.linalg.LinAlgError:
                    ridge *= 1e3
                    continue
                decrement_sq = float(-grad @ candidate)
                if decrement_sq > 0.0 or abs(decrement_sq) <= 2.0 * tol:
                    direction = candidate
                    break
                ridge *= 1e3
            if direction is None:
                # equilibrated steepest descent as a last resort
                direction = -grad / (d * d)
                decrement_sq = float(-grad @ direction)
            if 0.0 <= decrement_sq <= 2.0 * tol:
                return x, steps, True
            f0 = self.barrier_value(x, mu)
            alpha = 1.0
            accepted = False
            while alpha > 1e-13:
                trial = x + alpha * direction
                f_trial = self.barrier_value(trial, mu)
                if f_trial < f0 - 0.25 * alpha * decrement_sq:
                    x = trial
                    accepted = True
                    break
                alpha *= 0.5
            steps += 1
            if not accepted:
                return x, steps, False
        return x, steps, False


def _phase_one(
    compiled: _Compiled,
    stop_below: float | None,
    newton_budget: int,
    x_init: np.ndarray | None = None,
) -> tuple[np.ndarray, float, int, bool]:
    """Minimize the uniform slack t over S_j(x) + t I >= 0 (normalized blocks).

    Returns (x, t, newton_steps, converged).  When ``stop_below`` is given the
    loop exits early once t drops under it, which is all an objective phase
    needs from its initialization.
    """
    scaled = compiled.normalized_blocks()
    n = compiled.n
    aug_blocks = []
    total_dim = 0
    for g0, gstack, _sigma in scaled:
        size = g0.shape[0]
        aug = np.concatenate([gstack, np.eye(size)[None, :, :]], axis=0)
        aug_blocks.append((g0, aug))
        total_dim += size

    c = np.zeros(n + 1)
    c[-1] = 1.0
    problem = _BarrierProblem(aug_blocks, c)

    x0 = np.zeros(n + 1)
    if x_init is not None:
        x0[:-1] = x_init
        min_eig = min(
            float(np.linalg.eigvalsh(g0 + np.tensordot(x_init, gs, axes=1)).min())
            for g0, gs, _s in scaled
        )
    else:
        min_eig = min(float(np.linalg.eigvalsh(g0).min()) for g0, _g, _s in scaled)
    x0[-1] = -min_eig + 1.0

    # keep t itself inside a box so the barrier problem is always bounded
    t_hi = x0[-1] + 1.0
    t_lo = -10.0 * DEFAULT_BOUND
    box0 = np.zeros((2, 1, 1))
    box0[0, 0, 0] = t_hi
    box0[1, 0, 0] = -t_lo
    box_g = np.zeros((2, n + 1, 1, 1))
    box_g[0, -1, 0, 0] = -1.0
    box_g[1, -1, 0, 0] = 1.0
    problem.blocks.append((box0[0], box_g[0]))
    problem.blocks.append((box0[1], box_g[1]))
    total_dim += 2

    x = x0
    mu = 1.0
    steps_used = 0
    converged = False
    t_prev = float(x[-1])
    while steps_used < newton_budget:
        x, steps, centered = problem.newton(x, mu, max_steps=min(60, newton_budget - steps_used))
        steps_used += steps
        t = float(x[-1])
        scale = max(1.0, abs(t))
        if stop_below is not None and t < stop_below:
            converged = True
            break
        if total_dim / mu < 1e-8 * scale:
            converged = True
            break
        if not centered:
            # accept stagnation at the optimum once the gap is already tight
            if abs(t - t_prev) <= 1e-9 * scale and total_dim / mu < 1e-5 * scale:
                converged = True
                break
            if steps == 0:
                break
        t_prev = t
        mu *= 10.0
    return x[:-1], float(x[-1]), steps_used, converged


def _phase_two(
    compiled: _Compiled,
    x0: np.ndarray,
    tolerance: float,
    newton_budget: int,
) -> tuple[np.ndarray, int, bool]:
    scaled = compiled.normalized_blocks()
    blocks = [(g0, gstack) for g0, gstack, _sigma in scaled]
    problem = _BarrierProblem(blocks, compiled.c)
    total_dim = sum(g0.shape[0] for g0, _ in blocks)

    x = x0.copy()
    if problem.cholesky_all(x) is None:
        return x, 0, False
    mu = 1.0
    steps_used = 0
    converged = False
    while steps_used < newton_budget:
        x, steps, centered = problem.newton(x, mu, max_steps=min(60, newton_budget - steps_used))
        steps_used += steps
        gap = total_dim / mu
        obj_scale = max(1.0, abs(float(compiled.c @ x)))
        if gap <= 1e-8 * obj_scale:
            converged = True
            break
        if not centered:
            # objective error is bounded by the gap; a stall with a gap under
            # the documented 1e-6 relative accuracy still counts as solved
            if gap <= 1e-6 * obj_scale:
                converged = True
                break
            if steps == 0:
                break
        mu *= 10.0
    return x, steps_used, converged


def describe(system: AffineLmiSystem) -> str:
    """Dimensions, constraint blocks, and coefficient sparsity of the
    vectorized system, for debugging."""
    compiled = _Compiled(system)
    lines = [f"{compiled.n} scalar unknowns, {len(system.constraints)} constraints"]
    for name, (g0, gstack) in zip(compiled.block_names, compiled.blocks):
        nnz = int(np.count_nonzero(np.abs(gstack) > 0.0))
        total = gstack.size
        lines.append(
            f"  {name}: block {g0.shape[0]}x{g0.shape[0]}, "
            f"coefficient density {nnz / max(total, 1):.3f}"
        )
    return "\n".join(lines)


def verify_assignment(system: AffineLmiSystem, assignment: dict) -> dict:
    """Violation of each constraint at the assignment (negative = satisfied).

    Matrix senses use dense symmetric eigenvalues, independent of any solver
    internals: "<=0" reports the largest eigenvalue, ">=0" the negated
    smallest one.
    """
    residuals = {}
    for con in system.constraints:
        val = np.atleast_2d(np.asarray(con.func(assignment), dtype=float))
        if val.shape == (1, 1):
            raw = float(val[0, 0])
            residuals[con.name] = raw if con.sense == "<=0" else -raw
        else:
            eigs = np.linalg.eigvalsh(0.5 * (val + val.T))
            residuals[con.name] = float(eigs[-1]) if con.sense == "<=0" else float(-eigs[0])
    return residuals


def solve(
    system: AffineLmiSystem,
    tolerance: float = 1e-8,
    max_iters: int = 800,
    initial: dict | None = None,
) -> SdpResult:
    """Solve the affine LMI system, optionally minimizing a linear objective.

    Feasibility problems run phase I to (near) optimality, returning the
    max-margin interior point; strict infeasibility surfaces as a
    nonnegative optimal slack and positive re-verified violations.  The
    verdict is based on the re-verified violations: feasible iff every
    constraint holds within ``tolerance``.

    ``initial`` optionally injects a starting assignment; a strictly
    feasible one lets an objective run skip phase I entirely.
    """
    compiled = _Compiled(system)
    has_objective = bool(system.objective)

    x_init = compiled.vectorize(initial) if initial is not None else None
    if has_objective and x_init is not None:
        strictly_inside = all(
            float(np.linalg.eigvalsh(g0 + np.tensordot(x_init, gs, axes=1)).min()) > 0.0
            for g0, gs, _s in compiled.normalized_blocks()
        )
        if strictly_inside:
            x, steps2, phase2_ok = _phase_two(compiled, x_init, tolerance, max_iters)
            assignment = compiled.assignment(x)
            residuals = verify_assignment(system, assignment)
            worst = max(residuals.values()) if residuals else 0.0
            objective_value = float(
                sum(coeff * assignment[name] for name, coeff in system.objective.items())
            )
            status = "feasible" if worst <= tolerance else "failed"
            return SdpResult(
                status=status,
                assignment=assignment,
                objective=objective_value,
                phase1_slack=np.nan,
                residuals=residuals,
                newton_iterations=steps2,
                message=f"warm start; phase2 {'converged' if phase2_ok else 'stalled'}",
            )

    stop_below = -1e-4 if has_objective else None
    x, slack, steps1, phase1_ok = _phase_one(compiled, stop_below, max_iters, x_init)

    steps2 = 0
    message = f"phase1 slack {slack:.3e}"
    if has_objective:
        if slack >= 0.0:
            assignment = compiled.assignment(x)
            residuals = verify_assignment(system, assignment)
            status = "infeasible" if phase1_ok else "failed"
            return SdpResult(
                status, assignment if status != "infeasible" else None,
                None, slack, residuals, steps1,
                message + "; no strictly feasible point for the objective phase",
            )
        x, steps2, phase2_ok = _phase_two(compiled, x, tolerance, max_iters - steps1)
        message += f"; phase2 {'converged' if phase2_ok else 'stalled'}"

    assignment = compiled.assignment(x)
    residuals = verify_assignment(system, assignment)
    worst = max(residuals.values()) if residuals else 0.0
    objective_value = (
        float(sum(coeff * assignment[name] for name, coeff in system.objective.items()))
        if has_objective
        else None
    )

    if worst <= tolerance:
        status = "feasible"
    elif phase1_ok:
        status = "infeasible"
    else:
        status = "failed"
        message += "; solver stalled before convergence"
    return SdpResult(
        status=status,
        assignment=assignment if status == "feasible" else assignment,
        objective=objective_value,
        phase1_slack=slack,
        residuals=residuals,
        newton_iterations=steps1 + steps2,
        message=message,
    )


def lyapunov_solve(F: np.ndarray) -> np.ndarray:
    """Solve F^T P + P F = -I by a dense vectorized linear solve.

    F must be Hurwitz; the result is symmetrized and its residual is checked
    against 1e-10 ||P||.
    """
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    if F.shape != (n, n):
        raise ValueError("F must be square")
    if np.max(np.real(np.linalg.eigvals(F))) >= 0.0:
        raise ValueError("F is not Hurwitz; the Lyapunov certificate does not exist")
    eye = np.eye(n)
    lhs = np.kron(eye, F.T) + np.kron(F.T, eye)
    vec_p = np.linalg.solve(lhs, -eye.reshape(n * n, order="F"))
    p = vec_p.reshape(n, n, order="F")
    p = 0.5 * (p + p.T)
    residual = np.linalg.norm(F.T @ p + p @ F + eye, 2)
    if residual > 1e-10 * max(1.0, np.linalg.norm(p, 2)):
        raise RuntimeError(f"Lyapunov residual {residual:.3e} exceeds tolerance")
    return p
