"""High-order modal simulation of the saturated closed loop.

The plant is truncated to its ``n_sim`` dominant modes, the observer runs
its own N modes, and the coupling is the truncated measurement
y = sum_(n<=n_sim) c_n z_n.  Time stepping is classical fixed-step RK4 with
the step chosen against the stiffest retained mode; the saturation is
evaluated inside the observer dynamics exactly as the controller applies it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controller import ControllerRealization, SaturationMap
from .lmi import CertificateSolution, ellipsoid_block
from .spectral import ModalData, PlantSpec, project_modes
from .sturm_liouville import SpectralBasis, simpson_weights

try:  # pragma: no cover - exercised implicitly when numba is installed
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap if not (args and callable(args[0])) else args[0]


__all__ = [
    "SimulationConfig",
    "SimulationTrace",
    "DecayReport",
    "ConfigError",
    "simulate",
    "check_decay",
]

RK4_STABILITY_LIMIT = 2.5  # |dt * lambda_max| bound for the real-axis stability region


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    z0_samples: np.ndarray
    n_sim: int = 50
    dt: float | None = None
    t_final: float = 10.0
    observer_ic: np.ndarray | None = None
    record_stride: int | None = None


@dataclass
class SimulationTrace:
    times: np.ndarray
    modal_states: np.ndarray
    observer_states: np.ndarray
    inputs: np.ndarray
    inputs_sat: np.ndarray
    output: np.ndarray
    l2_norm: np.ndarray
    h1_norm: np.ndarray
    lyapunov: np.ndarray | None
    certificate_kappa: float | None
    certificate_mu: float | None
    N: int
    N0: int

    def reconstruction_error(self, basis: SpectralBasis, time_stride: int = 1) -> np.ndarray:
        """Field z - sum_(n<=N) zhat_n phi_n on the grid at recorded times."""
        z = self.modal_states[::time_stride]
        zh = self.observer_states[::time_stride]
        n_sim = z.shape[1]
        field = z @ basis.eigenfunctions[:n_sim]
        field -= zh @ basis.eigenfunctions[: self.N]
        return field

    def state_field(self, basis: SpectralBasis, time_stride: int = 1) -> np.ndarray:
        z = self.modal_states[::time_stride]
        return z @ basis.eigenfunctions[: z.shape[1]]

    def export_csv(self, path) -> None:
        n_sim = self.modal_states.shape[1]
        cols = (
            ["t"]
            + [f"z_{n + 1}" for n in range(n_sim)]
            + [f"zhat_{n + 1}" for n in range(self.N)]
            + [f"u_{k + 1}" for k in range(self.inputs.shape[1])]
            + [f"usat_{k + 1}" for k in range(self.inputs.shape[1])]
            + ["y", "l2_norm", "h1_norm", "lyapunov"]
        )
        lyap = (
            self.lyapunov
            if self.lyapunov is not None
            else np.full(len(self.times), np.nan)
        )
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i, t in enumerate(self.times):
                row = np.concatenate(
                    [
                        [t],
                        self.modal_states[i],
                        self.observer_states[i],
                        self.inputs[i],
                        self.inputs_sat[i],
                        [self.output[i], self.l2_norm[i], self.h1_norm[i], lyap[i]],
                    ]
                )
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


@dataclass
class DecayReport:
    degenerate: bool
    max_ratio: float | None
    kappa: float | None
    fitted_rate: float | None
    initial_value: float | None
    threshold: float | None
    stays_in_level_set: bool | None


@njit(cache=True)
def _rk4_loop(state0, a_all, b_all, c_plant, c_obs, l_obs, gain, levels, n0, dt, n_steps, stride, out):
    """Fixed-step RK4 on the stacked state [z (n_sim), zhat (N)].

    a_all: per-component linear rates; b_all: input matrix rows for every
    component (plant then observer); the observer block additionally receives
    -L (c_obs . zhat - c_plant . z).
    """
    n_total = state0.shape[0]
    n_sim = c_plant.shape[0]
    m = levels.shape[0]
    state = state0.copy()
    k1 = np.zeros(n_total)
    k2 = np.zeros(n_total)
    k3 = np.zeros(n_total)
    k4 = np.zeros(n_total)
    tmp = np.zeros(n_total)
    usat = np.zeros(m)
    rec = 0
    out[rec] = state
    for step in range(n_steps):
        for stage in range(4):
            if stage == 0:
                src = state
            elif stage == 1:
                for i in range(n_total):
                    tmp[i] = state[i] + 0.5 * dt * k1[i]
                src = tmp
            elif stage == 2:
                for i in range(n_total):
                    tmp[i] = state[i] + 0.5 * dt * k2[i]
                src = tmp
            else:
                for i in range(n_total):
                    tmp[i] = state[i] + dt * k3[i]
                src = tmp
            # control from the observer head, clamped
            for k in range(m):
                acc = 0.0
                for l in range(n0):
                    acc += gain[k, l] * src[n_sim + l]
                if acc > levels[k]:
                    acc = levels[k]
                elif acc < -levels[k]:
                    acc = -levels[k]
                usat[k] = acc
            y_meas = 0.0
            for n in range(n_sim):
                y_meas += c_plant[n] * src[n]
            y_hat = 0.0
            for n in range(n_total - n_sim):
                y_hat += c_obs[n] * src[n_sim + n]
            innov = y_hat - y_meas
            if stage == 0:
                dst = k1
            elif stage == 1:
                dst = k2
            elif stage == 2:
                dst = k3
            else:
                dst = k4
            for i in range(n_total):
                acc = a_all[i] * src[i]
                for k in range(m):
                    acc += b_all[i, k] * usat[k]
                acc -= l_obs[i] * innov
                dst[i] = acc
        for i in range(n_total):
            state[i] += (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if (step + 1) % stride == 0:
            rec += 1
            out[rec] = state
    if n_steps % stride != 0:
        # always include the terminal state
        rec += 1
        out[rec] = state
    return rec


def _rk4_loop_numpy(
    state0, a_all, b_all, c_plant, c_obs, l_obs, gain, levels, n0, dt, n_steps, stride, out
):
    """Vectorized fallback used when numba is unavailable; same scheme."""
    n_sim = c_plant.shape[0]
    state = state0.copy()

    def rhs(src):
        u = np.clip(gain @ src[n_sim : n_sim + n0], -levels, levels)
        innov = c_obs @ src[n_sim:] - c_plant @ src[:n_sim]
        return a_all * src + b_all @ u - l_obs * innov

    rec = 0
    out[rec] = state
    for step in range(n_steps):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * dt * k1)
        k3 = rhs(state + 0.5 * dt * k2)
        k4 = rhs(state + dt * k3)
        state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if (step + 1) % stride == 0:
            rec += 1
            out[rec] = state
    if n_steps % stride != 0:
        rec += 1
        out[rec] = state
    return rec


def simulate(
    basis: SpectralBasis,
    plant: PlantSpec,
    realization: ControllerRealization,
    config: SimulationConfig,
    certificate: CertificateSolution | None = None,
    modal: ModalData | None = None,
) -> SimulationTrace:
    """Integrate the saturated closed loop and evaluate the trace functionals.

    When a certificate is supplied the Lyapunov functional
    V = X' P X + gamma sum w_n z_n^2 is recorded along the trace, with the
    tail weights w_n = 1 for the L2 certificate and lambda_n otherwise, and
    the boundary-sensing coordinate scaling applied inside X.
    """
    n_sim = config.n_sim
    N, N0 = realization.N, realization.N0
    if n_sim < N:
        raise ConfigError(f"n_sim = {n_sim} must reach the controller order N = {N}")
    if n_sim > basis.n_max:
        raise ConfigError(f"n_sim = {n_sim} exceeds the {basis.n_max} computed modes")
    if modal is None:
        modal = project_modes(basis, plant)

    lam = basis.eigenvalues[:n_sim]
    rate_worst = float(np.max(np.abs(-lam + realization.q_c)))
    dt = config.dt if config.dt is not None else 0.5 / rate_worst
    if dt * rate_worst > RK4_STABILITY_LIMIT:
        raise ConfigError(
            f"dt = {dt:.3e} violates the RK4 stability bound for the stiffest mode; "
            f"use dt <= {RK4_STABILITY_LIMIT / rate_worst:.3e}"
        )
    n_steps = int(np.ceil(config.t_final / dt))
    stride = config.record_stride or max(1, int(np.ceil(n_steps / 4000)))

    z_init = basis.project(np.asarray(config.z0_samples, dtype=float), n_sim)
    obs_init = (
        np.zeros(N) if config.observer_ic is None else np.asarray(config.observer_ic, dtype=float)
    )
    if obs_init.shape != (N,):
        raise ConfigError(f"observer IC must have length N = {N}")

    a_all = np.concatenate([-lam + realization.q_c, -basis.eigenvalues[:N] + realization.q_c])
    b_all = np.vstack([modal.b_coeffs[:n_sim], modal.b_coeffs[:N]])
    c_plant = modal.c_coeffs[:n_sim].copy()
    c_obs = modal.c_coeffs[:N].copy()
    l_obs = np.zeros(n_sim + N)
    l_obs[n_sim : n_sim + N0] = realization.L.ravel()
    state0 = np.concatenate([z_init, obs_init])

    n_rec = n_steps // stride + 1
    out = np.zeros((n_rec + 1, n_sim + N))
    loop = _rk4_loop if _HAVE_NUMBA else _rk4_loop_numpy
    rec = loop(
        state0,
        a_all,
        b_all,
        c_plant,
        c_obs,
        l_obs,
        realization.K,
        realization.saturation.levels,
        N0,
        dt,
        n_steps,
        stride,
        out,
    )
    out = out[: rec + 1]
    times = dt * stride * np.arange(rec + 1)
    if n_steps % stride != 0:
        times[-1] = dt * n_steps

    z_rec = out[:, :n_sim]
    zh_rec = out[:, n_sim:]
    u = zh_rec[:, :N0] @ realization.K.T
    u_sat = np.clip(u, -realization.saturation.levels, realization.saturation.levels)
    y = z_rec @ c_plant

    l2 = np.sqrt(np.sum(z_rec**2, axis=1))
    h1 = _h1_norms(z_rec, basis, plant)

    lyap = None
    kappa = mu = None
    if certificate is not None:
        lyap = _lyapunov_values(z_rec, zh_rec, realization, certificate, lam)
        kappa = certificate.kappa
        mu = certificate.mu

    return SimulationTrace(
        times=times,
        modal_states=z_rec,
        observer_states=zh_rec,
        inputs=u,
        inputs_sat=u_sat,
        output=y,
        l2_norm=l2,
        h1_norm=h1,
        lyapunov=lyap,
        certificate_kappa=kappa,
        certificate_mu=mu,
        N=N,
        N0=N0,
    )


def _h1_norms(z_rec: np.ndarray, basis: SpectralBasis, plant: PlantSpec) -> np.ndarray:
    """Grid-based H1 norms of the reconstructed state, chunked for memory."""
    n_sim = z_rec.shape[1]
    grid = basis.grid
    w = simpson_weights(grid)
    funcs = basis.eigenfunctions[:n_sim]
    dfuncs = np.gradient(funcs, grid, axis=1, edge_order=2)
    out = np.empty(len(z_rec))
    chunk = 512
    for start in range(0, len(z_rec), chunk):
        blk = z_rec[start : start + chunk]
        field = blk @ funcs
        dfield = blk @ dfuncs
        out[start : start + chunk] = np.sqrt(
            np.sum(field**2 * w, axis=1) + np.sum(dfield**2 * w, axis=1)
        )
    return out


def _lyapunov_values(
    z_rec: np.ndarray,
    zh_rec: np.ndarray,
    realization: ControllerRealization,
    certificate: CertificateSolution,
    lam: np.ndarray,
) -> np.ndarray:
    N, N0 = realization.N, realization.N0
    err = z_rec[:, :N] - zh_rec
    scale = realization.error_scaling()
    X = np.hstack([zh_rec[:, :N0], err[:, :N0], zh_rec[:, N0:], err[:, N0:] * scale])
    quad = np.einsum("ti,ij,tj->t", X, certificate.P, X)
    tail_weights = np.ones(len(lam) - N) if certificate.theorem_tag == "thm1" else lam[N:]
    tail = z_rec[:, N:] ** 2 @ tail_weights
    return quad + certificate.gamma * tail


def check_decay(trace: SimulationTrace, certificate: CertificateSolution) -> DecayReport:
    """Evaluate the decay guarantee along a recorded trace.

    Reports the worst V(t) e^(2 kappa t) / V(0) (at the certificate's rate),
    whether the trajectory ever leaves the certified level set once inside,
    and an empirically fitted decay rate of the state norm.
    """
    if trace.lyapunov is None:
        raise ValueError("trace was recorded without a certificate")
    v = trace.lyapunov
    if v[0] <= 0.0:
        return DecayReport(True, None, None, None, float(v[0]), None, None)
    kappa = certificate.kappa
    ratio = np.max(v * np.exp(2.0 * kappa * trace.times) / v[0])

    threshold = 1.0 / certificate.mu
    stays = bool(np.all(v <= threshold * (1.0 + 1e-9))) if v[0] <= threshold else None

    l2 = trace.l2_norm
    floor = max(np.max(l2) * 1e-10, 1e-300)
    usable = l2 > floor
    t_u, l_u = trace.times[usable], np.log(l2[usable])
    if len(t_u) > 10:
        half = len(t_u) // 2
        slope = np.polyfit(t_u[half:], l_u[half:], 1)[0]
        fitted = -float(slope)
    else:
        fitted = None
    return DecayReport(
        degenerate=False,
        max_ratio=float(ratio),
        kappa=kappa,
        fitted_rate=fitted,
        initial_value=float(v[0]),
        threshold=threshold,
        stays_in_level_set=stays,
    )
