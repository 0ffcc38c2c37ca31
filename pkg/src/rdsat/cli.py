"""Batch front end: config-driven pipeline from eigensolve to report.

Stages write their artifacts into the output directory and later stages read
them back, so each subcommand can be run on its own once its upstream
artifacts exist:

    eig       basis.csv, basis.npz
    project   modal.csv, modal.npz
    synth     gains.csv, realization.npz
    certify   certificate_<thm>.txt, kappa_report.csv
    doa       doa_certificate_<thm>.txt, r_iterations.csv, ellipsoid_report.txt
    simulate  trace.csv, trace.npz
    report    summary.txt, fig_state.svg, fig_error.svg, fig_inputs.svg

Exit codes: 0 success, 2 validation error, 3 infeasible, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import attraction, lmi, sdp
from .config import ConfigValidationError, RunConfig, load_config
from .controller import (
    HypothesisViolationError,
    SaturationMap,
    assemble_closed_loop,
    determine_N0,
    synthesize_gains,
)
from .sim import ConfigError, SimulationConfig, check_decay, simulate
from .spectral import BOUNDED, project_modes
from .sturm_liouville import CoefficientField, solve_eigenproblem

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4

STAGES = ("eig", "project", "synth", "certify", "doa", "simulate", "report")


class StageDependencyError(RuntimeError):
    pass


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise StageDependencyError(
            f"missing artifact {path.name}; run the '{stage}' stage first"
        )
    return path


# -- artifact I/O -------------------------------------------------------------


def _save_basis(out: Path, basis) -> None:
    basis.export_csv(out / "basis.csv")
    np.savez(
        out / "basis.npz",
        grid=basis.grid,
        eigenvalues=basis.eigenvalues,
        eigenfunctions=basis.eigenfunctions,
        phi_at_0=basis.phi_at_0,
        dphi_at_0=basis.dphi_at_0,
        theta1=basis.theta1,
        theta2=basis.theta2,
    )


def _load_basis(out: Path):
    from .sturm_liouville import SpectralBasis

    data = np.load(_need(out / "basis.npz", "eig"))
    return SpectralBasis(
        theta1=float(data["theta1"]),
        theta2=float(data["theta2"]),
        grid=data["grid"],
        eigenvalues=data["eigenvalues"],
        eigenfunctions=data["eigenfunctions"],
        phi_at_0=data["phi_at_0"],
        dphi_at_0=data["dphi_at_0"],
        n_max=len(data["eigenvalues"]),
    )


def _save_modal(out: Path, modal) -> None:
    modal.export_csv(out / "modal.csv")
    np.savez(
        out / "modal.npz",
        b_coeffs=modal.b_coeffs,
        c_coeffs=modal.c_coeffs,
        b_norm_sq=modal.b_norm_sq,
        c_norm_sq=modal.c_norm_sq,
        residual_b_sq=modal.residual_b_sq,
        residual_c_sq=modal.residual_c_sq,
        measurement_mode=modal.measurement_mode,
    )


def _load_modal(out: Path):
    from .spectral import ModalData

    data = np.load(_need(out / "modal.npz", "project"))
    return ModalData(
        b_coeffs=data["b_coeffs"],
        c_coeffs=data["c_coeffs"],
        b_norm_sq=data["b_norm_sq"],
        c_norm_sq=float(data["c_norm_sq"]),
        residual_b_sq=data["residual_b_sq"],
        residual_c_sq=data["residual_c_sq"],
        measurement_mode=str(data["measurement_mode"]),
    )


def _save_gains(out: Path, K: np.ndarray, L: np.ndarray) -> None:
    with open(out / "gains.csv", "w") as fh:
        fh.write("matrix,row,values\n")
        for i, row in enumerate(np.atleast_2d(K)):
            fh.write(f"K,{i},\"{','.join(f'{v:.17g}' for v in row)}\"\n")
        for i, row in enumerate(np.atleast_2d(L)):
            fh.write(f"L,{i},\"{','.join(f'{v:.17g}' for v in row)}\"\n")


def _realization_from_artifacts(config: RunConfig, out: Path):
    basis = _load_basis(out)
    modal = _load_modal(out)
    data = np.load(_need(out / "realization.npz", "synth"))
    return basis, modal, assemble_closed_loop(
        basis,
        modal,
        (data["K"], data["L"]),
        N0=int(data["N0"]),
        N=int(data["N"]),
        q_c=config.plant.q_c,
        saturation=SaturationMap(config.plant.saturation_levels),
        delta=config.delta,
    )


# -- stages -------------------------------------------------------------------


def stage_eig(config: RunConfig, out: Path, verbose: bool) -> None:
    coeffs = CoefficientField(
        grid=config.plant.grid,
        p_values=config.plant.p_values,
        q_values=config.plant.q_shifted_values,
    )
    basis = solve_eigenproblem(
        coeffs, config.plant.theta1, config.plant.theta2, n_max=config.n_max
    )
    _save_basis(out, basis)
    if verbose:
        print(f"eig: {basis.n_max} modes, lambda_1 = {_fmt(basis.eigenvalues[0])}, "
              f"lambda_{basis.n_max} = {_fmt(basis.eigenvalues[-1])}")


def stage_project(config: RunConfig, out: Path, verbose: bool) -> None:
    basis = _load_basis(out)
    modal = project_modes(basis, config.plant)
    _save_modal(out, modal)
    if verbose:
        print(f"project: |b_nk| leading row {modal.b_coeffs[0]}, c_1 = {_fmt(modal.c_coeffs[0])}")


def stage_synth(config: RunConfig, out: Path, verbose: bool) -> None:
    basis = _load_basis(out)
    modal = _load_modal(out)
    N0 = determine_N0(basis, config.plant.q_c, config.delta)
    A0 = np.diag(-basis.eigenvalues[:N0] + config.plant.q_c)
    B0 = modal.b_coeffs[:N0, :]
    C0 = modal.c_coeffs[:N0][None, :]
    K, L = synthesize_gains(
        A0, B0, C0, config.delta, strategy=config.strategy, K=config.gains_K, L=config.gains_L
    )
    N = config.N if config.N is not None else N0 + 1
    real = assemble_closed_loop(
        basis, modal, (K, L), N0, N, config.plant.q_c,
        SaturationMap(config.plant.saturation_levels), delta=config.delta,
    )
    _save_gains(out, K, L)
    np.savez(out / "realization.npz", K=K, L=L, N0=N0, N=N, F=real.F)
    print(real.summary())


def stage_certify(config: RunConfig, out: Path, verbose: bool) -> int:
    basis, modal, real = _realization_from_artifacts(config, out)
    kappa_rows = []
    status = EXIT_OK
    for tag in config.theorems:
        problem = lmi.build_problem(
            basis, config.plant, modal, real, tag,
            kappa=config.kappa,
            alpha=config.alphas.get(tag),
            T0=np.diag(config.T0_diag) if config.T0_diag is not None else None,
            epsilon=config.epsilon if tag == "thm4" else None,
        )
        if config.N is None:
            # sweep upward until the certificate closes
            def builder(N, _tag=tag):
                r = assemble_closed_loop(
                    basis, modal, (real.K, real.L), real.N0, N, config.plant.q_c,
                    real.saturation, delta=config.delta,
                )
                return lmi.build_problem(
                    basis, config.plant, modal, r, _tag,
                    kappa=config.kappa, alpha=config.alphas.get(_tag),
                    epsilon=config.epsilon if _tag == "thm4" else None,
                )

            N_found, solution, report = lmi.find_min_N(
                builder, range(real.N0 + 1, config.N_sweep_max + 1)
            )
            if N_found is None:
                print(f"certify[{tag}]: no feasible N up to {config.N_sweep_max}: {report}")
                status = EXIT_INFEASIBLE
                continue
            outcome = lmi.FeasibilityOutcome(True, solution, np.nan, solution.residuals)
            print(f"certify[{tag}]: minimal feasible N = {N_found}")
            if N_found != real.N:
                # promote the realization to the certified order for the
                # downstream stages
                real = assemble_closed_loop(
                    basis, modal, (real.K, real.L), real.N0, N_found, config.plant.q_c,
                    real.saturation, delta=config.delta,
                )
                np.savez(
                    out / "realization.npz",
                    K=real.K, L=real.L, N0=real.N0, N=N_found, F=real.F,
                )
            problem = lmi.build_problem(
                basis, config.plant, modal, real, tag,
                kappa=config.kappa,
                alpha=config.alphas.get(tag),
                T0=np.diag(config.T0_diag) if config.T0_diag is not None else None,
                epsilon=config.epsilon if tag == "thm4" else None,
            )
        else:
            outcome = lmi.solve_feasibility(problem)
        if not outcome.feasible:
            print(f"certify[{tag}]: infeasible (slack {outcome.phase1_slack:.3e})")
            status = EXIT_INFEASIBLE
            continue
        sol = outcome.solution
        print(f"certify[{tag}]: feasible; residuals "
              + ", ".join(f"{k} = {v:.3e}" for k, v in sol.residuals.items()))
        kappa_bar = ""
        if config.kappa_mode == "maximize":
            kappa_bar, sol = lmi.maximize_kappa(problem, kappa_max=config.delta)
            print(f"certify[{tag}]: certified decay rate kappa = {_fmt(kappa_bar)}")
        lmi.save_certificate(out / f"certificate_{tag}.txt", sol)
        kappa_rows.append((tag, sol.kappa, kappa_bar))
    with open(out / "kappa_report.csv", "w") as fh:
        fh.write("theorem,kappa_certificate,kappa_maximized\n")
        for tag, k0, kb in kappa_rows:
            fh.write(f"{tag},{k0:.17g},{'' if kb == '' else format(kb, '.17g')}\n")
    return status


def stage_doa(config: RunConfig, out: Path, verbose: bool) -> int:
    basis, modal, real = _realization_from_artifacts(config, out)
    R = np.diag(np.concatenate([np.ones(real.N), [config.doa_R_last]]))
    rows = []
    report_lines = []
    joint_initial = 0.0
    joint_final = 0.0
    for tag in config.theorems:
        problem = lmi.build_problem(
            basis, config.plant, modal, real, tag,
            kappa=0.0,
            alpha=config.alphas.get(tag),
            T0=np.diag(config.T0_diag) if config.T0_diag is not None else None,
            epsilon=config.epsilon if tag == "thm4" else None,
        )
        r_final, cert, seq = lmi.minimize_r(problem, R, max_iters=config.doa_max_iters)
        km = lmi.kappa_margin(problem, cert)
        cert = replace(cert, kappa=km)
        lmi.save_certificate(out / f"doa_certificate_{tag}.txt", cert)
        rows.extend((tag, i + 1, r) for i, r in enumerate(seq))
        joint_initial = max(joint_initial, seq[0])
        joint_final = max(joint_final, r_final)

        ellipsoid = attraction.ellipsoid_from_certificate(cert)
        try:
            res = attraction.membership(config.sim_z0, ellipsoid, basis, config.plant)
            member_msg = (
                f"z0 membership {res.value:.6g} vs 1/mu {res.threshold:.6g} "
                f"({'inside' if res.inside else 'outside'})"
            )
        except attraction.DomainMembershipError as exc:
            member_msg = f"z0 membership undefined ({exc})"
        ball_ok = attraction.inscribed_ball_check(cert, R, r_final * (1 + 1e-9))
        report_lines.append(
            f"{tag}: r {seq[0]:.6g} -> {r_final:.6g} over {len(seq)} steps; "
            f"kappa margin {km:.3e}; inscribed-ball check {ball_ok}; " + member_msg
        )
        print("doa[" + tag + "]: " + report_lines[-1])
    with open(out / "r_iterations.csv", "w") as fh:
        fh.write("theorem,iteration,r\n")
        for tag, i, r in rows:
            fh.write(f"{tag},{i},{r:.17g}\n")
    with open(out / "ellipsoid_report.txt", "w") as fh:
        fh.write(f"joint r: initial {joint_initial:.6g}, final {joint_final:.6g}\n")
        fh.write("\n".join(report_lines) + "\n")
    if config.doa_candidates:
        _batch_membership(config, out, basis)
    return EXIT_OK


def _batch_membership(config: RunConfig, out: Path, basis) -> None:
    """Evaluate every candidate initial condition (one grid sample per CSV
    row, resampled onto the grid) against the shaped ellipsoids."""
    candidates = np.atleast_2d(np.loadtxt(config.doa_candidates, delimiter=","))
    with open(out / "memberships.csv", "w") as fh:
        fh.write("candidate,theorem,value,threshold,inside\n")
        for i, row in enumerate(candidates):
            z = np.interp(basis.grid, np.linspace(0.0, 1.0, len(row)), row)
            for tag in config.theorems:
                cert = lmi.load_certificate(out / f"doa_certificate_{tag}.txt")
                ellipsoid = attraction.ellipsoid_from_certificate(cert)
                try:
                    res = attraction.membership(z, ellipsoid, basis, config.plant)
                    fh.write(
                        f"{i},{tag},{res.value:.17g},{res.threshold:.17g},{res.inside}\n"
                    )
                    verdict = "inside" if res.inside else "outside"
                    print(
                        f"doa[candidate {i}, {tag}]: value {res.value:.6g} vs "
                        f"1/mu {res.threshold:.6g} -> {verdict}"
                    )
                except attraction.DomainMembershipError:
                    fh.write(f"{i},{tag},nan,nan,False\n")
                    print(f"doa[candidate {i}, {tag}]: not in the operator domain")


def stage_simulate(config: RunConfig, out: Path, verbose: bool) -> None:
    basis, modal, real = _realization_from_artifacts(config, out)
    cert = None
    for name in (f"doa_certificate_{config.theorems[0]}.txt",
                 f"certificate_{config.theorems[0]}.txt"):
        if (out / name).exists():
            cert = lmi.load_certificate(out / name)
            break
    sim_config = SimulationConfig(
        z0_samples=config.sim_z0,
        n_sim=config.sim_n_sim,
        dt=config.sim_dt,
        t_final=config.sim_t_final,
        observer_ic=config.sim_observer_ic,
        record_stride=config.sim_record_stride,
    )
    trace = simulate(basis, config.plant, real, sim_config, certificate=cert, modal=modal)
    trace.export_csv(out / "trace.csv")
    np.savez(
        out / "trace.npz",
        times=trace.times,
        modal_states=trace.modal_states,
        observer_states=trace.observer_states,
        inputs=trace.inputs,
        inputs_sat=trace.inputs_sat,
        output=trace.output,
        l2_norm=trace.l2_norm,
        h1_norm=trace.h1_norm,
        lyapunov=trace.lyapunov if trace.lyapunov is not None else np.array([]),
        levels=real.saturation.levels,
        N=real.N,
        N0=real.N0,
    )
    msg = (f"simulate: {len(trace.times)} samples to t = {trace.times[-1]:.3g}; "
           f"||z|| {trace.l2_norm[0]:.4g} -> {trace.l2_norm[-1]:.4g}; "
           f"max|u| = {np.max(np.abs(trace.inputs), axis=0)}")
    print(msg)
    if cert is not None:
        report = check_decay(trace, cert)
        if not report.degenerate:
            print(
                f"simulate: V ratio max {report.max_ratio:.6g} at kappa {report.kappa:.4g}; "
                f"fitted decay rate {report.fitted_rate:.4g}; "
                f"stays in level set: {report.stays_in_level_set}"
            )


def stage_report(config: RunConfig, out: Path, verbose: bool) -> None:
    from . import reporting

    basis = _load_basis(out)
    reporting.render_report(config, out, basis)
    print(f"report: wrote summary.txt and figures to {out}")


def run_pipeline(config: RunConfig, out: Path, verbose: bool) -> int:
    stage_eig(config, out, verbose)
    stage_project(config, out, verbose)
    stage_synth(config, out, verbose)
    status = stage_certify(config, out, verbose)
    if status != EXIT_OK:
        return status
    status = stage_doa(config, out, verbose)
    if status != EXIT_OK:
        return status
    stage_simulate(config, out, verbose)
    stage_report(config, out, verbose)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rdsat",
        description="Saturated output-feedback synthesis and certification "
        "for 1-D reaction-diffusion equations",
    )
    parser.add_argument("stage", choices=("run",) + STAGES, help="pipeline stage to execute")
    parser.add_argument("--config", required=True, help="path to the run configuration file")
    parser.add_argument("--out", default=None, help="artifact directory (default: from config)")
    parser.add_argument("--stage", dest="stage_override", default=None,
                        help="override the positional stage name")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
    except ConfigValidationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    out = Path(args.out) if args.out else Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage = args.stage_override or args.stage

    try:
        if stage == "run":
            return run_pipeline(config, out, args.verbose)
        if stage == "eig":
            stage_eig(config, out, args.verbose)
        elif stage == "project":
            stage_project(config, out, args.verbose)
        elif stage == "synth":
            stage_synth(config, out, args.verbose)
        elif stage == "certify":
            return stage_certify(config, out, args.verbose)
        elif stage == "doa":
            return stage_doa(config, out, args.verbose)
        elif stage == "simulate":
            stage_simulate(config, out, args.verbose)
        elif stage == "report":
            stage_report(config, out, args.verbose)
        else:  # pragma: no cover - argparse guards the choices
            raise ValueError(stage)
    except StageDependencyError as exc:
        print(f"stage dependency error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigValidationError, HypothesisViolationError, ConfigError, ValueError) as exc:
        print(f"validation error in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except lmi.NumericalFailureError as exc:
        print(f"numerical failure in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
