"""Report rendering: one human-readable summary plus three SVG figures
(state heatmap, reconstruction-error heatmap, inputs against their
saturation levels) mirroring the usual closed-loop panels."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "rdsat"

__all__ = ["render_report", "render_figures"]


def _decimate(array: np.ndarray, target: int) -> np.ndarray:
    stride = max(1, len(array) // target)
    return array[::stride]


def render_figures(out: Path, basis, trace_data: dict, levels: np.ndarray) -> list[str]:
    times = trace_data["times"]
    modal = trace_data["modal_states"]
    observer = trace_data["observer_states"]
    n_sim = modal.shape[1]
    N = observer.shape[1]

    t_dec = _decimate(times, 400)
    z_dec = _decimate(modal, 400)
    obs_dec = _decimate(observer, 400)
    x_stride = max(1, basis.grid.shape[0] // 400)
    grid = basis.grid[::x_stride]
    funcs = basis.eigenfunctions[:, ::x_stride]

    field = z_dec @ funcs[:n_sim]
    err_field = field - obs_dec @ funcs[:N]

    written = []
    for name, data, title in (
        ("fig_state.svg", field, "state z(t, x)"),
        ("fig_error.svg", err_field, "reconstruction error z - sum zhat_n phi_n"),
    ):
        fig, ax = plt.subplots(figsize=(6.0, 3.2))
        mesh = ax.pcolormesh(t_dec, grid, data.T, shading="nearest", cmap="RdBu_r")
        fig.colorbar(mesh, ax=ax)
        ax.set_xlabel("t")
        ax.set_ylabel("x")
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(out / name, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(name)

    u = trace_data["inputs"]
    u_sat = trace_data["inputs_sat"]
    fig, axes = plt.subplots(u.shape[1], 1, figsize=(6.0, 2.2 * u.shape[1]), sharex=True)
    axes = np.atleast_1d(axes)
    for k, ax in enumerate(axes):
        ax.plot(times, u[:, k], lw=0.8, label=f"u_{k + 1}")
        ax.plot(times, u_sat[:, k], lw=0.8, label=f"sat(u_{k + 1})")
        ax.axhline(levels[k], color="k", ls="--", lw=0.6)
        ax.axhline(-levels[k], color="k", ls="--", lw=0.6)
        ax.set_ylabel(f"input {k + 1}")
        ax.legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(out / "fig_inputs.svg", format="svg", metadata={"Date": None})
    plt.close(fig)
    written.append("fig_inputs.svg")
    return written


def render_report(config, out: Path, basis) -> None:
    lines = ["# rdsat pipeline summary", ""]
    lines.append(f"measurement mode: {config.plant.measurement_mode}")
    lines.append(f"theorems: {', '.join(config.theorems)}")

    real_path = out / "realization.npz"
    if real_path.exists():
        data = np.load(real_path)
        lines.append(f"N0 = {int(data['N0'])}, N = {int(data['N'])}")

    kappa_path = out / "kappa_report.csv"
    if kappa_path.exists():
        for line in kappa_path.read_text().strip().splitlines()[1:]:
            tag, k0, kb = (line.split(",") + [""])[:3]
            msg = f"certify[{tag}]: kappa = {float(k0):.6g}"
            if kb:
                msg += f", maximized kappa = {float(kb):.6g}"
            lines.append(msg)

    from .lmi import load_certificate

    for cert_path in sorted(out.glob("certificate_*.txt")):
        cert = load_certificate(cert_path)
        residuals = ", ".join(f"{k} = {v:.3e}" for k, v in cert.residuals.items())
        lines.append(f"{cert_path.stem}: feasibility residuals {residuals}")

    ell_path = out / "ellipsoid_report.txt"
    if ell_path.exists():
        lines.append("")
        lines.append(ell_path.read_text().strip())

    figures = []
    trace_path = out / "trace.npz"
    if trace_path.exists():
        trace_data = dict(np.load(trace_path))
        lines.append("")
        l2 = trace_data["l2_norm"]
        lines.append(
            f"simulation: ||z|| {l2[0]:.6g} -> {l2[-1]:.6g} over t = {trace_data['times'][-1]:.6g}"
        )
        peaks = np.max(np.abs(trace_data["inputs"]), axis=0)
        lines.append(
            "input peaks: "
            + ", ".join(
                f"|u_{k + 1}| = {p:.4g} (level {l:.4g})"
                for k, (p, l) in enumerate(zip(peaks, trace_data["levels"]))
            )
        )
        lyap = trace_data["lyapunov"]
        if lyap.size:
            lines.append(f"V(0) = {lyap[0]:.6g}, max V = {np.max(lyap):.6g}")
        figures = render_figures(out, basis, trace_data, trace_data["levels"])
    if figures:
        lines.append("figures: " + ", ".join(figures))
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
