"""Run-configuration parsing and validation for the batch pipeline.

The format is an INI file with sections [plant], [actuator.k], [sensor],
[controller], [certificate], [doa], [simulation], [output].  Numbers are
decimal scalars, arrays are bracketed lists, and spatial profiles (actuator
amplitudes, the initial condition) are expressions in x evaluated over a
restricted numpy namespace.
"""

from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, field

import numpy as np

from .spectral import BOUNDED, DIRICHLET_LEFT, NEUMANN_LEFT, PlantSpec, indicator_samples, select_q_c

__all__ = ["RunConfig", "ConfigValidationError", "load_config", "safe_expression"]

THEOREM_BY_SENSOR = {
    BOUNDED: ("thm1", "thm2"),
    DIRICHLET_LEFT: ("thm3",),
    NEUMANN_LEFT: ("thm4",),
}

_EXPR_NAMES = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "log": np.log,
    "pi": np.pi,
}


class ConfigValidationError(ValueError):
    """Invalid or inconsistent configuration; message names section and key."""


def safe_expression(expr: str):
    """Compile an expression of x into a sampling function.

    Only arithmetic and a whitelist of numpy functions are allowed; names
    outside the whitelist raise.
    """
    tree = ast.parse(expr, mode="eval")
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and node.id not in _EXPR_NAMES and node.id != "x":
            raise ConfigValidationError(f"name {node.id!r} not allowed in expression {expr!r}")
        if isinstance(node, (ast.Call,)) and not isinstance(node.func, ast.Name):
            raise ConfigValidationError(f"only direct function calls allowed in {expr!r}")
        if isinstance(node, (ast.Attribute, ast.Subscript, ast.Lambda)):
            raise ConfigValidationError(f"construct not allowed in expression {expr!r}")
    code = compile(tree, "<config-expression>", "eval")

    def sample(x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(
            np.asarray(eval(code, {"__builtins__": {}}, {**_EXPR_NAMES, "x": x}), dtype=float),
            np.shape(x),
        ).copy()

    return sample


def _parse_list(raw: str, where: str) -> list:
    raw = raw.strip()
    if not (raw.startswith("[") and raw.endswith("]")):
        raise ConfigValidationError(f"{where}: expected a bracketed list, got {raw!r}")
    items = []
    for piece in raw[1:-1].split(","):
        piece = piece.strip()
        if not piece:
            continue
        try:
            items.append(ast.literal_eval(piece))
        except (ValueError, SyntaxError):
            items.append(piece)  # bare word, e.g. a theorem tag
    return items


@dataclass
class RunConfig:
    plant: PlantSpec
    grid_size: int
    n_max: int
    delta: float
    strategy: str
    gains_K: np.ndarray | None
    gains_L: np.ndarray | None
    N: int | None
    N_sweep_max: int
    theorems: list[str]
    alphas: dict[str, float]
    epsilon: float
    kappa: float
    kappa_mode: str
    T0_diag: np.ndarray | None
    doa_R_last: float
    doa_max_iters: int
    doa_candidates: str | None
    sim_n_sim: int
    sim_t_final: float
    sim_dt: float | None
    sim_z0: np.ndarray
    sim_observer_ic: np.ndarray | None
    sim_record_stride: int | None
    output_dir: str
    raw: dict = field(default_factory=dict)


def _get(parser, section, key, cast=str, default=None, required=False):
    if not parser.has_option(section, key):
        if required:
            raise ConfigValidationError(f"[{section}] {key}: required key missing")
        return default
    raw = parser.get(section, key).split(";")[0].strip()
    try:
        if cast is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError as exc:
        raise ConfigValidationError(f"[{section}] {key}: cannot parse {raw!r}") from exc


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ConfigValidationError(f"config file {path} not found or unreadable")

    for section in ("plant", "sensor", "controller", "output"):
        if not parser.has_section(section):
            raise ConfigValidationError(f"missing required section [{section}]")

    grid_size = _get(parser, "plant", "grid_size", int, 2401)
    n_max = _get(parser, "plant", "n_max", int, 60)
    grid = np.linspace(0.0, 1.0, grid_size)

    kind = _get(parser, "plant", "coefficients", str, "constant")
    if kind == "constant":
        p_values = np.full(grid_size, _get(parser, "plant", "p", float, required=True))
        q_tilde = np.full(grid_size, _get(parser, "plant", "q_tilde", float, required=True))
    elif kind == "sampled":
        # either a bracketed sample array (linearly resampled onto the grid)
        # or an expression in x
        def field_samples(key: str) -> np.ndarray:
            raw = _get(parser, "plant", key, str, required=True)
            if raw.startswith("["):
                values = np.array(_parse_list(raw, f"[plant] {key}"), dtype=float)
                return np.interp(grid, np.linspace(0.0, 1.0, len(values)), values)
            return safe_expression(raw)(grid)

        p_values = field_samples("p")
        q_tilde = field_samples("q_tilde")
    else:
        raise ConfigValidationError(f"[plant] coefficients: unknown kind {kind!r}")

    theta1 = _get(parser, "plant", "theta1", float, 0.0)
    theta2 = _get(parser, "plant", "theta2", float, 0.0)
    if not (0.0 <= theta1 <= np.pi / 2 and 0.0 <= theta2 <= np.pi / 2):
        raise ConfigValidationError("[plant] theta1/theta2 must lie in [0, pi/2]")

    levels = np.array(_parse_list(
        _get(parser, "plant", "saturation_levels", str, required=True),
        "[plant] saturation_levels",
    ), dtype=float)

    actuators = []
    for section in sorted(s for s in parser.sections() if s.startswith("actuator.")):
        a_type = _get(parser, section, "type", str, "indicator")
        if a_type == "indicator":
            interval = _parse_list(
                _get(parser, section, "interval", str, required=True), f"[{section}] interval"
            )
            amp = safe_expression(_get(parser, section, "amplitude", str, "1"))
            actuators.append(indicator_samples(grid, amp, tuple(float(v) for v in interval)))
        elif a_type == "expression":
            amp = safe_expression(_get(parser, section, "amplitude", str, required=True))
            actuators.append(amp(grid))
        elif a_type == "sampled":
            values = _parse_list(
                _get(parser, section, "values", str, required=True), f"[{section}] values"
            )
            actuators.append(np.interp(grid, np.linspace(0, 1, len(values)), values))
        else:
            raise ConfigValidationError(f"[{section}] type: unknown actuator kind {a_type!r}")
    if not actuators:
        raise ConfigValidationError("at least one [actuator.k] section is required")

    s_type = _get(parser, "sensor", "type", str, required=True)
    if s_type == "indicator":
        interval = _parse_list(
            _get(parser, "sensor", "interval", str, required=True), "[sensor] interval"
        )
        amp = safe_expression(_get(parser, "sensor", "amplitude", str, "1"))
        sensor: np.ndarray | str = indicator_samples(
            grid, amp, tuple(float(v) for v in interval)
        )
    elif s_type == "expression":
        sensor = safe_expression(_get(parser, "sensor", "amplitude", str, required=True))(grid)
    elif s_type in (DIRICHLET_LEFT, NEUMANN_LEFT):
        sensor = s_type
    else:
        raise ConfigValidationError(f"[sensor] type: unknown sensor kind {s_type!r}")

    sensor_mode = sensor if isinstance(sensor, str) else BOUNDED
    allowed = THEOREM_BY_SENSOR[sensor_mode]
    theorems = _parse_list(
        _get(parser, "certificate", "theorems", str, f"{list(allowed)}"),
        "[certificate] theorems",
    ) if parser.has_section("certificate") else list(allowed)
    theorems = [str(t) for t in theorems]
    for t in theorems:
        if t not in allowed:
            raise ConfigValidationError(
                f"[certificate] theorems: {t} needs sensor {THEOREM_BY_SENSOR}; "
                f"sensor type {sensor_mode!r} admits {allowed}"
            )

    epsilon = _get(parser, "certificate", "epsilon", float, 0.125)
    if not 0.0 < epsilon <= 0.5:
        raise ConfigValidationError("[certificate] epsilon must lie in (0, 1/2]")
    kappa = _get(parser, "certificate", "kappa", float, 0.0)
    kappa_mode = _get(parser, "certificate", "kappa_mode", str, "maximize")
    if kappa_mode not in ("fixed", "maximize"):
        raise ConfigValidationError("[certificate] kappa_mode must be fixed or maximize")

    alphas_raw = _get(parser, "certificate", "alpha", str, None)
    alphas: dict[str, float] = {}
    if alphas_raw is not None:
        values = _parse_list(alphas_raw, "[certificate] alpha") if alphas_raw.startswith("[") else [float(alphas_raw)] * len(theorems)
        if len(values) != len(theorems):
            raise ConfigValidationError("[certificate] alpha: one value per theorem required")
        alphas = {t: float(a) for t, a in zip(theorems, values)}

    T0_raw = _get(parser, "certificate", "T0", str, None)
    T0_diag = (
        np.array(_parse_list(T0_raw, "[certificate] T0"), dtype=float)
        if T0_raw is not None
        else None
    )

    q_c_raw = _get(parser, "plant", "q_c", str, "auto")
    if q_c_raw == "auto":
        margin = 1.0 if any(t != "thm1" for t in theorems) else 0.0
        q_c = select_q_c(q_tilde, q_margin=margin)
    else:
        q_c = float(q_c_raw)

    try:
        plant = PlantSpec(
            grid=grid,
            p_values=p_values,
            q_tilde_values=q_tilde,
            theta1=theta1,
            theta2=theta2,
            q_c=q_c,
            actuators=actuators,
            sensor=sensor,
            saturation_levels=levels,
        )
    except ValueError as exc:
        raise ConfigValidationError(str(exc)) from exc

    strategy = _get(parser, "controller", "strategy", str, "riccati")
    gains_K = gains_L = None
    if strategy == "user-supplied":
        gains_csv = _get(parser, "controller", "gains_csv", str, None)
        if gains_csv is not None:
            from .controller import gains_from_csv

            try:
                gains_K, gains_L = gains_from_csv(gains_csv)
            except (OSError, ValueError) as exc:
                raise ConfigValidationError(f"[controller] gains_csv: {exc}") from exc
        else:
            K_raw = _get(parser, "controller", "K", str, required=True)
            L_raw = _get(parser, "controller", "L", str, required=True)
            gains_K = np.array(_parse_list(K_raw, "[controller] K"), dtype=float)
            gains_L = np.array(_parse_list(L_raw, "[controller] L"), dtype=float)
    N_raw = _get(parser, "controller", "N", str, "auto")
    N = None if N_raw == "auto" else int(N_raw)

    z0_expr = _get(parser, "simulation", "z0", str, "0") if parser.has_section("simulation") else "0"
    sim_z0 = safe_expression(z0_expr)(grid)
    obs_raw = (
        _get(parser, "simulation", "observer_ic", str, None)
        if parser.has_section("simulation")
        else None
    )
    sim_observer_ic = (
        np.array(_parse_list(obs_raw, "[simulation] observer_ic"), dtype=float)
        if obs_raw is not None
        else None
    )
    dt_raw = _get(parser, "simulation", "dt", str, "auto") if parser.has_section("simulation") else "auto"

    return RunConfig(
        plant=plant,
        grid_size=grid_size,
        n_max=n_max,
        delta=_get(parser, "controller", "delta", float, 1.0),
        strategy=strategy,
        gains_K=gains_K,
        gains_L=gains_L,
        N=N,
        N_sweep_max=_get(parser, "controller", "N_max_sweep", int, 12),
        theorems=theorems,
        alphas=alphas,
        epsilon=epsilon,
        kappa=kappa,
        kappa_mode=kappa_mode,
        T0_diag=T0_diag,
        doa_R_last=_get(parser, "doa", "R_last", float, 0.005) if parser.has_section("doa") else 0.005,
        doa_max_iters=_get(parser, "doa", "max_iters", int, 60) if parser.has_section("doa") else 60,
        doa_candidates=(
            _get(parser, "doa", "candidates", str, None) if parser.has_section("doa") else None
        ),
        sim_n_sim=_get(parser, "simulation", "n_sim", int, 50) if parser.has_section("simulation") else 50,
        sim_t_final=_get(parser, "simulation", "t_final", float, 10.0) if parser.has_section("simulation") else 10.0,
        sim_dt=None if dt_raw == "auto" else float(dt_raw),
        sim_z0=sim_z0,
        sim_observer_ic=sim_observer_ic,
        sim_record_stride=(
            _get(parser, "simulation", "record_stride", int, None)
            if parser.has_section("simulation")
            else None
        ),
        output_dir=_get(parser, "output", "directory", str, required=True),
    )
