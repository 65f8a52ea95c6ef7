"""Run configuration: TOML parsing, expression mini-language, re-emission.

Data functions (``h``, ``u*``, ``u0``, ``b``, ``r0``) are given as small
arithmetic expressions over the coordinates and time; tables stay possible
through the tabulated density kind.  The effective configuration can be
written back out and reparses to an equivalent :class:`RunConfig`.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

__all__ = ["RunConfig", "ConfigError", "parse_config", "compile_expr", "emit_toml"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


_EXPR_NAMES = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "tanh": np.tanh,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "pi": math.pi,
    "e": math.e,
}
_EXPR_VARS = ("x", "y", "t")


def compile_expr(src, name="expression"):
    """Compile an arithmetic expression of ``x``, ``y``, ``t``.

    Only arithmetic operators and the whitelisted functions are allowed;
    anything else is rejected at parse time.
    """
    src = str(src)
    try:
        code = compile(src, f"<{name}>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"{name}: cannot parse {src!r}: {exc}") from None
    for used in code.co_names:
        if used not in _EXPR_NAMES and used not in _EXPR_VARS:
            raise ConfigError(f"{name}: name {used!r} not allowed in {src!r}")

    def fun(x=0.0, y=0.0, t=0.0):
        env = dict(_EXPR_NAMES)
        env.update(x=x, y=y, t=t)
        return eval(code, {"__builtins__": {}}, env)

    fun.source = src
    return fun


@dataclass
class RunConfig:
    """Fully resolved configuration of a run."""

    # grid
    dim: int = 1
    extent: tuple = ((0.0, 1.0),)
    nodes: tuple = (65,)
    # time
    T: float = 1.0
    n_steps: int = 40
    # density
    density_kind: str = "constant_in_v"
    density_alpha: float = 1.0
    density_beta: float = 0.0
    density_support: float = 1.0
    density_vmax: float = math.inf
    density_gbar: float = 0.0
    density_alpha_table: str = ""
    # initial data
    u0_expr: str = "0"
    memory_kind: str = "virgin"  # virgin | saturated | turning
    r0_expr: str = "0"
    sign_mode: str = "auto"  # auto | +1 | -1
    L: float = 1.0
    lambda_support: float = 1.0
    # sources
    h_expr: str = "0"
    ustar_expr: str = "0"
    b_expr: str = "1"
    # solver
    newton_tol: float = 1e-11
    newton_max_iter: int = 60
    gl_order: int = 0  # 0 = density default quadrature
    backward: bool = True
    eps_margin: float = 0.05
    c2a_tol: float = 1e-6
    # monitors
    q_list: tuple = (1.0,)
    # output
    out_dir: str = "out"
    stride: int = 10
    probes: tuple = (0.5,)
    figures: bool = True
    threads: int = 1
    # loops subcommand
    loop_sequence: tuple = (0.0, 1.0, 0.0)
    loop_subsamples: int = 40

    @property
    def tau(self):
        return self.T / self.n_steps


def _get(section, key, default=None, required=False):
    if key in section:
        return section[key]
    if required:
        raise ConfigError(f"missing required key {key!r}")
    return default


def parse_config(path):
    """Read and validate a TOML run configuration."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None

    cfg = RunConfig()
    grid = raw.get("grid", {})
    cfg.dim = int(_get(grid, "dim", 1))
    if cfg.dim not in (1, 2):
        raise ConfigError("grid.dim must be 1 or 2")
    extent = _get(grid, "extent", [0.0, 1.0])
    nodes = _get(grid, "nodes", 65)
    if cfg.dim == 1:
        cfg.extent = ((float(extent[0]), float(extent[1])),)
        cfg.nodes = (int(nodes),)
    else:
        cfg.extent = tuple((float(a), float(b)) for a, b in extent)
        nodes = nodes if isinstance(nodes, (list, tuple)) else [nodes, nodes]
        cfg.nodes = tuple(int(k) for k in nodes)

    tsec = raw.get("time", {})
    cfg.T = float(_get(tsec, "T", 1.0))
    if "n" in tsec:
        cfg.n_steps = int(tsec["n"])
    elif "tau" in tsec:
        cfg.n_steps = max(1, int(round(cfg.T / float(tsec["tau"]))))
    if cfg.T <= 0.0 or cfg.n_steps < 1:
        raise ConfigError("time.T must be positive and time.n >= 1")

    dsec = raw.get("density", {})
    cfg.density_kind = str(_get(dsec, "kind", "constant_in_v"))
    cfg.density_alpha = float(_get(dsec, "alpha", 1.0))
    cfg.density_beta = float(_get(dsec, "beta", 0.0))
    cfg.density_support = float(_get(dsec, "lambda_support", _get(dsec, "support_r", 1.0)))
    vmax = _get(dsec, "v_max", None)
    if vmax is None:
        cfg.density_vmax = math.inf if cfg.density_beta > 0.0 else 4.0 * cfg.density_support
    else:
        cfg.density_vmax = float(vmax)
    cfg.density_gbar = float(_get(dsec, "gbar", 0.0))
    cfg.density_alpha_table = str(_get(dsec, "alpha_table", ""))

    isec = raw.get("initial", {})
    cfg.u0_expr = str(_get(isec, "u0", "0"))
    cfg.memory_kind = str(_get(isec, "memory", "virgin"))
    if cfg.memory_kind not in ("virgin", "saturated", "turning"):
        raise ConfigError("initial.memory must be virgin | saturated | turning")
    cfg.r0_expr = str(_get(isec, "r0", "0"))
    cfg.sign_mode = str(_get(isec, "sign", "auto"))
    if cfg.sign_mode not in ("auto", "+1", "-1", "1"):
        raise ConfigError("initial.sign must be auto, +1 or -1")
    cfg.L = float(_get(isec, "L", 1.0))
    cfg.lambda_support = float(_get(isec, "lambda_support", cfg.density_support))

    ssec = raw.get("sources", {})
    cfg.h_expr = str(_get(ssec, "h", "0"))
    cfg.ustar_expr = str(_get(ssec, "ustar", "0"))
    cfg.b_expr = str(_get(raw.get("boundary", {}), "b", "1"))

    sol = raw.get("solver", {})
    cfg.newton_tol = float(_get(sol, "newton_tol", 1e-11))
    cfg.newton_max_iter = int(_get(sol, "newton_max_iter", 60))
    cfg.gl_order = int(_get(sol, "gl_order", 0))
    cfg.backward = bool(_get(sol, "backward", True))
    cfg.eps_margin = float(_get(sol, "eps_margin", 0.05))
    cfg.c2a_tol = float(_get(sol, "c2a_tol", 1e-6))

    cfg.q_list = tuple(float(q) for q in _get(raw.get("monitors", {}), "q", [1.0]))

    osec = raw.get("output", {})
    cfg.out_dir = str(_get(osec, "dir", "out"))
    cfg.stride = int(_get(osec, "stride", 10))
    probes = _get(osec, "probes", [0.5])
    if cfg.dim == 1:
        cfg.probes = tuple(float(p) for p in probes)
    else:
        cfg.probes = tuple(tuple(float(c) for c in p) for p in probes)
    cfg.figures = bool(_get(osec, "figures", True))
    cfg.threads = int(_get(osec, "threads", 1))

    lsec = raw.get("loops", {})
    cfg.loop_sequence = tuple(float(u) for u in _get(lsec, "sequence", [0.0, 1.0, 0.0]))
    cfg.loop_subsamples = int(_get(lsec, "subsamples", 40))

    # expressions must parse now, not at run time
    for name in ("u0_expr", "r0_expr", "h_expr", "ustar_expr", "b_expr"):
        compile_expr(getattr(cfg, name), name)
    return cfg


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if math.isinf(v):
            return "inf"
        return f"{float(v):.17g}"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(u) for u in v) + "]"
    raise ConfigError(f"cannot emit value {v!r}")


def emit_toml(cfg):
    """Serialize the effective configuration; reparses to an equal config."""
    out = io.StringIO()

    def section(name, pairs):
        out.write(f"[{name}]\n")
        for k, v in pairs:
            out.write(f"{k} = {_toml_value(v)}\n")
        out.write("\n")

    section(
        "grid",
        [
            ("dim", cfg.dim),
            ("extent", cfg.extent[0] if cfg.dim == 1 else [list(e) for e in cfg.extent]),
            ("nodes", cfg.nodes[0] if cfg.dim == 1 else list(cfg.nodes)),
        ],
    )
    section("time", [("T", cfg.T), ("n", cfg.n_steps)])
    dpairs = [
        ("kind", cfg.density_kind),
        ("alpha", cfg.density_alpha),
        ("beta", cfg.density_beta),
        ("lambda_support", cfg.density_support),
        ("gbar", cfg.density_gbar),
    ]
    if math.isfinite(cfg.density_vmax):
        dpairs.append(("v_max", cfg.density_vmax))
    if cfg.density_alpha_table:
        dpairs.append(("alpha_table", cfg.density_alpha_table))
    section("density", dpairs)
    section(
        "initial",
        [
            ("u0", cfg.u0_expr),
            ("memory", cfg.memory_kind),
            ("r0", cfg.r0_expr),
            ("sign", cfg.sign_mode),
            ("L", cfg.L),
            ("lambda_support", cfg.lambda_support),
        ],
    )
    section("sources", [("h", cfg.h_expr), ("ustar", cfg.ustar_expr)])
    section("boundary", [("b", cfg.b_expr)])
    section(
        "solver",
        [
            ("newton_tol", cfg.newton_tol),
            ("newton_max_iter", cfg.newton_max_iter),
            ("gl_order", cfg.gl_order),
            ("backward", cfg.backward),
            ("eps_margin", cfg.eps_margin),
            ("c2a_tol", cfg.c2a_tol),
        ],
    )
    section("monitors", [("q", list(cfg.q_list))])
    section(
        "output",
        [
            ("dir", cfg.out_dir),
            ("stride", cfg.stride),
            ("probes", [list(p) if isinstance(p, tuple) else p for p in cfg.probes]),
            ("figures", cfg.figures),
            ("threads", cfg.threads),
        ],
    )
    section(
        "loops",
        [("sequence", list(cfg.loop_sequence)), ("subsamples", cfg.loop_subsamples)],
    )
    return out.getvalue()
