"""Command-line interface: run, refine, loops, check.

All file outputs are deterministic: CSV floats carry 17 significant
digits, JSON keys are sorted, and the node loops are sequential regardless
of the requested thread count.  Figures (PNG) are rendered next to the
delimited outputs unless disabled in the configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, compile_expr, emit_toml, parse_config
from .convexify import build_convexifier, verify_branch_convexity
from .driver import (
    CompatibilityError,
    HysteresisField,
    RunAbort,
    RunSetup,
    check_compatibility,
    compute_tau0,
    run,
    supersolution_bound,
)
from .elliptic import Grid, NewtonError, SingularSystemError, assemble
from .play import MemoryCurve
from .preisach import DensityModel, QuadratureSpec, apply_sequence, output

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_COMPAT = 2
EXIT_SOLVER = 3


def _fmt(v):
    return f"{float(v):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- construction from config ---------------------------------------------


def build_grid(cfg):
    b_fun = compile_expr(cfg.b_expr, "boundary.b")
    if cfg.dim == 1:
        (x0, x1), (n,) = cfg.extent[0], cfg.nodes
        return Grid.line(x0, x1, n, lambda x: float(np.asarray(b_fun(x=x), dtype=float)))
    return Grid.rectangle(cfg.extent, cfg.nodes, lambda x, y: np.asarray(b_fun(x=x, y=y), dtype=float) * np.ones_like(x))


def build_density(cfg):
    if cfg.density_kind == "tabulated":
        table = np.loadtxt(cfg.density_alpha_table, delimiter=",", comments="#")
        alpha = (table[:, 0], table[:, 1])
    else:
        alpha = cfg.density_alpha
    return DensityModel(
        kind=cfg.density_kind,
        alpha=alpha,
        beta=cfg.density_beta,
        support_r=cfg.density_support,
        v_max=cfg.density_vmax,
        gbar=cfg.density_gbar,
    )


def _space_eval(cfg, grid, expr, name):
    fun = compile_expr(expr, name)
    xy = grid.node_coords()
    if cfg.dim == 1:
        vals = fun(x=xy[:, 0])
    else:
        vals = fun(x=xy[:, 0], y=xy[:, 1])
    return np.asarray(vals, dtype=float) * np.ones(grid.n_nodes)


def _spacetime_func(cfg, grid, expr, name):
    fun = compile_expr(expr, name)
    xy = grid.node_coords()
    ones = np.ones(grid.n_nodes)
    if cfg.dim == 1:
        return lambda t: np.asarray(fun(x=xy[:, 0], t=t), dtype=float) * ones
    return lambda t: np.asarray(fun(x=xy[:, 0], y=xy[:, 1], t=t), dtype=float) * ones


def build_memory(cfg, grid, u0, T0):
    if cfg.memory_kind == "virgin":
        return HysteresisField.virgin(grid.n_nodes)
    if cfg.memory_kind == "saturated":
        return HysteresisField.saturated(u0)
    r0 = _space_eval(cfg, grid, cfg.r0_expr, "initial.r0")
    if cfg.sign_mode == "auto":
        sign = np.where(T0 >= 0.0, 1.0, -1.0)
        r0 = np.where(T0 == 0.0, 0.0, r0)
    else:
        sign = np.full(grid.n_nodes, float(cfg.sign_mode))
    return HysteresisField.turning(u0, r0, sign, cfg.lambda_support)


def build_setup(cfg):
    grid = build_grid(cfg)
    density = build_density(cfg)
    u0 = _space_eval(cfg, grid, cfg.u0_expr, "initial.u0")
    h_func = _spacetime_func(cfg, grid, cfg.h_expr, "sources.h")
    ustar_func = _spacetime_func(cfg, grid, cfg.ustar_expr, "sources.ustar")
    T0 = grid.robin_laplacian(u0, ustar_func(0.0)) + h_func(0.0)
    memory = build_memory(cfg, grid, u0, T0)
    quad = None
    if cfg.gl_order > 0:
        quad = QuadratureSpec(order=cfg.gl_order, panel_max=density.support_r / 8.0)
    setup = RunSetup(
        grid=grid,
        density=density,
        u0=u0,
        memory=memory,
        h_func=h_func,
        ustar_func=ustar_func,
        T_final=cfg.T,
        n_steps=cfg.n_steps,
        L=cfg.L,
        q_list=cfg.q_list,
        newton_tol=cfg.newton_tol,
        newton_max_iter=cfg.newton_max_iter,
        quad=quad,
        do_backward=cfg.backward,
        eps_margin=cfg.eps_margin,
        c2a_tol=cfg.c2a_tol,
        snapshot_stride=cfg.stride,
    )
    return grid, density, setup


def _probe_indices(cfg, grid):
    xy = grid.node_coords()
    idx = []
    for p in cfg.probes:
        if grid.dim == 1:
            idx.append(int(np.argmin(np.abs(xy[:, 0] - p))))
        else:
            px, py = p
            idx.append(int(np.argmin((xy[:, 0] - px) ** 2 + (xy[:, 1] - py) ** 2)))
    return idx


def _compat_payload(report):
    return {
        "ok": bool(report.ok),
        "messages": list(report.messages),
        "c0_residual": report.c0_residual,
        "c2_violations": [int(i) for i in report.c2_violations],
        "c2a_residual": report.c2a_residual,
        "L_min_feasible": report.L_min_feasible
        if math.isfinite(report.L_min_feasible)
        else "inf",
        "max_T": float(np.max(np.abs(report.T))),
        "max_r_min": float(np.max(report.r_min)),
    }


# -- subcommands ------------------------------------------------------------


def cmd_run(cfg, out_dir, threads=1):
    t_wall = time.perf_counter()
    grid, density, setup = build_setup(cfg)
    times = np.linspace(0.0, cfg.T, cfg.n_steps + 1)
    compat = check_compatibility(
        grid, setup.u0, setup.memory, setup.h_func(0.0), cfg.L, setup.ustar_func(0.0), cfg.c2a_tol
    )
    if not compat.ok:
        payload = _compat_payload(compat)
        print(json.dumps(payload, indent=2, sort_keys=True))
        _write_json(out_dir / "compat_report.json", payload)
        return EXIT_COMPAT

    result = run(setup)

    probe_idx = _probe_indices(cfg, grid)
    tau = setup.tau
    for k, idx in enumerate(probe_idx):
        u = result.u_hist[:, idx]
        g = result.g_hist[:, idx]
        rows = [(0.0, u[0], u[0], g[0], g[0])]
        for i in range(1, cfg.n_steps + 1):
            tm = times[i] - 0.5 * tau
            rows.append((tm, 0.5 * (u[i - 1] + u[i]), u[i - 1], 0.5 * (g[i - 1] + g[i]), g[i - 1]))
            rows.append((times[i], u[i], u[i], g[i], g[i]))
        _write_csv(out_dir / f"probe_{k}.csv", ["t", "u_pl", "u_pco", "g_pl", "g_pco"], rows)

    xy = grid.node_coords()
    snap_ids = list(range(0, cfg.n_steps + 1, max(1, cfg.stride)))
    if snap_ids[-1] != cfg.n_steps:
        snap_ids.append(cfg.n_steps)
    for i in snap_ids:
        cols = ["x", "y"][: grid.dim] + ["u", "g"]
        rows = np.column_stack([xy, result.u_hist[i], result.g_hist[i]])
        _write_csv(out_dir / f"snapshot_{i:05d}.csv", cols, rows)

    mon = result.monitors
    summary = {
        "tau": tau,
        "tau0": result.tau0,
        "Ubar": result.Ubar,
        "n_steps": cfg.n_steps,
        "monitors": mon.summary(),
        "per_step": {
            "grad_energy": mon.grad_energy.tolist(),
            "boundary_energy": mon.boundary_energy.tolist(),
            "dissipation": mon.dissipation.tolist(),
            "h22b": mon.h22b.tolist(),
            "lyapunov": mon.lyapunov.tolist(),
            "sup_u": mon.sup_u.tolist(),
        },
        "backward": None
        if result.backward is None
        else {
            "max_a": float(np.max(result.backward.a)),
            "rate_bound": result.backward.rate_bound,
            "rate_bound_ok": result.backward.rate_bound_ok,
        },
        "newton_iterations": [i["iterations"] for i in result.newton_iterations],
        "compat": _compat_payload(compat),
    }
    _write_json(out_dir / "summary.json", summary)
    # wall time and worker hints are environment-dependent: kept out of the
    # deterministic summary so reruns stay byte-identical
    _write_json(
        out_dir / "timing.json",
        {"wall_time_s": time.perf_counter() - t_wall, "threads": threads},
    )
    (out_dir / "effective_config.toml").write_text(emit_toml(cfg), encoding="utf-8")

    if cfg.figures:
        from . import plots

        series = {
            f"probe {k}": (result.u_hist[:, idx], result.g_hist[:, idx])
            for k, idx in enumerate(probe_idx)
        }
        plots.plot_trajectories(times, series, out_dir / "fig_trajectory.png")
        plots.plot_monitors(mon, out_dir / "fig_monitors.png")
        plots.plot_fields(grid, times, result.u_hist, out_dir / "fig_fields.png")
        plots.plot_memory_curves(
            [result.memory.curves[idx] for idx in probe_idx],
            out_dir / "fig_memory.png",
            labels=[f"probe {k}" for k in range(len(probe_idx))],
        )
    print(
        f"run complete: {cfg.n_steps} steps, sup|u| = {mon.sup_u_overall:.6g} "
        f"<= Ubar = {result.Ubar:.6g}, outputs in {out_dir}"
    )
    return EXIT_OK


def cmd_refine(cfg, out_dir, levels):
    from dataclasses import replace

    grid, density, base_setup = build_setup(cfg)
    probe_idx = _probe_indices(cfg, grid)
    taus, rows, results = [], [], []
    for k in range(levels):
        setup = replace(base_setup, n_steps=cfg.n_steps * 2**k)
        res = run(setup)
        results.append(res)
        taus.append(setup.tau)
        mon = res.monitors.summary()
        row = {
            "es0": mon["es0"],
            "es1_dissipation": mon["es1_dissipation"],
            "es1_grad_max": mon["es1_grad_max"],
            "es2a": mon["es2a"],
        }
        for qk, qv in mon["utq"].items():
            row[f"utq_{qk}"] = qv
        rows.append(row)

    keys = sorted(rows[0].keys())
    _write_csv(
        out_dir / "refine_monitors.csv",
        ["tau"] + keys,
        [[taus[k]] + [rows[k][key] for key in keys] for k in range(levels)],
    )

    # probe differences between consecutive levels at the coarse time points
    q_ref = max(cfg.q_list)
    diffs = []
    for k in range(levels - 1):
        coarse, fine = results[k], results[k + 1]
        acc = 0.0
        for idx in probe_idx:
            uc = coarse.u_hist[:, idx]
            uf = fine.u_hist[::2, idx]
            acc += float(np.sum(np.abs(uc - uf) ** q_ref) * taus[k]) ** (1.0 / q_ref)
        diffs.append(acc / max(1, len(probe_idx)))
    _write_csv(
        out_dir / "refine_differences.csv",
        ["tau_coarse", "tau_fine", f"probe_diff_q{q_ref:g}"],
        [[taus[k], taus[k + 1], diffs[k]] for k in range(levels - 1)],
    )
    spread = {}
    for key in keys:
        vals = [rows[k][key] for k in range(levels)]
        spread[key] = max(vals) / max(min(vals), 1e-300) if min(vals) > 0 else 1.0
    summary = {
        "taus": taus,
        "monitors": rows,
        "probe_differences": diffs,
        "monitor_spread_factor": spread,
    }
    _write_json(out_dir / "refine_summary.json", summary)
    if cfg.figures:
        from . import plots

        plots.plot_refinement(taus, rows, diffs, out_dir / "fig_refine.png")
    print(f"refinement study over {levels} levels written to {out_dir}")
    return EXIT_OK


def _dense_trace(sequence, subsamples):
    """Sub-sample every monotone segment of the target sequence."""
    trace = [float(sequence[0])]
    for a, b in zip(sequence[:-1], sequence[1:]):
        seg = np.linspace(a, b, subsamples + 1)[1:]
        trace.extend(float(v) for v in seg)
    return np.array(trace)


def _signed_area(u, g):
    """Shoelace area of the final closed cycle of the trace."""
    close = np.nonzero(np.abs(u[:-1] - u[-1]) <= 1e-12 * max(1.0, np.abs(u).max()))[0]
    j = int(close[-1]) if len(close) else 0
    uu, gg = u[j:], g[j:]
    return 0.5 * float(np.sum(uu * np.roll(gg, -1) - np.roll(uu, -1) * gg))


def cmd_loops(cfg, out_dir):
    density = build_density(cfg)
    trace = _dense_trace(cfg.loop_sequence, cfg.loop_subsamples)
    start = MemoryCurve()  # virgin state, input starts from zero
    g_vals, _final = apply_sequence(density, start, trace)
    u_out = np.concatenate([[start.value], trace])
    g_out = np.concatenate([[output(density, start)], g_vals])
    _write_csv(out_dir / "loops.csv", ["u", "g"], np.column_stack([u_out, g_out]))
    area = _signed_area(u_out, g_out)
    summary = {
        "signed_area": area,
        "counterclockwise": bool(area >= -1e-12),
        "n_points": int(len(u_out)),
        "final_g": float(g_out[-1]),
    }
    _write_json(out_dir / "loops_summary.json", summary)
    if cfg.figures:
        from . import plots

        plots.plot_loops(u_out, g_out, out_dir / "fig_loops.png")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _assembly_selftest(grid):
    op = assemble(grid)
    one = np.ones(grid.n_nodes)
    sym = float(abs(op.A - op.A.T).max())
    a11 = float(one @ (op.A @ one))
    xy = grid.node_coords()
    u = xy[:, 0] ** 2
    interior = ~grid.boundary_mask
    lap = (op.K @ u) / grid.w_dom
    quad_err = float(np.max(np.abs(lap[interior] - (-2.0)))) if interior.any() else 0.0
    return {
        "symmetry_gap": sym,
        "A_one_one": a11,
        "boundary_integral_b": grid.boundary_measure_b,
        "interior_quadratic_error": quad_err,
    }


def _convexifier_payload(density, U):
    cx = build_convexifier(density.phi, U)
    convexity = verify_branch_convexity(density, cx)
    return {
        "C": cx.C,
        "identity": cx.is_identity,
        "ode_residual": cx.ode_residual(),
        "beta_estimate": convexity.beta_estimate,
        "min_second_difference": convexity.min_second_difference,
        "max_concavity_violation": convexity.max_concavity_violation,
        "rgr_residual": convexity.rgr_residual,
        "roundtrip_error": convexity.roundtrip_error,
        "g_bounds": list(cx.g_bounds),
    }


def cmd_check_convexify(cfg, out_dir):
    """Convexifier summary for the configured density, as JSON."""
    density = build_density(cfg)
    payload = _convexifier_payload(density, max(1.0, cfg.lambda_support))
    print(json.dumps(payload, indent=2, sort_keys=True))
    _write_json(out_dir / "convexify_report.json", payload)
    return EXIT_OK


def cmd_check(cfg, out_dir, check_assembly=False):
    grid, density, setup = build_setup(cfg)
    times = np.linspace(0.0, cfg.T, cfg.n_steps + 1)
    h0 = setup.h_func(0.0)
    us0 = setup.ustar_func(0.0)
    compat = check_compatibility(grid, setup.u0, setup.memory, h0, cfg.L, us0, cfg.c2a_tol)
    op = assemble(grid)
    sup_h = max(float(np.abs(setup.h_func(t)).max()) for t in times)
    sup_us = max(float(np.abs(setup.ustar_func(t)).max()) for t in times)
    support = max(c.support_radius for c in setup.memory.curves)
    Ubar, _ = supersolution_bound(op, sup_h, sup_us, support, cfg.eps_margin)
    tau0 = compute_tau0(density, cfg.L, Ubar)

    report = {
        "compatibility": _compat_payload(compat),
        "tau": setup.tau,
        "tau0": tau0,
        "tau_admissible": bool(setup.tau < tau0),
        "Ubar": Ubar,
        "convexifier": _convexifier_payload(density, max(1.0, Ubar)),
    }
    if not (setup.tau < tau0):
        report["warning"] = "tau is not below tau0; the backward step is inadmissible"
    if check_assembly:
        report["assembly"] = _assembly_selftest(grid)
    print(json.dumps(report, indent=2, sort_keys=True))
    _write_json(out_dir / "check_report.json", report)
    return EXIT_OK if compat.ok else EXIT_COMPAT


# -- entry point -------------------------------------------------------------


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="hysterelax",
        description="Preisach hysteresis operators and the implicit degenerate-diffusion scheme",
    )
    parser.add_argument("--config", required=True, help="TOML configuration file")
    parser.add_argument("--out-dir", default=None, help="override [output].dir")
    parser.add_argument("--threads", type=int, default=None, help="worker hint (execution is sequential)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", help="compatibility audit, backward step, time loop, monitors")
    p_refine = sub.add_parser("refine", help="rerun with halved time steps")
    p_refine.add_argument("--levels", type=int, default=3)
    sub.add_parser("loops", help="scalar hysteresis diagram for the configured sequence")
    p_check = sub.add_parser("check", help="print compatibility / convexity report")
    p_check.add_argument("--check-assembly", action="store_true")
    sub.add_parser("check-convexify", help="print the convexifier summary as JSON")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    # worker-count hints come from flag or environment; they never enter the
    # deterministic outputs (node loops are sequential either way)
    threads = cfg.threads
    if args.threads is not None:
        threads = args.threads
    env_threads = os.environ.get("HYSTERELAX_THREADS")
    if env_threads:
        try:
            threads = int(env_threads)
        except ValueError:
            print("ignoring malformed HYSTERELAX_THREADS", file=sys.stderr)
    out_dir = Path(args.out_dir) if args.out_dir else Path(cfg.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "run":
            return cmd_run(cfg, out_dir, threads)
        if args.command == "refine":
            return cmd_refine(cfg, out_dir, args.levels)
        if args.command == "loops":
            return cmd_loops(cfg, out_dir)
        if args.command == "check":
            return cmd_check(cfg, out_dir, args.check_assembly)
        if args.command == "check-convexify":
            return cmd_check_convexify(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CompatibilityError as exc:
        print(f"compatibility violation: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except (NewtonError, SingularSystemError, RunAbort) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
