"""Scheme driver: compatibility audit, backward step, bounds, full runs."""

import numpy as np
import pytest

from hysterelax.driver import (
    CompatibilityError,
    HysteresisField,
    RunSetup,
    backward_step,
    check_compatibility,
    compute_tau0,
    run,
    supersolution_bound,
)
from hysterelax.elliptic import Grid, assemble
from hysterelax.play import play_update
from hysterelax.preisach import DensityModel

PI = DensityModel(kind="constant_in_v", alpha=1.0, beta=0.0, support_r=2.0, v_max=8.0)


def unit_line(n=33, b=1.0):
    return Grid.line(0.0, 1.0, n, lambda x: b)


def forced_setup(grid, n_steps=40, shift=0.0, density=PI, T=3.0):
    x = grid.coords[0]
    n = grid.n_nodes
    return RunSetup(
        grid=grid,
        density=density,
        u0=np.zeros(n),
        memory=HysteresisField.virgin(n),
        h_func=lambda t: np.sin(2 * np.pi * x) * np.sin(t) + shift,
        ustar_func=lambda t: np.zeros(n),
        T_final=T,
        n_steps=n_steps,
        L=1.0,
        q_list=(1.0, 2.0),
    )


# -- tau0 --------------------------------------------------------------------


def test_tau0_formula():
    assert compute_tau0(PI, 1.0, 1.0) == 0.5
    assert compute_tau0(PI, 2.0, 1.0) == 0.125  # doubling L quarters
    gd = DensityModel(kind="gaussian_decay", alpha=0.7, beta=1.0, support_r=2.0)
    Ub, L = 0.4, 1.3
    assert compute_tau0(gd, L, Ub) == pytest.approx(
        0.7 * np.exp(-9.0 * Ub**2) / (2.0 * L**2), rel=1e-14
    )


# -- compatibility -------------------------------------------------------------


def test_compat_zero_forcing_always_ok():
    g = unit_line()
    rep = check_compatibility(g, np.zeros(33), HysteresisField.virgin(33), np.zeros(33), 1.0)
    assert rep.ok and not rep.c2_violations
    assert np.all(rep.T == 0.0)


def test_compat_turning_memory_ok_and_L_min():
    g = unit_line()
    h0 = np.ones(33)
    mem = HysteresisField.turning(np.zeros(33), 0.8, 1.0, 2.0)
    rep = check_compatibility(g, np.zeros(33), mem, h0, L=2.0)
    assert rep.ok
    assert rep.L_min_feasible == pytest.approx(1.0 / 0.8, rel=1e-12)


def test_compat_virgin_with_forcing_flags_violation():
    g = unit_line()
    h0 = np.ones(33)
    rep = check_compatibility(g, np.zeros(33), HysteresisField.virgin(33), h0, L=1.0)
    assert not rep.ok
    assert len(rep.c2_violations) == 33


def test_compat_memory_not_matching_u0():
    g = unit_line()
    mem = HysteresisField.saturated(np.full(33, 0.3))
    rep = check_compatibility(g, np.zeros(33), mem, np.zeros(33), 1.0)
    assert not rep.ok and "start at u0" in " ".join(rep.messages)


def test_compat_c2a_residual():
    g = unit_line()
    u0 = g.coords[0] * 0.1  # violates -grad u0 . n = b u0 at both ends
    mem = HysteresisField.saturated(u0)
    rep = check_compatibility(g, u0, mem, -g.robin_laplacian(u0, np.zeros(33)), 1.0)
    assert rep.c2a_residual > 1e-6


# -- backward step ---------------------------------------------------------------


def test_backward_identity_without_forcing():
    g = unit_line()
    mem = HysteresisField.virgin(33)
    res = backward_step(g, np.zeros(33), mem, np.zeros(33), PI, 0.01, 1.0)
    assert np.all(res.u_minus1 == 0.0)
    assert all(c.corners == m.corners for c, m in zip(res.memory_minus1.curves, mem.curves))


def test_backward_matches_strip_area_oracle():
    # rho = 1: B(a) = a (2 r0 - a), so a = r0 - sqrt(r0^2 - tau T)
    g = unit_line()
    r0 = 1.0
    mem = HysteresisField.turning(np.zeros(33), r0, 1.0, 2.0)
    h0 = np.ones(33)
    rep = check_compatibility(g, np.zeros(33), mem, h0, L=2.0)
    for tau in (0.02, 0.01, 0.005):
        res = backward_step(g, np.zeros(33), mem, h0, PI, tau, L=2.0)
        a_exact = r0 - np.sqrt(r0**2 - tau * rep.T)
        assert np.max(np.abs(res.a - a_exact)) < 1e-8
        assert res.rate_bound_ok
        # round trip restores the memory corner-exactly
        for cm1, lam, u in zip(res.memory_minus1.curves, mem.curves, np.zeros(33)):
            restored, _ = play_update(cm1, float(u))
            assert restored.corners == lam.corners


def test_backward_increment_monotone_in_a():
    from hysterelax.play import backward_deform
    from hysterelax.preisach import output

    lam = HysteresisField.turning(np.zeros(1), 1.0, 1.0, 2.0).curves[0]
    g_now = output(PI, lam)
    avals = np.linspace(0.01, 0.49, 25)
    b = np.array([g_now - output(PI, backward_deform(lam, 1.0, a, 1.0)) for a in avals])
    slopes = np.diff(b) / np.diff(avals)
    # B_a >= 2 rho (r0 - a) > 1 on this range
    assert np.all(slopes >= 2.0 * (1.0 - avals[1:]) - 1e-8)


def test_backward_requires_admissible_tau():
    g = unit_line()
    mem = HysteresisField.turning(np.zeros(33), 1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        backward_step(g, np.zeros(33), mem, np.ones(33), PI, 0.6, 1.0, tau0=0.5)


# -- supersolution ---------------------------------------------------------------


def test_supersolution_zero_data():
    op = assemble(unit_line())
    Ub, vstar = supersolution_bound(op, 0.0, 0.0, support=1.0, eps=0.05)
    assert Ub == pytest.approx(1.05, abs=1e-12)
    assert np.all(vstar > 1.0)


def test_supersolution_closed_form_and_monotonicity():
    op = assemble(unit_line(129))
    Ub1, _ = supersolution_bound(op, 1.0, 0.0, support=1.0)
    # v = 1.05 * (-x^2/2 + x/2 + 1/2): max 0.65625, min 0.525
    expected = 0.65625 + (1.0 - 0.525) + 0.05
    assert Ub1 == pytest.approx(expected, abs=1e-10)
    Ub2, _ = supersolution_bound(op, 2.0, 0.0, support=1.0)
    assert Ub2 >= Ub1


# -- runs --------------------------------------------------------------------------


def test_run_rest_state():
    g = unit_line()
    setup = forced_setup(g, n_steps=8, T=0.8)
    setup.h_func = lambda t: np.zeros(33)
    res = run(setup)
    assert np.all(res.u_hist == 0.0)
    mon = res.monitors.summary()
    assert mon["es0"] == 0.0 and mon["utq"]["1"] == 0.0


def test_run_maximum_principle_and_identity():
    g = unit_line(65)
    res = run(forced_setup(g, n_steps=60))
    assert res.monitors.sup_u_overall <= res.Ubar + 1e-12
    assert res.monitors.summary()["max_step_identity_residual"] < 1e-10
    assert np.min(res.monitors.dissipation) >= -1e-12


def test_run_comparison_of_ordered_data():
    # identical turning memory keeps both runs compatible: the lower run has
    # T = 0 at t = 0, the shifted one T = 0.1 with matching slope
    g = unit_line(49)
    setups = []
    for shift in (0.0, 0.1):
        s = forced_setup(g, n_steps=40, shift=shift)
        s.memory = HysteresisField.turning(np.zeros(49), 0.8, 1.0, 2.0)
        setups.append(s)
    res1, res2 = run(setups[0]), run(setups[1])
    gap = res1.u_hist - res2.u_hist
    assert np.max(gap) <= 1e-8


def test_monitor_utq_matches_direct_accumulation():
    g = unit_line(49)
    res = run(forced_setup(g, n_steps=30))
    tau = res.setup.tau
    direct = 0.0
    for i in range(30):
        direct += g.integrate(np.abs(res.u_hist[i + 1] - res.u_hist[i]))
    if res.backward is not None:
        direct += g.integrate(np.abs(res.u_hist[0] - res.backward.u_minus1))
    assert res.monitors.utq[1.0] == pytest.approx(direct, rel=1e-12)


def test_monitor_tau_robustness():
    g = unit_line(49)
    vals = {}
    for k, n_steps in enumerate((40, 80, 160)):
        res = run(forced_setup(g, n_steps=n_steps))
        vals[k] = res.monitors.summary()
    for key in ("es0", "es1_dissipation", "es1_grad_max", "es2a"):
        series = [vals[k][key] for k in range(3)]
        assert max(series) < 3.0 * max(min(series), 1e-300)
    for q in ("1", "2"):
        series = [vals[k]["utq"][q] for k in range(3)]
        assert max(series) < 3.0 * max(min(series), 1e-300)


def test_run_degenerate_density_matches_elliptic_chain():
    # alpha = 0 removes the storage term; with the backward step disabled the
    # march reduces to a chain of linear Robin solves
    from hysterelax.elliptic import solve_linear_robin

    g = unit_line()
    n = g.n_nodes
    d0 = DensityModel(kind="constant_in_v", alpha=0.0, beta=0.0, support_r=1.0, v_max=2.0)
    x = g.coords[0]
    setup = RunSetup(
        grid=g,
        density=d0,
        u0=np.zeros(n),
        memory=HysteresisField.virgin(n),
        h_func=lambda t: np.sin(2 * np.pi * x) * np.sin(t),
        ustar_func=lambda t: np.zeros(n),
        T_final=1.0,
        n_steps=10,
        do_backward=False,
    )
    res = run(setup)
    op = assemble(g)
    for i in range(1, 11):
        v = solve_linear_robin(op, setup.h_func(res.times[i]))
        assert np.max(np.abs(res.u_hist[i] - v)) < 1e-9


def test_run_rejects_incompatible_memory():
    g = unit_line()
    setup = forced_setup(g, n_steps=10)
    setup.h_func = lambda t: np.ones(33)  # T != 0 at t=0 against virgin memory
    with pytest.raises(CompatibilityError):
        run(setup)


def test_run_with_backward_step_active():
    g = unit_line()
    x = g.coords[0]
    n = g.n_nodes
    setup = RunSetup(
        grid=g,
        density=PI,
        u0=np.zeros(n),
        memory=HysteresisField.turning(np.zeros(n), 1.0, 1.0, 2.0),
        h_func=lambda t: np.ones(n),
        ustar_func=lambda t: np.zeros(n),
        T_final=0.2,
        n_steps=20,
        L=2.0,
        q_list=(1.0,),
    )
    res = run(setup)
    assert res.backward is not None
    assert np.all(res.backward.a > 0.0)
    assert res.backward.rate_bound_ok
    # increments in the monitor include the backward term
    assert res.monitors.utq[1.0] > 0.0
