"""Robin operator assembly, linear solves, and the semilinear step."""

import numpy as np
import pytest

from hysterelax.elliptic import (
    Grid,
    NewtonError,
    SingularSystemError,
    assemble,
    solve_linear_robin,
    solve_semilinear_step,
)
from hysterelax.driver import HysteresisField
from hysterelax.play import MemoryCurve
from hysterelax.preisach import DensityModel

PI = DensityModel(kind="constant_in_v", alpha=1.0, beta=0.0, support_r=1.0, v_max=4.0)


def unit_line(n, b=1.0):
    return Grid.line(0.0, 1.0, n, lambda x: b)


def bvp_exact(x):
    """-v'' = 1 with v'(0) = v(0), -v'(1) = v(1)."""
    return -0.5 * x**2 + 0.5 * x + 0.5


# -- assembly -----------------------------------------------------------------


def test_constant_field_boundary_sum():
    op = assemble(unit_line(33))
    one = np.ones(33)
    assert one @ (op.A @ one) == pytest.approx(2.0, abs=1e-14)


def test_symmetry():
    op = assemble(unit_line(21))
    assert abs(op.A - op.A.T).max() == 0.0
    g2 = Grid.rectangle(((0.0, 1.0), (0.0, 2.0)), (9, 13), lambda x, y: np.ones_like(x))
    op2 = assemble(g2)
    assert abs(op2.A - op2.A.T).max() == 0.0
    one = np.ones(g2.n_nodes)
    assert one @ (op2.A @ one) == pytest.approx(6.0, rel=1e-12)  # perimeter


def test_linear_function_interior_residual():
    g = Grid.line(0.0, 1.0, 41, lambda x: 0.0)
    op = assemble(g)
    u = g.coords[0].copy()
    r = op.A @ u
    assert np.max(np.abs(r[1:-1])) < 1e-13


def test_interior_laplacian_exact_on_quadratics():
    g = unit_line(33)
    op = assemble(g)
    u = g.coords[0] ** 2
    lap = (op.K @ u) / g.w_dom
    assert np.max(np.abs(lap[1:-1] - (-2.0))) < 1e-11


def test_discrete_integration_by_parts():
    rng = np.random.default_rng(1)
    for grid in (unit_line(30), Grid.rectangle(((0, 1), (0, 1)), (7, 8), lambda x, y: 1.0 + x)):
        op = assemble(grid)
        for _ in range(5):
            u = rng.standard_normal(grid.n_nodes)
            v = rng.standard_normal(grid.n_nodes)
            lhs = v @ (op.A @ u)
            rhs = u @ (op.A @ v)
            assert lhs == pytest.approx(rhs, abs=1e-12 * max(1.0, abs(lhs)))


def test_robin_ghost_laplacian_on_bvp_solution():
    g = unit_line(65)
    v = bvp_exact(g.coords[0])
    lap = g.robin_laplacian(v, np.zeros(65))
    assert np.max(np.abs(lap - (-1.0))) < 1e-10


# -- linear solve ----------------------------------------------------------------


def test_zero_data_zero_solution():
    op = assemble(unit_line(17))
    v = solve_linear_robin(op, np.zeros(17))
    assert np.max(np.abs(v)) == 0.0


def test_bvp_closed_form_256_nodes():
    g = unit_line(256)
    op = assemble(g)
    v = solve_linear_robin(op, np.ones(256))
    exact = bvp_exact(g.coords[0])
    assert np.max(np.abs(v - exact)) < 1e-4
    assert v[0] == pytest.approx(0.5, abs=1e-4)
    # a posteriori maximum bound of the linear problem
    assert np.max(np.abs(v)) <= 0.625 + 1e-10


def test_grid_self_convergence_second_order():
    # the constant-source BVP is reproduced nodally exactly, so the order is
    # certified on a trigonometric source with a known closed form
    errs = []
    for n in (33, 65, 129):
        g = unit_line(n)
        op = assemble(g)
        x = g.coords[0]
        exact = np.cos(np.pi * x)
        h = np.pi**2 * np.cos(np.pi * x)
        ustar = np.zeros(n)
        ustar[0] = exact[0]  # grad.n = 0 at both ends, so u* = v there
        ustar[-1] = exact[-1]
        v = solve_linear_robin(op, h, ustar)
        errs.append(np.max(np.abs(v - exact)))
    order1 = np.log2(errs[0] / errs[1])
    order2 = np.log2(errs[1] / errs[2])
    assert order1 >= 1.9 and order2 >= 1.9


def test_singular_without_boundary_permeability():
    g = Grid.line(0.0, 1.0, 17, lambda x: 0.0)
    op = assemble(g)
    with pytest.raises(SingularSystemError):
        solve_linear_robin(op, np.ones(17))


# -- semilinear step ---------------------------------------------------------------


def test_degenerate_density_equals_linear_solve():
    n = 65
    g = unit_line(n)
    op = assemble(g)
    d0 = DensityModel(kind="constant_in_v", alpha=0.0, beta=0.0, support_r=1.0, v_max=2.0)
    curves = [MemoryCurve() for _ in range(n)]
    u, _ = solve_semilinear_step(op, curves, d0, 0.1, np.ones(n), np.zeros(n), np.zeros(n))
    v = solve_linear_robin(op, np.ones(n))
    assert np.max(np.abs(u - v)) < 1e-10


def test_solution_independent_of_guess():
    n = 65
    g = unit_line(n)
    op = assemble(g)
    curves = [MemoryCurve() for _ in range(n)]
    h = np.ones(n)
    u1, _ = solve_semilinear_step(op, curves, PI, 0.05, h, np.zeros(n), np.zeros(n))
    u2, _ = solve_semilinear_step(op, curves, PI, 0.05, h, np.zeros(n), np.full(n, 9.0))
    assert np.max(np.abs(u1 - u2)) < 1e-10


def test_large_tau_approaches_linear_steady_state():
    n = 33
    g = unit_line(n)
    op = assemble(g)
    h = np.ones(n)
    ustar = np.full(n, 0.25)
    steady = solve_linear_robin(op, h, ustar)
    curves = [MemoryCurve() for _ in range(n)]
    u = np.zeros(n)
    for _ in range(60):
        u, _ = solve_semilinear_step(op, curves, PI, 50.0, h, ustar, u)
        curves = HysteresisField(curves).updated(u).curves
    assert np.max(np.abs(u - steady)) < 1e-6


def test_jacobian_positive_definite():
    n = 33
    g = unit_line(n)
    op = assemble(g)
    rng = np.random.default_rng(3)
    curves = [MemoryCurve() for _ in range(n)]
    u = rng.uniform(-0.5, 0.5, size=n)
    from hysterelax.preisach import nemytskii_derivative

    gp = np.array([nemytskii_derivative(PI, c, ui) for c, ui in zip(curves, u)])
    J = op.A.toarray() + np.diag(g.w_dom * gp / 0.05)
    eigs = np.linalg.eigvalsh(J)
    assert eigs.min() > 0.0


def test_field_dump_format(tmp_path):
    from hysterelax.elliptic import Field

    g = unit_line(5)
    f = Field(np.arange(5, dtype=float), g)
    path = tmp_path / "field.csv"
    f.dump_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,value"
    assert lines[1] == "0,0"
    assert lines[-1] == "1,4"


def test_newton_error_reported():
    n = 17
    g = unit_line(n)
    op = assemble(g)
    curves = [MemoryCurve() for _ in range(n)]
    with pytest.raises(NewtonError):
        solve_semilinear_step(
            op, curves, PI, 1e-9, np.ones(n), np.zeros(n), np.zeros(n), max_iter=1
        )
