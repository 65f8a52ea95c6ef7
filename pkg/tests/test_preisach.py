"""Preisach output, energy, branches and the step superposition function."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from hysterelax.play import MemoryCurve, curve_saturated, memory_depth, play_update
from hysterelax.preisach import (
    DensityModel,
    QuadratureSpec,
    apply_sequence,
    branch,
    energy,
    monotonicity_constant,
    nemytskii,
    nemytskii_derivative,
    output,
    psi,
)

PI_UNIT = DensityModel(kind="constant_in_v", alpha=1.0, beta=0.0, support_r=1.0, v_max=2.0)
GAUSS = DensityModel(kind="gaussian_decay", alpha=1.0, beta=1.0, support_r=2.0)
TABLE = DensityModel(
    kind="tabulated",
    alpha=(np.array([0.0, 0.75, 1.5]), np.array([1.0, 1.4, 0.6])),
    beta=0.3,
    support_r=1.5,
    v_max=3.0,
)
DENSITIES = [PI_UNIT, GAUSS, TABLE]


def random_state(rng, k=6):
    c = MemoryCurve()
    for u in rng.uniform(-1.5, 1.5, size=rng.integers(1, k)):
        c, _ = play_update(c, float(u))
    return c


# -- psi -----------------------------------------------------------------------


def test_psi_zero_and_linear():
    assert psi(PI_UNIT, 0.5, 0.0) == 0.0
    assert psi(PI_UNIT, 0.5, 1.5) == 1.5  # rho = 1 on |v| < 2
    assert psi(PI_UNIT, 0.5, 3.0) == 2.0  # clipped at v_max


def test_psi_gaussian_matches_quadrature():
    oracle = quad(lambda v: math.exp(-v * v), 0.0, 3.0, epsabs=1e-14)[0]
    assert psi(GAUSS, 0.5, 3.0) == pytest.approx(oracle, abs=1e-13)
    assert oracle == pytest.approx(0.8862, abs=1e-4)


# -- output ---------------------------------------------------------------------


def saturating_output_oracle(u):
    """Closed form int_0^u (u - r) dr for the unit PI density."""
    return 0.5 * u * u


def test_output_closed_forms():
    g1, c1 = apply_sequence(PI_UNIT, MemoryCurve(), [0.5])
    assert g1[-1] == pytest.approx(saturating_output_oracle(0.5), abs=1e-15)
    g2, c2 = apply_sequence(PI_UNIT, MemoryCurve(), [1.0])
    assert g2[-1] == pytest.approx(0.5, abs=1e-15)
    # remanence: curve min{r, (1-r)+} integrates to 1/8 + 1/8 = 1/4
    g3, _ = apply_sequence(PI_UNIT, MemoryCurve(), [1.0, 0.0])
    assert g3[-1] == pytest.approx(0.25, abs=1e-15)


def test_output_gbar_offset_and_virgin():
    d = DensityModel(kind="constant_in_v", alpha=1.0, beta=0.0, support_r=1.0, v_max=2.0, gbar=0.7)
    assert output(d, MemoryCurve()) == 0.7


def test_output_bound():
    rng = np.random.default_rng(21)
    for d in DENSITIES:
        for _ in range(30):
            c = random_state(rng)
            umax = max(abs(v) for _, v in c.corners) + c.support_radius
            bound = d.rho1 * (c.support_radius + umax) ** 2 / 2.0 + 1e-12
            assert abs(output(d, c) - d.gbar) <= bound


def test_fast_and_generic_quadrature_agree():
    rng = np.random.default_rng(30)
    gen = QuadratureSpec(order=8)
    for _ in range(100):
        c = random_state(rng)
        assert output(PI_UNIT, c) == pytest.approx(output(PI_UNIT, c, gen), abs=1e-14)
        assert energy(PI_UNIT, c) == pytest.approx(energy(PI_UNIT, c, gen), abs=1e-14)


def test_quadrature_extra_nodes_are_split_points():
    c = random_state(np.random.default_rng(33))
    plain = QuadratureSpec(order=8)
    with_nodes = QuadratureSpec(order=8, r_nodes=(0.123, 0.456, 0.789))
    assert output(GAUSS, c, with_nodes) == pytest.approx(output(GAUSS, c, plain), abs=1e-10)
    cuts = with_nodes.pieces(GAUSS, c)
    for r in (0.123, 0.456, 0.789):
        if r < cuts[-1]:
            assert r in cuts


def test_density_bounds_spot_check():
    assert PI_UNIT.validate_bounds(0.8)
    assert GAUSS.validate_bounds(1.5)
    zero = DensityModel(kind="constant_in_v", alpha=0.0, beta=0.0, support_r=1.0, v_max=2.0)
    assert not zero.validate_bounds(0.5)


# -- energy ----------------------------------------------------------------------


def test_energy_closed_forms():
    assert energy(PI_UNIT, MemoryCurve()) == 0.0
    _, c = apply_sequence(PI_UNIT, MemoryCurve(), [1.0])
    assert energy(PI_UNIT, c) == pytest.approx(1.0 / 6.0, abs=1e-15)


def test_initial_energy_bound():
    rng = np.random.default_rng(2)
    for d in DENSITIES:
        for _ in range(40):
            c = random_state(rng)
            e = energy(d, c)
            assert 0.0 <= e <= d.rho1 * c.support_radius**2 / 2.0 + 1e-12


def test_energy_inequality_per_step():
    rng = np.random.default_rng(17)
    for d in DENSITIES:
        for _ in range(40):
            c = random_state(rng, 4)
            g_prev, e_prev = output(d, c), energy(d, c)
            for u in rng.uniform(-1.5, 1.5, size=6):
                c, _ = play_update(c, float(u))
                g_new, e_new = output(d, c), energy(d, c)
                assert (g_new - g_prev) * u >= (e_new - e_prev) - 1e-10
                g_prev, e_prev = g_new, e_new


# -- sequences --------------------------------------------------------------------


def test_apply_sequence_constant_input():
    g, c = apply_sequence(PI_UNIT, curve_saturated(0.5), [0.5, 0.5, 0.5])
    assert np.all(g == g[0])
    assert c.corners == curve_saturated(0.5).corners


def test_apply_sequence_empty_errors():
    with pytest.raises(ValueError):
        apply_sequence(PI_UNIT, MemoryCurve(), [])


def test_closed_minor_loop_returns_exactly():
    for d in DENSITIES:
        g, c = apply_sequence(d, MemoryCurve(), [1.2, 0.4, 0.9, 0.4, 0.9])
        c_ref = apply_sequence(d, MemoryCurve(), [1.2, 0.4, 0.9])[1]
        assert c.corners == c_ref.corners
        assert g[-1] == pytest.approx(g[2], abs=1e-13)


# -- nemytskii ---------------------------------------------------------------------


def test_nemytskii_no_move():
    c = curve_saturated(0.8)
    assert nemytskii(PI_UNIT, c, 0.8) == output(PI_UNIT, c)
    assert nemytskii(PI_UNIT, MemoryCurve(), 1.0) == pytest.approx(0.5, abs=1e-15)


def test_nemytskii_monotone_and_sandwich():
    rng = np.random.default_rng(4)
    for d in DENSITIES:
        for _ in range(60):
            c = random_state(rng)
            umax = 1.5 + c.support_radius
            C = monotonicity_constant(d, c.support_radius, umax)
            u1, u2 = sorted(rng.uniform(-1.5, 1.5, size=2))
            g1 = nemytskii(d, c, float(u1))
            g2 = nemytskii(d, c, float(u2))
            dg, du = g2 - g1, u2 - u1
            assert dg >= -1e-13
            assert du * dg <= C * du * du + 1e-12
            assert dg * dg <= C * du * dg + 1e-12


def test_nemytskii_derivative_turning_point_and_value():
    _, c = apply_sequence(PI_UNIT, MemoryCurve(), [1.0])
    assert nemytskii_derivative(PI_UNIT, c, 1.0) == 0.0
    assert nemytskii_derivative(PI_UNIT, MemoryCurve(), 0.5) == pytest.approx(0.5, abs=1e-14)


def test_nemytskii_derivative_matches_central_differences():
    # valid wherever the +-h stencil does not straddle a corner of the state
    # (there the branch derivative genuinely jumps)
    rng = np.random.default_rng(12)
    h = 1e-5
    for d in DENSITIES:
        checked = 0
        while checked < 34:
            c = random_state(rng)
            u = float(rng.uniform(-1.4, 1.4))
            if abs(u - c.value) < 10 * h:  # keep clear of the turning kink
                continue
            direction = "ascending" if u > c.value else "descending"
            depth_lo = memory_depth(c, u - h if u > c.value else u + h, direction)
            depth_hi = memory_depth(c, u + h if u > c.value else u - h, direction)
            corner_rs = [r for r, _ in c.corners]
            if any(depth_lo < r < depth_hi for r in corner_rs):
                continue
            fd = (nemytskii(d, c, u + h) - nemytskii(d, c, u - h)) / (2.0 * h)
            an = nemytskii_derivative(d, c, u)
            assert an == pytest.approx(fd, abs=1e-6)
            checked += 1


# -- branches ---------------------------------------------------------------------


def test_branch_zero_at_current_value():
    c = curve_saturated(0.6)
    assert branch(PI_UNIT, c, 0.6) == 0.0


def test_branch_wrong_side():
    c = curve_saturated(0.6)
    with pytest.raises(ValueError):
        branch(PI_UNIT, c, 0.2, direction="ascending")
    with pytest.raises(ValueError):
        branch(PI_UNIT, c, 0.9, direction="descending")


def test_branch_pi_closed_form():
    for w in (0.0, 0.3, 0.7, 1.0):
        assert branch(PI_UNIT, MemoryCurve(), w, direction="ascending") == pytest.approx(
            w * w / 2.0, abs=1e-14
        )


def test_branch_additivity_on_monotone_triples():
    rng = np.random.default_rng(8)
    for d in DENSITIES:
        for _ in range(25):
            c = random_state(rng, 4)
            w0 = c.value
            w1, w2 = sorted(rng.uniform(w0, w0 + 1.0, size=2))
            b_direct = branch(d, c, float(w2))
            c_mid, _ = play_update(c, float(w1))
            b_two = branch(d, c, float(w1)) + branch(d, c_mid, float(w2))
            assert b_direct == pytest.approx(b_two, abs=1e-12)


def test_ascending_branch_derivative_jumps_up_at_wiped_corner():
    # local maximum at 0.6 leaves a corner; crossing it erases memory and the
    # branch derivative may only jump upward
    _, c = apply_sequence(PI_UNIT, MemoryCurve(), [0.6, 0.2])
    eps = 1e-6
    below = nemytskii_derivative(PI_UNIT, c, 0.6 - eps)
    above = nemytskii_derivative(PI_UNIT, c, 0.6 + eps)
    assert above >= below - 1e-12
    assert above - below > 0.1  # genuine jump for this state


def test_order_preservation_between_histories():
    rng = np.random.default_rng(14)
    rgrid = np.linspace(0.0, 3.0, 97)
    for d in DENSITIES:
        for _ in range(20):
            lo = MemoryCurve()
            hi, _ = play_update(MemoryCurve(), float(rng.uniform(0.0, 0.5)))
            g_lo = output(d, lo)
            g_hi = output(d, hi)
            assert g_lo <= g_hi + 1e-13
            for _step in range(8):
                u_lo = float(rng.uniform(-1.5, 1.5))
                u_hi = u_lo + float(rng.uniform(0.0, 0.5))
                lo, _ = play_update(lo, u_lo)
                hi, _ = play_update(hi, u_hi)
                assert np.all(lo.sample(rgrid) <= hi.sample(rgrid) + 1e-13)
                assert output(d, lo) <= output(d, hi) + 1e-12
