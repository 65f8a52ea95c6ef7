"""Full time-stepping pipeline for the hysteresis-diffusion scheme.

Wires together: initial-memory compatibility audit, the uniform
supersolution bound, the admissible time-step threshold, the fictitious
backward step that makes the zeroth increment well defined, the implicit
time loop, and runtime monitors for every a-priori estimate the scheme is
supposed to satisfy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .elliptic import Field, Grid, assemble, solve_linear_robin, solve_semilinear_step
from .play import MemoryCurve, backward_deform, curve_saturated, curve_turning, play_update
from .preisach import output

__all__ = [
    "HysteresisField",
    "SchemeState",
    "MonitorReport",
    "CompatReport",
    "BackwardResult",
    "RunSetup",
    "RunResult",
    "CompatibilityError",
    "RunAbort",
    "compute_tau0",
    "check_compatibility",
    "backward_step",
    "supersolution_bound",
    "run",
    "compute_monitors",
]


class CompatibilityError(RuntimeError):
    """Initial memory incompatible with the data at t = 0."""


class RunAbort(RuntimeError):
    """A monitor turned non-finite during the loop."""


@dataclass
class HysteresisField:
    """One memory curve per grid node."""

    curves: list

    def values(self):
        return np.array([c.value for c in self.curves])

    def outputs(self, density, quad=None):
        return np.array([output(density, c, quad) for c in self.curves])

    def updated(self, u_new):
        curves = []
        for c, u in zip(self.curves, u_new):
            cn, _ = play_update(c, float(u))
            curves.append(cn)
        return HysteresisField(curves)

    @staticmethod
    def virgin(n):
        return HysteresisField([MemoryCurve() for _ in range(n)])

    @staticmethod
    def saturated(u0):
        return HysteresisField([curve_saturated(float(u)) for u in u0])

    @staticmethod
    def turning(u0, r0, sign, support):
        r0 = np.broadcast_to(np.asarray(r0, dtype=float), np.shape(u0))
        sign = np.broadcast_to(np.asarray(sign, dtype=float), np.shape(u0))
        curves = []
        for u, r, s in zip(u0, r0, sign):
            if r == 0.0:
                curves.append(curve_saturated(float(u)))
            else:
                curves.append(curve_turning(float(u), float(r), float(s), support))
        return HysteresisField(curves)


@dataclass
class SchemeState:
    """Snapshot of the march: step index, fields and memory."""

    index: int
    u: np.ndarray
    g: np.ndarray
    memory: HysteresisField


def compute_tau0(density, L, Ubar):
    """Admissible time-step threshold ``rho_0(3 Ubar) / (2 L^2)``."""
    if L <= 0.0:
        raise ValueError("L must be positive")
    return density.rho0(3.0 * abs(Ubar)) / (2.0 * L**2)


def _straight_depth(curve, sign, tol=1e-9):
    """Length of the maximal initial segment with slope exactly ``-sign``."""
    depth = 0.0
    cs = curve.corners
    for k in range(1, len(cs)):
        r0, v0 = cs[k - 1]
        r1, v1 = cs[k]
        slope = (v1 - v0) / (r1 - r0)
        if abs(slope + sign) <= tol:
            depth = r1
        else:
            break
    return depth


@dataclass
class CompatReport:
    ok: bool
    T: np.ndarray
    r0: np.ndarray
    r_min: np.ndarray
    c0_residual: float
    c2_violations: list
    c2a_residual: float
    L_min_feasible: float
    messages: list = field(default_factory=list)


def check_compatibility(grid, u0, memory, h0, L, ustar0=None, c2a_tol=1e-6):
    """Audit the initial data against the memory compatibility conditions.

    Per node: the memory curve must start at ``u0``, and wherever
    ``T = Lap u0 + h(., 0)`` is nonzero, the curve must run with slope
    ``-sign(T)`` down to at least depth ``sqrt(|T|)/L``.  On the boundary
    the Robin condition at ``t = 0`` is checked as a residual.
    """
    u0 = u0.values if isinstance(u0, Field) else np.asarray(u0, dtype=float)
    h0 = h0.values if isinstance(h0, Field) else np.asarray(h0, dtype=float)
    if ustar0 is None:
        ustar0 = np.zeros_like(u0)
    T = grid.robin_laplacian(u0, ustar0) + h0
    n = grid.n_nodes
    r0 = np.zeros(n)
    r_min = np.sqrt(np.abs(T)) / L
    c0 = float(np.max(np.abs(memory.values() - u0)))
    violations = []
    messages = []
    L_min = 0.0
    for i in range(n):
        if T[i] == 0.0:
            continue
        sgn = 1.0 if T[i] > 0.0 else -1.0
        r0[i] = _straight_depth(memory.curves[i], sgn)
        if r0[i] < r_min[i] * (1.0 - 1e-12):
            violations.append(i)
        if r0[i] > 0.0:
            L_min = max(L_min, math.sqrt(abs(T[i])) / r0[i])
        else:
            L_min = math.inf
    flux = grid.boundary_normal_gradient(u0)
    bmask = grid.boundary_mask
    c2a = float(
        np.max(np.abs(-flux[bmask] - grid.b[bmask] * (u0[bmask] - ustar0[bmask])))
    ) if bmask.any() else 0.0
    ok = not violations and c0 <= 1e-10 * max(1.0, np.abs(u0).max()) and c2a <= c2a_tol
    if violations:
        messages.append(f"{len(violations)} nodes fail the memory-depth condition")
    if c0 > 1e-10 * max(1.0, np.abs(u0).max()):
        messages.append(f"memory curve does not start at u0 (max gap {c0:.3e})")
    if c2a > c2a_tol:
        messages.append(f"Robin compatibility residual {c2a:.3e} exceeds {c2a_tol:.1e}")
    return CompatReport(
        ok=ok,
        T=T,
        r0=r0,
        r_min=r_min,
        c0_residual=c0,
        c2_violations=violations,
        c2a_residual=c2a,
        L_min_feasible=L_min,
        messages=messages,
    )


@dataclass
class BackwardResult:
    u_minus1: np.ndarray
    memory_minus1: HysteresisField
    a: np.ndarray
    roundtrip_gap: float
    rate_bound: float
    rate_bound_ok: bool


def backward_step(
    grid,
    u0,
    memory,
    h0,
    density,
    tau,
    L,
    ustar0=None,
    tau0=None,
    Ubar=None,
    quad=None,
    xtol=1e-14,
):
    """Construct the fictitious previous state matching the data at t = 0.

    Where ``T = Lap u0 + h0`` is nonzero, finds the deformation amplitude
    ``a`` with ``B(x, a) = tau T(x)`` by bracketed root finding on the
    increasing map ``a -> B(x, a)`` (evaluated as an output difference of
    the deformed curve) and deforms the memory accordingly.  Where ``T = 0``
    nothing moves.
    """
    u0 = u0.values if isinstance(u0, Field) else np.asarray(u0, dtype=float)
    h0 = h0.values if isinstance(h0, Field) else np.asarray(h0, dtype=float)
    if tau0 is not None and not tau < tau0:
        raise ValueError(f"tau = {tau} must be below tau0 = {tau0}")
    if ustar0 is None:
        ustar0 = np.zeros_like(u0)
    T = grid.robin_laplacian(u0, ustar0) + h0
    n = grid.n_nodes
    a_field = np.zeros(n)
    curves = list(memory.curves)
    worst_gap = 0.0
    for i in range(n):
        if T[i] == 0.0:
            continue
        sgn = 1.0 if T[i] > 0.0 else -1.0
        lam = memory.curves[i]
        r0 = _straight_depth(lam, sgn)
        if r0 <= 0.0:
            raise CompatibilityError(f"node {i}: no straight-slope memory for T = {T[i]:.3e}")
        g_now = output(density, lam, quad)
        target = tau * abs(T[i])

        def increment(a, lam=lam, r0=r0, sgn=sgn, g_now=g_now):
            deformed = backward_deform(lam, r0, a, sgn)
            return abs(g_now - output(density, deformed, quad))

        hi = 0.5 * r0
        if increment(hi) < target:
            raise CompatibilityError(
                f"node {i}: backward bracket failed (B(r0/2) < tau |T|); "
                "check tau against tau0 and the quadrature"
            )
        a = brentq(lambda a: increment(a) - target, 0.0, hi, xtol=xtol)
        a_field[i] = a
        curves[i] = backward_deform(lam, r0, a, sgn)
        restored, _ = play_update(curves[i], u0[i])
        if restored.corners != lam.corners:
            rs = np.linspace(0.0, max(lam.support_radius, 1e-12), 65)
            worst_gap = max(worst_gap, float(np.max(np.abs(restored.sample(rs) - lam.sample(rs)))))
    u_minus1 = u0 - 2.0 * a_field * np.sign(T)
    # increment-rate bound |u0 - u_-1| / tau <= 2 L^2 Lambda / rho*
    support = max(c.support_radius for c in memory.curves)
    rho_ref = density.rho0(3.0 * (abs(Ubar) if Ubar is not None else np.abs(u0).max()))
    bound = 2.0 * L**2 * support / max(rho_ref, 1e-300)
    rate = float(np.max(np.abs(u0 - u_minus1))) / tau
    if worst_gap > 1e-9:
        raise CompatibilityError(f"backward round trip failed to restore memory ({worst_gap:.3e})")
    return BackwardResult(
        u_minus1=u_minus1,
        memory_minus1=HysteresisField(curves),
        a=a_field,
        roundtrip_gap=worst_gap,
        rate_bound=bound,
        rate_bound_ok=bool(rate <= bound * (1.0 + 1e-9)),
    )


def supersolution_bound(op, sup_h, sup_ustar, support, eps=0.05):
    """Uniform bound dominating every admissible discrete trajectory.

    Solves the linear Robin problem with the constant source
    ``(1 + eps) sup |h|`` and shifts it above both the boundary data and
    the memory support.  Returns ``(Ubar, v_star)``.
    """
    grid = op.grid
    v = solve_linear_robin(op, np.full(grid.n_nodes, (1.0 + eps) * abs(sup_h)))
    u_star_shift = max(abs(sup_ustar), support - float(v.min())) + eps * max(1.0, support)
    v_star = v + u_star_shift
    return float(v_star.max()), v_star


@dataclass
class MonitorReport:
    """Per-step estimate records plus their tau-weighted aggregates."""

    times: np.ndarray
    grad_energy: np.ndarray
    boundary_energy: np.ndarray
    dissipation: np.ndarray
    h22b: np.ndarray
    lyapunov: np.ndarray
    sup_u: np.ndarray
    step_identity_residual: np.ndarray
    es0: float
    es1_dissipation: float
    es1_grad_max: float
    es2a: float
    utq: dict
    sup_u_overall: float
    sup_bound: float

    def all_finite(self):
        arrays = [
            self.grad_energy,
            self.boundary_energy,
            self.dissipation,
            self.h22b,
            self.lyapunov,
            self.sup_u,
        ]
        return all(np.all(np.isfinite(a)) for a in arrays)

    def summary(self):
        return {
            "es0": self.es0,
            "es1_dissipation": self.es1_dissipation,
            "es1_grad_max": self.es1_grad_max,
            "es2a": self.es2a,
            "utq": {f"{q:.6g}": v for q, v in self.utq.items()},
            "sup_u": self.sup_u_overall,
            "sup_bound": self.sup_bound,
            "lyapunov_final": float(self.lyapunov[-1]) if len(self.lyapunov) else 0.0,
            "max_step_identity_residual": float(np.max(self.step_identity_residual))
            if len(self.step_identity_residual)
            else 0.0,
        }


def compute_monitors(
    grid,
    op,
    tau,
    u_hist,
    g_hist,
    h_hist,
    ustar_hist,
    q_list,
    u_minus1=None,
    sup_bound=math.inf,
):
    """Evaluate every a-priori estimate on a completed trajectory.

    ``u_hist`` has rows ``u_0 .. u_n``; the backward increment
    ``u_0 - u_{-1}`` joins the time-increment sums when present.
    """
    u_hist = np.asarray(u_hist)
    g_hist = np.asarray(g_hist)
    n = u_hist.shape[0] - 1
    w = grid.w_dom
    grad = np.empty(n + 1)
    bnd = np.empty(n + 1)
    h22 = np.empty(n + 1)
    lyap = np.empty(n + 1)
    supu = np.empty(n + 1)
    diss = np.zeros(n + 1)
    ident = np.zeros(n + 1)
    for i in range(n + 1):
        u = u_hist[i]
        grad[i] = op.gradient_energy(u)
        bnd[i] = op.boundary_energy(u)
        lap = grid.robin_laplacian(u, ustar_hist[i])
        h22[i] = grid.integrate(lap * lap) + bnd[i]
        lyap[i] = (
            0.5 * grad[i]
            - grid.integrate(h_hist[i] * u)
            + 0.5 * bnd[i]
            - float(np.dot(op.bmass, ustar_hist[i] * u))
        )
        supu[i] = float(np.abs(u).max())
        if i >= 1:
            du = u - u_hist[i - 1]
            dg = g_hist[i] - g_hist[i - 1]
            diss[i] = grid.integrate(dg * du) / tau
            ident[i] = abs(
                grid.integrate(dg * u) / tau
                + grad[i]
                + float(np.dot(op.bmass, (u - ustar_hist[i]) * u))
                - grid.integrate(h_hist[i] * u)
            )
    utq = {}
    for q in q_list:
        s = 0.0
        if u_minus1 is not None:
            s += grid.integrate(np.abs(u_hist[0] - u_minus1) ** q)
        for i in range(n):
            s += grid.integrate(np.abs(u_hist[i + 1] - u_hist[i]) ** q)
        utq[float(q)] = tau ** (1.0 - q) * s
    return MonitorReport(
        times=np.arange(n + 1) * tau,
        grad_energy=grad,
        boundary_energy=bnd,
        dissipation=diss,
        h22b=h22,
        lyapunov=lyap,
        sup_u=supu,
        step_identity_residual=ident,
        es0=tau * float(np.sum(grad[1:] + bnd[1:])),
        es1_dissipation=float(np.sum(diss[1:])),
        es1_grad_max=float(np.max(grad[1:] + bnd[1:])) if n else 0.0,
        es2a=tau * float(np.sum(h22[1:])),
        utq=utq,
        sup_u_overall=float(np.max(supu)),
        sup_bound=sup_bound,
    )


@dataclass
class RunSetup:
    """Everything the march needs, with data already discretized in space."""

    grid: Grid
    density: object
    u0: np.ndarray
    memory: HysteresisField
    h_func: object  # t -> ndarray over nodes
    ustar_func: object  # t -> ndarray over nodes
    T_final: float
    n_steps: int
    L: float = 1.0
    q_list: tuple = (1.0,)
    newton_tol: float = 1e-11
    newton_max_iter: int = 60
    quad: object = None
    do_backward: bool = True
    eps_margin: float = 0.05
    c2a_tol: float = 1e-6
    snapshot_stride: int = 1

    @property
    def tau(self):
        return self.T_final / self.n_steps


@dataclass
class RunResult:
    setup: RunSetup
    times: np.ndarray
    u_hist: np.ndarray
    g_hist: np.ndarray
    memory: HysteresisField
    monitors: MonitorReport
    compat: CompatReport
    backward: object
    Ubar: float
    tau0: float
    newton_iterations: list

    @property
    def final_state(self):
        """Final :class:`SchemeState`; its output field matches the memory."""
        return SchemeState(
            index=len(self.times) - 1,
            u=self.u_hist[-1],
            g=self.g_hist[-1],
            memory=self.memory,
        )


def run(setup):
    """March the implicit scheme from t = 0 to T.

    Raises :class:`CompatibilityError` when the initial audit fails and
    propagates solver errors; aborts on the first non-finite monitor.
    """
    grid = setup.grid
    d = setup.density
    op = assemble(grid)
    tau = setup.tau
    times = np.linspace(0.0, setup.T_final, setup.n_steps + 1)
    h_samples = [np.asarray(setup.h_func(t), dtype=float) for t in times]
    ustar_samples = [np.asarray(setup.ustar_func(t), dtype=float) for t in times]

    compat = check_compatibility(
        grid, setup.u0, setup.memory, h_samples[0], setup.L, ustar_samples[0], setup.c2a_tol
    )
    if not compat.ok:
        raise CompatibilityError("; ".join(compat.messages) or "incompatible initial data")

    support = max(c.support_radius for c in setup.memory.curves)
    sup_h = max(float(np.abs(h).max()) for h in h_samples)
    sup_us = max(float(np.abs(us).max()) for us in ustar_samples)
    Ubar, _v_star = supersolution_bound(op, sup_h, sup_us, support, setup.eps_margin)
    tau0 = compute_tau0(d, setup.L, Ubar)

    backward = None
    if setup.do_backward:
        if not tau < tau0:
            raise ValueError(f"tau = {tau:.3e} is not below tau0 = {tau0:.3e}")
        backward = backward_step(
            grid, setup.u0, setup.memory, h_samples[0], d, tau, setup.L,
            ustar_samples[0], tau0=tau0, Ubar=Ubar, quad=setup.quad,
        )

    n_nodes = grid.n_nodes
    u_hist = np.empty((setup.n_steps + 1, n_nodes))
    g_hist = np.empty((setup.n_steps + 1, n_nodes))
    u_hist[0] = setup.u0
    memory = setup.memory
    g_hist[0] = memory.outputs(d, setup.quad)
    newton_info = []
    u = np.array(setup.u0, dtype=float)
    for i in range(1, setup.n_steps + 1):
        u, info = solve_semilinear_step(
            op,
            memory.curves,
            d,
            tau,
            h_samples[i],
            ustar_samples[i],
            u,
            tol=setup.newton_tol,
            max_iter=setup.newton_max_iter,
            quad=setup.quad,
            g_prev=g_hist[i - 1],
        )
        memory = memory.updated(u)
        u_hist[i] = u
        g_hist[i] = memory.outputs(d, setup.quad)
        if not np.all(np.isfinite(u_hist[i])) or not np.all(np.isfinite(g_hist[i])):
            raise RunAbort(f"non-finite state at step {i}")
        newton_info.append(info)

    monitors = compute_monitors(
        grid,
        op,
        tau,
        u_hist,
        g_hist,
        h_samples,
        ustar_samples,
        setup.q_list,
        u_minus1=None if backward is None else backward.u_minus1,
        sup_bound=Ubar,
    )
    if not monitors.all_finite():
        raise RunAbort("non-finite monitor value")
    return RunResult(
        setup=setup,
        times=times,
        u_hist=u_hist,
        g_hist=g_hist,
        memory=memory,
        monitors=monitors,
        compat=compat,
        backward=backward,
        Ubar=Ubar,
        tau0=tau0,
        newton_iterations=newton_info,
    )
