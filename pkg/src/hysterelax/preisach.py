"""Preisach output, energy, branches and per-step superposition functions.

A density ``rho(r, v) = alpha(r) * exp(-beta v^2)`` (optionally clipped to
``|v| < v_max`` when ``beta = 0``) is integrated over the region between the
threshold axis and the memory curve.  All integrals reduce to 1-D quadrature
in ``r`` of the primitives ``psi`` and ``Psi``, which are known in closed
form for the built-in families; the ``r``-quadrature is corner-aware so that
the same positive nodes are exact for the constant-in-``v`` family and
near machine precision for the Gaussian one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erf

from .play import memory_depth, play_update

__all__ = [
    "DensityModel",
    "QuadratureSpec",
    "psi",
    "output",
    "energy",
    "apply_sequence",
    "nemytskii",
    "nemytskii_derivative",
    "branch",
    "monotonicity_constant",
]

_SQRT_PI = math.sqrt(math.pi)


@lru_cache(maxsize=8)
def _leggauss(order):
    return np.polynomial.legendre.leggauss(order)


@dataclass(frozen=True)
class DensityModel:
    """Separable Preisach density ``alpha(r) * exp(-beta v^2)``.

    Parameters
    ----------
    kind : {"constant_in_v", "gaussian_decay", "tabulated"}
        ``constant_in_v`` requires ``beta = 0`` and a finite ``v_max``
        truncation; ``gaussian_decay`` requires ``beta > 0``; ``tabulated``
        carries a piecewise-linear ``alpha(r)`` profile.
    alpha : float or (ndarray, ndarray)
        Constant amplitude, or ``(r_nodes, values)`` for ``tabulated``.
    beta : float
        Decay rate of the Gaussian factor, ``>= 0``.
    support_r : float
        Threshold radius beyond which the density is treated as zero in all
        quadrature.
    v_max : float
        Output-variable truncation; ``inf`` is allowed when ``beta > 0``.
    gbar : float
        Constant offset of the operator output.
    """

    kind: str = "constant_in_v"
    alpha: object = 1.0
    beta: float = 0.0
    support_r: float = 1.0
    v_max: float = math.inf
    gbar: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant_in_v", "gaussian_decay", "tabulated"):
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.kind == "constant_in_v" and self.beta != 0.0:
            raise ValueError("constant_in_v density must have beta = 0")
        if self.kind == "gaussian_decay" and self.beta <= 0.0:
            raise ValueError("gaussian_decay density must have beta > 0")
        if self.beta == 0.0 and not math.isfinite(self.v_max):
            raise ValueError("beta = 0 requires a finite v_max truncation")
        if self.support_r <= 0.0:
            raise ValueError("support_r must be positive")
        if self.kind == "tabulated":
            r_nodes, vals = self.alpha
            r_nodes = np.asarray(r_nodes, dtype=float)
            vals = np.asarray(vals, dtype=float)
            if r_nodes.ndim != 1 or r_nodes.shape != vals.shape:
                raise ValueError("tabulated alpha needs matching 1-d arrays")
            if np.any(np.diff(r_nodes) <= 0.0) or np.any(vals < 0.0):
                raise ValueError("tabulated alpha must be sorted with values >= 0")
            object.__setattr__(self, "alpha", (r_nodes, vals))
        elif float(self.alpha) < 0.0:
            raise ValueError("alpha must be nonnegative")

    # -- profile -----------------------------------------------------------

    def alpha_at(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "tabulated":
            r_nodes, vals = self.alpha
            a = np.interp(r, r_nodes, vals)
        else:
            a = np.full_like(r, float(self.alpha))
        return np.where(r < self.support_r, a, 0.0)

    def rho(self, r, v):
        """Pointwise density value."""
        r = np.asarray(r, dtype=float)
        v = np.asarray(v, dtype=float)
        out = self.alpha_at(r) * np.exp(-self.beta * v * v)
        return np.where(np.abs(v) < self.v_max, out, 0.0)

    @property
    def rho1(self):
        """Uniform upper bound of the density."""
        if self.kind == "tabulated":
            return float(np.max(self.alpha[1]))
        return float(self.alpha)

    def rho0(self, U):
        """Family lower-bound function ``U -> rho_0(U)`` (decreasing)."""
        if self.kind == "tabulated":
            a_min = float(np.min(self.alpha[1]))
        else:
            a_min = float(self.alpha)
        return a_min * math.exp(-self.beta * float(U) ** 2)

    def phi(self, v):
        """Decay function in ``rho_v = -phi(v) rho``; ``2 beta v`` here."""
        return 2.0 * self.beta * np.asarray(v, dtype=float)

    def v_truncation(self, u_expected=1.0):
        """Truncation radius used when sampling the density on a box."""
        if math.isfinite(self.v_max):
            return self.v_max
        return self.support_r + abs(u_expected) + 5.0 / math.sqrt(self.beta)

    def validate_bounds(self, U, n=17):
        """Spot-check ``rho1 > rho > rho0(U) > 0`` on the ``U``-box.

        Sampled on an interior lattice of the box ``(0, U) x (-U, U)``
        clipped to the quadrature support.
        """
        U = float(U)
        lo = self.rho0(U)
        if not lo > 0.0:
            return False
        rs = np.linspace(U / (n + 1), min(U, self.support_r) * (1.0 - 1e-9), n)
        vs = np.linspace(-U * (1.0 - 1e-9), U * (1.0 - 1e-9), n)
        vals = self.rho(rs[:, None], vs[None, :])
        return bool(np.all(vals >= lo - 1e-12) and np.all(vals <= self.rho1 + 1e-12))

    # -- primitives in v ---------------------------------------------------

    def psi(self, r, xi):
        """``int_0^xi rho(r, v) dv``, closed form."""
        r = np.asarray(r, dtype=float)
        xi = np.asarray(xi, dtype=float)
        z = np.clip(xi, -self.v_max, self.v_max)
        if self.beta > 0.0:
            w = 0.5 * _SQRT_PI / math.sqrt(self.beta) * erf(math.sqrt(self.beta) * z)
        else:
            w = z
        return self.alpha_at(r) * w

    def big_psi(self, r, xi):
        """``int_0^xi v rho(r, v) dv``, closed form (always >= 0)."""
        r = np.asarray(r, dtype=float)
        xi = np.asarray(xi, dtype=float)
        z = np.minimum(np.abs(xi), self.v_max)
        if self.beta > 0.0:
            w = (1.0 - np.exp(-self.beta * z * z)) / (2.0 * self.beta)
        else:
            w = 0.5 * z * z
        return self.alpha_at(r) * w

    def default_quadrature(self):
        if self.beta == 0.0 and self.kind != "tabulated":
            return QuadratureSpec(order=8)
        return QuadratureSpec(order=16, panel_max=self.support_r / 8.0)


def psi(d, r, xi):
    """Module-level alias of :meth:`DensityModel.psi` for scalar use."""
    return float(d.psi(r, xi))


@dataclass(frozen=True)
class QuadratureSpec:
    """Corner-aware Gauss-Legendre rule for threshold integrals.

    Pieces never straddle a memory-curve corner, the density support radius,
    an ``alpha`` table node or a ``|v| = v_max`` crossing, so the integrand
    is smooth on every piece.  ``order=8`` is exact for the polynomial
    integrands of the constant-in-``v`` family; ``panel_max`` caps the piece
    length for non-polynomial integrands.
    """

    order: int = 16
    panel_max: float = None
    r_nodes: tuple = ()

    def _gl(self):
        return _leggauss(self.order)

    def pieces(self, d, curve, r_stop=None):
        """Sorted breakpoints of all integrand kinks on ``[0, r_stop]``."""
        rs, vs = curve.corner_arrays()
        stop = min(curve.corners[-1][0], d.support_r)
        if r_stop is not None:
            stop = min(stop, r_stop)
        cuts = {0.0, stop}
        cuts.update(r for r in rs if 0.0 < r < stop)
        cuts.update(r for r in self.r_nodes if 0.0 < r < stop)
        if d.kind == "tabulated":
            cuts.update(r for r in d.alpha[0] if 0.0 < r < stop)
        if math.isfinite(d.v_max):
            for k in range(1, len(rs)):
                a, b = rs[k - 1], vs[k - 1]
                c, e = rs[k], vs[k]
                if c <= 0.0 or a >= stop:
                    continue
                s = (e - b) / (c - a)
                for target in (d.v_max, -d.v_max):
                    if s != 0.0:
                        rc = a + (target - b) / s
                        if max(a, 0.0) < rc < min(c, stop):
                            cuts.add(rc)
        return np.array(sorted(cuts))

    def nodes_weights(self, a, b):
        """Positive-weight nodes on ``[a, b]``, splitting to ``panel_max``."""
        return self.panel_nodes(np.array([a]), np.array([b]))

    def panel_nodes(self, lo, hi):
        """Vectorized nodes/weights for a batch of panels ``[lo_k, hi_k]``."""
        x, w = self._gl()
        if self.panel_max is not None:
            los, his = [], []
            for a, b in zip(lo, hi):
                n = max(1, int(math.ceil((b - a) / self.panel_max)))
                edges = np.linspace(a, b, n + 1)
                los.append(edges[:-1])
                his.append(edges[1:])
            lo = np.concatenate(los)
            hi = np.concatenate(his)
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        weights = (half[:, None] * w[None, :]).ravel()
        return nodes, weights


def _integrate(d, curve, fun, quad, r_stop=None):
    """Integrate ``fun(r, curve(r))`` over the effective support in ``r``."""
    if quad is None:
        quad = d.default_quadrature()
    cuts = quad.pieces(d, curve, r_stop)
    if len(cuts) < 2:
        return 0.0
    rs, vs = curve.corner_arrays()
    nodes, weights = quad.panel_nodes(cuts[:-1], cuts[1:])
    xi = np.interp(nodes, rs, vs, right=0.0)
    return float(np.dot(weights, fun(nodes, xi)))


def _clip_breaks(ra, va, rb, vb, vmax):
    """Sub-breakpoints of a linear segment at the ``|v| = vmax`` band edges."""
    pts = [ra]
    if rb > ra:
        s = (vb - va) / (rb - ra)
        if s != 0.0:
            for target in (vmax, -vmax):
                rc = ra + (target - va) / s
                if ra < rc < rb:
                    pts.append(rc)
    pts.append(rb)
    pts.sort()
    return pts


def _segments_constant(d, curve, r_stop=None):
    """Corner segments of the curve clipped to the density support."""
    stop = min(curve.corners[-1][0], d.support_r)
    if r_stop is not None:
        stop = min(stop, r_stop)
    cs = curve.corners
    out = []
    for k in range(1, len(cs)):
        ra, va = cs[k - 1]
        rb, vb = cs[k]
        if ra >= stop:
            break
        if rb > stop:
            vb = va + (vb - va) / (rb - ra) * (stop - ra)
            rb = stop
        out.append((ra, va, rb, vb))
    return out


def _output_constant(d, curve, r_stop=None):
    """Exact piecewise integral of ``psi`` for the constant-in-v family."""
    rho_c = float(d.alpha)
    vmax = d.v_max
    total = 0.0
    for ra, va, rb, vb in _segments_constant(d, curve, r_stop):
        s = (vb - va) / (rb - ra)
        breaks = _clip_breaks(ra, va, rb, vb, vmax)
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            if hi <= lo:
                continue
            flo = min(max(va + s * (lo - ra), -vmax), vmax)
            fhi = min(max(va + s * (hi - ra), -vmax), vmax)
            total += 0.5 * (flo + fhi) * (hi - lo)
    return rho_c * total


def _energy_constant(d, curve, r_stop=None):
    """Exact piecewise integral of ``Psi`` (Simpson on quadratic pieces)."""
    rho_c = float(d.alpha)
    vmax = d.v_max

    def big(v):
        z = min(abs(v), vmax)
        return 0.5 * z * z

    total = 0.0
    for ra, va, rb, vb in _segments_constant(d, curve, r_stop):
        s = (vb - va) / (rb - ra)
        breaks = _clip_breaks(ra, va, rb, vb, vmax)
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            if hi <= lo:
                continue
            mid = 0.5 * (lo + hi)
            total += (
                (big(va + s * (lo - ra)) + 4.0 * big(va + s * (mid - ra)) + big(va + s * (hi - ra)))
                * (hi - lo)
                / 6.0
            )
    return rho_c * total


def _derivative_constant(d, u, sgn, rstar):
    """Length (times rho) of the active boundary inside the truncation box."""
    hi = min(rstar, d.support_r)
    if hi <= 0.0:
        return 0.0
    # |u - sgn r| < vmax  <=>  r in (sgn(u - vmax), sgn(u + vmax))
    lo_r = sgn * (u - sgn * d.v_max)
    hi_r = sgn * (u + sgn * d.v_max)
    lo = max(0.0, min(lo_r, hi_r))
    hi = min(hi, max(lo_r, hi_r))
    return float(d.alpha) * max(0.0, hi - lo)


def _has_fast_path(d, quad):
    return quad is None and d.kind == "constant_in_v"


def output(d, curve, quad=None):
    """Preisach output for a memory state: offset plus the psi integral."""
    if _has_fast_path(d, quad):
        return d.gbar + _output_constant(d, curve)
    return d.gbar + _integrate(d, curve, d.psi, quad)


def energy(d, curve, quad=None):
    """Stored hysteresis energy ``int Psi(r, v(r)) dr`` of the state."""
    if _has_fast_path(d, quad):
        return _energy_constant(d, curve)
    return _integrate(d, curve, d.big_psi, quad)


def apply_sequence(d, curve, inputs, quad=None):
    """Fold play updates and outputs over an input sequence.

    The initial curve carries the starting value (``curve(0)`` plays the
    role of the zeroth input).  Returns the array of outputs after each
    step and the final memory state.
    """
    inputs = np.atleast_1d(np.asarray(inputs, dtype=float))
    if inputs.size == 0:
        raise ValueError("input sequence must not be empty")
    g_values = np.empty(inputs.size)
    for k, u in enumerate(inputs):
        curve, _ = play_update(curve, u)
        g_values[k] = output(d, curve, quad)
    return g_values, curve


def nemytskii(d, prev, u, quad=None):
    """Per-step superposition value: output after updating ``prev`` to ``u``."""
    curve, _ = play_update(prev, u)
    return output(d, curve, quad)


def nemytskii_derivative(d, prev, u, quad=None):
    """Derivative of the superposition function at ``u``.

    Equals ``int_0^{r*} rho(r, u -+ r) dr`` with ``r*`` the memory depth of
    the move; vanishes exactly at a fresh turning point (``r* = 0``).
    """
    u = float(u)
    v0 = prev.value
    if u == v0:
        return 0.0
    ascending = u > v0
    rstar = memory_depth(prev, u, "ascending" if ascending else "descending")
    if rstar <= 0.0:
        return 0.0
    sgn = 1.0 if ascending else -1.0
    if _has_fast_path(d, quad):
        return _derivative_constant(d, u, sgn, rstar)
    if quad is None:
        quad = d.default_quadrature()

    def boundary_rho(r, _xi):
        return d.rho(r, u - sgn * r)

    cuts = {0.0, min(rstar, d.support_r)}
    if d.kind == "tabulated":
        cuts.update(r for r in d.alpha[0] if 0.0 < r < rstar)
    if math.isfinite(d.v_max):
        for target in (d.v_max, -d.v_max):
            rc = sgn * (u - target)
            if 0.0 < rc < min(rstar, d.support_r):
                cuts.add(rc)
    cuts = np.array(sorted(cuts))
    nodes, weights = quad.panel_nodes(cuts[:-1], cuts[1:])
    return float(np.dot(weights, boundary_rho(nodes, None)))


def branch(d, prev, w, direction=None, quad=None):
    """Branch value ``B(w)`` relative to the current state.

    Ascending branches require ``w >= prev(0)``, descending ones
    ``w <= prev(0)``; ``B(prev(0)) = 0``.
    """
    w = float(w)
    v0 = prev.value
    if direction == "ascending" and w < v0:
        raise ValueError("ascending branch requires w >= curve(0)")
    if direction == "descending" and w > v0:
        raise ValueError("descending branch requires w <= curve(0)")
    return nemytskii(d, prev, w, quad) - output(d, prev, quad)


def monotonicity_constant(d, support, u_max):
    """Two-sided constant of the increment sandwich.

    ``|dG| <= C |du|`` with ``C = rho1 * (support + max |u|)`` serves both
    the upper bound ``du dG <= C du^2`` and the lower ``|dG|^2 <= C du dG``
    (the two coincide because ``dG`` and ``du`` share their sign).
    """
    return max(d.rho1 * (support + abs(u_max)), 1.0 / max(d.rho0(abs(u_max)), 1e-300))
