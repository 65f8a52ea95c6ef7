"""Scalar play operators with explicit memory-curve state.

The whole hysteresis memory of a point is a single 1-Lipschitz function
``r -> v(r)`` of the threshold variable, compactly supported, stored as an
ordered list of piecewise-linear breakpoints ("corners").  The corner list
is the ground truth: a play update clips the curve against the input cone
``u -+ r`` and is exact on this representation.  Threshold-grid samples are
only a cache for quadrature and cross-checks.

Updates, backward deformations and turning-point constructions all return
new curves; a :class:`MemoryCurve` is never mutated after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MemoryCurve",
    "PlayUpdateReport",
    "play_update",
    "play_update_samples",
    "memory_depth",
    "curve_turning",
    "curve_saturated",
    "backward_deform",
]

# Relative slack for the 1-Lipschitz validation; covers last-ulp rounding in
# corner coordinates without admitting genuinely steeper segments.
_LIPSCHITZ_SLACK = 1e-12


class CurveError(ValueError):
    """Raised when corner data violate the memory-curve invariants."""


def _canonical(corners):
    """Merge duplicate-r corners and drop exactly collinear interior ones.

    Collinearity is tested with the cross product of corner differences so
    that curves reconstructed through different histories compare equal
    whenever their arithmetic is exact.
    """
    merged = []
    for r, v in corners:
        if merged and r == merged[-1][0]:
            if v != merged[-1][1]:
                raise CurveError(f"duplicate threshold r={r} with conflicting values")
            continue
        merged.append((float(r), float(v)))
    out = [merged[0]]
    for c in merged[1:]:
        while len(out) >= 2:
            r0, v0 = out[-2]
            r1, v1 = out[-1]
            r2, v2 = c
            if (r1 - r0) * (v2 - v1) == (r2 - r1) * (v1 - v0):
                out.pop()
            else:
                break
        out.append(c)
    # a constant-zero tail collapses into the support corner
    while len(out) >= 2 and out[-1][1] == 0.0 and out[-2][1] == 0.0:
        out.pop()
    return tuple(out)


@dataclass(frozen=True)
class MemoryCurve:
    """Piecewise-linear hysteresis memory state.

    Parameters
    ----------
    corners : tuple of (float, float)
        Breakpoints ``(r, v)`` with strictly increasing ``r``, starting at
        ``r = 0``.  Beyond the last corner the curve is identically zero,
        so the last corner must carry ``v = 0`` (a single corner ``(0, 0)``
        is the virgin state).
    support_radius : float
        Radius beyond which the curve vanishes; grows monotonically as
        larger inputs are seen.
    """

    corners: tuple = ((0.0, 0.0),)
    support_radius: float = 0.0

    def __post_init__(self):
        corners = _canonical(self.corners)
        object.__setattr__(self, "corners", corners)
        if corners[0][0] != 0.0:
            raise CurveError("first corner must sit at r = 0")
        prev_r, prev_v = corners[0]
        for r, v in corners[1:]:
            if r <= prev_r:
                raise CurveError("corner thresholds must increase strictly")
            dv, dr = abs(v - prev_v), r - prev_r
            # slack covers both relative rounding of dr and ulp noise of the values
            slack = _LIPSCHITZ_SLACK * dr + 1e-14 * max(1.0, abs(v), abs(prev_v))
            if dv > dr + slack:
                raise CurveError(f"segment ({prev_r},{prev_v})-({r},{v}) steeper than 1")
            prev_r, prev_v = r, v
        if corners[-1][1] != 0.0:
            raise CurveError("curve must reach 0 at its last corner")
        support = max(float(self.support_radius), corners[-1][0])
        object.__setattr__(self, "support_radius", support)

    # -- evaluation --------------------------------------------------------

    def __call__(self, r):
        """Evaluate the curve at threshold ``r >= 0`` (scalar or array)."""
        if np.ndim(r) > 0:
            return self.sample(np.asarray(r, dtype=float))
        return self._eval_scalar(float(r))

    def _eval_scalar(self, r):
        if r < 0.0:
            raise CurveError("threshold r must be nonnegative")
        cs = self.corners
        if r <= cs[0][0]:
            return cs[0][1]
        for k in range(1, len(cs)):
            r1, v1 = cs[k]
            if r <= r1:
                if r == r1:
                    return v1
                r0, v0 = cs[k - 1]
                return v0 + (v1 - v0) / (r1 - r0) * (r - r0)
        return 0.0

    def sample(self, rgrid):
        """Exact values on a threshold grid (the quadrature-cache view)."""
        rgrid = np.asarray(rgrid, dtype=float)
        if np.any(rgrid < 0.0):
            raise CurveError("threshold grid must be nonnegative")
        rs = np.array([c[0] for c in self.corners])
        vs = np.array([c[1] for c in self.corners])
        out = np.interp(rgrid, rs, vs, left=vs[0], right=0.0)
        return out

    # -- convenience -------------------------------------------------------

    @property
    def value(self):
        """Current input value, ``v(0)``."""
        return self.corners[0][1]

    def corner_arrays(self):
        rs = np.array([c[0] for c in self.corners])
        vs = np.array([c[1] for c in self.corners])
        return rs, vs

    def dump_csv(self, path):
        """Write corners as CSV rows ``r,v`` under a support header."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# lambda, support={self.support_radius:.17g}\n")
            fh.write("r,v\n")
            for r, v in self.corners:
                fh.write(f"{r:.17g},{v:.17g}\n")


@dataclass(frozen=True)
class PlayUpdateReport:
    """What a play update did: how deep it reached and in which direction."""

    moved_depth: float = 0.0
    direction: str = "none"  # ascending | descending | none


def _clip_depth(corners, u, ascending):
    """Smallest threshold where the input cone meets the curve.

    Walks corner segments; within the crossing segment the intersection is
    solved from the segment's intercept form so that the result does not
    depend on which breakpoints parametrize the segment.
    """
    sgn = 1.0 if ascending else -1.0
    n = len(corners)
    for k in range(1, n):
        rk, vk = corners[k]
        gk = sgn * ((u - sgn * rk) - vk)
        if gk <= 0.0:
            if gk == 0.0:
                return rk, vk, k + 1
            r0, v0 = corners[k - 1]
            s = (vk - v0) / (rk - r0)
            den = s + sgn
            if den != 0.0:
                c = v0 - s * r0
                rstar = (u - c) / den
            else:  # parallel within rounding: interpolate the gap instead
                g0 = sgn * ((u - sgn * r0) - v0)
                rstar = r0 + g0 * (rk - r0) / (g0 - gk)
            return rstar, u - sgn * rstar, k
    # cone crosses the zero tail beyond the last corner
    return sgn * u, 0.0, n


def play_update(curve, u_new):
    """One step of the discrete play operator on the whole memory curve.

    The result equals ``r -> min(u + r, max(curve(r), u - r))`` for every
    threshold, computed exactly on the corner representation.

    Returns
    -------
    (MemoryCurve, PlayUpdateReport)
    """
    u = float(u_new)
    if not math.isfinite(u):
        raise CurveError("input value must be finite")
    v0 = curve.value
    if u == v0:
        return curve, PlayUpdateReport(0.0, "none")
    ascending = u > v0
    rstar, vstar, tail_from = _clip_depth(curve.corners, u, ascending)
    new = [(0.0, u)]
    if rstar > 0.0:
        new.append((rstar, vstar))
    cs = curve.corners
    for j in range(tail_from, len(cs)):
        if cs[j][0] > rstar:
            new.append(cs[j])
    if new[-1][1] != 0.0:
        new.append((new[-1][0] + abs(new[-1][1]), 0.0))
    support = max(curve.support_radius, abs(u))
    result = MemoryCurve(tuple(new), support)
    direction = "ascending" if ascending else "descending"
    return result, PlayUpdateReport(rstar, direction)


def play_update_samples(samples, rgrid, u_new):
    """Pointwise play update on a fixed threshold grid.

    Independent evaluation of the same clipping formula used by
    :func:`play_update`; both views must agree at grid thresholds.
    """
    u = float(u_new)
    rgrid = np.asarray(rgrid, dtype=float)
    samples = np.asarray(samples, dtype=float)
    return np.minimum(u + rgrid, np.maximum(samples, u - rgrid))


def memory_depth(curve, w, direction):
    """Depth reached by a (virtual) monotone move of the input to ``w``.

    For ``direction='ascending'`` this is ``min{r > 0 : w - r <= v(r)}``,
    for ``'descending'`` it is ``min{r > 0 : w + r >= v(r)}``; both are
    solved exactly as cone-segment intersections.
    """
    w = float(w)
    v0 = curve.value
    if direction == "ascending":
        if w < v0:
            raise CurveError("ascending move requires w >= curve(0)")
        if w == v0:
            return 0.0
        return _clip_depth(curve.corners, w, True)[0]
    if direction == "descending":
        if w > v0:
            raise CurveError("descending move requires w <= curve(0)")
        if w == v0:
            return 0.0
        return _clip_depth(curve.corners, w, False)[0]
    raise ValueError(f"unknown direction {direction!r}")


def curve_saturated(v_star):
    """Memory curve of a saturated state: ``(v* - r)^+`` (mirrored if negative)."""
    v = float(v_star)
    if v == 0.0:
        return MemoryCurve()
    return MemoryCurve(((0.0, v), (abs(v), 0.0)), abs(v))


def curve_turning(u0, r0, sign, support):
    """Initial memory with a straight slope ``-sign`` down to depth ``r0``.

    Beyond the prescribed ramp the curve returns to zero along the steepest
    admissible path (unit slope toward zero).  ``r0 = 0`` imposes no slope
    constraint and the saturated curve for ``u0`` is returned.
    """
    u0 = float(u0)
    r0 = float(r0)
    sign = float(sign)
    if sign not in (-1.0, 1.0):
        raise CurveError("sign must be +-1")
    if r0 < 0.0 or r0 > support:
        raise CurveError("need 0 <= r0 <= support")
    if r0 == 0.0:
        c = curve_saturated(u0)
        return MemoryCurve(c.corners, max(support, c.support_radius))
    v_turn = u0 - sign * r0
    if abs(v_turn) > support - r0:
        raise CurveError(
            f"ramp-to-zero continuation infeasible: |{v_turn}| > {support - r0}"
        )
    corners = [(0.0, u0)]
    if v_turn == 0.0:
        corners.append((r0, 0.0))
    else:
        corners.append((r0, v_turn))
        corners.append((r0 + abs(v_turn), 0.0))
    return MemoryCurve(tuple(corners), support)


def backward_deform(curve, r0, a, sign):
    """Deformed pre-history curve for the fictitious backward step.

    Requires the curve to run with slope ``-sign`` on ``(0, r0)``.  The
    returned curve dips an extra ``2a`` at the origin, rejoins the original
    line at ``r0`` and coincides with the input curve beyond.
    """
    r0 = float(r0)
    a = float(a)
    sign = float(sign)
    if sign not in (-1.0, 1.0):
        raise CurveError("sign must be +-1")
    if not (0.0 <= a <= r0 / 2.0 or r0 == a == 0.0):
        raise CurveError("need 0 <= a <= r0/2")
    u0 = curve.value
    if r0 > 0.0:
        for rp in (0.5 * r0, r0):
            expect = u0 - sign * rp
            if abs(curve._eval_scalar(rp) - expect) > 1e-10 * max(1.0, abs(u0), r0):
                raise CurveError("curve does not have slope -sign on (0, r0)")
    if a == 0.0:
        return curve
    corners = [(0.0, u0 - sign * 2.0 * a)]
    if r0 - a > 0.0:
        corners.append((r0 - a, u0 - sign * (r0 + a)))
    corners.append((r0, u0 - sign * r0))
    for rc, vc in curve.corners:
        if rc > r0:
            corners.append((rc, vc))
    if corners[-1][1] != 0.0:
        corners.append((corners[-1][0] + abs(corners[-1][1]), 0.0))
    support = max(curve.support_radius, abs(corners[0][1]))
    return MemoryCurve(tuple(corners), support)
