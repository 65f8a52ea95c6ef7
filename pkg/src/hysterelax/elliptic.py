"""Structured-grid discretization of ``-Laplace`` with Robin boundary data.

The operator is assembled in weak form: a stiffness part from nodal finite
differences (3-point in 1D, 5-point in 2D, edge weights carrying transverse
trapezoid measure) plus a boundary mass ``b(x)`` integrated with the
trapezoid rule on the boundary.  The resulting matrix is symmetric and,
whenever ``int b ds > 0``, positive definite.  The same quadrature weights
define all discrete space norms used by the monitors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Grid",
    "Field",
    "RobinOperator",
    "assemble",
    "solve_linear_robin",
    "solve_semilinear_step",
    "SingularSystemError",
    "NewtonError",
]


class SingularSystemError(RuntimeError):
    """Linear Robin problem without coercivity (``int b ds <= 0``)."""


class NewtonError(RuntimeError):
    """Semilinear step did not reach the residual tolerance."""


def _trapezoid_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True)
class Grid:
    """Uniform 1D segment or 2D rectangle with Robin coefficient data.

    ``b`` lives on all nodes but is only meaningful (and nonzero) on the
    boundary; ``w_dom`` are tensor-trapezoid volume weights and ``w_bdry``
    trapezoid surface weights supported on boundary nodes.
    """

    dim: int
    extents: tuple
    shape: tuple
    coords: tuple
    b: np.ndarray
    w_dom: np.ndarray
    w_bdry: np.ndarray
    boundary_mask: np.ndarray
    spacing: tuple

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    @property
    def boundary_measure_b(self):
        """``int_boundary b ds`` under the trapezoid rule."""
        return float(np.dot(self.b, self.w_bdry))

    @staticmethod
    def line(x0, x1, n, b_func):
        """1D grid on ``[x0, x1]`` with ``n`` nodes; boundary = two endpoints."""
        if n < 3 or x1 <= x0:
            raise ValueError("need n >= 3 and x1 > x0")
        x = np.linspace(x0, x1, n)
        h = (x1 - x0) / (n - 1)
        b = np.zeros(n)
        b[0] = b_func(x0)
        b[-1] = b_func(x1)
        if np.any(b < 0.0):
            raise ValueError("b must be nonnegative")
        w_bdry = np.zeros(n)
        w_bdry[0] = w_bdry[-1] = 1.0
        mask = np.zeros(n, dtype=bool)
        mask[0] = mask[-1] = True
        return Grid(
            dim=1,
            extents=((x0, x1),),
            shape=(n,),
            coords=(x,),
            b=b,
            w_dom=_trapezoid_weights(n, h),
            w_bdry=w_bdry,
            boundary_mask=mask,
            spacing=(h,),
        )

    @staticmethod
    def rectangle(extents, shape, b_func):
        """2D tensor grid; node index is ``ix * ny + iy``."""
        (x0, x1), (y0, y1) = extents
        nx, ny = shape
        if nx < 3 or ny < 3:
            raise ValueError("need at least 3 nodes per direction")
        xs = np.linspace(x0, x1, nx)
        ys = np.linspace(y0, y1, ny)
        hx = (x1 - x0) / (nx - 1)
        hy = (y1 - y0) / (ny - 1)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        mask = np.zeros((nx, ny), dtype=bool)
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
        b = np.zeros((nx, ny))
        b[mask] = b_func(X[mask], Y[mask])
        if np.any(b < 0.0):
            raise ValueError("b must be nonnegative")
        wx = _trapezoid_weights(nx, hx)
        wy = _trapezoid_weights(ny, hy)
        w_dom = np.outer(wx, wy)
        w_bdry = np.zeros((nx, ny))
        w_bdry[0, :] += wy
        w_bdry[-1, :] += wy
        w_bdry[:, 0] += wx
        w_bdry[:, -1] += wx
        return Grid(
            dim=2,
            extents=((x0, x1), (y0, y1)),
            shape=(nx, ny),
            coords=(xs, ys),
            b=b.ravel(),
            w_dom=w_dom.ravel(),
            w_bdry=w_bdry.ravel(),
            boundary_mask=mask.ravel(),
            spacing=(hx, hy),
        )

    def node_coords(self):
        """Coordinates per flat node index, shape (n_nodes, dim)."""
        if self.dim == 1:
            return self.coords[0][:, None]
        X, Y = np.meshgrid(self.coords[0], self.coords[1], indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def integrate(self, values):
        return float(np.dot(self.w_dom, values))

    def robin_laplacian(self, u, ustar=None):
        """Discrete Laplacian with ghost values from the Robin condition.

        Ghosts satisfy ``-grad u . n = b (u - u*)`` to second order, so the
        stencil is usable up to the boundary.
        """
        u = np.asarray(u, dtype=float)
        if ustar is None:
            ustar = np.zeros_like(u)
        ustar = np.asarray(ustar, dtype=float)
        if self.dim == 1:
            (h,) = self.spacing
            b = self.b
            ext = np.empty(u.size + 2)
            ext[1:-1] = u
            ext[0] = u[1] - 2.0 * h * b[0] * (u[0] - ustar[0])
            ext[-1] = u[-2] - 2.0 * h * b[-1] * (u[-1] - ustar[-1])
            return (ext[2:] - 2.0 * u + ext[:-2]) / h**2
        hx, hy = self.spacing
        nx, ny = self.shape
        U = u.reshape(nx, ny)
        S = ustar.reshape(nx, ny)
        B = self.b.reshape(nx, ny)
        ext = np.empty((nx + 2, ny + 2))
        ext[1:-1, 1:-1] = U
        ext[0, 1:-1] = U[1, :] - 2.0 * hx * B[0, :] * (U[0, :] - S[0, :])
        ext[-1, 1:-1] = U[-2, :] - 2.0 * hx * B[-1, :] * (U[-1, :] - S[-1, :])
        ext[1:-1, 0] = U[:, 1] - 2.0 * hy * B[:, 0] * (U[:, 0] - S[:, 0])
        ext[1:-1, -1] = U[:, -2] - 2.0 * hy * B[:, -1] * (U[:, -1] - S[:, -1])
        lap = (ext[2:, 1:-1] - 2.0 * U + ext[:-2, 1:-1]) / hx**2
        lap += (ext[1:-1, 2:] - 2.0 * U + ext[1:-1, :-2]) / hy**2
        return lap.ravel()

    def boundary_normal_gradient(self, u):
        """Outward normal derivative on boundary nodes, second order inside."""
        u = np.asarray(u, dtype=float)
        out = np.zeros(self.n_nodes)
        if self.dim == 1:
            (h,) = self.spacing
            out[0] = -(-1.5 * u[0] + 2.0 * u[1] - 0.5 * u[2]) / h
            out[-1] = (1.5 * u[-1] - 2.0 * u[-2] + 0.5 * u[-3]) / h
            return out
        hx, hy = self.spacing
        nx, ny = self.shape
        U = u.reshape(nx, ny)
        O = out.reshape(nx, ny)
        O[0, :] += -(-1.5 * U[0, :] + 2.0 * U[1, :] - 0.5 * U[2, :]) / hx
        O[-1, :] += (1.5 * U[-1, :] - 2.0 * U[-2, :] + 0.5 * U[-3, :]) / hx
        O[:, 0] += -(-1.5 * U[:, 0] + 2.0 * U[:, 1] - 0.5 * U[:, 2]) / hy
        O[:, -1] += (1.5 * U[:, -1] - 2.0 * U[:, -2] + 0.5 * U[:, -3]) / hy
        return out


@dataclass
class Field:
    """Nodal scalar function tied to its grid."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError("field length does not match grid")

    @staticmethod
    def from_function(grid, fun):
        xy = grid.node_coords()
        if grid.dim == 1:
            return Field(np.asarray(fun(xy[:, 0]), dtype=float) * np.ones(grid.n_nodes), grid)
        return Field(np.asarray(fun(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(grid.n_nodes), grid)

    def dump_csv(self, path):
        """Write ``x[,y],value`` rows for every node."""
        xy = self.grid.node_coords()
        cols = ["x", "y"][: self.grid.dim] + ["value"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for row, v in zip(xy, self.values):
                coords = ",".join(f"{c:.17g}" for c in row)
                fh.write(f"{coords},{v:.17g}\n")


def _stiffness_1d(n, h):
    main = np.full(n, 2.0 / h)
    main[0] = main[-1] = 1.0 / h
    off = np.full(n - 1, -1.0 / h)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


@dataclass
class RobinOperator:
    """Assembled weak form: ``(A u, v) = int grad u . grad v + int b u v``."""

    grid: Grid
    K: sp.spmatrix
    bmass: np.ndarray
    A: sp.spmatrix
    _lu: object = field(default=None, repr=False)

    def apply(self, u):
        return self.A @ u

    def boundary_load(self, ustar):
        """Load vector of the ``int b u* v`` boundary source."""
        return self.bmass * ustar

    def gradient_energy(self, u):
        return float(u @ (self.K @ u))

    def boundary_energy(self, u):
        return float(np.dot(self.bmass, u * u))

    def solve(self, rhs):
        if self.grid.boundary_measure_b <= 0.0:
            raise SingularSystemError("int_boundary b ds must be positive")
        if self._lu is None:
            self._lu = spla.splu(self.A.tocsc())
        return self._lu.solve(rhs)


def assemble(grid):
    """Assemble the Robin operator for a grid."""
    if grid.dim == 1:
        (n,) = grid.shape
        (h,) = grid.spacing
        K = _stiffness_1d(n, h)
    else:
        nx, ny = grid.shape
        hx, hy = grid.spacing
        Kx = _stiffness_1d(nx, hx)
        Ky = _stiffness_1d(ny, hy)
        Mx = sp.diags(_trapezoid_weights(nx, hx))
        My = sp.diags(_trapezoid_weights(ny, hy))
        K = (sp.kron(Kx, My) + sp.kron(Mx, Ky)).tocsr()
    bmass = grid.b * grid.w_bdry
    A = (K + sp.diags(bmass)).tocsr()
    return RobinOperator(grid=grid, K=K, bmass=bmass, A=A)


def solve_linear_robin(op, h_tilde, ustar=None):
    """Solve the linear Robin problem for a volume source and boundary data."""
    grid = op.grid
    h_vals = h_tilde.values if isinstance(h_tilde, Field) else np.asarray(h_tilde, dtype=float)
    if h_vals.ndim == 0:
        h_vals = np.full(grid.n_nodes, float(h_vals))
    rhs = grid.w_dom * h_vals
    if ustar is not None:
        us = ustar.values if isinstance(ustar, Field) else np.asarray(ustar, dtype=float)
        if us.ndim == 0:
            us = np.full(grid.n_nodes, float(us))
        rhs = rhs + op.boundary_load(us)
    v = op.solve(rhs)
    resid = op.A @ v - rhs
    if np.sqrt(np.sum(resid**2 / grid.w_dom)) > 1e-9 * max(1.0, np.abs(rhs).max()):
        raise SingularSystemError("direct solve residual unexpectedly large")
    return v


def _residual_norm(grid, R):
    """Discrete L2 norm of the strong residual (weak residual descaled)."""
    return math.sqrt(float(np.sum(R * R / grid.w_dom)))


def solve_semilinear_step(
    op,
    curves,
    density,
    tau,
    h_vals,
    ustar_vals,
    u_guess,
    tol=1e-11,
    max_iter=60,
    quad=None,
    g_prev=None,
):
    """One implicit step of the hysteresis-parabolic scheme.

    Solves ``(1/tau)(Gtil(x, u) - G_prev) - Lap u = h`` in weak form with the
    frozen per-node memory in ``curves``; ``Gtil`` is the monotone
    superposition of the play update and the Preisach output.  Damped Newton
    with Armijo backtracking; the Jacobian ``A + (w/tau) diag(Gtil')`` is
    symmetric positive definite because the branch derivative is >= 0.
    """
    from .preisach import nemytskii, nemytskii_derivative, output

    grid = op.grid
    n = grid.n_nodes
    w = grid.w_dom
    u = np.array(u_guess, dtype=float, copy=True)
    if g_prev is None:
        g_prev = np.array([output(density, c, quad) for c in curves])
    load = w * h_vals + op.boundary_load(ustar_vals)

    def residual(u_vec):
        g_new = np.array([nemytskii(density, c, ui, quad) for c, ui in zip(curves, u_vec)])
        R = w * (g_new - g_prev) / tau + op.A @ u_vec - load
        return R, g_new

    R, _ = residual(u)
    rnorm = _residual_norm(grid, R)
    scale = max(1.0, _residual_norm(grid, load))
    for it in range(max_iter):
        if rnorm <= tol * scale:
            return u, {"iterations": it, "residual": rnorm}
        gprime = np.array(
            [nemytskii_derivative(density, c, ui, quad) for c, ui in zip(curves, u)]
        )
        if np.any(gprime < 0.0):
            raise NewtonError("negative branch derivative: density invalid")
        J = (op.A + sp.diags(w * gprime / tau)).tocsc()
        delta = spla.spsolve(J, -R)
        lam = 1.0
        for _bt in range(40):
            u_try = u + lam * delta
            R_try, _ = residual(u_try)
            rn_try = _residual_norm(grid, R_try)
            if rn_try <= (1.0 - 1e-4 * lam) * rnorm:
                break
            lam *= 0.5
        else:
            raise NewtonError(
                f"line search exhausted at residual {rnorm:.3e} (bad tau or quadrature?)"
            )
        u, R, rnorm = u_try, R_try, rn_try
    if rnorm <= tol * scale:
        return u, {"iterations": max_iter, "residual": rnorm}
    raise NewtonError(f"Newton stagnation after {max_iter} iterations, residual {rnorm:.3e}")
