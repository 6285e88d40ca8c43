"""Discretization of circle-invariant functions on a truncated orbit space.

An invariant function on R^4 is a function of (r1, r2, phi).  In these
coordinates the Lebesgue measure of R^4 restricted to invariant integrands
is 2*pi * r1 * r2 * dr1 dr2 dphi, and the ambient gradient satisfies

    |grad u|^2 = u_r1^2 + u_r2^2 + (1/r1^2 + 1/r2^2) u_phi^2.

The grid is cell-centered on [0, R]^2 x [0, 2pi) with the ball
{r1^2 + r2^2 <= R^2} as the computational domain and homogeneous Dirichlet
data outside it.  Cell centers never touch the coordinate axes, where the
angular metric factor blows up; smooth invariant functions have u_phi of
order r1*r2 there, so the weighted stencil stays finite at half-cell
offsets.

The Dirichlet energy is a quadratic form assembled from face differences
(the flux form of the 7-point stencil).  Its exact Euclidean gradient is
the stiffness matrix built by :func:`stiffness_matrix`, which doubles as
the operator of the Poisson preconditioner, so energy, weak-form residual
and preconditioner share a single discretization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .symmetry import TWO_PI, OrbitMap, rho_orbit_arrays


class ResolutionBudgetError(RuntimeError):
    """A requested full 4-D grid exceeds the configured node limit."""


@dataclass(eq=False)
class ReducedGrid:
    """Cell-centered grid on [0, R]^2 x [0, 2pi) for invariant fields."""

    n_r1: int
    n_r2: int
    n_phi: int
    radius: float

    def __post_init__(self):
        if min(self.n_r1, self.n_r2, self.n_phi) < 2:
            raise ValueError("grid needs at least 2 cells per direction")
        if self.radius <= 0:
            raise ValueError("truncation radius must be positive")
        self.dr1 = self.radius / self.n_r1
        self.dr2 = self.radius / self.n_r2
        self.dphi = TWO_PI / self.n_phi
        self.r1 = (np.arange(self.n_r1) + 0.5) * self.dr1
        self.r2 = (np.arange(self.n_r2) + 0.5) * self.dr2
        self.phi = (np.arange(self.n_phi) + 0.5) * self.dphi
        # nodes strictly inside the ball; everything else is Dirichlet exterior
        rr1 = self.r1[:, None]
        rr2 = self.r2[None, :]
        self.inside = (rr1 * rr1 + rr2 * rr2) < self.radius**2
        w2d = TWO_PI * rr1 * rr2 * self.dr1 * self.dr2 * self.dphi
        self.weights = np.where(self.inside, w2d, 0.0)[:, :, None] * np.ones(self.n_phi)
        self.s_radial = np.sqrt(rr1 * rr1 + rr2 * rr2)
        self._stiffness = None
        self._amg = None
        self._s_order = None

    def radial_order(self):
        """Flat node indices sorted by distance s from the origin (cached)."""
        if self._s_order is None:
            s3 = np.broadcast_to(self.s_radial[:, :, None], self.shape).ravel()
            order = np.argsort(s3, kind="stable")
            self._s_order = (order, s3[order])
        return self._s_order

    @property
    def shape(self):
        return (self.n_r1, self.n_r2, self.n_phi)

    @property
    def n_nodes(self):
        return self.n_r1 * self.n_r2 * self.n_phi

    @property
    def min_spacing(self):
        return min(self.dr1, self.dr2)

    def zeros(self):
        return np.zeros(self.shape)

    def mask3d(self):
        return np.broadcast_to(self.inside[:, :, None], self.shape)

    def faces(self):
        """Face lists (ia, ib, coeff) of the Dirichlet energy form.

        ia/ib are flat node indices of the two sides of each face; ib = -1
        marks a Dirichlet (zero) exterior side.  coeff is the face weight
        divided by the squared spacing, so the energy is
        sum coeff * (u[ia] - u[ib])^2 with u[-1] read as 0.
        """
        n1, n2, nphi = self.shape
        flat = np.arange(self.n_nodes).reshape(self.shape)
        inside3 = self.mask3d()
        out = []

        def emit(ia, ib, coeff, keep):
            out.append((ia[keep], ib[keep], coeff[keep]))

        # r1-direction interior faces (between cells i and i+1)
        r1_face = (np.arange(1, n1) * self.dr1)[:, None, None]
        coeff = TWO_PI * r1_face * self.r2[None, :, None] * self.dr2 * self.dphi / self.dr1
        coeff = np.broadcast_to(coeff, (n1 - 1, n2, nphi))
        a_in = inside3[:-1]
        b_in = inside3[1:]
        ia = flat[:-1]
        ib = flat[1:]
        both = a_in & b_in
        emit(ia.ravel(), ib.ravel(), coeff.ravel(), both.ravel())
        only_a = a_in & ~b_in
        emit(ia.ravel(), np.full(ia.size, -1), coeff.ravel(), only_a.ravel())
        only_b = ~a_in & b_in
        emit(ib.ravel(), np.full(ib.size, -1), coeff.ravel(), only_b.ravel())
        # outer box edge at r1 = R (interior cells with small r2 reach it)
        coeff_edge = TWO_PI * self.radius * self.r2[None, :, None] * self.dr2 * self.dphi / self.dr1
        coeff_edge = np.broadcast_to(coeff_edge, (1, n2, nphi))
        emit(flat[-1:].ravel(), np.full(n2 * nphi, -1), coeff_edge.ravel(), inside3[-1:].ravel())
        # the face at r1 = 0 has zero metric weight: no flux through the axis

        # r2-direction, symmetric to the above
        r2_face = (np.arange(1, n2) * self.dr2)[None, :, None]
        coeff = TWO_PI * self.r1[:, None, None] * r2_face * self.dr1 * self.dphi / self.dr2
        coeff = np.broadcast_to(coeff, (n1, n2 - 1, nphi))
        a_in = inside3[:, :-1]
        b_in = inside3[:, 1:]
        ia = flat[:, :-1]
        ib = flat[:, 1:]
        both = a_in & b_in
        emit(ia.ravel(), ib.ravel(), coeff.ravel(), both.ravel())
        only_a = a_in & ~b_in
        emit(ia.ravel(), np.full(ia.size, -1), coeff.ravel(), only_a.ravel())
        only_b = ~a_in & b_in
        emit(ib.ravel(), np.full(ib.size, -1), coeff.ravel(), only_b.ravel())
        coeff_edge = TWO_PI * self.r1[:, None, None] * self.radius * self.dr1 * self.dphi / self.dr2
        coeff_edge = np.broadcast_to(coeff_edge, (n1, 1, nphi))
        emit(flat[:, -1:].ravel(), np.full(n1 * nphi, -1), coeff_edge.ravel(), inside3[:, -1:].ravel())

        # phi-direction, periodic; metric factor (1/r1^2 + 1/r2^2)
        metric = 1.0 / self.r1[:, None] ** 2 + 1.0 / self.r2[None, :] ** 2
        coeff = (TWO_PI * self.r1[:, None] * self.r2[None, :] * self.dr1 * self.dr2 * metric / self.dphi)
        coeff = np.broadcast_to(coeff[:, :, None], self.shape)
        ia = flat
        ib = np.roll(flat, -1, axis=2)
        keep = inside3  # both sides share (r1, r2); inside is phi-independent
        emit(ia.ravel(), ib.ravel(), coeff.ravel(), keep.ravel())

        return out

    def stiffness_matrix(self) -> sp.csr_matrix:
        """Symmetric positive definite form of the Dirichlet energy.

        Exterior rows are identity so the matrix stays nonsingular; fields
        are zero there, which keeps u' A u equal to the face-difference
        energy.
        """
        if self._stiffness is None:
            n = self.n_nodes
            rows, cols, vals = [], [], []
            for ia, ib, coeff in self.faces():
                interior_face = ib >= 0
                a = ia[interior_face]
                b = ib[interior_face]
                c = coeff[interior_face]
                rows += [a, b, a, b]
                cols += [a, b, b, a]
                vals += [c, c, -c, -c]
                a = ia[~interior_face]
                c = coeff[~interior_face]
                rows.append(a)
                cols.append(a)
                vals.append(c)
            exterior = np.flatnonzero(~self.mask3d().ravel())
            rows.append(exterior)
            cols.append(exterior)
            vals.append(np.ones(exterior.size))
            A = sp.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(n, n),
            )
            self._stiffness = A.tocsr()
        return self._stiffness

    def poisson_solver(self):
        """Cached algebraic multigrid hierarchy for the stiffness matrix."""
        if self._amg is None:
            import pyamg

            self._amg = pyamg.smoothed_aggregation_solver(
                self.stiffness_matrix(), max_coarse=200
            )
        return self._amg

    def solve_poisson(self, rhs: np.ndarray, tol: float = 1e-8, x0=None) -> np.ndarray:
        """Solve A h = rhs to relative residual tol; raises on stagnation."""
        ml = self.poisson_solver()
        b = rhs.ravel()
        norm_b = float(np.linalg.norm(b))
        if norm_b == 0.0:
            return np.zeros(self.shape)
        res = []
        x = ml.solve(
            b,
            x0=None if x0 is None else x0.ravel(),
            tol=tol,
            residuals=res,
            maxiter=120,
            accel="cg",
        )
        if res and res[-1] > tol * max(res[0], norm_b) * 10:
            raise PoissonSolveError(
                f"multigrid stagnated: relative residual {res[-1] / max(res[0], 1e-300):.2e}"
            )
        return x.reshape(self.shape)


class PoissonSolveError(RuntimeError):
    """The preconditioner solve failed to reach its residual tolerance."""


@dataclass(eq=False)
class Field:
    """One invariant scalar component sampled on a reduced grid.

    Values outside the ball are identically zero (Dirichlet exterior), and
    every value is finite; both are enforced on construction.
    """

    grid: ReducedGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.values = np.where(self.grid.mask3d(), v, 0.0)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


def field_from_function(grid: ReducedGrid, fn) -> Field:
    """Sample fn(r1, r2, phi) (broadcastable over arrays) at the nodes."""
    r1 = grid.r1[:, None, None]
    r2 = grid.r2[None, :, None]
    phi = grid.phi[None, None, :]
    vals = np.broadcast_to(np.asarray(fn(r1, r2, phi), dtype=float), grid.shape)
    return Field(grid, np.array(vals))


def integrate(f: Field) -> float:
    """Quadrature of the invariant extension of f over R^4 (midpoint rule)."""
    return float(np.sum(f.grid.weights * f.values))


def integrate_values(grid: ReducedGrid, values: np.ndarray) -> float:
    return float(np.sum(grid.weights * values))


def dirichlet_energy(u: Field) -> float:
    """|grad u|^2 integrated over R^4, via the face-difference form."""
    return dirichlet_energy_values(u.grid, u.values)


def dirichlet_energy_values(grid: ReducedGrid, values: np.ndarray) -> float:
    A = grid.stiffness_matrix()
    v = values.ravel()
    return float(v @ (A @ v))


def lp_norm(u: Field, q: float) -> float:
    """L^q norm of the invariant extension; q >= 1."""
    if q < 1:
        raise ValueError(f"exponent must be >= 1, got {q}")
    return float(np.sum(u.grid.weights * np.abs(u.values) ** q) ** (1.0 / q))


def _padded_values(u: Field, width: int = 1) -> np.ndarray:
    """Values padded by `width` layers for interpolation.

    Outer r edges get Dirichlet zeros; the phi axis wraps periodically; the
    inner r edges mirror across the axis using the identity the invariant
    extension satisfies in R^4, u(-r1, r2, phi) = u(r1, r2, phi + pi).  The
    mirror needs an even number of phi cells and otherwise falls back to
    plain zero padding (the affected region has vanishing measure weight).
    """
    g = u.grid
    w = width
    v = np.pad(u.values, ((w, w), (w, w), (0, 0)), mode="constant")
    if g.n_phi % 2 == 0:
        half = g.n_phi // 2
        for k in range(1, w + 1):
            v[w - k, :, :] = np.roll(v[w + k - 1, :, :], half, axis=-1)
            v[:, w - k, :] = np.roll(v[:, w + k - 1, :], half, axis=-1)
    return np.pad(v, ((0, 0), (0, 0), (w, w)), mode="wrap")


def interpolate_many(u: Field, r1, r2, phi) -> np.ndarray:
    """Trilinear interpolation of u at arrays of orbit points.

    Exact on trilinear functions of (r1, r2, phi); points outside the ball
    return 0, the Dirichlet extension.
    """
    g = u.grid
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    phi = np.asarray(phi, dtype=float)
    v = _padded_values(u)

    # fractional index in the padded array; node i sits at (i + 0.5)*dr
    x = r1 / g.dr1 + 0.5
    y = r2 / g.dr2 + 0.5
    z = np.mod(phi, TWO_PI) / g.dphi + 0.5

    x = np.clip(x, 0.0, g.n_r1 + 1.0 - 1e-12)
    y = np.clip(y, 0.0, g.n_r2 + 1.0 - 1e-12)
    ix = np.minimum(x.astype(int), g.n_r1)
    iy = np.minimum(y.astype(int), g.n_r2)
    iz = np.minimum(z.astype(int), g.n_phi)
    fx = x - ix
    fy = y - iy
    fz = z - iz

    def take(a, b, c):
        return v[a, b, c]

    out = (
        take(ix, iy, iz) * (1 - fx) * (1 - fy) * (1 - fz)
        + take(ix + 1, iy, iz) * fx * (1 - fy) * (1 - fz)
        + take(ix, iy + 1, iz) * (1 - fx) * fy * (1 - fz)
        + take(ix, iy, iz + 1) * (1 - fx) * (1 - fy) * fz
        + take(ix + 1, iy + 1, iz) * fx * fy * (1 - fz)
        + take(ix + 1, iy, iz + 1) * fx * (1 - fy) * fz
        + take(ix, iy + 1, iz + 1) * (1 - fx) * fy * fz
        + take(ix + 1, iy + 1, iz + 1) * fx * fy * fz
    )
    outside = r1 * r1 + r2 * r2 > g.radius**2
    return np.where(outside, 0.0, out)


def interpolate(u: Field, p) -> float:
    """Value of the Dirichlet extension of u at a single orbit point."""
    return float(interpolate_many(u, p.r1, p.r2, p.phi))


def compose_rho(u: Field, m: OrbitMap) -> Field:
    """The pullback u o rho_ell^j, sampled back onto the grid.

    For the identity map this is exact; in general it costs one trilinear
    interpolation.  For ell = 2 on a square grid with an even number of phi
    cells the mapped nodes land on nodes and the composition is exact up to
    rounding.
    """
    g = u.grid
    if m.is_identity:
        return u.copy()
    r1 = np.broadcast_to(g.r1[:, None, None], g.shape)
    r2 = np.broadcast_to(g.r2[None, :, None], g.shape)
    phi = np.broadcast_to(g.phi[None, None, :], g.shape)
    q1, q2, qphi = rho_orbit_arrays(r1.ravel(), r2.ravel(), phi.ravel(), m)
    vals = interpolate_many(u, q1, q2, qphi).reshape(g.shape)
    return Field(g, vals)


def dilate(u: Field, epsilon: float, order: int = 3) -> Field:
    """Rescale u(x) -> eps^((N-2)/2) u(eps x) on the grid (N = 4).

    Cubic spline resampling of the radial coordinates; phi is untouched
    because dilations fix it.  Mass beyond radius R/eps maps outside the
    truncation ball and is dropped, mirroring the Dirichlet setting.
    """
    from scipy.ndimage import map_coordinates

    g = u.grid
    if epsilon == 1.0:
        return u.copy()
    w = 2
    v = _padded_values(u, width=w)
    r1 = np.broadcast_to(g.r1[:, None, None] * epsilon, g.shape)
    r2 = np.broadcast_to(g.r2[None, :, None] * epsilon, g.shape)
    ix = r1 / g.dr1 - 0.5 + w
    iy = r2 / g.dr2 - 0.5 + w
    iz = np.broadcast_to((np.arange(g.n_phi) + float(w))[None, None, :], g.shape)
    coords = np.stack([ix.ravel(), iy.ravel(), iz.ravel()])
    vals = map_coordinates(v, coords, order=order, mode="constant", cval=0.0)
    vals = vals.reshape(g.shape) * epsilon
    outside = (r1 * r1 + r2 * r2) > g.radius**2
    vals = np.where(outside, 0.0, vals)
    return Field(g, vals)


def lift_to_full(u: Field, n_per_axis: int, extent: float, max_nodes: int = 2**25) -> np.ndarray:
    """Sample the invariant extension on a Cartesian 4-D grid.

    Cell-centered nodes on [-extent, extent]^4; mostly a test oracle and a
    visualization export.  Raises ResolutionBudgetError when n^4 exceeds
    max_nodes.
    """
    total = n_per_axis**4
    if total > max_nodes:
        raise ResolutionBudgetError(
            f"4-D grid with {total} nodes exceeds the budget of {max_nodes}"
        )
    h = 2.0 * extent / n_per_axis
    ax = -extent + (np.arange(n_per_axis) + 0.5) * h
    out = np.empty((n_per_axis,) * 4)
    x2 = ax[:, None, None]
    x3 = ax[None, :, None]
    x4 = ax[None, None, :]
    r2 = np.sqrt(x3 * x3 + x4 * x4)
    theta2 = np.arctan2(x4, x3)
    for i, x1 in enumerate(ax):
        r1 = np.sqrt(x1 * x1 + x2 * x2)
        theta1 = np.arctan2(x2, x1)
        phi = theta1 + theta2
        out[i] = interpolate_many(u, np.broadcast_to(r1, r2.shape), r2, phi)
    return out


def riemann_sum_full(values4d: np.ndarray, extent: float) -> float:
    """Plain midpoint Riemann sum on the 4-D oracle grid."""
    n = values4d.shape[0]
    h = 2.0 * extent / n
    return float(np.sum(values4d) * h**4)
