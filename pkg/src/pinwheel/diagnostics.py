"""Invariant suites and independent oracles, runnable as a battery.

The oracles here deliberately avoid the reduced-grid machinery: symmetry
maps are cross-checked by acting directly on C^2 points; quadrature and
energies are cross-checked against plain Riemann sums on a Cartesian 4-D
grid using closed-form test fields whose ambient gradients are written out
analytically.  Smooth circle-invariant test functions are generated as

    f = P(rho1, rho2, a, b) * exp(-(rho1 + rho2)/sigma^2),

with rho1 = |z1|^2, rho2 = |z2|^2, a + i b = z1 z2: polynomials in the
basic invariants are exactly the functions that are simultaneously smooth
on R^4 and expressible on the orbit grid, so both sides sample the same
object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .energy import (
    PinwheelState,
    SolverConfig,
    bubble,
    energy,
    gradient,
    nehari_scale,
    sobolev_constant,
    state_from_first_component,
)
from .grid import Field, ReducedGrid, dirichlet_energy, field_from_function, integrate, lp_norm
from .symmetry import OrbitMap, orbit_coords, rho_c2, rho_orbit_arrays, wrap_angle


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@dataclass
class SmoothInvariantField:
    """Closed-form invariant test field with analytic ambient gradient."""

    coeffs: np.ndarray  # c0, c1*rho1, c2*rho2, c3*a, c4*b, c5*rho1*rho2, c6*a*b
    sigma: float

    def _parts(self, rho1, rho2, a, b):
        c = self.coeffs
        P = c[0] + c[1] * rho1 + c[2] * rho2 + c[3] * a + c[4] * b + c[5] * rho1 * rho2 + c[6] * a * b
        E = np.exp(-(rho1 + rho2) / self.sigma**2)
        return P, E

    def orbit_values(self, r1, r2, phi):
        rho1 = r1 * r1
        rho2 = r2 * r2
        a = r1 * r2 * np.cos(phi)
        b = r1 * r2 * np.sin(phi)
        P, E = self._parts(rho1, rho2, a, b)
        return P * E

    def values4d(self, x1, x2, x3, x4):
        rho1 = x1 * x1 + x2 * x2
        rho2 = x3 * x3 + x4 * x4
        a = x1 * x3 - x2 * x4
        b = x1 * x4 + x2 * x3
        P, E = self._parts(rho1, rho2, a, b)
        return P * E

    def grad_sq_4d(self, x1, x2, x3, x4):
        """|grad f|^2 from the chain rule through the invariants."""
        c = self.coeffs
        rho1 = x1 * x1 + x2 * x2
        rho2 = x3 * x3 + x4 * x4
        a = x1 * x3 - x2 * x4
        b = x1 * x4 + x2 * x3
        P, E = self._parts(rho1, rho2, a, b)
        s2 = self.sigma**2
        f_rho1 = (c[1] + c[5] * rho2 - P / s2) * E
        f_rho2 = (c[2] + c[5] * rho1 - P / s2) * E
        f_a = (c[3] + c[6] * b) * E
        f_b = (c[4] + c[6] * a) * E
        g1 = f_rho1 * 2 * x1 + f_a * x3 + f_b * x4
        g2 = f_rho1 * 2 * x2 - f_a * x4 + f_b * x3
        g3 = f_rho2 * 2 * x3 + f_a * x1 + f_b * x2
        g4 = f_rho2 * 2 * x4 - f_a * x2 + f_b * x1
        return g1 * g1 + g2 * g2 + g3 * g3 + g4 * g4

    def field(self, grid: ReducedGrid) -> Field:
        return field_from_function(grid, self.orbit_values)


def random_invariant_field(rng: np.random.Generator, sigma: float = 5.2) -> SmoothInvariantField:
    """Random member of the family, calibrated so the grid resolves it.

    The constant term dominates enough to keep integrals bounded away from
    zero (relative comparisons stay meaningful), and the quartic-invariant
    terms are damped so features stay a couple of cells wide at the default
    resolution.
    """
    n = rng.normal(size=7)
    c = np.array(
        [
            1.5 + 0.3 * n[0],
            0.4 * n[1] / sigma**2,
            0.4 * n[2] / sigma**2,
            0.6 * n[3] / sigma**2,
            0.6 * n[4] / sigma**2,
            0.25 * n[5] / sigma**4,
            0.25 * n[6] / sigma**4,
        ]
    )
    return SmoothInvariantField(c, sigma)


def oracle_sums_4d(f: SmoothInvariantField, n: int = 64, extent: float = 20.0):
    """Riemann sums of f, |f|^4 and |grad f|^2 on a Cartesian 4-D grid.

    Midpoint sums of smooth rapidly decaying integrands converge spectrally,
    so at these sizes the only error left is the domain truncation.
    """
    h = 2.0 * extent / n
    ax = -extent + (np.arange(n) + 0.5) * h
    s_int = s_four = s_grad = 0.0
    x2 = ax[:, None, None]
    x3 = ax[None, :, None]
    x4 = ax[None, None, :]
    for x1 in ax:
        vals = f.values4d(x1, x2, x3, x4)
        s_int += float(np.sum(vals))
        s_four += float(np.sum(vals**4))
        s_grad += float(np.sum(f.grad_sq_4d(x1, x2, x3, x4)))
    return s_int * h**4, s_four * h**4, s_grad * h**4


# --- the battery ---------------------------------------------------------

def check_symmetry_suite(n_points: int = 1500, seed: int = 7) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    # direct-action consistency: reduce-then-map equals map-then-reduce
    worst = 0.0
    for _ in range(n_points):
        z1 = rng.normal() + 1j * rng.normal()
        z2 = rng.normal() + 1j * rng.normal()
        ell = int(rng.integers(1, 7))
        j = int(rng.integers(0, 2 * ell))
        ra = orbit_coords(*rho_c2(z1, z2, ell, j))
        m = OrbitMap(ell, j)
        rb = rho_orbit_arrays(*orbit_coords(z1, z2), m)
        err = abs(float(ra[0]) - float(rb[0])) + abs(float(ra[1]) - float(rb[1]))
        if float(ra[0]) * float(ra[1]) > 1e-9:
            d = abs(float(ra[2]) - float(rb[2])) % (2 * math.pi)
            err += min(d, 2 * math.pi - d)
        worst = max(worst, err)
    out.append(CheckResult("symmetry/c2-oracle", worst < 1e-10, f"max deviation {worst:.2e}"))

    # group law and isometry on random orbit points
    worst_law = worst_iso = 0.0
    for _ in range(400):
        r1, r2 = rng.uniform(0, 3, size=2)
        phi = rng.uniform(0, 2 * math.pi)
        ell = int(rng.integers(2, 7))
        a = int(rng.integers(0, 2 * ell))
        b = int(rng.integers(0, 2 * ell))
        q = rho_orbit_arrays(r1, r2, phi, OrbitMap(ell, b))
        q = rho_orbit_arrays(*q, OrbitMap(ell, a))
        qq = rho_orbit_arrays(r1, r2, phi, OrbitMap(ell, a + b))
        worst_law = max(worst_law, abs(float(q[0]) - float(qq[0])) + abs(float(q[1]) - float(qq[1])))
        worst_iso = max(
            worst_iso,
            abs(float(q[0]) ** 2 + float(q[1]) ** 2 - (r1 * r1 + r2 * r2)) / (r1 * r1 + r2 * r2 + 1e-30),
        )
    out.append(CheckResult("symmetry/group-law", worst_law < 1e-12, f"max radius deviation {worst_law:.2e}"))
    out.append(CheckResult("symmetry/isometry", worst_iso < 1e-12, f"max relative deviation {worst_iso:.2e}"))

    # applying the half-turn twice is the identity on orbit coordinates
    r1, r2 = rng.uniform(0.2, 3, size=2)
    phi = rng.uniform(0, 2 * math.pi)
    m = OrbitMap(2, 1)
    q = rho_orbit_arrays(*rho_orbit_arrays(r1, r2, phi, m), m)
    dphi = abs(wrap_angle(float(q[2]) - phi))
    dphi = min(dphi, 2 * math.pi - dphi)
    err = abs(float(q[0]) - r1) + abs(float(q[1]) - r2) + dphi
    out.append(CheckResult("symmetry/involution", err < 1e-12, f"deviation {err:.2e}"))
    return out


def check_quadrature_suite(cfg: SolverConfig, n_fields: int = 20, seed: int = 11) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    grid = cfg.make_grid()
    out = []
    worst = {"integrate": 0.0, "lp4": 0.0, "energy": 0.0}
    for _ in range(n_fields):
        f = random_invariant_field(rng)
        oi, o4, og = oracle_sums_4d(f)
        fld = f.field(grid)
        worst["integrate"] = max(worst["integrate"], abs(integrate(fld) - oi) / abs(oi))
        worst["lp4"] = max(worst["lp4"], abs(lp_norm(fld, 4) - o4**0.25) / abs(o4**0.25))
        worst["energy"] = max(worst["energy"], abs(dirichlet_energy(fld) - og) / abs(og))
    out.append(CheckResult("quadrature/4d-oracle-integrate", worst["integrate"] < 1e-3, f"max rel dev {worst['integrate']:.2e}"))
    out.append(CheckResult("quadrature/4d-oracle-lp-norm", worst["lp4"] < 1e-3, f"max rel dev {worst['lp4']:.2e}"))
    out.append(CheckResult("quadrature/4d-oracle-energy", worst["energy"] < 1e-3, f"max rel dev {worst['energy']:.2e}"))

    vol = integrate(field_from_function(grid, lambda r1, r2, phi: np.ones_like(r1 + r2 + phi)))
    exact = math.pi**2 * grid.radius**4 / 2
    rel = abs(vol - exact) / exact
    out.append(CheckResult("quadrature/ball-volume", rel < 5e-3, f"rel dev {rel:.2e}"))
    return out


def check_gradient_fd(cfg: SolverConfig, n_dirs: int = 5, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    grid = cfg.make_grid()
    base = random_invariant_field(rng, sigma=4.0).field(grid)
    state = state_from_first_component(Field(grid, np.abs(base.values) + 0.05), cfg.ell, cfg.beta)
    g = gradient(state, cfg)
    j0 = energy(state, cfg).j_value
    scale = math.sqrt(float(np.sum(state.values**2)))
    worst = 0.0
    for _ in range(n_dirs):
        v = np.stack([random_invariant_field(rng, sigma=5.0).field(grid).values for _ in range(cfg.ell)])
        vnorm = math.sqrt(float(np.sum(v * v)))
        eps = math.sqrt(np.finfo(float).eps) * (1.0 + scale) / vnorm
        sp = PinwheelState(grid, state.values + eps * v, cfg.beta)
        sm = PinwheelState(grid, state.values - eps * v, cfg.beta)
        fd = (energy(sp, cfg).j_value - energy(sm, cfg).j_value) / (2 * eps)
        an = float(np.sum(g * v))
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-12))
    return CheckResult("energy/gradient-vs-fd", worst < 1e-5, f"max rel dev {worst:.2e} (j0={j0:.4g})")


def check_nehari_idempotence(cfg: SolverConfig, seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    grid = cfg.make_grid()
    base = random_invariant_field(rng, sigma=4.0).field(grid)
    state = state_from_first_component(Field(grid, np.abs(base.values) + 0.02), cfg.ell, -0.5)
    cfg_b = cfg.with_beta(-0.5)
    t1, _ = nehari_scale(state, cfg_b)
    t2, _ = nehari_scale(state.scaled(t1), cfg_b)
    return CheckResult("energy/nehari-idempotence", abs(t2 - 1.0) < 1e-10, f"|t*-1| = {abs(t2 - 1.0):.2e}")


def check_bubble(cfg: SolverConfig) -> CheckResult:
    grid = cfg.make_grid()
    u = bubble(4, 1.0, grid)
    e = dirichlet_energy(u)
    target = sobolev_constant(4) ** 2
    rel = abs(e / 4 - target / 4) / (target / 4)
    return CheckResult("energy/bubble-anchor", rel < 0.02, f"energy/4 = {e / 4:.4f} vs {target / 4:.4f} (rel {rel:.2e})")


def run_verify(cfg: SolverConfig | None = None, quick: bool = False) -> list[CheckResult]:
    """The full invariant battery behind the verify command."""
    cfg = cfg or SolverConfig()
    checks = []
    checks += check_symmetry_suite(n_points=300 if quick else 1500)
    checks += check_quadrature_suite(cfg, n_fields=4 if quick else 20)
    checks.append(check_gradient_fd(cfg, n_dirs=2 if quick else 5))
    checks.append(check_nehari_idempotence(cfg))
    checks.append(check_bubble(cfg))
    return checks
