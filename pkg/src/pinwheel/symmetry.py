"""Orbit-space geometry for the circle action on R^4 and the pinwheel maps.

The circle group acts on R^4 = C x C by g.(z1, z2) = (g z1, conj(g) z2).
The triple (r1, r2, phi) = (|z1|, |z2|, arg z1 + arg z2) separates orbits,
so invariant functions live on the reduced space [0,oo)^2 x [0, 2pi).
With tau(z1, z2) = (-conj(z2), conj(z1)), the cyclic isometries

    rho_ell^j z = cos(pi j/ell) z + sin(pi j/ell) tau z

commute with the circle action and therefore descend to the reduced
coordinates.  Expanding z1' = c z1 - s conj(z2), z2' = c z2 + s conj(z1)
with c = cos(pi j/ell), s = sin(pi j/ell) gives the descended map

    r1'^2 = c^2 r1^2 + s^2 r2^2 - 2 c s r1 r2 cos(phi)
    r2'^2 = s^2 r1^2 + c^2 r2^2 + 2 c s r1 r2 cos(phi)
    r1' r2' e^{i phi'} = c s (r1^2 - r2^2) + r1 r2 (c^2 e^{i phi} - s^2 e^{-i phi})

rho_ell has order 2*ell as a matrix, but -id acts trivially on the reduced
coordinates, so the descended action has order ell.  The index j is kept
mod 2*ell anyway because the sign (-1)^j is what distinguishes a map from
its composition with -id, which is exactly what the nodal antisymmetry
checks need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(phi):
    """Wrap an angle (scalar or array) into [0, 2*pi)."""
    return np.mod(phi, TWO_PI)


@dataclass(frozen=True)
class OrbitPoint:
    """A point of the reduced (orbit) space of the circle action.

    r1, r2 are the moduli of the two complex coordinates; phi is the sum of
    their arguments, wrapped into [0, 2pi).  phi is carried but carries no
    information on the degenerate locus r1*r2 = 0, where it is normalized
    to 0.
    """

    r1: float
    r2: float
    phi: float

    def __post_init__(self):
        if self.r1 < 0 or self.r2 < 0:
            raise ValueError(f"radii must be nonnegative, got ({self.r1}, {self.r2})")
        phi = float(wrap_angle(self.phi)) if self.r1 * self.r2 != 0.0 else 0.0
        object.__setattr__(self, "r1", float(self.r1))
        object.__setattr__(self, "r2", float(self.r2))
        object.__setattr__(self, "phi", phi)

    def as_tuple(self):
        return (self.r1, self.r2, self.phi)


@dataclass(frozen=True)
class OrbitMap:
    """The descended isometry rho_ell^j on orbit coordinates.

    j is stored mod 2*ell; sign() returns (-1)^j, the value of the sign
    homomorphism that the nodal construction alternates with.
    """

    ell: int
    j: int
    cos_term: float = field(init=False)
    sin_term: float = field(init=False)

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError(f"ell must be >= 1, got {self.ell}")
        j = int(self.j) % (2 * self.ell)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "cos_term", math.cos(math.pi * j / self.ell))
        object.__setattr__(self, "sin_term", math.sin(math.pi * j / self.ell))

    def compose(self, other: "OrbitMap") -> "OrbitMap":
        if other.ell != self.ell:
            raise ValueError("cannot compose maps with different ell")
        return OrbitMap(self.ell, self.j + other.j)

    def inverse(self) -> "OrbitMap":
        return OrbitMap(self.ell, -self.j)

    def sign(self) -> int:
        return -1 if self.j % 2 else 1

    @property
    def is_identity(self) -> bool:
        # identity on orbit coordinates; j = ell is -id upstairs which also
        # acts trivially downstairs
        return self.j % self.ell == 0


@dataclass(frozen=True)
class GaugeTransform:
    """Dilation (and translation along the fixed axis) removing scale drift.

    For the four-dimensional case the translation xi is identically zero; it
    is kept so the record format does not change in higher dimensions.
    """

    epsilon: float
    xi: tuple = ()

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if any(x != 0 for x in self.xi):
            raise ValueError("xi must vanish in dimension four")

    @property
    def is_identity(self) -> bool:
        return self.epsilon == 1.0


def rho_orbit_arrays(r1, r2, phi, m: OrbitMap):
    """Vectorized descended map: arrays (r1, r2, phi) -> image arrays.

    Total on [0,oo)^2 x R; preserves r1^2 + r2^2.  On the degenerate locus
    (image radii product exactly zero) the output phi is 0 by convention.
    """
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    phi = np.asarray(phi, dtype=float)
    c, s = m.cos_term, m.sin_term
    cs = c * s
    cosphi = np.cos(phi)
    cross = 2.0 * cs * r1 * r2 * cosphi
    r1sq = r1 * r1
    r2sq = r2 * r2
    r1p = np.sqrt(np.maximum(c * c * r1sq + s * s * r2sq - cross, 0.0))
    r2p = np.sqrt(np.maximum(s * s * r1sq + c * c * r2sq + cross, 0.0))
    w = cs * (r1sq - r2sq) + r1 * r2 * (c * c * np.exp(1j * phi) - s * s * np.exp(-1j * phi))
    phip = np.where(r1p * r2p == 0.0, 0.0, wrap_angle(np.angle(w)))
    return r1p, r2p, phip


def rho_orbit(p: OrbitPoint, m: OrbitMap) -> OrbitPoint:
    """Apply the descended isometry rho_ell^j to an orbit point."""
    r1p, r2p, phip = rho_orbit_arrays(p.r1, p.r2, p.phi, m)
    return OrbitPoint(float(r1p), float(r2p), float(phip))


def sigma_index(i: int, j: int, ell: int) -> int:
    """Cyclic shift of 1-based component indices: i -> i + j (mod ell)."""
    return (i + j - 1) % ell + 1


def rho_fixed_locus(ell: int):
    """The two curves of orbit points fixed by every rho_ell^j, ell >= 2.

    Both are of the form {r1 = r2 = t, phi = const}: one at phi = pi/2 and
    one at phi = 3*pi/2.  Returns two callables t -> OrbitPoint, t > 0.
    """
    if ell < 2:
        raise ValueError(f"fixed locus is defined for ell >= 2, got {ell}")

    def upper(t: float) -> OrbitPoint:
        return OrbitPoint(t, t, math.pi / 2)

    def lower(t: float) -> OrbitPoint:
        return OrbitPoint(t, t, 3 * math.pi / 2)

    return upper, lower


# --- direct evaluation in C^2, kept as the independent oracle -----------

def tau_c2(z1, z2):
    """tau(z1, z2) = (-conj(z2), conj(z1)); orthogonal to z, same norm."""
    return -np.conj(z2), np.conj(z1)


def rho_c2(z1, z2, ell: int, j: int):
    """rho_ell^j acting directly on C^2."""
    c = np.cos(np.pi * j / ell)
    s = np.sin(np.pi * j / ell)
    t1, t2 = tau_c2(z1, z2)
    return c * z1 + s * t1, c * z2 + s * t2


def orbit_coords(z1, z2):
    """Reduce a C^2 point (or arrays) to orbit coordinates (r1, r2, phi)."""
    z1 = np.asarray(z1)
    z2 = np.asarray(z2)
    r1 = np.abs(z1)
    r2 = np.abs(z2)
    phi = np.where(r1 * r2 == 0.0, 0.0, wrap_angle(np.angle(z1) + np.angle(z2)))
    return r1, r2, phi


def orbit_distance(r1, r2, phi, q: OrbitPoint):
    """Ambient R^4 distance between circle orbits.

    For p = (z1, z2) and q = (w1, w2), min_g |p - g.q| is attained in closed
    form: |p|^2 + |q|^2 - 2*|z1 conj(w1) + conj(z2) w2|, and the modulus in
    the last term depends only on orbit coordinates:

        |z1 conj(w1) + conj(z2 conj(w2))|^2
            = r1^2 q1^2 + r2^2 q2^2 + 2 r1 r2 q1 q2 cos(phi - psi).
    """
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    phi = np.asarray(phi, dtype=float)
    q1, q2, psi = q.r1, q.r2, q.phi
    inner_sq = (r1 * q1) ** 2 + (r2 * q2) ** 2 + 2 * r1 * r2 * q1 * q2 * np.cos(phi - psi)
    d_sq = r1 * r1 + r2 * r2 + q1 * q1 + q2 * q2 - 2.0 * np.sqrt(np.maximum(inner_sq, 0.0))
    return np.sqrt(np.maximum(d_sq, 0.0))
