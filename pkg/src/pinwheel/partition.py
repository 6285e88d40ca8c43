"""Partition extraction and nodal diagnostics for converged states.

A strongly segregated state induces a labeling of the grid: a cell belongs
to region i when u_i is the strict pointwise maximum and exceeds a relative
threshold.  Unlabeled interior cells are split into interface cells (two
adjacent regions reach them with matching one-sided gradient magnitudes)
and residual cells where every gradient is below a floor, the discrete
surrogates of the regular and singular parts of the common boundary.  All
thresholds are explicit arguments with recorded defaults; the underlying
statements are about exact limits and the bands are chosen wide enough to
be resolution-stable.

The nodal construction takes the alternating sum of the components.  For
two components it must anticommute with the cyclic map; for more the
alternating sum is produced and measured but never asserted to solve
anything (that is an open question and is surfaced as such in reports).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .energy import PinwheelState, SolverConfig
from .grid import Field, compose_rho, interpolate_many
from .solver import MinimizeResult, minimize
from .symmetry import OrbitMap, rho_orbit_arrays

__all__ = [
    "DegeneratePartitionError",
    "Partition",
    "CellSolve",
    "OptimalityReport",
    "NodalResult",
    "DistinctnessVerdict",
    "extract_partition",
    "classify_interface",
    "solve_dirichlet_cell",
    "optimality_report",
    "nodal_build",
    "distinctness_check",
    "count_sign_domains",
]


class DegeneratePartitionError(RuntimeError):
    """Some label class is empty: the state is not segregated yet."""


@dataclass(eq=False)
class Partition:
    """Per-cell labels with interface/residual classification.

    labels: 0 = unassigned, 1..ell = region index, at interior nodes only.
    interface/singular: boolean masks over cells; together with the labeled
    cells they cover the interior and are pairwise disjoint once
    classify_interface has run.
    """

    labels: np.ndarray
    ell: int
    eta: float
    grad_max: np.ndarray
    interface: np.ndarray
    singular: np.ndarray
    sym_diff: dict
    unassigned_fraction: float
    match_ratios: np.ndarray | None = None
    matched: np.ndarray | None = None

    def region_mask(self, i: int) -> np.ndarray:
        return self.labels == i


def _gradient_magnitude(field_values: np.ndarray, grid) -> np.ndarray:
    """Central-difference |grad u| with the invariant metric factor."""
    v = field_values
    g1 = np.gradient(v, grid.dr1, axis=0)
    g2 = np.gradient(v, grid.dr2, axis=1)
    vp = np.concatenate([v[:, :, -1:], v, v[:, :, :1]], axis=2)
    gphi = (vp[:, :, 2:] - vp[:, :, :-2]) / (2 * grid.dphi)
    metric = 1.0 / grid.r1[:, None, None] ** 2 + 1.0 / grid.r2[None, :, None] ** 2
    return np.sqrt(g1 * g1 + g2 * g2 + metric * gphi * gphi)


def _nearest_node_labels(labels: np.ndarray, grid, m: OrbitMap) -> np.ndarray:
    """labels sampled at the image of every node under the cyclic map."""
    r1 = np.broadcast_to(grid.r1[:, None, None], grid.shape).ravel()
    r2 = np.broadcast_to(grid.r2[None, :, None], grid.shape).ravel()
    phi = np.broadcast_to(grid.phi[None, None, :], grid.shape).ravel()
    q1, q2, qphi = rho_orbit_arrays(r1, r2, phi, m)
    i1 = np.clip(np.round(q1 / grid.dr1 - 0.5).astype(int), 0, grid.n_r1 - 1)
    i2 = np.clip(np.round(q2 / grid.dr2 - 0.5).astype(int), 0, grid.n_r2 - 1)
    i3 = np.mod(np.round(qphi / grid.dphi - 0.5).astype(int), grid.n_phi)
    return labels[i1, i2, i3].reshape(grid.shape)


def extract_partition(state: PinwheelState, eta: float = 1e-3) -> Partition:
    """Label cells by the strict argmax component above eta * global max.

    Raises DegeneratePartitionError when some label class comes out empty;
    the cyclic compatibility of the labeling (region i maps onto region
    i-1 under the cyclic map) is measured and recorded per label as a
    weighted symmetric-difference fraction.
    """
    grid = state.grid
    vals = state.values
    ell = state.ell
    vmax = float(np.max(np.abs(vals)))
    if vmax == 0.0:
        raise DegeneratePartitionError("zero state has no partition")
    threshold = eta * vmax

    order = np.argsort(vals, axis=0)
    top = np.take_along_axis(vals, order[-1:], axis=0)[0]
    second = np.take_along_axis(vals, order[-2:-1], axis=0)[0] if ell > 1 else np.full(grid.shape, -np.inf)
    argmax = order[-1]
    labeled = (top > threshold) & (top > second) & grid.mask3d()
    labels = np.where(labeled, argmax + 1, 0).astype(np.int8)

    counts = [int(np.sum(labels == i)) for i in range(1, ell + 1)]
    if any(c == 0 for c in counts):
        raise DegeneratePartitionError(f"empty label classes (counts {counts}); state not segregated")

    grad = np.max(np.stack([_gradient_magnitude(vals[i], grid) for i in range(ell)]), axis=0)

    w3 = grid.weights
    inside = grid.mask3d()
    unassigned = float(np.sum(w3[(labels == 0) & inside]) / np.sum(w3[inside]))

    sym_diff = {}
    if ell > 1:
        mapped = _nearest_node_labels(labels, grid, OrbitMap(ell, 1))
        for i in range(1, ell + 1):
            target = (i - 2) % ell + 1  # the cyclic map sends region i onto region i-1
            here = labels == i
            there = mapped == target
            mismatch = float(np.sum(w3[here & ~there]) + np.sum(w3[~here & there & inside]))
            sym_diff[i] = mismatch / max(float(np.sum(w3[labels == target])), 1e-300)

    return Partition(
        labels=labels,
        ell=ell,
        eta=eta,
        grad_max=grad,
        interface=np.zeros(grid.shape, dtype=bool),
        singular=np.zeros(grid.shape, dtype=bool),
        sym_diff=sym_diff,
        unassigned_fraction=unassigned,
    )


def _one_sided_gradients(state: PinwheelState, labels: np.ndarray):
    """Per component, max difference quotient into adjacent labeled cells.

    Mirrors one-sided limits toward the boundary: at an unlabeled cell the
    gradient of component i is estimated only from neighbors carrying label
    i, with the metric factor applied in the angular direction.
    """
    grid = state.grid
    ell = state.ell
    metric = np.sqrt(1.0 / grid.r1[:, None, None] ** 2 + 1.0 / grid.r2[None, :, None] ** 2)
    out = np.zeros((ell,) + grid.shape)

    shifts = [
        (0, 1, 1.0 / grid.dr1, None),
        (0, -1, 1.0 / grid.dr1, None),
        (1, 1, 1.0 / grid.dr2, None),
        (1, -1, 1.0 / grid.dr2, None),
        (2, 1, 1.0 / grid.dphi, metric),
        (2, -1, 1.0 / grid.dphi, metric),
    ]
    for axis, step, inv_h, extra in shifts:
        nb_labels = np.roll(labels, -step, axis=axis)
        valid = np.ones(grid.shape, dtype=bool)
        if axis != 2:  # no wrap across the radial edges
            sl = [slice(None)] * 3
            sl[axis] = slice(-1, None) if step > 0 else slice(0, 1)
            valid[tuple(sl)] = False
        for i in range(ell):
            nb_vals = np.roll(state.values[i], -step, axis=axis)
            quot = np.abs(nb_vals - state.values[i]) * inv_h
            if extra is not None:
                quot = quot * extra
            take = valid & (nb_labels == i + 1)
            out[i] = np.where(take, np.maximum(out[i], quot), out[i])
    return out


def classify_interface(
    state: PinwheelState,
    part: Partition,
    match_band: float = 0.20,
    floor_frac: float = 1e-2,
) -> Partition:
    """Split unlabeled interior cells into interface and residual sets.

    Interface: at least one adjacent region reaches the cell with a
    one-sided gradient above the floor; the matching statistic (ratio of
    the two largest one-sided gradients) is recorded per interface cell,
    and cells whose top two match within the band carry the regular-part
    signature.  Residual: every one-sided gradient is below the floor
    (floor_frac times the global maximum gradient).  Together with the
    labeled cells the two sets cover the interior disjointly.
    """
    grid = state.grid
    one_sided = _one_sided_gradients(state, part.labels)
    floor = floor_frac * float(np.max(part.grad_max))
    unlabeled = (part.labels == 0) & grid.mask3d()

    top = np.sort(one_sided, axis=0)
    strongest = top[-1]
    second = top[-2] if state.ell > 1 else np.zeros(grid.shape)

    singular = unlabeled & (strongest < floor)
    interface = unlabeled & ~singular
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(strongest > 0, second / strongest, 0.0)
    match_ratios = np.where(interface & (second >= floor), ratios, np.nan)

    matched = interface & (second >= floor) & (ratios >= 1.0 - match_band)
    return Partition(
        labels=part.labels,
        ell=part.ell,
        eta=part.eta,
        grad_max=part.grad_max,
        interface=interface,
        singular=singular,
        sym_diff=part.sym_diff,
        unassigned_fraction=part.unassigned_fraction,
        match_ratios=match_ratios,
        matched=matched,
    )


@dataclass
class CellSolve:
    label: int
    cell_energy: float
    component_energy: float
    rel_gap: float
    result: MinimizeResult


def solve_dirichlet_cell(
    state: PinwheelState, part: Partition, i: int, cfg: SolverConfig
) -> CellSolve:
    """Re-solve the single critical equation on region i alone.

    Warm-started from the system component restricted to the region, with
    zero Dirichlet data outside; returns the cell energy kinetic/N at
    convergence next to the system component's kinetic/N.
    """
    mask = part.region_mask(i)
    if not np.any(mask):
        raise DegeneratePartitionError(f"label class {i} is empty")
    grid = state.grid
    comp = np.where(mask, state.values[i - 1], 0.0)
    cell_state = PinwheelState(grid, comp[None], beta=0.0)
    cfg_cell = replace(
        cfg, ell=1, beta=0.0, reproject_every=0, gauge_every=0,
        max_iters=max(cfg.max_iters, 300),
    )
    result = minimize(cell_state, cfg_cell, support_mask=mask)
    cell_energy = result.breakdown.kinetic / cfg.dim
    A = grid.stiffness_matrix()
    v = state.values[i - 1].ravel()
    component_energy = float(v @ (A @ v)) / cfg.dim
    rel = abs(cell_energy - component_energy) / max(component_energy, 1e-300)
    return CellSolve(i, cell_energy, component_energy, rel, result)


@dataclass
class OptimalityReport:
    sum_cell_energy: float
    c_ell_infinity_estimate: float
    competitor_bound: float
    cell_energies: tuple
    optimality_gap: float        # |sum - limit| / limit
    cell_spread: float           # max relative deviation across cells
    consistent: bool


def optimality_report(trace, cells: list, tol: float = 0.05) -> OptimalityReport:
    """Tabulate the energy chain sum(cells) ~ limit <= competitor bound.

    The limit candidate is the last converged level of the sweep; the
    competitor bound is the energy of the disjointly supported tuple the
    sweep was seeded with.  consistent is the verdict of the tol band on
    |sum(cells) - limit| and of the one-sided competitor inequality.
    """
    if not trace.entries:
        raise ValueError("empty trace")
    limit = trace.entries[-1].j_value
    energies = tuple(c.cell_energy for c in cells)
    total = float(sum(energies))
    gap = abs(total - limit) / abs(limit)
    mean = total / len(energies)
    spread = max(abs(e - mean) / mean for e in energies)
    consistent = gap <= tol and limit <= trace.c_inf_estimate + 1e-3
    return OptimalityReport(
        sum_cell_energy=total,
        c_ell_infinity_estimate=limit,
        competitor_bound=trace.c_inf_estimate,
        cell_energies=energies,
        optimality_gap=gap,
        cell_spread=spread,
        consistent=consistent,
    )


@dataclass
class NodalResult:
    field: Field
    antisymmetry_defect: float
    pde_residual: float
    pde_residual_rel: float
    n_sign_domains: int
    asserted: bool
    flags: list


def count_sign_domains(field: Field, rel_threshold: float = 1e-3) -> int:
    """Connected components of {w > t} union {w < -t} on the grid graph.

    Adjacency is the 6-neighborhood with periodic wrap in phi; evidence for
    the open nodal-domain count question, not a proof of anything.
    """
    grid = field.grid
    vmax = float(np.max(np.abs(field.values)))
    if vmax == 0.0:
        return 0
    t = rel_threshold * vmax
    total = 0
    for sign in (1.0, -1.0):
        mask = (sign * field.values) > t
        idx = -np.ones(grid.shape, dtype=np.int64)
        sel = np.flatnonzero(mask.ravel())
        if sel.size == 0:
            continue
        idx.ravel()[sel] = np.arange(sel.size)
        rows, cols = [], []
        for axis in range(3):
            a = idx
            b = np.roll(idx, -1, axis=axis)
            pair_ok = (a >= 0) & (b >= 0)
            if axis != 2:
                sl = [slice(None)] * 3
                sl[axis] = slice(-1, None)
                pair_ok[tuple(sl)] = False
            rows.append(a[pair_ok])
            cols.append(b[pair_ok])
        if rows:
            r = np.concatenate(rows)
            c = np.concatenate(cols)
            graph = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(sel.size, sel.size))
        else:
            graph = sp.coo_matrix((sel.size, sel.size))
        n, _ = connected_components(graph, directed=False)
        total += n
    return total


def nodal_build(state: PinwheelState, cfg: SolverConfig) -> NodalResult:
    """Alternating sum w = sum_i (-1)^(i+1) u_i with its diagnostics.

    For ell = 2 the sum must anticommute with the cyclic map (asserted via
    the returned defect); for even ell > 2 the same diagnostics are
    reported without assertion, and odd ell > 1 triggers a parity warning
    since the alternating sum cannot be antisymmetric then.
    """
    grid = state.grid
    signs = np.array([(-1.0) ** i for i in range(state.ell)])
    vals = np.tensordot(signs, state.values, axes=(0, 0))
    w = Field(grid, vals)
    flags = []
    if state.ell % 2 == 1 and state.ell > 1:
        warnings.warn(f"alternating sum with odd ell = {state.ell} cannot be antisymmetric", stacklevel=2)
        flags.append("parity")
    if state.ell > 2:
        flags.append("open_question")

    if state.ell == 1:
        defect = 0.0
    else:
        pulled = compose_rho(w, OrbitMap(state.ell, 1))
        num = float(np.sum(grid.weights * (pulled.values + w.values) ** 2))
        den = float(np.sum(grid.weights * w.values**2))
        defect = math.sqrt(num / den) if den > 0 else 0.0

    A = grid.stiffness_matrix()
    flat = vals.ravel()
    g = (A @ flat).reshape(grid.shape) - grid.weights * vals**3
    h = grid.solve_poisson(g, tol=cfg.poisson_tol)
    res = math.sqrt(max(float(np.sum(g * h)), 0.0))
    kinetic = float(flat @ (A @ flat))
    res_rel = res / math.sqrt(max(kinetic, 1e-300))
    n_domains = count_sign_domains(w)
    return NodalResult(
        field=w,
        antisymmetry_defect=defect,
        pde_residual=res,
        pde_residual_rel=res_rel,
        n_sign_domains=n_domains,
        asserted=(state.ell == 2),
        flags=flags,
    )


@dataclass
class DistinctnessVerdict:
    verdict: str
    witness_fraction: float
    n_samples: int


def distinctness_check(
    w_l: Field,
    w_m: Field,
    l: int,
    m: int,
    amplitude_frac: float = 0.2,
    agree_tol: float = 0.1,
    max_samples: int = 4000,
) -> DistinctnessVerdict:
    """Witness that an l-antisymmetric field cannot be m-antisymmetric.

    With l = n*m and n even, the l-fold map composed n times is the m-fold
    map, so an l-antisymmetric field returns to +itself there while an
    m-antisymmetric one must flip sign.  At sampled high-amplitude points
    the check confirms w_l(rho_m x) = +w_l(x) within agree_tol; the verdict
    is "distinct" when at least 90% of the samples witness the conflict and
    "inconclusive" otherwise (in particular for near-zero fields).
    """
    if l % m != 0:
        raise ValueError(f"l = {l} is not a multiple of m = {m}")
    n = l // m
    if n % 2 != 0:
        raise ValueError(f"l/m = {n} must be even for the sign obstruction")
    vmax_l = float(np.max(np.abs(w_l.values)))
    vmax_m = float(np.max(np.abs(w_m.values)))
    if vmax_l == 0.0 or vmax_m == 0.0:
        return DistinctnessVerdict("inconclusive", 0.0, 0)

    grid = w_l.grid
    big = np.abs(w_l.values) >= amplitude_frac * vmax_l
    sel = np.flatnonzero(big.ravel())
    if sel.size == 0:
        return DistinctnessVerdict("inconclusive", 0.0, 0)
    if sel.size > max_samples:
        sel = sel[np.linspace(0, sel.size - 1, max_samples).astype(int)]

    r1 = np.broadcast_to(grid.r1[:, None, None], grid.shape).ravel()[sel]
    r2 = np.broadcast_to(grid.r2[None, :, None], grid.shape).ravel()[sel]
    phi = np.broadcast_to(grid.phi[None, None, :], grid.shape).ravel()[sel]
    q1, q2, qphi = rho_orbit_arrays(r1, r2, phi, OrbitMap(m, 1))
    mapped = interpolate_many(w_l, q1, q2, qphi)
    here = w_l.values.ravel()[sel]
    witnessed = np.abs(mapped - here) <= agree_tol * np.abs(here)
    frac = float(np.mean(witnessed))
    verdict = "distinct" if frac >= 0.9 else "inconclusive"
    return DistinctnessVerdict(verdict, frac, int(sel.size))
