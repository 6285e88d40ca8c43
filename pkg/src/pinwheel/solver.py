"""Nehari-constrained minimization in the pinwheel subspace.

The iteration is projected gradient descent in the Sobolev metric: the
Euclidean gradient of the discrete functional is run through a Poisson
solve (the Riesz map of the discrete gradient inner product), a backtracking
line search enforces monotone descent, components are clamped nonnegative
(replacing components by their positive parts does not raise the energy of
a minimizer), and every accepted trial is rescaled back onto the Nehari set.

Two periodic maintenance steps control the symmetry and the scale:

* re-projection averages the tuple over the cyclic action, pulling the
  interpolation drift of the cyclic consistency back to zero;
* gauge fixing dilates the state so the half-mass radius of |u_1|^{2p}
  equals a configured target, which removes the dilation degeneracy of the
  critical problem.  Without it, discrete minimizing sequences concentrate
  at grid scale; runs abort with a "concentration" flag if the half-mass
  radius collapses below a few cells regardless.

The continuation driver walks beta from mild to strongly negative values
with warm starts, records segregation diagnostics per stage, and bisects
the beta step whenever the warm start loses Nehari feasibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .energy import (
    EnergyBreakdown,
    NehariInfeasible,
    PinwheelState,
    SolverConfig,
    energy,
    energy_of_scaled,
    equivariance_defect,
    nehari_scale,
    overlap_matrix,
    reproject_pinwheel,
    _raw_gradient,
)
from .grid import Field, ReducedGrid, dilate
from .symmetry import GaugeTransform, OrbitMap, OrbitPoint, orbit_distance, rho_orbit, rho_orbit_arrays

__all__ = [
    "SeedGeometryError",
    "MassThresholdError",
    "MinimizeResult",
    "TraceEntry",
    "ContinuationTrace",
    "init_seed",
    "minimize",
    "gauge_fix",
    "half_mass_radius",
    "concentration_scale",
    "beta_continuation",
    "sup_norm_track",
]


class SeedGeometryError(ValueError):
    """The requested seed support radius forces its cyclic copies to overlap."""


class MassThresholdError(ValueError):
    """The requested concentration mass exceeds the total mass of the field."""


def _mollifier(t: np.ndarray) -> np.ndarray:
    """Smooth bump supported on t < 1, normalized to 1 at t = 0."""
    out = np.zeros_like(t)
    inside = t < 1.0
    ti = t[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ti * ti))
    return out


def init_seed(cfg: SolverConfig) -> PinwheelState:
    """Disjointly supported Nehari-normalized starting tuple.

    The first component is a smooth bump around a configured orbit point;
    the others are its analytic pullbacks under powers of the cyclic map,
    so the cyclic consistency is exact up to sampling.  For ell = 1 the
    bump sits at the origin and no separation constraint applies.
    """
    grid = cfg.make_grid()
    r1 = np.broadcast_to(grid.r1[:, None, None], grid.shape).ravel()
    r2 = np.broadcast_to(grid.r2[None, :, None], grid.shape).ravel()
    phi = np.broadcast_to(grid.phi[None, None, :], grid.shape).ravel()

    if cfg.ell == 1:
        radius = max(cfg.seed_radius, 2.0 * cfg.r_star)
        vals = _mollifier(grid.s_radial / radius)
        vals = np.repeat(vals[:, :, None], grid.n_phi, axis=2)[None]
    else:
        center = OrbitPoint(cfg.seed_r1, cfg.seed_r2, cfg.seed_phi)
        centers = [rho_orbit(center, OrbitMap(cfg.ell, j)) for j in range(cfg.ell)]
        min_sep = min(
            orbit_distance(ca.r1, ca.r2, ca.phi, cb)
            for a, ca in enumerate(centers)
            for cb in centers[a + 1 :]
        )
        if min_sep <= 2.0 * cfg.seed_radius:
            raise SeedGeometryError(
                f"orbit separation {min_sep:.3f} cannot host disjoint bumps of radius {cfg.seed_radius}"
            )
        vals = np.empty((cfg.ell,) + grid.shape)
        for i in range(cfg.ell):
            q1, q2, qphi = rho_orbit_arrays(r1, r2, phi, OrbitMap(cfg.ell, i))
            d = orbit_distance(q1, q2, qphi, center)
            vals[i] = _mollifier(d / cfg.seed_radius).reshape(grid.shape)

    state = PinwheelState(grid, vals, cfg.beta)
    t, _ = nehari_scale(state, cfg)
    return state.scaled(t)


def _scaled_breakdown(bd: EnergyBreakdown, t: float, cfg: SolverConfig) -> EnergyBreakdown:
    two_p = 2 * cfg.p
    kin = (t * t) * bd.kinetic
    self_term = (t**two_p) * bd.self_term
    coupling = (t**two_p) * bd.coupling
    j = 0.5 * kin - (self_term + cfg.beta * coupling) / two_p
    residual = kin - self_term - cfg.beta * coupling
    return EnergyBreakdown(
        kin, self_term, coupling, j, residual, tuple((t * t) * k for k in bd.kinetic_components)
    )


@dataclass
class MinimizeResult:
    state: PinwheelState
    breakdown: EnergyBreakdown
    iterations: int
    converged: bool
    flags: list
    history: list          # rows (kind, iteration, j_value, residual)
    gauge_epsilons: list


def _scale_functional_gradient(state: PinwheelState) -> np.ndarray:
    """Euclidean gradient of the radial second moment of the quartic mass.

    M(u) = (sum w s^2 u^4) / (sum w u^4) is a smooth proxy for the
    concentration scale.  The continuum functional is dilation invariant;
    discretization breaks the flatness with a slope pointing toward
    grid-scale concentration, so descent steps are constrained to the
    level set of M: directions with <M'(u), d> = 0 leave the scale
    unchanged to first order.
    """
    grid = state.grid
    w = grid.weights
    s_sq = (grid.s_radial**2)[:, :, None]
    u3 = state.values**3
    q0 = float(np.sum(w[None] * state.values * u3))
    if q0 <= 0.0:
        return np.zeros_like(state.values)
    q2 = float(np.sum(w[None] * s_sq * state.values * u3))
    return 4.0 * w[None] * u3 * (s_sq - q2 / q0) / q0


def half_mass_radius(u: Field, exponent: float = 4.0) -> float:
    """Radius in s = sqrt(r1^2+r2^2) holding half the mass of |u|^exponent."""
    grid = u.grid
    order, s_sorted = grid.radial_order()
    mass = (grid.weights * np.abs(u.values) ** exponent).ravel()[order]
    total = float(mass.sum())
    if total <= 0.0:
        return 0.0
    cum = np.cumsum(mass)
    idx = int(np.searchsorted(cum, 0.5 * total))
    return float(s_sorted[min(idx, len(s_sorted) - 1)])


def gauge_fix(state: PinwheelState, cfg: SolverConfig):
    """Dilate the state so the half-mass radius of |u_1|^{2p} equals r_star.

    Returns (new_state, GaugeTransform).  Within one grid cell of the
    target the transform snaps to the identity; any value there is as good
    as any other for an invariant functional and the snap keeps converged
    states fixed points of the gauge.  Dilations leave the energy terms
    unchanged up to resampling error.
    """
    r_half = half_mass_radius(state.component(0), exponent=2 * cfg.p)
    if r_half == 0.0 or abs(r_half - cfg.r_star) <= cfg.gauge_snap_cells * state.grid.min_spacing:
        return state.copy(), GaugeTransform(1.0)
    eps = r_half / cfg.r_star
    vals = np.stack([dilate(state.component(i), eps).values for i in range(state.ell)])
    out = PinwheelState(state.grid, vals, state.beta, state.gauge_history + [eps])
    return out, GaugeTransform(eps)


def minimize(
    s0: PinwheelState,
    cfg: SolverConfig,
    support_mask: np.ndarray | None = None,
) -> MinimizeResult:
    """Descend J on the Nehari set inside the pinwheel subspace.

    support_mask restricts every component to a fixed node set (used by the
    per-cell re-solves); clamping, re-projection and gauge fixing are the
    periodic maintenance steps described in the module docstring.
    Reprojection/gauge are skipped when the corresponding period is <= 0.
    """
    grid = s0.grid
    state = s0.copy()
    state.beta = cfg.beta
    if support_mask is not None:
        state.values = np.where(support_mask[None], state.values, 0.0)
    state.values = np.maximum(state.values, 0.0)
    t, bd0 = nehari_scale(state, cfg)
    state = state.scaled(t)
    bd = _scaled_breakdown(bd0, t, cfg)

    history = []
    flags: list = []
    gauge_eps: list = []
    best = (bd.j_value, state, bd)
    converged = False
    h = np.zeros_like(state.values)
    z = np.zeros_like(state.values)
    it = 0

    for it in range(1, cfg.max_iters + 1):
        g = _raw_gradient(state, cfg)
        g = np.where((state.values <= 0.0) & (g > 0.0), 0.0, g)
        if support_mask is not None:
            g = np.where(support_mask[None], g, 0.0)
        for i in range(state.ell):
            h[i] = grid.solve_poisson(g[i], tol=cfg.poisson_tol, x0=h[i])
        # constrained steepest descent on the level set of the scale moment:
        # subtract the component along the Sobolev representative of M', the
        # unique correction with <M', direction> = 0 and nonnegative slope
        m_grad = _scale_functional_gradient(state)
        for i in range(state.ell):
            z[i] = grid.solve_poisson(m_grad[i], tol=cfg.poisson_tol, x0=z[i])
        denom = float(np.sum(m_grad * z))
        lam = float(np.sum(m_grad * h)) / denom if denom > 0 else 0.0
        direction = h - lam * z
        slope = max(float(np.sum(g * direction)), 0.0)
        residual = math.sqrt(max(slope, 0.0))
        rel = residual / math.sqrt(max(bd.kinetic, 1e-300))
        history.append(("step", it, bd.j_value, rel))
        if rel <= cfg.tol_gradient:
            converged = True
            break

        alpha = cfg.step_init
        accepted = False
        while alpha >= cfg.step_min:
            trial_vals = np.maximum(state.values - alpha * direction, 0.0)
            if support_mask is not None:
                trial_vals = np.where(support_mask[None], trial_vals, 0.0)
            trial = PinwheelState(grid, trial_vals, cfg.beta, list(state.gauge_history))
            try:
                t, tb = nehari_scale(trial, cfg)
            except NehariInfeasible:
                alpha *= 0.5
                continue
            j_trial = energy_of_scaled(tb.kinetic, tb.self_term, tb.coupling, t, cfg)
            if j_trial <= bd.j_value - cfg.armijo_c * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            flags.append("linesearch_stall")
            break
        state = trial.scaled(t)
        bd = _scaled_breakdown(tb, t, cfg)
        if bd.j_value < best[0]:
            best = (bd.j_value, state, bd)

        if cfg.reproject_every > 0 and state.ell > 1 and it % cfg.reproject_every == 0:
            defect_before = equivariance_defect(state)
            state = reproject_pinwheel(state)
            state.values = np.maximum(state.values, 0.0)
            t, tb = nehari_scale(state, cfg)
            state = state.scaled(t)
            bd = _scaled_breakdown(tb, t, cfg)
            history.append(("reproject", it, bd.j_value, defect_before))

        if cfg.gauge_every > 0 and it % cfg.gauge_every == 0:
            r_half = half_mass_radius(state.component(0), exponent=2 * cfg.p)
            if r_half < cfg.concentration_floor_cells * grid.min_spacing:
                flags.append("concentration")
                break
            state, gauge = gauge_fix(state, cfg)
            if not gauge.is_identity:
                gauge_eps.append(gauge.epsilon)
                t, tb = nehari_scale(state, cfg)
                state = state.scaled(t)
                bd = _scaled_breakdown(tb, t, cfg)
                history.append(("gauge", it, bd.j_value, gauge.epsilon))

    if not converged and "concentration" not in flags and it >= cfg.max_iters:
        flags.append("max_iterations")
    if bd.j_value > best[0]:
        _, state, bd = best
    return MinimizeResult(state, bd, it, converged, flags, history, gauge_eps)


def concentration_scale(u: Field, delta: float, exponent: float = 4.0, n_candidates: int = 64):
    """Smallest tube radius around a grid node capturing mass delta.

    The concentration mass of an invariant field around an orbit point is
    integrated over the saturated metric ball (all points whose ambient
    distance to the orbit is below the radius).  Candidate centers are the
    highest-density grid nodes; the returned pair is (radius, center).
    """
    grid = u.grid
    dens = np.abs(u.values) ** exponent
    mass = (grid.weights * dens).ravel()
    total = float(mass.sum())
    if not 0.0 < delta < total:
        raise MassThresholdError(f"delta must lie in (0, {total:.6g}), got {delta}")

    flat_dens = dens.ravel()
    k = min(n_candidates, flat_dens.size)
    cand = np.argpartition(flat_dens, -k)[-k:]
    cand = cand[np.argsort(-flat_dens[cand], kind="stable")]

    r1 = np.broadcast_to(grid.r1[:, None, None], grid.shape).ravel()
    r2 = np.broadcast_to(grid.r2[None, :, None], grid.shape).ravel()
    phi = np.broadcast_to(grid.phi[None, None, :], grid.shape).ravel()

    best_eps = math.inf
    best_center = None
    for idx in cand:
        center = OrbitPoint(r1[idx], r2[idx], phi[idx])
        d = orbit_distance(r1, r2, phi, center)
        order = np.argsort(d, kind="stable")
        cum = np.cumsum(mass[order])
        pos = int(np.searchsorted(cum, delta))
        eps = float(d[order][min(pos, d.size - 1)])
        if eps < best_eps:
            best_eps = eps
            best_center = center
    return best_eps, best_center


@dataclass
class TraceEntry:
    beta: float
    j_value: float
    kinetic_total: float
    kinetic_components: tuple
    overlap: np.ndarray
    overlap_max: float
    beta_times_overlap: float
    sup_norm: float
    epsilon: float
    iters: int
    converged: bool
    flags: list


@dataclass
class ContinuationTrace:
    """Per-beta records of a continuation sweep, ordered by decreasing beta."""

    entries: list
    c_inf_estimate: float
    final_state: PinwheelState

    @property
    def betas(self):
        return [e.beta for e in self.entries]


def _max_offdiag(M: np.ndarray) -> float:
    if M.shape[0] == 1:
        return 0.0
    off = M - np.diag(np.diag(M))
    return float(np.max(off))


def beta_continuation(
    cfg: SolverConfig,
    schedule: Sequence[float] | None = None,
    on_stage: Callable[[TraceEntry, PinwheelState], None] | None = None,
    warm_state: PinwheelState | None = None,
    skip_betas: Sequence[float] = (),
) -> ContinuationTrace:
    """Warm-started sweep of minimize over a decreasing beta schedule.

    The upper bound of every converged level is the energy of the
    disjointly supported competitor produced by init_seed (disjoint tuples
    are Nehari-admissible at every beta with a beta-independent energy); a
    stage converging above the bound restarts from the competitor, which
    descends below it by construction.  Nehari infeasibility of a warm
    start bisects the beta step and records the intermediate stage.
    on_stage is called after each stage (checkpointing hook); warm_state
    and skip_betas are the resume surface.
    """
    sched = list(cfg.beta_schedule if schedule is None else schedule)
    if not sched:
        raise ValueError("empty beta schedule")
    if any(b > 0 for b in sched):
        raise ValueError("beta schedule must be nonpositive")
    if any(b2 >= b1 for b1, b2 in zip(sched, sched[1:])):
        raise ValueError("beta schedule must be strictly decreasing")
    if sched[0] < -1.0:
        raise ValueError(f"schedule must start at beta >= -1, got {sched[0]}")

    seed = init_seed(cfg.with_beta(sched[0]))
    seed_bd = energy(seed, cfg.with_beta(sched[0]))
    c_inf_estimate = seed_bd.j_value

    entries: list = []
    state = warm_state if warm_state is not None else seed
    prev_beta = None
    pending = [b for b in sched if b not in set(skip_betas)]
    if warm_state is not None and skip_betas:
        prev_beta = min(skip_betas)

    while pending:
        target = pending[0]
        beta_try = target
        bisections = 0
        while True:
            cfg_b = cfg.with_beta(beta_try)
            start = state.copy()
            start.beta = beta_try
            try:
                nehari_scale(start, cfg_b)
            except NehariInfeasible:
                if prev_beta is None or bisections >= 12:
                    raise
                beta_try = 0.5 * (prev_beta + beta_try)
                bisections += 1
                continue
            result = minimize(start, cfg_b)
            break

        if result.breakdown.j_value > c_inf_estimate + 1e-3:
            fresh = minimize(init_seed(cfg_b), cfg_b)
            if fresh.breakdown.j_value < result.breakdown.j_value:
                result = fresh
            if result.breakdown.j_value > c_inf_estimate + 1e-3:
                result.flags.append("above_competitor")

        st, bd = result.state, result.breakdown
        M = overlap_matrix(st, cfg_b)
        overlap_max = _max_offdiag(M)
        net_eps = float(np.prod(result.gauge_epsilons)) if result.gauge_epsilons else 1.0
        entry = TraceEntry(
            beta=beta_try,
            j_value=bd.j_value,
            kinetic_total=bd.kinetic,
            kinetic_components=bd.kinetic_components,
            overlap=M,
            overlap_max=overlap_max,
            beta_times_overlap=beta_try * overlap_max,
            sup_norm=float(np.max(np.abs(st.values))),
            epsilon=net_eps,
            iters=result.iterations,
            converged=result.converged,
            flags=list(result.flags),
        )
        entries.append(entry)
        if on_stage is not None:
            on_stage(entry, st)
        state = st
        prev_beta = beta_try
        if beta_try == target:
            pending.pop(0)

    return ContinuationTrace(entries, c_inf_estimate, state)


def sup_norm_track(trace: ContinuationTrace):
    """Per-beta sup-norms with a boundedness verdict.

    Flags "unbounded" when some stage exceeds twice the first stage's
    sup-norm, the empirical surrogate of the uniform bound the segregation
    limit relies on.
    """
    if not trace.entries:
        raise ValueError("empty trace")
    sups = [e.sup_norm for e in trace.entries]
    ratio = max(sups) / sups[0] if sups[0] > 0 else math.inf
    verdict = "bounded" if ratio <= 2.0 else "unbounded"
    return [(e.beta, e.sup_norm) for e in trace.entries], verdict
