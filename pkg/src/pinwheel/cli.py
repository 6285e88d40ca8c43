"""Command-line entry points: solve, sweep, partition, nodal, verify, bubble, rsweep.

Runs write all artifacts under --out: field dumps and a summary per beta
stage, the trace CSV, an atomically rewritten manifest, and the structured
report.  `sweep --resume` continues from the last completed beta recorded
in the manifest.  Failures exit nonzero after printing one machine-readable
line starting with FAIL.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import io as pio
from .diagnostics import run_verify
from .energy import SolverConfig, bubble, energy, sobolev_constant
from .grid import dirichlet_energy
from .partition import (
    classify_interface,
    extract_partition,
    nodal_build,
    optimality_report,
    solve_dirichlet_cell,
)
from .solver import beta_continuation, sup_norm_track, minimize, init_seed


def _load_config(args) -> SolverConfig:
    if args.config:
        cfg, _ = pio.parse_config(args.config)
        return cfg
    return SolverConfig()


def _fail(msg: str) -> int:
    print(f"FAIL {msg}")
    return 1


def _cmd_solve(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = minimize(init_seed(cfg), cfg)
    bd = result.breakdown
    pio.dump_state(out, result.state, 0)
    print(f"beta={cfg.beta:g} j={bd.j_value:.6f} kinetic={bd.kinetic:.6f} "
          f"iters={result.iterations} converged={result.converged}")
    if not result.converged:
        return _fail(f"solve not converged flags={','.join(result.flags)}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.txt"
    schedule = list(cfg.beta_schedule)

    warm_state = None
    skip = []
    entries_done = []
    if args.resume and manifest_path.exists():
        manifest = pio.RunManifest.read(manifest_path)
        if manifest.completed:
            skip = [b for b, _ in manifest.completed]
            last_beta, last_idx = manifest.completed[-1]
            warm_state = pio.load_state(out, cfg.ell, last_idx)
            for row in pio.read_trace(out / "trace.csv"):
                entries_done.append(row)
            print(f"resuming after beta={last_beta:g} ({len(skip)} stages done)")

    manifest = pio.RunManifest(cfg, tuple(schedule), str(out), [(b, i) for i, b in enumerate(skip)], [], {})
    entries = []

    def on_stage(entry, state):
        idx = len(skip) + len(entries)
        entries.append(entry)
        names = pio.dump_state(out, state, idx)
        pio.write_summary(out / f"summary_{idx}.txt", entry, state.ell)
        manifest.completed.append((entry.beta, idx))
        manifest.artifacts.extend(names + [f"summary_{idx}.txt"])
        all_rows = entries_done + entries
        pio.write_trace(out / "trace.csv", entries if not entries_done else _merged(entries_done, entries))
        manifest.verdicts["stages_done"] = len(manifest.completed)
        manifest.write(manifest_path)

    def _merged(done_rows, new_entries):
        class Row:
            def __init__(self, d):
                self.__dict__.update(d)
                self.converged = bool(d["converged"])
        return [Row(d) for d in done_rows] + new_entries

    trace = beta_continuation(cfg, schedule, on_stage=on_stage, warm_state=warm_state, skip_betas=skip)
    _, verdict = sup_norm_track(trace)
    manifest.verdicts["sup_norm"] = verdict
    manifest.verdicts["complete"] = "yes"
    manifest.write(manifest_path)
    pio.write_report(out / "report.txt", {
        "c_ell_infinity_estimate": trace.entries[-1].j_value,
        "competitor_bound": trace.c_inf_estimate,
    })
    last = trace.entries[-1]
    print(f"sweep done: beta={last.beta:g} j={last.j_value:.6f} overlap={last.overlap_max:.3e} "
          f"sup_norm_verdict={verdict}")
    if any(not e.converged for e in trace.entries):
        return _fail("some stages not converged")
    return 0


def _cmd_partition(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    manifest = pio.RunManifest.read(out / "manifest.txt")
    if not manifest.completed:
        return _fail("no completed stages to partition")
    beta, idx = manifest.completed[-1]
    state = pio.load_state(out, cfg.ell, idx)
    part = extract_partition(state, eta=1e-3)
    part = classify_interface(state, part)
    pio.dump_partition(out / "partition.bin", part.labels, {"beta": beta, "ell": cfg.ell, "eta": part.eta})

    cells = [solve_dirichlet_cell(state, part, i, cfg) for i in range(1, cfg.ell + 1)]

    class _Trace:
        entries = [type("E", (), dict(j_value=r["j_value"]))() for r in pio.read_trace(out / "trace.csv")]
        c_inf_estimate = float(pio.read_report(out / "report.txt").get("competitor_bound", "inf"))

    report = optimality_report(_Trace, cells)
    pio.write_report(out / "report.txt", {
        "sum_cell_energy": report.sum_cell_energy,
        "c_ell_infinity_estimate": report.c_ell_infinity_estimate,
        "competitor_bound": report.competitor_bound,
        "cell_energies": report.cell_energies,
        "optimality_gap": report.optimality_gap,
        "cell_spread": report.cell_spread,
        "unassigned_fraction": part.unassigned_fraction,
        "sym_diff_max": max(part.sym_diff.values()) if part.sym_diff else 0.0,
        "singular_fraction": float(np.sum(part.singular)) / max(int(np.sum(part.labels == 0)), 1),
    })
    print(f"partition: sum_cells={report.sum_cell_energy:.6f} limit={report.c_ell_infinity_estimate:.6f} "
          f"gap={report.optimality_gap:.3%} spread={report.cell_spread:.3%}")
    if not report.consistent:
        return _fail(f"optimality chain violated gap={report.optimality_gap:.4f}")
    return 0


def _cmd_nodal(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    manifest = pio.RunManifest.read(out / "manifest.txt")
    if not manifest.completed:
        return _fail("no completed stages")
    beta, idx = manifest.completed[-1]
    state = pio.load_state(out, cfg.ell, idx)
    res = nodal_build(state, cfg)
    pio.dump_field(out / "nodal.bin", res.field, 0, idx, beta, cfg.ell)
    pio.write_report(out / "report.txt", {
        "antisymmetry_defect": res.antisymmetry_defect,
        "pde_residual": res.pde_residual,
        "pde_residual_rel": res.pde_residual_rel,
        "n_sign_domains": res.n_sign_domains,
        "nodal_asserted": int(res.asserted),
        "nodal_note": "alternating sum for ell != 2 is reported as evidence only (open question)",
    })
    print(f"nodal: defect={res.antisymmetry_defect:.3e} residual={res.pde_residual:.4f} "
          f"(rel {res.pde_residual_rel:.3e}) sign_domains={res.n_sign_domains}")
    if res.asserted and res.antisymmetry_defect > cfg.tol_equivariance:
        return _fail(f"antisymmetry defect {res.antisymmetry_defect:.3e} above tolerance")
    return 0


def _cmd_verify(args) -> int:
    cfg = _load_config(args)
    checks = run_verify(cfg, quick=args.quick)
    for c in checks:
        print(c.line())
    bad = [c for c in checks if not c.passed]
    if bad:
        return _fail(f"{len(bad)} of {len(checks)} checks failed")
    print(f"all {len(checks)} checks passed")
    return 0


def _cmd_bubble(args) -> int:
    cfg = _load_config(args)
    grid = cfg.make_grid()
    u = bubble(4, 1.0, grid)
    e = dirichlet_energy(u) / 4.0
    target = sobolev_constant(4) ** 2 / 4.0
    rel = abs(e - target) / target
    print(f"bubble energy/4 = {e:.6f}  target = {target:.6f}  rel_err = {rel:.4%}")
    if rel > 0.02:
        return _fail(f"bubble anchor off by {rel:.4%}")
    return 0


def _cmd_rsweep(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    radii = [float(x) for x in args.radii.split(",")]
    rows = ["radius,n_r,bubble_energy,target"]
    target = sobolev_constant(4) ** 2
    for R in radii:
        n = max(24, int(round(cfg.n_r1 * R / cfg.radius)))  # keep the spacing
        cfg_r = dataclasses.replace(cfg, n_r1=n, n_r2=n, radius=R)
        e = dirichlet_energy(bubble(4, 1.0, cfg_r.make_grid()))
        rows.append(f"{R:.17g},{n},{e:.17g},{target:.17g}")
        print(f"R={R:6.1f} n_r={n:4d} bubble_energy={e:.6f} (target {target:.6f})")
    (out / "rsweep.csv").write_text("\n".join(rows) + "\n")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pinwheel", description=__doc__)
    parser.add_argument("--config", type=str, default=None, help="key=value config file")
    parser.add_argument("--out", type=str, default="out", help="output directory")
    parser.add_argument("--workers", type=int, default=1, help="worker threads for the kernels")
    parser.add_argument("--resume", action="store_true", help="resume a sweep from its manifest")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", help="minimize at a single beta")
    sub.add_parser("sweep", help="beta continuation with checkpoints")
    sub.add_parser("partition", help="extract the partition from the last checkpoint")
    sub.add_parser("nodal", help="build the alternating-sum field and its diagnostics")
    p_verify = sub.add_parser("verify", help="run the invariant battery")
    p_verify.add_argument("--quick", action="store_true", help="reduced sample counts")
    sub.add_parser("bubble", help="check the radial fixture against its energy anchor")
    p_rsweep = sub.add_parser("rsweep", help="truncation-radius study at fixed spacing")
    p_rsweep.add_argument("--radii", type=str, default="10,15,20,30")

    args = parser.parse_args(argv)
    os.environ.setdefault("OMP_NUM_THREADS", str(args.workers))

    handlers = {
        "solve": _cmd_solve,
        "sweep": _cmd_sweep,
        "partition": _cmd_partition,
        "nodal": _cmd_nodal,
        "verify": _cmd_verify,
        "bubble": _cmd_bubble,
        "rsweep": _cmd_rsweep,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # one machine-readable failure line
        print(f"FAIL {type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
