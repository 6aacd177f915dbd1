"""Command-line interface.

Subcommands: ``run`` a case, ``mms-convergence`` study, ``mass-balance``
audit, and ``probe`` a written VTK file along a line.  Exit codes: 0 on
success, 2 on a validation problem, 3 on a solver failure.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import io as case_io
from . import verify
from .errors import ConfigError, PicardDivergenceError, SolverConvergenceError

logger = logging.getLogger("vertexflow")


def _add_common(parser):
    parser.add_argument("--threads", type=int, default=1,
                        help="accepted for compatibility; execution is single-threaded")
    parser.add_argument("--quiet", action="store_true", help="suppress progress logging")


def _snapshot_writer(cfg):
    os.makedirs(cfg.output_dir, exist_ok=True)

    def callback(simulation, state, prev_state):
        path = os.path.join(cfg.output_dir, f"{cfg.output_prefix}_{state.n:06d}.vtk")
        point_fields = {
            "s": state.S,
            "p": state.P,
            "p_o": state.p_o(simulation.model),
        }
        case_io.write_vtk(
            simulation.mesh, point_fields, {"K": simulation.perm_elem}, path
        )

    return callback


def cmd_run(args):
    cfg = case_io.load_config(args.config)
    sim, state, time_cfg = case_io.build_simulation(cfg)
    callbacks = [] if args.no_output else [_snapshot_writer(cfg)]
    final = sim.advance(state, time_cfg, callbacks=callbacks)
    records = sim.step_records
    s_min = min(r.s_min for r in records)
    s_max = max(r.s_max for r in records)
    print(f"completed {len(records)} steps to t = {final.t:g} s")
    print(f"saturation range over the run: [{s_min:.6f}, {s_max:.6f}]")
    print(f"max per-step mass residual: {max(r.mass_residual for r in records):.3e}")
    if not args.no_output:
        print(f"snapshots in {cfg.output_dir}/")
    return 0


def cmd_mms_convergence(args):
    table = verify.convergence_study(args.levels, t_end=args.t_end)
    print(table)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table.to_csv())
        print(f"wrote {args.out}")
    return 0


def cmd_mass_balance(args):
    cfg = case_io.load_config(args.config)
    sim, state, time_cfg = case_io.build_simulation(cfg)
    perm_elem = sim.perm_elem
    targets = set(args.steps) if args.steps else {time_cfg.num_steps}
    os.makedirs(cfg.output_dir, exist_ok=True)

    audits = {}

    def audit(simulation, state_new, state_prev):
        if state_new.n in targets:
            m_e = verify.local_mass_balance(
                simulation.mesh, simulation.model, simulation.fluids,
                simulation.wells, perm_elem, simulation.phi,
                state_new.t - state_prev.t, state_new, state_prev,
            )
            audits[state_new.n] = m_e
            path = os.path.join(
                cfg.output_dir, f"{cfg.output_prefix}_massbalance_{state_new.n:06d}.vtk"
            )
            case_io.write_vtk(
                simulation.mesh, {"s": state_new.S, "p": state_new.P},
                {"K": perm_elem, "m_E": m_e}, path,
            )

    time_cfg.output_stride = 1
    sim.advance(state, time_cfg, callbacks=[audit])
    well_nodes = (sim.wells.qbar + sim.wells.qund) > 0 if sim.wells else None
    for n in sorted(audits):
        m_e = audits[n]
        if well_nodes is not None:
            on_well = well_nodes[sim.mesh.elements].any(axis=1)
            off = np.max(np.abs(m_e[~on_well])) if (~on_well).any() else 0.0
            on = np.max(np.abs(m_e[on_well])) if on_well.any() else 0.0
            print(f"step {n}: max |m(E)| off wells {off:.3e}, on wells {on:.3e}")
        else:
            print(f"step {n}: max |m(E)| {np.max(np.abs(m_e)):.3e}")
    return 0


def cmd_probe(args):
    mesh, point_fields, _ = case_io.read_vtk(args.vtk)
    if args.field not in point_fields:
        raise ConfigError(
            f"field {args.field!r} not in {args.vtk} (has {sorted(point_fields)})"
        )
    p0 = [float(v) for v in args.start.split(",")]
    p1 = [float(v) for v in args.end.split(",")]
    arcs, values = case_io.probe_line(mesh, point_fields[args.field], p0, p1, args.n)
    case_io.write_probe_csv(arcs, values, args.out if args.out else sys.stdout)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vertexflow",
        description="Vertex-centered two-phase porous-media flow simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a case file")
    p_run.add_argument("config")
    p_run.add_argument("--no-output", action="store_true", help="skip VTK snapshots")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_mms = sub.add_parser("mms-convergence", help="manufactured-solution rate study")
    p_mms.add_argument("--levels", type=int, nargs="+", default=[4, 8, 16, 32, 64],
                       help="cells per side at each level (h = 1/n)")
    p_mms.add_argument("--t-end", type=float, default=1.0)
    p_mms.add_argument("--out", help="CSV output path")
    _add_common(p_mms)
    p_mms.set_defaults(func=cmd_mms_convergence)

    p_mb = sub.add_parser("mass-balance", help="element mass-balance audit of a case")
    p_mb.add_argument("config")
    p_mb.add_argument("--steps", type=int, nargs="*", help="step indices to audit")
    _add_common(p_mb)
    p_mb.set_defaults(func=cmd_mass_balance)

    p_probe = sub.add_parser("probe", help="sample a VTK point field along a line")
    p_probe.add_argument("vtk")
    p_probe.add_argument("--field", default="s")
    p_probe.add_argument("--from", dest="start", required=True,
                         help="start point, comma-separated coordinates")
    p_probe.add_argument("--to", dest="end", required=True,
                         help="end point, comma-separated coordinates")
    p_probe.add_argument("--n", type=int, default=101, help="number of samples")
    p_probe.add_argument("--out", help="CSV output path (default: stdout)")
    _add_common(p_probe)
    p_probe.set_defaults(func=cmd_probe)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
        format="%(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverConvergenceError, PicardDivergenceError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
