"""Command-line front end: ``hdivfwd <subcommand> [options]``.

Every option can also be given in a config file (``--config``) under the
section shown in ``--help``; command-line flags win over the file.

Exit codes: 0 success, 2 usage error, 3 invalid input, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import LayeredSphere, fibonacci_sphere
from .errors import HdivError, SolverError, ValidationError
from .hexmesh import CompartmentTable, HexMesh, SphereSpec, count_leaks, generate_leaky_sphere, generate_sphere_mesh
from .hexmesh import load_labeled_voxels, write_labeled_voxels
from .io import (
    load_config,
    provenance_line,
    read_table,
    write_convergence,
    write_element_current,
    write_face_current,
    write_potential,
    write_reference,
    write_vtk_fields,
    write_vtk_labels,
)

log = logging.getLogger("hdivfwd")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3, 4
LAYER_NAMES = ("brain", "csf", "skull", "skin")


def _floats(s) -> tuple:
    if isinstance(s, (tuple, list)):
        return tuple(float(v) for v in s)
    return tuple(float(v) for v in str(s).replace(" ", "").split(",") if v)


def _ints(s) -> tuple:
    return tuple(int(v) for v in _floats(s))


def _names(s) -> tuple:
    if isinstance(s, (tuple, list)):
        return tuple(s)
    return tuple(v.strip() for v in str(s).split(",") if v.strip())


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class Opt:
    name: str
    section: str
    conv: object
    default: object
    help: str
    flag_only: bool = False


MESH_OPTS = [
    Opt("mesh", "mesh", str, None, "HXM1 voxel file (otherwise a sphere model is generated)"),
    Opt("radii", "mesh", _floats, (78.0, 80.0, 86.0, 92.0), "sphere outer radii in mm, innermost first"),
    Opt("spacing", "mesh", float, 2.0, "mesh width in mm (overrides the file header with --mesh)"),
    Opt("centering", "mesh", str, "corner", "sphere center on a cell 'corner' or a 'cell' centroid"),
    Opt("padding", "mesh", int, 1, "air cells around the outer sphere"),
    Opt("leaky_skull", "mesh", float, None, "replace the skull outer radius (thin-skull model)"),
    Opt("sigmas", "mesh", _floats, (0.33, 1.79, 0.01, 0.43), "conductivities in S/m for labels 1..K"),
]
SOLVER_OPTS = [
    Opt("precond", "solver", str, "amg", "outer preconditioner: none, ssor, amg"),
    Opt("d_variant", "solver", str, "l2", "diagonal surrogate of A: l2, diag, rowsum, l1"),
    Opt("inner", "solver", str, "line", "inner solve with A: line (exact) or cg"),
    Opt("inner_iters", "solver", int, 1, "inner CG iterations when --inner cg"),
    Opt("outer_tol", "solver", float, 1e-8, "relative residual tolerance of the outer PCG"),
    Opt("outer_max_iter", "solver", int, 5000, "outer iteration limit"),
    Opt("nodal_precond", "solver", str, "amg", "preconditioner of the nodal baseline: jacobi, amg"),
]
SWEEP_OPTS = [
    Opt("methods", "sweep", _names, ("mixed-direct", "mixed-projected", "cg-pi"), "comma-separated methods"),
    Opt("n_radii", "sweep", int, 10, "number of source distances"),
    Opt("n_per_radius", "sweep", int, 10, "dipoles per distance"),
    Opt("seed", "sweep", int, 0, "random seed for source placement"),
    Opt("d_max", "sweep", float, None, "largest distance to the innermost interface (mm, default min(39, R1/2))"),
    Opt("d_min", "sweep", float, 0.5, "smallest distance to the innermost interface (mm)"),
    Opt("orientation", "sweep", str, "radial", "radial or random moments"),
    Opt("n_sensors", "sweep", int, 1000, "evaluation points on the outer sphere"),
]
OUT_OPT = Opt("out", "output", str, None, "output file or directory")


def _add(parser, opts):
    for o in opts:
        flag = "--" + o.name.replace("_", "-")
        kind = {_bool: None}.get(o.conv, str)
        parser.add_argument(flag, dest=o.name, default=None, type=kind, help=f"{o.help} [{o.section}]")


def _resolve(args, opts, cfg) -> dict:
    out = {}
    for o in opts:
        val = getattr(args, o.name, None)
        if val is None and cfg is not None and cfg.has_option(o.section, o.name):
            val = cfg.get(o.section, o.name)
        if val is None:
            out[o.name] = o.default
            continue
        try:
            out[o.name] = o.conv(val)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"option {o.name}: {exc}") from None
    return out


def _threads(args, cfg) -> int:
    val = args.threads
    if val is None:
        val = os.environ.get("HDIVFWD_THREADS")
    if val is None and cfg is not None and cfg.has_option("run", "threads"):
        val = cfg.get("run", "threads")
    n = int(val) if val is not None else (os.cpu_count() or 1)
    if n < 1:
        raise ValidationError("thread count must be >= 1")
    return n


def _table(opts) -> CompartmentTable:
    sig = opts["sigmas"]
    names = LAYER_NAMES if len(sig) == len(LAYER_NAMES) else tuple(f"layer{k + 1}" for k in range(len(sig)))
    return CompartmentTable({k + 1: (names[k], s) for k, s in enumerate(sig)})


def _mesh(opts) -> HexMesh:
    if opts["mesh"]:
        if not Path(opts["mesh"]).is_file():
            raise ValidationError(f"mesh file {opts['mesh']} does not exist")
        return load_labeled_voxels(opts["mesh"], spacing=opts["spacing"] if opts.get("_spacing_set") else None,
                                   table=_table(opts))
    spec = SphereSpec(opts["radii"], opts["spacing"], centering=opts["centering"], padding=opts["padding"])
    if opts["leaky_skull"] is not None:
        return generate_leaky_sphere(spec, opts["leaky_skull"])
    return generate_sphere_mesh(spec)


def _solver_config(opts, log_convergence=False):
    from .solver import SolverConfig

    return SolverConfig(
        outer_tol=opts["outer_tol"],
        outer_max_iter=opts["outer_max_iter"],
        inner=opts["inner"],
        inner_iters=opts["inner_iters"],
        precond=opts["precond"],
        d_variant=opts["d_variant"],
        log_convergence=log_convergence,
    )


def _out_dir(path) -> Path:
    if not path:
        raise ValidationError("--out is required")
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    if not os.access(d, os.W_OK):
        raise ValidationError(f"output directory {d} is not writable")
    return d


def _hashable(opts) -> dict:
    return {k: v for k, v in opts.items() if not k.startswith("_") and k not in ("out", "threads")}


def _dipoles(args):
    from .sources import Dipole, read_dipoles

    if args.dipoles:
        if not Path(args.dipoles).is_file():
            raise ValidationError(f"dipole file {args.dipoles} does not exist")
        return read_dipoles(args.dipoles)
    if args.dipole:
        v = _floats(args.dipole)
        if len(v) != 6:
            raise ValidationError("--dipole expects x,y,z,mx,my,mz")
        return [Dipole(v[:3], v[3:], 0)]
    raise ValidationError("give --dipoles FILE or --dipole x,y,z,mx,my,mz")


# -- subcommands -----------------------------------------------------------------


def cmd_generate(args, cfg) -> int:
    opts = _resolve(args, MESH_OPTS + [OUT_OPT], cfg)
    opts["mesh"] = None
    mesh = _mesh(opts)
    st = mesh.stats()
    labels = set(np.unique(mesh.labels).tolist())
    leaks = count_leaks(mesh, 2, 4) if {2, 4} <= labels else 0
    print(
        f"elements: {st['elements']} faces: {st['faces']} interior_faces: {st['interior_faces']} "
        f"vertices: {st['vertices']} leaks: {leaks}"
    )
    if opts["out"]:
        Path(opts["out"]).parent.mkdir(parents=True, exist_ok=True)
        write_labeled_voxels(mesh, opts["out"], provenance_line(_hashable(opts)))
    return EXIT_OK


def cmd_solve(args, cfg) -> int:
    from .assembly import assemble_system
    from .cg_baseline import assemble_stiffness, element_current, rhs_partial_integration, solve_nodal
    from .evaluation import mixed_element_current
    from .solver import solve_potential
    from .sources import rhs_direct, rhs_projected

    opts = _resolve(args, MESH_OPTS + SOLVER_OPTS + [OUT_OPT], cfg)
    opts["_spacing_set"] = args.spacing is not None
    method = args.method or (cfg.get("solve", "method") if cfg and cfg.has_option("solve", "method") else "mixed-projected")
    if method not in ("mixed-direct", "mixed-projected", "cg-pi"):
        raise ValidationError(f"unknown method {method!r}")
    opts["method"] = method
    log_conv = bool(args.log_convergence)
    out = _out_dir(opts["out"])
    mesh = _mesh(opts)
    table = _table(opts)
    dipoles = _dipoles(args)
    opts["dipoles"] = [(d.id, d.position, d.moment) for d in dipoles]
    head = provenance_line(_hashable(opts))
    if args.reference:
        from .analytic import surface_potential

        model = LayeredSphere(opts["radii"], opts["sigmas"])
        pts = fibonacci_sphere(args.reference, opts["radii"][-1])
        for d in dipoles:
            write_reference(out / f"reference_{d.id}.csv", pts, surface_potential(model, d.x0, d.m, pts), head)
    if method == "cg-pi":
        system = assemble_stiffness(mesh, table)
        for d in dipoles:
            u = solve_nodal(system, rhs_partial_integration(d, mesh), opts["outer_tol"], opts["nodal_precond"])
            write_potential(out / f"potential_{d.id}.csv", u, "vertex", head)
            write_element_current(out / f"element_current_{d.id}.csv", element_current(u, mesh, table), head)
            print(f"dipole {d.id}: {system.n_vertices} vertex potentials written")
        return EXIT_OK
    system = assemble_system(mesh, table)
    config = _solver_config(opts, log_conv)
    for d in dipoles:
        rhs = rhs_direct(d, system, mesh) if method == "mixed-direct" else rhs_projected(d, system, mesh)
        try:
            sol = solve_potential(system, rhs, config)
        except SolverError as exc:
            write_convergence(out / f"convergence_{d.id}.csv", exc.history, head)
            raise
        write_potential(out / f"potential_{d.id}.csv", sol.potential, "element", head)
        write_face_current(out / f"current_{d.id}.csv", system.interior_faces, sol.j, head)
        write_element_current(out / f"element_current_{d.id}.csv", mixed_element_current(mesh, system, sol.j), head)
        if log_conv:
            write_convergence(out / f"convergence_{d.id}.csv", sol.history, head)
        print(f"dipole {d.id}: {sol.iterations} iterations, residual {sol.residual:.3e}")
    return EXIT_OK


def cmd_sweep(args, cfg, threads) -> int:
    from .evaluation import SweepConfig, run_sweep, summarize, write_records, write_summary
    from .sources import place_sources, write_dipoles

    opts = _resolve(args, MESH_OPTS + SOLVER_OPTS + SWEEP_OPTS + [OUT_OPT], cfg)
    opts["_spacing_set"] = args.spacing is not None
    out = _out_dir(opts["out"])
    radii = opts["radii"]
    if opts["leaky_skull"] is not None:
        radii = radii[:2] + (opts["leaky_skull"],) + radii[3:]
    if len(opts["sigmas"]) != len(radii):
        raise ValidationError("need one conductivity per radius")
    model = LayeredSphere(radii, opts["sigmas"])
    mesh = _mesh(opts)
    if opts["d_max"] is None:
        opts["d_max"] = min(39.0, radii[0] / 2)
    dipoles = place_sources(
        inner_radius=radii[0],
        n_radii=opts["n_radii"],
        n_per_radius=opts["n_per_radius"],
        seed=opts["seed"],
        d_max=opts["d_max"],
        d_min=opts["d_min"],
        orientation=opts["orientation"],
    )
    name = Path(opts["mesh"]).stem if opts["mesh"] else f"sphere_h{opts['spacing']:g}"
    sc = SweepConfig(
        table=_table(opts),
        solver=_solver_config(opts),
        skin_label=len(radii),
        nodal_tol=opts["outer_tol"],
        nodal_precond=opts["nodal_precond"],
        threads=threads,
        model_name=name,
    )
    sensors = fibonacci_sphere(opts["n_sensors"], radii[-1])
    records = run_sweep(mesh, model, opts["methods"], dipoles, sensors, sc)
    head = provenance_line(_hashable(opts) | {"gauge": "mean-zero"}, opts["seed"])
    write_dipoles(dipoles, out / "dipoles.csv", head)
    write_records(records, out / "records.csv", head)
    failed = [r for r in records if not r.ok]
    if len(failed) < len(records):
        write_summary(summarize(records), out / "summary.csv", head)
    print(f"{len(records)} records ({len(failed)} failed) written to {out}")
    return EXIT_OK


def cmd_transfer(args, cfg) -> int:
    from .assembly import assemble_system
    from .evaluation import SurfaceSampler
    from .solver import sensor_restriction, transfer_solve
    from .sources import rhs_direct, rhs_projected

    opts = _resolve(args, MESH_OPTS + SOLVER_OPTS + [OUT_OPT], cfg)
    opts["_spacing_set"] = args.spacing is not None
    out = _out_dir(opts["out"])
    mesh = _mesh(opts)
    system = assemble_system(mesh, _table(opts))
    if args.sensors:
        cols, data = read_table(args.sensors)
        if cols[-3:] != ["x", "y", "z"]:
            raise ValidationError(f"{args.sensors}: expected columns ending in x,y,z")
        points = data[:, -3:]
    else:
        points = fibonacci_sphere(int(args.n_sensors or 32), max(opts["radii"]))
    skin = int(mesh.element_labels.max()) if args.sensor_label is None else int(args.sensor_label)
    sampler = SurfaceSampler(mesh, points, skin)
    opts["sensors"] = points.tolist()
    head = provenance_line(_hashable(opts))
    R = sensor_restriction(mesh.n_elements, sampler.elements, sampler.elements[0])
    tm = transfer_solve(system, R, _solver_config(opts))
    np.save(out / "transfer.npy", tm.T)
    print(f"transfer matrix {tm.T.shape}, {sum(tm.iterations)} outer iterations in total")
    if args.dipoles or args.dipole:
        method = args.method or "mixed-projected"
        rows = []
        for d in _dipoles(args):
            if method == "mixed-direct":
                from .solver import line_solver

                h = system.B @ line_solver(system)(rhs_direct(d, system, mesh).payload)
            elif method == "mixed-projected":
                h = rhs_projected(d, system, mesh).payload
            else:
                raise ValidationError("transfer supports mixed-direct and mixed-projected")
            for k, v in enumerate(tm.potentials(h)):
                rows.append(f"{d.id},{k},{v + 0.0:.17g}")
        with open(out / "leadfield.csv", "w") as fh:
            fh.write(head + "\ndipole_id,sensor_id,u\n" + "".join(r + "\n" for r in rows))
    return EXIT_OK


def cmd_export_vtk(args, cfg) -> int:
    opts = _resolve(args, MESH_OPTS + [OUT_OPT], cfg)
    opts["_spacing_set"] = args.spacing is not None
    if not opts["out"]:
        raise ValidationError("--out is required")
    mesh = _mesh(opts)
    head = provenance_line(_hashable(opts))
    if not args.potential and not args.current:
        write_vtk_labels(mesh, opts["out"], head)
        return EXIT_OK
    pot = cur = None
    if args.potential:
        cols, data = read_table(args.potential)
        if cols != ["element_id", "u"]:
            raise ValidationError(f"{args.potential}: expected element_id,u (per-element potential)")
        pot = data[:, 1]
    if args.current:
        cols, data = read_table(args.current)
        if cols != ["element_id", "jx", "jy", "jz"]:
            raise ValidationError(f"{args.current}: expected element_id,jx,jy,jz")
        cur = data[:, 1:]
    write_vtk_fields(mesh, opts["out"], pot, cur, head)
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hdivfwd", description="Mixed RT0/P0 FEM for the EEG forward problem")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style config file; flags win")
    common.add_argument("--threads", type=int, default=None, help="worker threads (env HDIVFWD_THREADS)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-mesh", parents=[common], help="generate a concentric-sphere voxel model")
    _add(g, [o for o in MESH_OPTS if o.name != "mesh"] + [OUT_OPT])

    s = sub.add_parser("solve", parents=[common], help="solve for one or more dipoles")
    _add(s, MESH_OPTS + SOLVER_OPTS + [OUT_OPT])
    s.add_argument("--method", choices=("mixed-direct", "mixed-projected", "cg-pi"))
    s.add_argument("--dipoles", help="CSV id,x,y,z,mx,my,mz")
    s.add_argument("--dipole", help="single dipole x,y,z,mx,my,mz")
    s.add_argument("--log-convergence", action="store_true", help="write iter,residual logs")
    s.add_argument("--reference", type=int, metavar="N",
                   help="also write the analytic sphere potential at N outer-surface points")

    w = sub.add_parser("sweep", parents=[common], help="eccentricity sweep against the analytic sphere")
    _add(w, MESH_OPTS + SOLVER_OPTS + SWEEP_OPTS + [OUT_OPT])

    t = sub.add_parser("transfer", parents=[common], help="transfer matrix for surface sensors")
    _add(t, MESH_OPTS + SOLVER_OPTS + [OUT_OPT])
    t.add_argument("--sensors", help="CSV whose last three columns are x,y,z")
    t.add_argument("--n-sensors", type=int, help="number of Fibonacci sensors on the outer sphere")
    t.add_argument("--sensor-label", type=int, help="label of the sensor compartment (default: highest)")
    t.add_argument("--method", choices=("mixed-direct", "mixed-projected"))
    t.add_argument("--dipoles")
    t.add_argument("--dipole")

    e = sub.add_parser("export-vtk", parents=[common], help="write legacy VTK files")
    _add(e, MESH_OPTS + [OUT_OPT])
    e.add_argument("--potential", help="element_id,u CSV from solve")
    e.add_argument("--current", help="element_id,jx,jy,jz CSV from solve")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = load_config(args.config) if args.config else None
        threads = _threads(args, cfg)
        if args.command == "generate-mesh":
            return cmd_generate(args, cfg)
        if args.command == "solve":
            return cmd_solve(args, cfg)
        if args.command == "sweep":
            if getattr(args, "methods", None):
                from .evaluation import METHODS

                bad = [m for m in _names(args.methods) if m not in METHODS]
                if bad:
                    parser.error(f"unknown method(s) {bad}")
            return cmd_sweep(args, cfg, threads)
        if args.command == "transfer":
            return cmd_transfer(args, cfg)
        return cmd_export_vtk(args, cfg)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    except SolverError as exc:
        print(f"hdivfwd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (HdivError, OSError) as exc:
        print(f"hdivfwd: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
