"""Command-line runner: ``bctopo run|mesh-info|fd-check <config>``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfg
from .control import ControlValues
from .formats import export_boundary_snapshot
from .levelset import init_levelset, optimize, partition_from_levelset, region_areas
from .mesh import divergence_volume
from .topo import compare_with_oracle, make_sector_geometry

log = logging.getLogger("bctopo")

CLEAN_STATUSES = {"zero cost", "stationary", "no descent", "converged", "max iterations"}


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_history(history, path, M: int) -> None:
    header = ["iteration", "J", "kappa", "accepted", "changed"]
    header += [f"area_{k}" for k in range(1, M + 1)] + [f"alpha_{k}" for k in range(1, M + 1)]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in history:
            writer.writerow([r.iteration, _fmt(r.J), _fmt(r.kappa), int(r.accepted), r.changed]
                            + [_fmt(a) for a in r.areas] + [_fmt(a) for a in r.alpha])


def read_history(path) -> dict[str, np.ndarray]:
    """Columns of a history.csv as float arrays."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    return {name: body[:, k] for k, name in enumerate(header)}


def write_snapshot(state, mesh, path) -> None:
    M = len(state.controls.alpha)
    fields = {"psi": state.psi}
    if state.fields is not None:
        fields["G"] = state.fields.G
    if state.flux is not None:
        fields["flux"] = state.flux
        table = state.derivatives()
        for i in range(M):
            for j in range(M):
                if i != j:
                    fields[f"D_{i + 1}{j + 1}"] = table[:, i, j]
    export_boundary_snapshot(mesh, state.labels, path, **fields)


def _setup(config):
    mesh = cfg.build_mesh(config)
    problem = cfg.build_problem(config, mesh)
    ref_labels, problem.u_ref = cfg.build_reference(config, mesh, problem)
    return mesh, problem, ref_labels


def cmd_run(args) -> int:
    config = cfg.load_config(args.config)
    if args.output_dir is not None:
        config.output.directory = str(args.output_dir)
    if args.max_iter is not None:
        config.optimizer.max_iter = args.max_iter
    config.validate()
    out = Path(config.output.directory)
    snapdir = out / "snapshots"
    snapdir.mkdir(parents=True, exist_ok=True)
    for old in snapdir.glob("iter_*.vtk"):
        old.unlink()
    cfg.save_config(config, out / "config.toml")

    t0 = time.perf_counter()
    mesh, problem, ref_labels = _setup(config)
    M = config.problem.M
    geom = make_sector_geometry(M)
    lower, upper = config.bounds()
    controls = ControlValues(config.problem.alpha, lower, upper)
    every = config.output.snapshot_every
    holder = {}

    def callback(state, event):
        holder["state"] = state
        accepted = sum(r.accepted for r in state.history) - 1
        if event == "start" or event == "end" or (event == "accepted" and accepted % every == 0):
            write_snapshot(state, mesh, snapdir / f"iter_{state.iteration:04d}.vtk")
        if event == "accepted":
            log.info("iteration %d: J = %.6e (kappa %.3g)", state.iteration, state.J, state.kappa)

    status, error = "failed", None
    try:
        state = optimize(problem, geom, controls, config.optimizer, callback=callback)
        status = state.status
    except Exception as exc:  # flush what we have, then report
        error = exc
        state = holder.get("state")
    wall = time.perf_counter() - t0

    if state is not None:
        write_history(state.history, out / "history.csv", M)
        accepted = state.accepted_J
        summary = {
            "status": status if error is None else f"failed: {error}",
            "initial_J": float(accepted[0]),
            "final_J": float(accepted[-1]),
            "reduction": float(accepted[-1] / accepted[0]) if accepted[0] > 0 else 0.0,
            "iterations": int(state.iteration),
            "accepted_steps": int(len(accepted) - 1),
            "wall_time_s": wall,
            "n_vertices": mesh.n_vertices,
            "n_faces": mesh.n_faces,
            "alpha": state.controls.alpha.tolist(),
            "areas": region_areas(problem, state.labels, M).tolist(),
            "reference_areas": region_areas(problem, ref_labels, M).tolist(),
            "symmetric_difference": float(mesh.face_areas[state.labels != ref_labels].sum()
                                          / mesh.surface_area),
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        if config.output.figures:
            from . import plotting

            plotting.plot_cost_history(state.history, out / "cost_history.png")
            plotting.plot_region_areas(state.history, out / "region_areas.png",
                                       summary["reference_areas"])
            plotting.plot_partition(mesh, state.labels, out / "partition.png", "recovered")
            plotting.plot_partition(mesh, ref_labels, out / "reference.png", "reference")
    if error is not None:
        raise error
    print(f"status: {status}")
    print(f"J: {_fmt(summary['initial_J'])} -> {_fmt(summary['final_J'])} "
          f"(ratio {summary['reduction']:.3e}) in {state.iteration} iterations, {wall:.1f} s")
    print(f"output: {out}")
    return 0 if status in CLEAN_STATUSES else 1


def cmd_mesh_info(args) -> int:
    config = cfg.load_config(args.config)
    mesh = cfg.build_mesh(config)
    mesh.validate()
    labels = cfg.reference_labels(config.problem.reference, config.problem.M, mesh.face_centroids)
    areas = np.bincount(labels - 1, weights=mesh.face_areas, minlength=config.problem.M)
    edges = mesh.vertices[mesh.boundary_faces] - np.roll(mesh.vertices[mesh.boundary_faces], 1, axis=1)
    h = np.linalg.norm(edges, axis=2)
    print(f"vertices: {mesh.n_vertices}")
    print(f"tets: {mesh.n_tets}")
    print(f"boundary_faces: {mesh.n_faces}")
    print(f"interior_vertices: {mesh.interior_vertices.size}")
    print(f"volume: {_fmt(mesh.volume)}")
    print(f"divergence_volume: {_fmt(divergence_volume(mesh))}")
    print(f"surface_area: {_fmt(mesh.surface_area)}")
    print(f"boundary_edge_min: {_fmt(h.min())}")
    print(f"boundary_edge_max: {_fmt(h.max())}")
    for k, a in enumerate(areas, start=1):
        print(f"reference_area_{k}: {_fmt(a)}")
    return 0


def cmd_fd_check(args) -> int:
    config = cfg.load_config(args.config)
    mesh, problem, _ = _setup(config)
    geom = make_sector_geometry(config.problem.M)
    labels = partition_from_levelset(geom, init_levelset(geom, mesh.n_faces))
    result = compare_with_oracle(problem, labels, config.problem.alpha, args.faces, args.seed,
                                 flux=args.flux)
    print("face,i,j,closed_form,finite_difference,relative_error")
    for face, (i, j), a, b, e in zip(result.faces, result.pairs, result.closed_form,
                                    result.finite_difference, result.relative_errors):
        print(f"{face},{i},{j},{_fmt(a)},{_fmt(b)},{_fmt(e)}")
    print(f"sign_agreement: {result.sign_agreement:.4f}")
    print(f"median_relative_error: {result.median_relative_error:.6g}")
    print(f"mean_relative_error: {result.mean_relative_error:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bctopo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every accepted step")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the level-set optimisation and write outputs")
    p.add_argument("config", type=Path)
    p.add_argument("--output-dir", type=Path, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("mesh-info", help="print mesh statistics and reference region areas")
    p.add_argument("config", type=Path)
    p.set_defaults(func=cmd_mesh_info)

    p = sub.add_parser("fd-check", help="compare closed-form and finite-difference derivatives")
    p.add_argument("config", type=Path)
    p.add_argument("--faces", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flux", choices=["tet", "consistent"], default="tet")
    p.set_defaults(func=cmd_fd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
