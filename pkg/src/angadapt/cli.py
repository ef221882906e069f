"""Command line: ``angadapt run <config>``, ``angadapt verify``, ``angadapt mesh gen|check``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adapt_driver import AdaptAborted, run
from .cli_io import ConfigError, build_mesh, load_config, write_csv, write_vtk
from .mesh import MeshFormatError, generate_duct, load, save, validate

log = logging.getLogger("angadapt")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3


def _reference(rc, mesh) -> float | None:
    ref = rc.reference
    if ref["mode"] == "value":
        return float(ref["value"])
    if ref["mode"] == "fixed":
        cfg = replace(rc.adapt, mode="fixed", fixed_level=ref["fixed_level"], max_level=max(rc.adapt.max_level, ref["fixed_level"]))
        log.info("reference: fixed refinement to level %d", ref["fixed_level"])
        return run(mesh, cfg).records[0].detector
    return None


def cmd_run(args) -> int:
    try:
        rc = load_config(args.config)
        mesh = build_mesh(rc.mesh)
    except (ConfigError, MeshFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    issues = validate(mesh)
    if issues:
        for msg in issues:
            print(f"error: mesh: {msg}", file=sys.stderr)
        return EXIT_INPUT
    out = rc.output_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg = replace(rc.adapt, reference=_reference(rc, mesh))

    def on_step(rec, state):
        if not rc.vtk:
            return
        d = state["disc"]
        fields = {"scalar_flux": d.node_scalar_flux(state["forward"])}
        forest = state.get("forest")
        if forest is not None:
            fields["angle_functions"] = forest.counts.astype(float)
        else:
            fields["angle_functions"] = np.full(mesh.n_nodes, float(cfg.surrogate.n_functions))
        if state.get("adjoint") is not None:
            fields["adjoint_scalar_flux"] = d.node_scalar_flux(state["adjoint"])
        flags = state.get("flags")
        fields["underresolved"] = np.zeros(mesh.n_nodes) if flags is None else flags.astype(float)
        write_vtk(mesh, fields, out / f"step_{rec.step:03d}.vtk")

    csv_path = out / "records.csv"
    try:
        result = run(mesh, cfg, on_step=on_step)
    except AdaptAborted as exc:
        write_csv(exc.partial.records, csv_path, rc.record_timings)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_csv(result.records, csv_path, rc.record_timings)
    for r in result.records:
        print(
            f"step {r.step}: ndof {r.ndof}  F {r.detector:.6e}  rel_error {r.rel_error:.3e}  "
            f"effectivity {r.effectivity:.3g}  underresolved {r.underresolved_pct:.1f}%"
        )
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .oracle_suite import verify_suite

    results = verify_suite(fault=args.inject_fault)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    bad = sum(not r.passed for r in results)
    print(f"{len(results) - bad}/{len(results)} checks passed")
    return EXIT_OK if bad == 0 else EXIT_FAIL


def cmd_mesh_gen(args) -> int:
    try:
        m = generate_duct(args.length, args.width, args.h, args.source)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    save(m, args.out)
    print(f"wrote {args.out}: {m.n_elements} elements")
    return EXIT_OK


def cmd_mesh_check(args) -> int:
    try:
        m = load(args.path)
    except (MeshFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    issues = validate(m)
    for msg in issues:
        print(msg)
    print(f"{args.path}: {m.n_elements} elements, {len(issues)} problems")
    return EXIT_OK if not issues else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="angadapt", description="Goal-based angular adaptivity for 2D transport")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a configured experiment")
    r.add_argument("config", type=Path)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run the quick oracle checks")
    v.add_argument("--inject-fault", choices=["moment_matrix"], default=None, help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("mesh", help="generate or check meshes")
    msub = m.add_subparsers(dest="mesh_command", required=True)
    g = msub.add_parser("gen", help="write a duct mesh")
    g.add_argument("out", type=Path)
    g.add_argument("--length", type=float, default=10.0)
    g.add_argument("--width", type=float, default=1.0)
    g.add_argument("--h", type=float, default=0.25)
    g.add_argument("--source", type=float, default=1.0)
    g.set_defaults(func=cmd_mesh_gen)
    c = msub.add_parser("check", help="validate a mesh file")
    c.add_argument("path", type=Path)
    c.set_defaults(func=cmd_mesh_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
