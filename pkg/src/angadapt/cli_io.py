"""Run configuration (INI), VTK legacy output and the per-step CSV record.

Configuration keys and defaults::

    [mesh]       kind = duct | file      (duct)
                 length = 10, width = 1, h = 0.25, source = 1.0   (duct)
                 path = <mesh file>                               (file)
    [angle]      initial_level = 0, max_level = 8, precond = angular
    [surrogate]  order = 1, sigma_f = 1.0, filter = sinc
    [adapt]      mode = robust, tau = 1e-3, steps = 8, ratio = 10,
                 coarsen_fraction = 0.01, flux_floor = 1e-300,
                 skip_final_adjoint = true,
                 fixed_level = 0, fixed_phi = 0 6.283185307179586,
                 fixed_mu = -1 1
    [solver]     abs_tol = 1e-10, rel_tol = 1e-10, max_iterations = 20000,
                 restart = 60
    [goal]       region = 2
    [reference]  mode = none | value | fixed   (none)
                 value = <float>, fixed_level = 8
    [output]     directory = out, vtk = true, record_timings = false

Relative paths are resolved against the directory holding the config file.
"""
from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapt_driver import MODES, AdaptConfig, AdaptRecord
from .harmonics import FILTERS, FpnConfig
from .mesh import DETECTOR_REGION, TriMesh, generate_duct, load
from .transport import SolveOptions

__all__ = [
    "ConfigError",
    "RunConfig",
    "CSV_HEADER",
    "parse_config",
    "load_config",
    "build_mesh",
    "write_vtk",
    "write_csv",
    "read_csv",
    "format_value",
]

CSV_HEADER = ["step", "ndof", "mean_angle_dofs", "detector", "rel_error", "effectivity", "underresolved_pct", "wall_seconds"]

_SCHEMA: dict[str, dict[str, object]] = {
    "mesh": dict(kind="duct", length=10.0, width=1.0, h=0.25, source=1.0, path=""),
    "angle": dict(initial_level=0, max_level=8, precond="angular"),
    "surrogate": dict(order=1, sigma_f=1.0, filter="sinc"),
    "adapt": dict(
        mode="robust",
        tau=1e-3,
        steps=8,
        ratio=10.0,
        coarsen_fraction=0.01,
        flux_floor=1e-300,
        skip_final_adjoint=True,
        fixed_level=0,
        fixed_phi="0 6.283185307179586",
        fixed_mu="-1 1",
    ),
    "solver": dict(abs_tol=1e-10, rel_tol=1e-10, max_iterations=20000, restart=60),
    "goal": dict(region=DETECTOR_REGION),
    "reference": dict(mode="none", value=math.nan, fixed_level=8),
    "output": dict(directory="out", vtk=True, record_timings=False),
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the file, section and key."""


@dataclass
class RunConfig:
    adapt: AdaptConfig
    mesh: dict
    reference: dict
    output_dir: Path
    vtk: bool = True
    record_timings: bool = False
    source: Path | None = None
    extras: dict = field(default_factory=dict)


def _convert(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _pair(text: str, where: str):
    parts = text.replace(",", " ").split()
    if len(parts) != 2:
        raise ConfigError(f"{where}: expected two numbers, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigError(f"{where}: expected two numbers, got {text!r}") from None


def parse_config(text: str, name: str = "<config>", base: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=name)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    vals: dict[str, dict] = {}
    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"{name}: unknown section [{sec}]")
    for sec, defaults in _SCHEMA.items():
        got = dict(defaults)
        if cp.has_section(sec):
            for key, raw in cp.items(sec):
                if key not in defaults:
                    raise ConfigError(f"{name}: [{sec}] unknown key {key!r}")
                got[key] = _convert(raw, defaults[key], f"{name}: [{sec}] {key}")
        vals[sec] = got

    a, s, an, so = vals["adapt"], vals["surrogate"], vals["angle"], vals["solver"]
    if a["mode"] not in MODES:
        raise ConfigError(f"{name}: [adapt] mode must be one of {', '.join(MODES)}")
    if s["filter"] not in FILTERS:
        raise ConfigError(f"{name}: [surrogate] filter must be one of {', '.join(FILTERS)}")
    if vals["mesh"]["kind"] not in ("duct", "file"):
        raise ConfigError(f"{name}: [mesh] kind must be duct or file")
    if vals["reference"]["mode"] not in ("none", "value", "fixed"):
        raise ConfigError(f"{name}: [reference] mode must be none, value or fixed")
    phi = _pair(a["fixed_phi"], f"{name}: [adapt] fixed_phi")
    mu = _pair(a["fixed_mu"], f"{name}: [adapt] fixed_mu")
    try:
        cfg = AdaptConfig(
            mode=a["mode"],
            tau=a["tau"],
            max_level=an["max_level"],
            steps=a["steps"],
            ratio=a["ratio"],
            coarsen_fraction=a["coarsen_fraction"],
            flux_floor=a["flux_floor"],
            surrogate=FpnConfig(s["order"], s["sigma_f"], s["filter"]),
            initial_level=an["initial_level"],
            fixed_level=a["fixed_level"],
            fixed_bounds=(phi[0], phi[1], mu[0], mu[1]),
            goal_region=vals["goal"]["region"],
            skip_final_adjoint=a["skip_final_adjoint"],
            solver=SolveOptions(so["abs_tol"], so["rel_tol"], so["max_iterations"], so["restart"]),
            precond=an["precond"],
        )
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    base = base or Path(".")
    mesh = dict(vals["mesh"])
    if mesh["kind"] == "file":
        if not mesh["path"]:
            raise ConfigError(f"{name}: [mesh] path is required for kind = file")
        mesh["path"] = str(base / mesh["path"])
    out = vals["output"]
    return RunConfig(
        adapt=cfg,
        mesh=mesh,
        reference=vals["reference"],
        output_dir=base / out["directory"],
        vtk=out["vtk"],
        record_timings=out["record_timings"],
    )


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {p}") from None
    rc = parse_config(text, str(p), p.parent)
    rc.source = p
    return rc


def build_mesh(mesh_cfg: dict) -> TriMesh:
    if mesh_cfg["kind"] == "file":
        return load(mesh_cfg["path"])
    return generate_duct(mesh_cfg["length"], mesh_cfg["width"], mesh_cfg["h"], mesh_cfg["source"])


# ---------------------------------------------------------------------------


def write_vtk(mesh: TriMesh, fields: dict[str, np.ndarray], path) -> None:
    """Legacy ASCII unstructured grid; DG nodes become points (3 per triangle)."""
    n = mesh.n_nodes
    for k, v in fields.items():
        if np.shape(v) != (n,):
            raise ValueError(f"field {k!r} has shape {np.shape(v)}, expected ({n},)")
    xy = mesh.node_xy
    lines = [
        "# vtk DataFile Version 3.0",
        "angadapt output",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    lines += [f"{x!r} {y!r} 0.0" for x, y in xy.tolist()]
    ne = mesh.n_elements
    lines.append(f"CELLS {ne} {4 * ne}")
    lines += [f"3 {3 * e} {3 * e + 1} {3 * e + 2}" for e in range(ne)]
    lines.append(f"CELL_TYPES {ne}")
    lines += ["5"] * ne
    lines.append(f"POINT_DATA {n}")
    for k, v in fields.items():
        lines += [f"SCALARS {k} double 1", "LOOKUP_TABLE default"]
        lines += [repr(float(x)) for x in np.asarray(v, dtype=float)]
    Path(path).write_text("\n".join(lines) + "\n")


def format_value(v) -> str:
    """12 significant digits; integers stay integers."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.12g}"


def write_csv(records: list[AdaptRecord], path, record_timings: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(
                [
                    format_value(r.step),
                    format_value(r.ndof),
                    format_value(r.mean_angle_dofs),
                    format_value(r.detector),
                    format_value(r.rel_error),
                    format_value(r.effectivity),
                    format_value(r.underresolved_pct),
                    format_value(r.wall_seconds if record_timings else math.nan),
                ]
            )


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = []
        for row in rd:
            d = {}
            for k, v in zip(header, row):
                d[k] = int(v) if k in ("step", "ndof") else float(v)
            rows.append(d)
    return rows
