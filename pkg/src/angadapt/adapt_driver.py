"""Goal-based angular adaptivity with a rotationally invariant surrogate.

The robust loop solves a cheap filtered P_N problem (forward and adjoint)
once.  At every step, nodes where the Haar and P_N scalar fluxes disagree by
more than a factor ``ratio`` are treated as underresolved: their Haar
solutions are replaced by the projected P_N fields before the residuals and
the metric are formed.  Where every node agrees the robust metric is exactly
the plain one.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .goal_metric import effectivity_index, error_estimate, error_metric
from .haar import Forest
from .harmonics import FpnConfig
from .mesh import DETECTOR_REGION, TriMesh
from .projection import fpn_leafmeans_forest
from .sphere_grid import OCTANT_SPAN, child_keys
from .transport import FpnDiscretisation, HaarDiscretisation, SolveOptions, SolverError, solve

log = logging.getLogger(__name__)

__all__ = [
    "AdaptConfig",
    "AdaptRecord",
    "AdaptResult",
    "AdaptAborted",
    "MODES",
    "mark_underresolved",
    "assemble_resolved_fields",
    "threshold_adapt",
    "fixed_forest",
    "run",
]

MODES = ("robust", "non_robust", "fixed", "fpn_uniform")


@dataclass(frozen=True)
class AdaptConfig:
    mode: str = "robust"
    tau: float = 1e-3
    max_level: int = 8
    steps: int = 8
    ratio: float = 10.0
    coarsen_fraction: float = 0.01
    flux_floor: float = 1e-300
    surrogate: FpnConfig = FpnConfig(1, 1.0)
    initial_level: int = 0
    fixed_level: int = 0
    fixed_bounds: tuple[float, float, float, float] = (0.0, 2 * math.pi, -1.0, 1.0)
    goal_region: int = DETECTOR_REGION
    skip_final_adjoint: bool = True
    reference: float | None = None
    solver: SolveOptions = SolveOptions()
    precond: str = "angular"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.ratio > 1:
            raise ValueError("ratio must exceed 1")
        if not 0 <= self.coarsen_fraction < 1:
            raise ValueError("coarsen_fraction must lie in [0, 1)")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.max_level < 0 or self.initial_level < 0 or self.fixed_level < 0:
            raise ValueError("levels must be non-negative")


@dataclass
class AdaptRecord:
    step: int
    ndof: int
    mean_angle_dofs: float
    detector: float
    rel_error: float
    effectivity: float
    underresolved_pct: float
    wall_seconds: float
    max_level: int = 0
    estimate: float = math.nan
    iterations: int = 0
    metric_equals_plain: bool | None = None


@dataclass
class AdaptResult:
    records: list[AdaptRecord]
    forest: Forest | None
    forward: np.ndarray | None
    adjoint: np.ndarray | None
    flags: np.ndarray | None = None
    fpn: tuple[np.ndarray, np.ndarray] | None = None
    history: list[dict] = field(default_factory=list)


class AdaptAborted(RuntimeError):
    """A solve failed; ``partial`` holds the records completed so far."""

    def __init__(self, message, partial: AdaptResult):
        super().__init__(message)
        self.partial = partial


# ---------------------------------------------------------------------------


def _pair_unresolved(a, b, ratio, floor):
    a = np.abs(np.asarray(a, dtype=float))
    b = np.abs(np.asarray(b, dtype=float))
    both_small = (a < floor) & (b < floor)
    bad = (b > ratio * a) | (a > ratio * b)
    return bad & ~both_small


def mark_underresolved(phi_h, phi_h_adj, phi_f, phi_f_adj, ratio: float = 10.0, floor: float = 1e-300) -> np.ndarray:
    """Per-node flag: Haar and surrogate scalar fluxes differ by more than ``ratio``.

    Either adjoint argument may be ``None`` to test the forward pair only.
    """
    flags = _pair_unresolved(phi_h, phi_f, ratio, floor)
    if phi_h_adj is not None and phi_f_adj is not None:
        flags |= _pair_unresolved(phi_h_adj, phi_f_adj, ratio, floor)
    return flags


def assemble_resolved_fields(forest: Forest, x_h, x_h_adj, f_fwd, f_adj, order: int, flags):
    """Haar fields with flagged nodes replaced by projected surrogate fields.

    ``f_fwd``/``f_adj`` are per-node harmonic coefficients ``(n_nodes,
    (order+1)**2)``.  Unflagged coefficients are copied unchanged.
    """
    flags = np.asarray(flags, dtype=bool)
    out = []
    nodes = np.flatnonzero(flags)
    mask = flags[forest.coeff_node]
    for x, f in ((x_h, f_fwd), (x_h_adj, f_adj)):
        if x is None:
            out.append(None)
            continue
        x = np.asarray(x, dtype=float)
        y = x.copy()
        if nodes.size:
            u = forest.inverse(x)
            li, vals = fpn_leafmeans_forest(f, order, forest, nodes=nodes)
            u[li] = vals
            y[mask] = forest.forward(u)[mask]
        out.append(y)
    return out[0], out[1]


def threshold_adapt(forest: Forest, metric, max_level: int | None = None, coarsen_fraction: float = 0.01, coeffs=None):
    """Refine/coarsen trees from a per-coefficient metric.

    A subdivided patch whose largest wavelet metric exceeds 1 has each of
    its undivided children subdivided (below ``max_level``).  An undivided
    base octant is subdivided when its scaling metric exceeds 1.  A
    subdivided patch above level 0 whose largest wavelet metric is below
    ``coarsen_fraction`` and whose children are all undivided is coarsened,
    unless one of those children is being refined.
    """
    metric = np.asarray(metric, dtype=float)
    if metric.shape != (forest.n_dofs,):
        raise ValueError("metric does not match the forest")
    if max_level is not None and max_level != forest.max_level:
        forest = Forest(forest.n_nodes, forest.sub_node, forest.sub_key, forest.sub_level, max_level=max_level, check=False)
    g = metric[forest.wavelet_index].max(axis=1) if forest.sub_key.size else np.zeros(0)
    hot = np.flatnonzero(g > 1.0)
    child_leaf = np.zeros(0, dtype=np.int64)
    if hot.size:
        ck = child_keys(forest.sub_key[hot], forest.sub_level[hot]).ravel()
        nodes = np.repeat(forest.sub_node[hot], 4)
        li = forest.leaf_lookup(nodes, ck)
        is_leaf = (forest.leaf_key[li] == ck) & (forest.leaf_level[li] == np.repeat(forest.sub_level[hot] + 1, 4))
        child_leaf = li[is_leaf]
    # undivided base octants gated by their scaling coefficient
    sc = forest.scaling_index
    oct_hot = metric[sc] > 1.0  # (n, 8)
    n_idx, o_idx = np.nonzero(oct_hot)
    li = forest.leaf_lookup(n_idx, o_idx.astype(np.int64) * OCTANT_SPAN)
    base_leaf = li[forest.leaf_level[li] == 0] if li.size else li
    targets = np.unique(np.concatenate([child_leaf, base_leaf]))
    capped = forest.leaf_level[targets] >= forest.max_level
    if np.any(capped):
        log.info("threshold_adapt: %d refinements blocked at max level %d", int(capped.sum()), forest.max_level)
    targets = targets[~capped]

    cold = np.flatnonzero((g < coarsen_fraction) & (forest.sub_level > 0)) if forest.sub_key.size else np.zeros(0, np.int64)
    if cold.size:
        ckc = child_keys(forest.sub_key[cold], forest.sub_level[cold])
        nodes = np.repeat(forest.sub_node[cold], 4)
        lvl = np.repeat(forest.sub_level[cold] + 1, 4)
        li = forest.leaf_lookup(nodes, ckc.ravel())
        is_leaf = ((forest.leaf_key[li] == ckc.ravel()) & (forest.leaf_level[li] == lvl)).reshape(-1, 4)
        refined_child = np.isin(li, targets).reshape(-1, 4)
        cold = cold[is_leaf.all(axis=1) & ~refined_child.any(axis=1)]
    if targets.size == 0 and cold.size == 0:
        return forest if coeffs is None else (forest, coeffs)
    return forest.adapt(targets, cold, coeffs)


def fixed_forest(n_nodes: int, level: int, bounds, mirror: bool = True, max_level: int | None = None) -> Forest:
    """Trees refined to ``level`` on every patch overlapping ``bounds``.

    ``bounds = (phi_lo, phi_hi, mu_lo, mu_hi)``.  With ``mirror`` the polar
    range is reflected through the equator as well (z-symmetric 2D runs).
    """
    phi_lo, phi_hi, mu_lo, mu_hi = bounds
    boxes = [(mu_lo, mu_hi)]
    if mirror:
        boxes.append((-mu_hi, -mu_lo))
    f = Forest.uniform(1, 0, max_level=max(level, max_level or level))
    for _ in range(level):
        pl, ph, ml, mh = f.leaf_bounds
        hit = np.zeros(f.n_dofs, dtype=bool)
        for a, b in boxes:
            hit |= (pl < phi_hi) & (ph > phi_lo) & (ml < b) & (mh > a)
        hit &= f.leaf_level < level
        if not hit.any():
            break
        f = f.refine(np.flatnonzero(hit))
    return f.replicate(n_nodes)


# ---------------------------------------------------------------------------


def _rel_error(F, ref):
    if ref is None:
        return math.nan
    if ref == 0:
        return math.nan if F == 0 else math.inf
    return abs(F - ref) / abs(ref)


def _solve_fpn(mesh, cfg: AdaptConfig, fpn: FpnConfig, want_adjoint=True):
    d = FpnDiscretisation(mesh, fpn)
    fw = solve(d, d.source_vector(), cfg.solver)
    ad = solve(d, d.goal_vector(cfg.goal_region), cfg.solver, direction="adjoint") if want_adjoint else None
    nh = fpn.n_functions
    return d, fw, ad, nh


def run(mesh: TriMesh, cfg: AdaptConfig, on_step: Callable | None = None) -> AdaptResult:
    """Execute the configured mode; ``on_step(record, state)`` is called per step."""
    t0 = time.perf_counter()
    records: list[AdaptRecord] = []
    result = AdaptResult(records, None, None, None)

    def elapsed():
        return time.perf_counter() - t0

    try:
        if cfg.mode == "fpn_uniform":
            d, fw, _, nh = _solve_fpn(mesh, cfg, cfg.surrogate, want_adjoint=False)
            F = d.functional(fw.x, cfg.goal_region)
            rec = AdaptRecord(1, d.n_dofs, float(nh), F, _rel_error(F, cfg.reference), math.nan, math.nan, elapsed(), iterations=fw.iterations)
            records.append(rec)
            result.forward = fw.x
            if on_step:
                on_step(rec, dict(disc=d, forward=fw.x))
            return result

        if cfg.mode == "fixed":
            forest = fixed_forest(mesh.n_nodes, cfg.fixed_level, cfg.fixed_bounds, max_level=cfg.max_level)
            d = HaarDiscretisation(mesh, forest, precond=cfg.precond)
            fw = solve(d, d.source_vector(), cfg.solver)
            F = d.functional(fw.x, cfg.goal_region)
            rec = AdaptRecord(
                1,
                d.n_dofs,
                d.n_dofs / mesh.n_nodes,
                F,
                _rel_error(F, cfg.reference),
                math.nan,
                math.nan,
                elapsed(),
                max_level=int(forest.leaf_level.max()),
                iterations=fw.iterations,
            )
            records.append(rec)
            result.forest, result.forward = forest, fw.x
            if on_step:
                on_step(rec, dict(disc=d, forest=forest, forward=fw.x))
            return result

        robust = cfg.mode == "robust"
        order = cfg.surrogate.order
        f_fwd = f_adj = None
        if robust:
            _, sfw, sad, nh = _solve_fpn(mesh, cfg, cfg.surrogate)
            f_fwd = sfw.x.reshape(-1, nh)
            f_adj = sad.x.reshape(-1, nh)
            result.fpn = (f_fwd, f_adj)
            phi_f = np.sqrt(4 * np.pi) * f_fwd[:, 0]
            phi_f_adj = np.sqrt(4 * np.pi) * f_adj[:, 0]
            log.info("surrogate FP_%d solved (%d + %d iterations)", order, sfw.iterations, sad.iterations)

        forest = Forest.uniform(mesh.n_nodes, cfg.initial_level, max_level=cfg.max_level)
        x0 = x0_adj = None
        for step in range(1, cfg.steps + 1):
            last = step == cfg.steps
            d = HaarDiscretisation(mesh, forest, precond=cfg.precond)
            fw = solve(d, d.source_vector(), cfg.solver, x0=x0)
            iters = fw.iterations
            need_adj = not (last and cfg.skip_final_adjoint)
            ad = None
            if need_adj:
                ad = solve(d, d.goal_vector(cfg.goal_region), cfg.solver, direction="adjoint", x0=x0_adj)
                iters += ad.iterations
            F = d.functional(fw.x, cfg.goal_region)
            phi_h = d.node_scalar_flux(fw.x)
            phi_h_adj = d.node_scalar_flux(ad.x) if ad is not None else None

            flags = None
            pct = math.nan
            if robust:
                flags = mark_underresolved(
                    phi_h, phi_h_adj, phi_f, phi_f_adj if ad is not None else None, cfg.ratio, cfg.flux_floor
                )
                pct = 100.0 * float(flags.mean())

            est = math.nan
            eff = math.nan
            equal = None
            metric = None
            if ad is not None:
                diag = d.diagonal()
                if robust:
                    xr, xr_adj = assemble_resolved_fields(forest, fw.x, ad.x, f_fwd, f_adj, order, flags)
                else:
                    xr, xr_adj = fw.x, ad.x
                r_hat, r_hat_adj = diag * xr, diag * xr_adj
                metric = error_metric(xr, xr_adj, r_hat, r_hat_adj, d.n_dofs, cfg.tau)
                est = error_estimate(xr, r_hat_adj)
                if cfg.reference is not None:
                    eff = effectivity_index(est, cfg.reference - F)
                if robust:
                    plain = error_metric(fw.x, ad.x, diag * fw.x, diag * ad.x, d.n_dofs, cfg.tau)
                    equal = bool(np.array_equal(plain, metric))

            rec = AdaptRecord(
                step,
                d.n_dofs,
                d.n_dofs / mesh.n_nodes,
                F,
                _rel_error(F, cfg.reference),
                eff,
                pct,
                elapsed(),
                max_level=int(forest.leaf_level.max()),
                estimate=est,
                iterations=iters,
                metric_equals_plain=equal,
            )
            records.append(rec)
            result.forest, result.forward = forest, fw.x
            result.adjoint = ad.x if ad is not None else None
            result.flags = flags
            log.info(
                "step %d: ndof %d, F %.6e, rel err %.3e, eff %.3g, underresolved %.1f%%, %.1fs",
                step, rec.ndof, F, rec.rel_error, eff, pct, rec.wall_seconds,
            )
            if on_step:
                on_step(rec, dict(disc=d, forest=forest, forward=fw.x, adjoint=result.adjoint, flags=flags, metric=metric))
            if last or metric is None:
                break
            vecs = [fw.x, ad.x]
            new_forest, moved = threshold_adapt(forest, metric, cfg.max_level, cfg.coarsen_fraction, coeffs=vecs)
            x0, x0_adj = moved
            forest = new_forest
        return result
    except SolverError as exc:
        raise AdaptAborted(f"solver failed after {len(records)} completed steps: {exc}", result) from exc
