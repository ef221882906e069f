"""Acceptance checks, one test per criterion.

Every test prints a single ``PASS``/``FAIL`` line (bypassing pytest's capture)
and then asserts.  Run standalone with ``python3 tests/test_acceptance.py``.
"""
import configparser
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from angadapt.adapt_driver import AdaptConfig, run
from angadapt.cli_io import read_csv
from angadapt.haar import AngleMap, Forest, mallat_forward, mallat_inverse
from angadapt.harmonics import FpnConfig, eval_Y_all, filter_coeff, n_harmonics, rotate_z
from angadapt.mesh import DETECTOR_REGION, SOURCE_REGION, Material, generate_box, generate_duct
from angadapt.oracle_suite import (
    _oracle_grid,
    _random_forest,
    brute_haar_matrix,
    dense_assemble,
    quad_oracle,
    scaling_fit,
    time_callable,
)
from angadapt.projection import fpn_leafmeans_forest
from angadapt.sphere_grid import base_octants, key_half_range, key_moments
from angadapt.transport import FpnDiscretisation, HaarDiscretisation, SolveOptions, solve

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
DUCT_BOUNDS = (1.47976, 1.661832, 0.0, 1.0)
# h = 0.25 for the level-8 reference needs more memory than a 5 GB box has
DUCT10_H = 0.5
TOL = 1e-10


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}", flush=True)
        assert ok, f"criterion {n}: {detail}"

    return emit


# ----------------------------------------------------------------- 1 to 5


def test_criterion_01_transform_exactness(report):
    rng = np.random.default_rng(101)
    worst = 0.0
    m = AngleMap.uniform(6)
    c = rng.standard_normal(m.n_functions)
    worst = max(worst, np.max(np.abs(mallat_forward(mallat_inverse(m.with_coeffs(c)), m).coeffs - c)))
    for seed in range(20):
        f = _random_forest(np.random.default_rng(seed), 3, 6, max_level=6)
        c = rng.standard_normal(f.n_dofs)
        u = rng.standard_normal(f.n_dofs)
        worst = max(worst, np.max(np.abs(f.forward(f.inverse(c)) - c)), np.max(np.abs(f.inverse(f.forward(u)) - u)))
    report(1, worst <= 1e-13, f"max roundtrip error {worst:.2e} (limit 1e-13)")


def test_criterion_02_mallat_scaling(report):
    rng = np.random.default_rng(102)
    base = _random_forest(rng, 1, 5)
    sizes, times = [], []
    for nodes in np.geomspace(1000 / base.n_dofs, 1e6 / base.n_dofs, 7).round().astype(int):
        f = base.replicate(int(nodes))
        c = rng.standard_normal(f.n_dofs)
        sizes.append(f.n_dofs)
        times.append(time_callable(lambda: f.forward(f.inverse(c)), repeats=5))
    p = scaling_fit(sizes, times)
    report(2, p <= 1.2, f"time exponent {p:.3f} over {sizes[0]}..{sizes[-1]} functions (limit 1.2)")


def test_criterion_03_harmonics(report):
    P, M, W = _oracle_grid(9)
    Y = eval_Y_all(9, P, M)
    gram = np.max(np.abs((Y * W) @ Y.T - np.eye(n_harmonics(9))))
    f0 = filter_coeff(0, 1, 1.0)
    f111 = filter_coeff(1, 1, 1.0)
    c = np.random.default_rng(103).standard_normal(n_harmonics(9))
    damp = np.exp(-FpnConfig(9, 1.0).removal())
    comm = np.max(np.abs(rotate_z(damp * c, 0.7) - damp * rotate_z(c, 0.7)))
    ok = gram <= 1e-12 and f0 == 0.0 and abs(f111 - 0.0420191) <= 1e-6 and comm <= 1e-12
    report(3, ok, f"Gram {gram:.1e}, filter(0)={f0}, filter(1,1,1)={f111:.7f}, rotation {comm:.1e}")


def _mms(rng):
    m = generate_box(3, 2, lx=1.5, ly=1.0)
    f = _random_forest(rng, 1, 4).replicate(m.n_nodes)
    d = HaarDiscretisation(m, f)
    lo_p, hi_p, lo_m, hi_m = f.leaf_bounds
    pc, mc = 0.5 * (lo_p + hi_p), 0.5 * (lo_m + hi_m)
    a, b, c = 1.0 + 0.3 * np.cos(pc) * mc, 0.2 + 0.1 * np.sin(2 * pc), -0.15 + 0.05 * mc
    xy = m.node_xy[f.leaf_node]
    exact = f.forward(a + b * xy[:, 0] + c * xy[:, 1])
    mx, my = key_moments(f.leaf_key, f.leaf_level)
    n0 = f.counts[0]
    lookup = {(int(k), int(lv)): i for i, (k, lv) in enumerate(zip(f.leaf_key[:n0], f.leaf_level[:n0]))}

    def inflow(pts, keys, levels):
        i = np.array([lookup[(int(k), int(lv))] for k, lv in zip(keys, levels)])
        return a[i] + b[i] * pts[:, 0] + c[i] * pts[:, 1]

    rhs = d.leaf_load((mx * b + my * c) / f.leaf_area) + d.inflow_vector(inflow)
    x = solve(d, rhs, SolveOptions(abs_tol=1e-14, rel_tol=1e-14)).x
    return np.max(np.abs(x - exact))


def test_criterion_04_operator_correctness(report):
    rng = np.random.default_rng(104)
    box = generate_box(2, 2, material=Material(1.5, 0.5, 1.0))
    f = _random_forest(rng, box.n_nodes, 2, max_level=1)
    d = HaarDiscretisation(box, f)
    A = dense_assemble(d)
    dense = np.max(np.abs(A - brute_haar_matrix(box, f)))
    v = rng.standard_normal(d.n_dofs)
    dense = max(dense, np.max(np.abs(A @ v - d.apply(v))))

    duct = generate_duct(2, 1, 0.5)
    dd = HaarDiscretisation(duct, _random_forest(rng, duct.n_nodes, 3))
    u, w = rng.standard_normal((2, dd.n_dofs))
    lhs, rhs = dd.apply(u) @ w, u @ dd.apply(w, "adjoint")
    transpose = abs(lhs - rhs) / max(1.0, abs(lhs))

    mms = _mms(rng)

    m = generate_duct(3, 1, 0.5)
    hd = HaarDiscretisation(m, Forest.uniform(m.n_nodes, 1))
    q, g = hd.source_vector(), hd.goal_vector(DETECTOR_REGION)
    F = hd.functional(solve(hd, q).x, DETECTOR_REGION)
    gap = abs(F - solve(hd, g, direction="adjoint").x @ q)

    ok = dense <= 1e-12 and transpose <= 1e-12 and mms <= 1e-11 and gap <= 10 * TOL * abs(F)
    report(
        4,
        ok,
        f"dense {dense:.1e}, transpose {transpose:.1e}, MMS {mms:.1e}, duality gap {gap:.1e} vs bound {10 * TOL * abs(F):.1e}",
    )


def test_criterion_05_conservation(report):
    m = generate_duct(10, 1, DUCT10_H)
    # ragged per-node trees so the balance comes out of an iterative solve
    f = _random_forest(np.random.default_rng(5), m.n_nodes, 3)
    d = HaarDiscretisation(m, f)
    res = solve(d, d.source_vector())
    leaf = f.inverse(res.x)
    ptr = np.concatenate([[0], np.cumsum(f.counts)])
    bn, nrm, L = m.faces["bnd_nodes"], m.faces["bnd_normal"], m.faces["bnd_length"]
    out = 0.0
    for i in range(len(bn)):
        for node in bn[i]:
            s = slice(ptr[node], ptr[node + 1])
            nx, ny = np.full(f.counts[node], nrm[i, 0]), np.full(f.counts[node], nrm[i, 1])
            plus, _ = key_half_range(f.leaf_key[s], f.leaf_level[s], nx, ny)
            out += float(np.sum(plus * 0.5 * L[i] * leaf[s]))
    emitted = m.region_volume(SOURCE_REGION) * m.regions[SOURCE_REGION].source
    balance = abs(out - emitted) / emitted

    rng = np.random.default_rng(105)
    N = 5
    tree = _random_forest(rng, 1, 4)
    coeffs = rng.standard_normal(n_harmonics(N))
    means = fpn_leafmeans_forest(coeffs[None, :], N, tree)
    lo_p, hi_p, lo_m, hi_m = tree.leaf_bounds
    moment = 0.0
    for p in base_octants():
        sel = (lo_p >= p.phi_lo - 1e-15) & (hi_p <= p.phi_hi + 1e-15) & (lo_m >= p.mu_lo - 1e-15) & (hi_m <= p.mu_hi + 1e-15)
        got = float(np.sum(means[sel] * tree.leaf_area[sel]))
        ref = quad_oracle(lambda ph, mu: np.tensordot(coeffs, eval_Y_all(N, ph, mu), 1), patch=(p.phi_lo, p.phi_hi, p.mu_lo, p.mu_hi))
        moment = max(moment, abs(got - ref))
    # particle balance is limited by the linear solve: allow a small multiple of its tolerance
    ok = balance <= 10 * TOL and moment <= 1e-10
    report(5, ok, f"relative balance defect {balance:.1e} after {res.iterations} iterations (solver tol {TOL:g}), octant moment error {moment:.1e}")


# ----------------------------------------------------------------- 6 and 7


def test_criterion_06_ray_effects(report):
    m = generate_duct(10, 1, 0.125)
    d = HaarDiscretisation(m, Forest.uniform(m.n_nodes, 1))
    x = solve(d, d.source_vector()).x
    F_h = d.functional(x, DETECTOR_REGION)
    src = np.repeat(m.tri_region == SOURCE_REGION, 3)
    phi_src = float(np.mean(d.node_scalar_flux(x)[src]))
    fp = {}
    for h in (0.5, 0.25, 0.125):
        mh = generate_duct(10, 1, h)
        dh = FpnDiscretisation(mh, FpnConfig(1, 1.0))
        fp[h] = dh.functional(solve(dh, dh.source_vector()).x, DETECTOR_REGION)
    vals = np.array(list(fp.values()))
    spread = vals.max() / vals.min() if np.all(vals > 0) else math.inf
    ok = abs(F_h) <= 1e-8 * phi_src and np.all(vals > 0) and spread <= 2.0
    detail = ", ".join(f"h={h}: {v:.4e}" for h, v in fp.items())
    report(6, ok, f"H_1 F={F_h:.2e} vs source flux {phi_src:.3e}; FP_1 {detail}; spread x{spread:.3f}")


@pytest.fixture(scope="module")
def duct10_reference():
    m = generate_duct(10, 1, DUCT10_H)
    cfg = AdaptConfig(mode="fixed", max_level=8, fixed_level=8, fixed_bounds=DUCT_BOUNDS)
    return m, run(m, cfg).records[0].detector


def test_criterion_07_non_robust_failure(report, duct10_reference):
    m, ref = duct10_reference
    cfg = AdaptConfig(mode="non_robust", tau=1e-3, max_level=8, steps=4, surrogate=FpnConfig(1, 1.0), reference=ref)
    rec = run(m, cfg).records
    same = len({r.ndof for r in rec[:3]}) == 1 and len(rec) >= 3
    eff = rec[0].effectivity
    report(7, same and eff <= 1e-10, f"ndof per step {[r.ndof for r in rec]}, step 1 effectivity {eff:.2e}")


# ----------------------------------------------------------------- 8 to 10


@pytest.fixture(scope="module")
def robust_duct10(duct10_reference):
    m, ref = duct10_reference
    cfg = AdaptConfig(mode="robust", tau=1e-3, max_level=8, steps=8, surrogate=FpnConfig(1, 1.0), reference=ref)
    t = time.perf_counter()
    rec = run(m, cfg).records
    wall = time.perf_counter() - t
    fixed = {}
    for lvl in sorted({r.max_level for r in rec}):
        c = AdaptConfig(mode="fixed", max_level=8, fixed_level=lvl, fixed_bounds=DUCT_BOUNDS, reference=ref)
        fixed[lvl] = run(m, c).records[0].rel_error
    return rec, wall, fixed


def test_criterion_08_robust_success(report, robust_duct10):
    rec, wall, fixed = robust_duct10
    under = [r.underresolved_pct for r in rec]
    err = [r.rel_error for r in rec]
    triggered = rec[1].ndof > rec[0].ndof
    monotone = all(b <= a for a, b in zip(under, under[1:]))
    reaches = under[-1] == 0.0
    drop = err[0] / err[-1]
    ratios = [r.rel_error / fixed[r.max_level] for r in rec]
    matched = all(q <= 3.0 for q in ratios)
    ok = triggered and monotone and reaches and drop >= 10 and matched and wall <= 900
    report(
        8,
        ok,
        f"refined at step 1: {triggered}; underresolved % {[round(u, 1) for u in under]}; "
        f"error drop x{drop:.1f}; worst robust/fixed {max(ratios):.2f}; {wall:.0f}s",
    )


def test_criterion_09_effectivity_band(report, robust_duct10):
    rec = robust_duct10[0]
    pre = [r.effectivity for r in rec if r.underresolved_pct > 0]
    defined = [r.effectivity for r in rec if not math.isnan(r.effectivity)]
    ok = all(0.05 <= e <= 200 for e in pre) and all(e != 0 for e in defined)
    report(9, ok, f"pre-asymptotic effectivities {[float(f'{e:.3g}') for e in pre]} (band 0.05..200)")


def test_criterion_10_reversion(report, robust_duct10):
    rec = robust_duct10[0]
    checked = [r.metric_equals_plain for r in rec if r.underresolved_pct == 0 and r.metric_equals_plain is not None]
    ok = bool(checked) and all(checked)
    report(10, ok, f"{sum(checked)}/{len(checked)} resolved steps have robust metric == plain metric")


# ----------------------------------------------------------------- 11 and 12


def _config_copy(src: Path, dst_dir: Path, **overrides) -> Path:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(src)
    for key, value in overrides.items():
        sec, opt = key.split("__")
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, opt, str(value))
    out = dst_dir / src.name
    with open(out, "w") as fh:
        cp.write(fh)
    return out


def _cli(config: Path, timeout=None):
    return subprocess.run(
        [sys.executable, "-m", "angadapt.cli", "run", str(config)],
        capture_output=True,
        text=True,
        timeout=timeout,
    )


def test_criterion_11_duct100_smoke(report, tmp_path):
    cfg = _config_copy(CONFIGS / "duct100_fp9.ini", tmp_path, output__directory=tmp_path / "out")
    t = time.perf_counter()
    try:
        proc = _cli(cfg, timeout=1800)
    except subprocess.TimeoutExpired:
        report(11, False, f"did not finish within 1800s (stopped after {time.perf_counter() - t:.0f}s)")
        return
    wall = time.perf_counter() - t
    if proc.returncode != 0:
        report(11, False, f"exit code {proc.returncode}: {proc.stderr.strip()[-300:]}")
        return
    rows = read_csv(tmp_path / "out" / "records.csv")
    F = np.array([r["detector"] for r in rows])
    final = F[-1]
    starts_dark = abs(F[0]) <= 1e-8 * abs(final)
    stable = final > 0 and F[-2] > 0 and max(F[-2], final) / min(F[-2], final) <= 2.0
    dips = [r["step"] for a, r in zip(rows, rows[1:]) if r["ndof"] < a["ndof"]]
    ok = len(rows) == 6 and starts_dark and stable
    report(11, ok, f"detector per step {[f'{v:.3e}' for v in F]}; ndof decreases at steps {dips}; {wall:.0f}s")


def test_criterion_12_determinism(report, tmp_path):
    csvs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        d.mkdir()
        cfg = _config_copy(
            CONFIGS / "duct10_robust.ini",
            d,
            output__directory=d / "out",
            adapt__steps=4,
            reference__fixed_level=5,
        )
        proc = _cli(cfg, timeout=1200)
        assert proc.returncode == 0, proc.stderr
        csvs.append((d / "out" / "records.csv").read_bytes())
    report(12, csvs[0] == csvs[1] and len(csvs[0]) > 0, f"two runs, {len(csvs[0])} bytes each, identical={csvs[0] == csvs[1]}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
