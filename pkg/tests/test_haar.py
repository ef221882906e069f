import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from angadapt.haar import (
    AngleMap,

    TreeError,
    WAVELET_SIGNS,
    coarsen,
    mallat_forward,
    mallat_inverse,
    refine,
)
from angadapt.oracle_suite import haar_basis_on_grid
from angadapt.sphere_grid import base_octants, subdivide
from conftest import random_forest


def one_split():
    return AngleMap.from_patches([base_octants()[0]])


def test_constant_expansion():
    m = AngleMap.uniform(2)
    c = np.zeros(m.n_functions)
    c[:8] = 1.7
    assert np.all(mallat_inverse(m.with_coeffs(c)) == 1.7)


def test_single_split_stencil():
    t = one_split()
    c = np.zeros(t.n_functions)
    c[0], c[8:11] = 2.5, (0.5, 1.0, 0.0)
    vals = mallat_inverse(t.with_coeffs(c))
    assert np.allclose(vals[:4], [1, 2, 3, 4], atol=1e-15)
    back = mallat_forward(vals, t)
    assert np.allclose(back.coeffs[[0, 8, 9, 10]], [2.5, 0.5, 1.0, 0.0], atol=1e-15)


def test_constant_leaves_have_no_detail(rng):
    f = random_forest(rng, 1, 4)
    t = AngleMap(f.sub_key, f.sub_level)
    out = mallat_forward(np.full(f.n_dofs, 3.0), t)
    assert np.max(np.abs(out.coeffs[8:])) < 1e-14


def test_uniform_depth6_roundtrip(rng):
    m = AngleMap.uniform(6)
    c = rng.standard_normal(m.n_functions)
    back = mallat_forward(mallat_inverse(m.with_coeffs(c)), m)
    assert np.max(np.abs(back.coeffs - c)) < 1e-13


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 5))
def test_ragged_roundtrips(seed, rounds, nodes):
    rng = np.random.default_rng(seed)
    f = random_forest(rng, nodes, rounds, p=0.4)
    c = rng.standard_normal(f.n_dofs)
    assert np.max(np.abs(f.forward(f.inverse(c)) - c)) < 1e-13
    u = rng.standard_normal(f.n_dofs)
    assert np.max(np.abs(f.inverse(f.forward(u)) - u)) < 1e-13
    assert f.counts.sum() == f.n_dofs
    nsub = np.bincount(f.sub_node, minlength=nodes)
    assert np.array_equal(f.counts, 8 + 3 * nsub)


def test_transposed_transforms(rng):
    f = random_forest(rng, 3, 4)
    c, u = rng.standard_normal(f.n_dofs), rng.standard_normal(f.n_dofs)
    assert u @ f.inverse(c) == pytest.approx(f.inverse_T(u) @ c, rel=1e-13)
    assert u @ f.forward(c) == pytest.approx(f.forward_T(u) @ c, rel=1e-13)


def test_inverse_matches_basis_functions_from_oracle(rng):
    f = random_forest(rng, 1, 3, max_level=3)
    L = int(f.leaf_level.max())
    B, _ = haar_basis_on_grid(list(zip(f.sub_key.tolist(), f.sub_level.tolist())), L)
    c = rng.standard_normal(f.n_dofs)
    leaf = f.inverse(c)
    assert np.allclose(np.repeat(leaf, 4 ** (L - f.leaf_level)), c @ B, atol=1e-13)


def test_orthogonality_of_one_subdivision():
    areas = np.full(4, math.pi / 8)
    G = (WAVELET_SIGNS * areas) @ WAVELET_SIGNS.T
    assert np.max(np.abs(G - np.diag(np.diag(G)))) < 1e-13


def test_energy_identity(rng):
    f = random_forest(rng, 2, 5)
    c = rng.standard_normal(f.n_dofs)
    v = f.inverse(c)
    lhs = np.sum(v * v * f.leaf_area)
    rhs = np.sum(c[f.scaling_index] ** 2) * math.pi / 2
    if f.sub_key.size:
        supp = math.pi / 2 / 4.0 ** f.sub_level
        rhs += np.sum(c[f.wavelet_index] ** 2 * supp[:, None])
    assert abs(lhs - rhs) < 1e-12 * max(1.0, lhs)


def test_orphan_subdivision_rejected():
    child = subdivide(base_octants()[0])[1]
    with pytest.raises(TreeError):
        AngleMap.from_patches([child]).forest


def test_leaf_count_mismatch_rejected():
    with pytest.raises(TreeError):
        mallat_forward(np.zeros(5), one_split())


def test_refine_adds_three_and_keeps_function(rng):
    m = AngleMap.uniform(0, rng.standard_normal(8))
    r = refine(m, [base_octants()[2]])
    assert r.n_functions == 11
    old = mallat_inverse(m)
    new = mallat_inverse(r)
    # refined octant 2 -> four equal leaves carrying the old value
    assert np.allclose(new[2:6], old[2])
    assert np.allclose(np.delete(new, [2, 3, 4, 5]), np.delete(old, 2))


def test_refine_restricts_to_old_values(rng):
    f = random_forest(rng, 1, 3)
    m = AngleMap(f.sub_key, f.sub_level, rng.standard_normal(f.n_dofs))
    leaves = m.leaves()
    targets = [leaves[i] for i in rng.choice(len(leaves), 5, replace=False)]
    r = refine(m, targets)
    old_map = dict(zip(zip(*m.leaf_keys()), mallat_inverse(m)))
    for (k, lv), v in zip(zip(*r.leaf_keys()), mallat_inverse(r)):
        # value equals the value of the old leaf that contains it
        parent = [val for (ok, ol), val in old_map.items() if ok <= k < ok + 4 ** (18 - ol) and ol <= lv]
        assert parent and abs(parent[-1] - v) < 1e-13


def test_empty_targets_are_identity(rng):
    m = AngleMap.uniform(1, rng.standard_normal(8 + 24))
    for op in (refine, coarsen):
        out = op(m, [])
        assert np.array_equal(out.coeffs, m.coeffs)
        assert np.array_equal(out.sub_key, m.sub_key)


def test_refine_at_cap_is_skipped(caplog):
    m = AngleMap.uniform(1, np.zeros(32), max_level=1)
    leaf = m.leaves()[0]
    with caplog.at_level("INFO"):
        out = refine(m, [leaf])
    assert out.n_functions == m.n_functions
    assert "max level" in caplog.text


def test_coarsen_undoes_refine(rng):
    m = AngleMap.uniform(1, rng.standard_normal(32))
    leaves = m.leaves()[:3]
    r = refine(m, leaves)
    back = coarsen(r, leaves)
    assert np.array_equal(back.coeffs, m.coeffs)
    assert np.array_equal(back.sub_key, m.sub_key)


def test_coarsen_averages_children(rng):
    m = AngleMap.from_patches([base_octants()[0]], rng.standard_normal(11))
    vals = mallat_inverse(m)
    c = coarsen(m, [base_octants()[0]])
    assert mallat_inverse(c)[0] == pytest.approx(vals[:4].mean(), abs=1e-15)


def test_coarsen_with_subdivided_children_rejected():
    o = base_octants()[0]
    m = AngleMap.from_patches([o, subdivide(o)[0]], np.zeros(14))
    with pytest.raises(TreeError):
        coarsen(m, [o])


def test_forest_transfer_keeps_existing_coefficients(rng):
    f = random_forest(rng, 4, 3)
    c = rng.standard_normal(f.n_dofs)
    g, moved = f.refine(np.arange(0, f.n_dofs, 7), c)
    assert np.allclose(g.inverse(moved)[g.leaf_lookup(f.leaf_node, f.leaf_key)], f.inverse(c))
