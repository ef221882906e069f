import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from angadapt.sphere_grid import (
    Direction,
    base_octants,
    half_range_flux,
    key_half_range,
    key_level_bounds,
    patch_key,
    patch_moment,
    subdivide,
    uniform_patches,
)
from angadapt.oracle_suite import patch_integral


def test_direction_unit_norm():
    rng = np.random.default_rng(0)
    for phi, mu in zip(rng.uniform(0, 2 * np.pi, 50), rng.uniform(-1, 1, 50)):
        assert abs(np.linalg.norm(Direction(phi, mu).cartesian()) - 1) < 1e-14


def test_base_octants_areas_and_order():
    octs = base_octants()
    assert len(octs) == 8
    for p in octs:
        assert p.area == pytest.approx(math.pi / 2, abs=1e-15)
    assert abs(sum(p.area for p in octs) - 4 * math.pi) < 1e-14
    o0 = octs[0]
    assert (o0.phi_lo, o0.phi_hi, o0.mu_lo, o0.mu_hi) == (0.0, math.pi / 2, 0.0, 1.0)
    assert all(p.mu_lo == 0.0 for p in octs[:4]) and all(p.mu_hi == 0.0 for p in octs[4:])
    assert [p.octant for p in octs] == list(range(8))


def test_subdivide_children():
    kids = subdivide(base_octants()[0])
    assert [k.area for k in kids] == [math.pi / 8] * 4
    assert all(k.level == 1 for k in kids)
    c = kids[2]
    assert (c.phi_lo, c.phi_hi, c.mu_lo, c.mu_hi) == (0.0, math.pi / 4, 0.5, 1.0)


def test_uniform_grid_count_and_telescoping():
    for L in range(4):
        leaves = uniform_patches(L)
        assert len(leaves) == 8 * 4**L
        assert abs(math.fsum(p.area for p in leaves) - 4 * math.pi) < 1e-13
    p = subdivide(base_octants()[5])[1]
    desc = uniform_patches(4, p)
    assert abs(math.fsum(q.area for q in desc) - p.area) < 1e-13
    for k in "xyz":
        assert abs(sum(patch_moment(q, k) for q in subdivide(p)) - patch_moment(p, k)) < 1e-13


def test_patch_moments_closed_form():
    o = base_octants()[0]
    assert patch_moment(o, "z") == pytest.approx(math.pi / 4, abs=1e-15)
    assert patch_moment(o, "x") == pytest.approx(math.pi / 4, abs=1e-15)
    for k in "xyz":
        assert abs(sum(patch_moment(p, k) for p in base_octants())) < 1e-14


def test_patch_moments_against_quadrature_oracle():
    rng = np.random.default_rng(3)
    for p in rng.choice(uniform_patches(3), 20, replace=False):
        for k in "xyz":
            ref = patch_integral(k, (p.phi_lo, p.phi_hi, p.mu_lo, p.mu_hi))
            assert abs(patch_moment(p, k) - ref) < 1e-13


def test_half_range_examples():
    o = base_octants()[0]
    plus, minus = half_range_flux(o, (1.0, 0.0))
    assert minus == 0.0
    assert plus == pytest.approx(math.pi / 4, abs=1e-6)
    p2, m2 = half_range_flux(o, (-1.0, 0.0))
    assert p2 == pytest.approx(-minus, abs=1e-15) and m2 == pytest.approx(-plus, abs=1e-15)
    with pytest.raises(ValueError):
        half_range_flux(o, (1.0, 1.0))


def test_half_range_random_patches_against_oracle():
    rng = np.random.default_rng(7)
    patches = uniform_patches(3)
    for _ in range(100):
        p = patches[rng.integers(len(patches))]
        a = rng.uniform(0, 2 * np.pi)
        n = (math.cos(a), math.sin(a))
        plus, minus = half_range_flux(p, n)
        b = (p.phi_lo, p.phi_hi, p.mu_lo, p.mu_hi)
        assert abs(plus - patch_integral("plus", b, n)) < 1e-13
        assert abs(minus + patch_integral("minus", b, n)) < 1e-13
        net = n[0] * patch_moment(p, "x") + n[1] * patch_moment(p, "y")
        assert abs(plus - abs(minus) - net) < 1e-13


def test_half_range_gauss_rule_converges_to_closed_form():
    p = subdivide(base_octants()[1])[3]
    n = (math.cos(2.2), math.sin(2.2))
    exact = half_range_flux(p, n)
    errs = [abs(half_range_flux(p, n, order=k)[0] - exact[0]) for k in (4, 16, 64)]
    assert errs[2] < errs[0]
    assert errs[2] < 1e-4


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 7), st.lists(st.integers(0, 3), max_size=8))
def test_keys_decode_to_patch_bounds(octant, path):
    p = base_octants()[octant]
    for c in path:
        p = subdivide(p)[c]
    assert p.key == patch_key(octant, path)
    b = key_level_bounds(np.array([p.key]), np.array([len(path)]))
    assert np.allclose([x[0] for x in b], [p.phi_lo, p.phi_hi, p.mu_lo, p.mu_hi], atol=1e-15)
    a = 0.3
    kp, km = key_half_range(np.array([p.key]), np.array([len(path)]), math.cos(a), math.sin(a))
    hp, hm = half_range_flux(p, (math.cos(a), math.sin(a)))
    assert kp[0] == pytest.approx(hp, abs=1e-15) and km[0] == pytest.approx(hm, abs=1e-15)


def test_contains():
    p = subdivide(base_octants()[0])[3]
    assert p.contains(Direction(1.0, 0.9))
    assert not p.contains(Direction(0.1, 0.9))
