import math

import numpy as np
import pytest

from angadapt.haar import Forest
from angadapt.harmonics import FpnConfig
from angadapt.mesh import Material, generate_box, generate_duct
from angadapt.oracle_suite import (
    OracleSizeError,
    brute_fpn_matrix,
    brute_haar_matrix,
    dense_assemble,
    patch_integral,
    quad_oracle,
    real_sph_harm,
    scaling_fit,
    verify_suite,
)
from angadapt.transport import FpnDiscretisation, HaarDiscretisation


def test_quadrature_values():
    assert quad_oracle(lambda p, m: np.ones_like(p)) == pytest.approx(4 * math.pi, abs=1e-12)
    assert quad_oracle(lambda p, m: real_sph_harm(1, 0, p, m) ** 2) == pytest.approx(1.0, abs=1e-12)
    octant = (0.0, 0.5 * math.pi, 0.0, 1.0)
    assert patch_integral("z", octant) == pytest.approx(math.pi / 4, abs=1e-14)
    assert quad_oracle(lambda p, m: m, patch=octant) == pytest.approx(math.pi / 4, abs=1e-12)
    with pytest.raises(ValueError):
        quad_oracle(lambda p, m: p, multiplier=0)


def test_half_range_split():
    octant = (0.0, 0.5 * math.pi, 0.0, 1.0)
    n = (math.cos(0.3), math.sin(0.3))
    plus, minus = patch_integral("plus", octant, n), patch_integral("minus", octant, n)
    net = n[0] * patch_integral("x", octant) + n[1] * patch_integral("y", octant)
    assert plus - minus == pytest.approx(net, abs=1e-14)
    with pytest.raises(ValueError):
        patch_integral("w", octant)


def test_scaling_fit():
    s = np.array([1e3, 1e4, 1e5, 1e6])
    assert scaling_fit(s, 3e-7 * s) == pytest.approx(1.0, abs=1e-6)
    assert scaling_fit(s, 1e-9 * s**2) == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(ValueError):
        scaling_fit([1.0], [1.0])
    with pytest.raises(ValueError):
        scaling_fit([1.0, 2.0], [0.0, 1.0])


def test_dense_matches_matrix_free(rng):
    m = generate_box(2, 2, material=Material(1.0, 0.3, 0.0))
    d = HaarDiscretisation(m, Forest.uniform(m.n_nodes, 1))
    A = dense_assemble(d)
    v = rng.standard_normal(d.n_dofs)
    assert np.max(np.abs(A @ v - d.apply(v))) < 1e-12
    assert np.max(np.abs(dense_assemble(d, "adjoint") - A.T)) < 1e-12


def test_size_guards():
    big = generate_duct(3, 1, 0.5)
    with pytest.raises(OracleSizeError):
        dense_assemble(HaarDiscretisation(big, Forest.uniform(big.n_nodes, 0)))
    small = generate_box(1, 1)
    with pytest.raises(OracleSizeError):
        dense_assemble(HaarDiscretisation(small, Forest.uniform(small.n_nodes, 3)))
    with pytest.raises(OracleSizeError):
        brute_haar_matrix(small, Forest.uniform(small.n_nodes, 3))
    with pytest.raises(OracleSizeError):
        brute_fpn_matrix(small, FpnConfig(4, 1.0))
    with pytest.raises(OracleSizeError):
        dense_assemble(FpnDiscretisation(small, FpnConfig(5, 1.0)))


def test_verify_suite_names_and_fault():
    res = verify_suite()
    assert all(r.passed for r in res), [r for r in res if not r.passed]
    names = [r.name for r in res]
    for expected in ("mallat_roundtrip", "gram_identity", "haar_dense_operator", "fpn_dense_operator", "duality", "moment_matrices"):
        assert expected in names
    bad = verify_suite(fault="moment_matrix")
    assert [r.name for r in bad if not r.passed] == ["moment_matrices"]
    with pytest.raises(ValueError):
        verify_suite(fault="gremlins")


def test_filter_oracle_series_matches_mpmath():
    from angadapt.oracle_suite import _log_sinc_series, filter_coeff_mp

    for l, N, s in ((1, 1, 1.0), (3, 5, 0.1), (9, 9, 2.0), (1, 9, 1.0)):
        assert -s * _log_sinc_series(l / (N + 1)) == pytest.approx(filter_coeff_mp(l, N, s), rel=1e-14)
    assert filter_coeff_mp(0, 3, 1.0) == 0.0
