import math

import numpy as np
import pytest

from angadapt.harmonics import (
    FpnConfig,
    HarmonicIndex,
    degree_order,
    eval_Y,
    eval_Y_all,
    filter_coeff,
    flat_index,
    moment_matrices,
    n_harmonics,
    rotate_z,
)
from angadapt.oracle_suite import _harm_list, filter_coeff_mp, quad_oracle, real_sph_harm
from angadapt.sphere_grid import Direction


def test_flat_index_bijection():
    N = 9
    idx = [flat_index(l, m) for l in range(N + 1) for m in range(-l, l + 1)]
    assert idx == list(range(n_harmonics(N)))
    l, m = degree_order(N)
    assert np.array_equal(l * l + l + m, np.arange(n_harmonics(N)))
    with pytest.raises(ValueError):
        HarmonicIndex(1, 2)


def test_known_values():
    assert eval_Y((0, 0), Direction(1.3, -0.2)) == pytest.approx(1 / math.sqrt(4 * math.pi), abs=1e-15)
    assert eval_Y((1, 0), Direction(0.0, 1.0)) == pytest.approx(math.sqrt(3 / (4 * math.pi)), abs=1e-15)
    assert eval_Y((1, 0), Direction(0.0, 1.0)) == pytest.approx(0.4886025119, abs=1e-10)


def test_against_independent_legendre():
    rng = np.random.default_rng(1)
    phi = rng.uniform(0, 2 * np.pi, 40)
    mu = rng.uniform(-1, 1, 40)
    Y = eval_Y_all(9, phi, mu)
    for k, (l, m) in enumerate(_harm_list(9)):
        assert np.max(np.abs(Y[k] - real_sph_harm(l, m, phi, mu))) < 1e-12


def test_gram_identity_by_oracle_quadrature():
    N = 9
    hl = _harm_list(N)
    G = np.zeros((len(hl), len(hl)))
    from angadapt.oracle_suite import _oracle_grid

    P, M, W = _oracle_grid(N)
    Y = eval_Y_all(N, P, M)
    G = (Y * W) @ Y.T
    assert np.max(np.abs(G - np.eye(len(hl)))) < 1e-12
    assert quad_oracle(lambda p, m: real_sph_harm(1, 0, p, m) ** 2) == pytest.approx(1.0, abs=1e-12)
    assert quad_oracle(lambda p, m: np.ones_like(p)) == pytest.approx(4 * math.pi, abs=1e-12)


def test_addition_theorem():
    rng = np.random.default_rng(2)
    phi, mu = rng.uniform(0, 2 * np.pi, 30), rng.uniform(-1, 1, 30)
    Y = eval_Y_all(9, phi, mu)
    l, _ = degree_order(9)
    for deg in range(10):
        s = (Y[l == deg] ** 2).sum(0)
        assert np.max(np.abs(s - (2 * deg + 1) / (4 * math.pi))) < 1e-11


def test_filter_values():
    assert filter_coeff(0, 5, 3.0) == 0.0
    assert filter_coeff(1, 1, 1.0) == pytest.approx(0.0420191, abs=1e-6)
    assert filter_coeff(1, 1, 1.0) == pytest.approx(filter_coeff_mp(1, 1, 1.0), abs=1e-15)
    c = filter_coeff(np.arange(8), 7, 0.5)
    assert np.all(np.diff(c) > 0)
    with pytest.raises(ValueError):
        filter_coeff(3, 2, 1.0)
    assert filter_coeff(2, 3, 1.0, "lanczos") == pytest.approx(-math.log(np.sinc(0.5)), abs=1e-14)


def test_fpn_config_validation():
    assert FpnConfig(3, 1.0).n_functions == 16
    for bad in (dict(order=-1), dict(order=1, sigma_f=-1.0), dict(order=1, filter="box")):
        with pytest.raises(ValueError):
            FpnConfig(**bad)


def test_moment_matrices():
    Mx, My, Mz = moment_matrices(1)
    assert Mz[0, 2] == pytest.approx(1 / math.sqrt(3), abs=1e-7)
    ref = quad_oracle(lambda p, m: real_sph_harm(0, 0, p, m) * m * real_sph_harm(1, 0, p, m))
    assert Mz[0, 2] == pytest.approx(ref, abs=1e-13)
    rng = np.random.default_rng(4)
    for N in range(10):
        Mx, My, Mz = moment_matrices(N)
        for M in (Mx, My, Mz):
            assert np.max(np.abs(M - M.T)) < 1e-13
        for a in rng.uniform(0, 2 * np.pi, 20):
            ev = np.linalg.eigvalsh(math.cos(a) * Mx + math.sin(a) * My)
            assert np.max(np.abs(ev)) <= 1 + 1e-10


def test_moment_matrices_are_read_only():
    Mx, _, _ = moment_matrices(2)
    with pytest.raises(ValueError):
        Mx[0, 0] = 1.0


def test_rotation():
    rng = np.random.default_rng(5)
    N = 6
    c = rng.standard_normal(n_harmonics(N))
    assert np.array_equal(rotate_z(c, 0.0), c)
    assert np.max(np.abs(rotate_z(rotate_z(c, 0.9), -0.9) - c)) < 1e-13
    a = 1.1
    phi, mu = rng.uniform(0, 2 * np.pi, 100), rng.uniform(-1, 1, 100)
    lhs = rotate_z(c, a) @ eval_Y_all(N, phi, mu)
    rhs = c @ eval_Y_all(N, phi - a, mu)
    assert np.max(np.abs(lhs - rhs)) < 1e-11
    with pytest.raises(ValueError):
        rotate_z(np.zeros(5), 0.1)


def test_filter_commutes_with_rotation():
    rng = np.random.default_rng(6)
    N = 9
    c = rng.standard_normal(n_harmonics(N))
    damp = np.exp(-FpnConfig(N, 2.0).removal() * 0.7)
    assert np.max(np.abs(rotate_z(damp * c, 0.4) - damp * rotate_z(c, 0.4))) < 1e-12
