"""Embedding of filtered P_N fields into adaptive Haar trees.

A harmonic expansion is mapped to a tree by taking its mean over every
undivided leaf patch (the L2 projection onto piecewise constants), then
running the forward Mallat transform.  Leaf means preserve patch integrals,
hence scalar flux and per-octant zeroth moments.

Patch integrals of ``Y_{l,m}`` factorise into an azimuthal part (closed
form) and a polar part evaluated with Gauss-Legendre in ``theta``; the
polar integrand is a trigonometric polynomial, so a modest number of points
gives roundoff accuracy.  Leaves of an adaptive tree share a small set of
distinct phi and mu intervals, which is exploited to build the integral
table once per interval.
"""
from __future__ import annotations

import numpy as np

from .haar import AngleMap, Forest, TreeError
from .harmonics import degree_order, eval_Y_all, legendre_table, n_harmonics
from .sphere_grid import key_level_bounds

__all__ = [
    "leaf_integrals",
    "fpn_to_leafmeans",
    "fpn_to_anglemap",
    "fpn_leafmeans_forest",
    "fpn_to_forest_coeffs",
    "scalar_flux_haar",
    "scalar_flux_fpn",
]

_CHUNK = 1 << 14


def _check_order(coeffs, N):
    if np.shape(coeffs)[-1] != n_harmonics(N):
        raise ValueError(f"expected {n_harmonics(N)} coefficients for order {N}, got {np.shape(coeffs)[-1]}")


def _polar_table(N, mu_lo, mu_hi, n_theta):
    # int_{mu_lo}^{mu_hi} K P_l^m dmu  ==  int_{theta(mu_hi)}^{theta(mu_lo)} K P_l^m(cos t) sin t dt
    x, w = np.polynomial.legendre.leggauss(n_theta)
    t_a = np.arccos(np.clip(mu_hi, -1, 1))
    t_b = np.arccos(np.clip(mu_lo, -1, 1))
    half = 0.5 * (t_b - t_a)
    t = 0.5 * (t_a + t_b)[:, None] + half[:, None] * x
    tab = legendre_table(N, np.cos(t))
    return np.einsum("lmiq,iq->ilm", tab, np.sin(t) * w * half[:, None])


def _azimuth_table(N, phi_lo, phi_hi):
    _, m = degree_order(N)
    am = np.abs(m)[None, :]
    safe = np.where(am == 0, 1, am)
    lo = phi_lo[:, None]
    hi = phi_hi[:, None]
    cos_part = np.sqrt(2.0) * (np.sin(safe * hi) - np.sin(safe * lo)) / safe
    sin_part = np.sqrt(2.0) * (np.cos(safe * lo) - np.cos(safe * hi)) / safe
    return np.where(m[None, :] == 0, hi - lo, np.where(m[None, :] > 0, cos_part, sin_part))


def _gauss_integrals(N, phi_lo, phi_hi, mu_lo, mu_hi, order):
    x, w = np.polynomial.legendre.leggauss(order)
    ph = 0.5 * (phi_lo + phi_hi)[:, None] + 0.5 * (phi_hi - phi_lo)[:, None] * x
    mu = 0.5 * (mu_lo + mu_hi)[:, None] + 0.5 * (mu_hi - mu_lo)[:, None] * x
    P = np.repeat(ph, order, axis=1)
    M = np.tile(mu, (1, order))
    W = np.outer(w, w).ravel()[None, :] * (0.25 * (phi_hi - phi_lo) * (mu_hi - mu_lo))[:, None]
    Y = eval_Y_all(N, P, M)
    return np.einsum("kiq,iq->ik", Y, W)


def leaf_integrals(N, keys, levels, order=None):
    """``int_leaf Y_k`` for each keyed leaf, shape ``(n_leaves, (N+1)**2)``.

    ``order=None`` uses the factorised (roundoff accurate) evaluation; an
    integer requests a tensor Gauss rule with that many points per side.
    """
    phi_lo, phi_hi, mu_lo, mu_hi = key_level_bounds(keys, levels)
    if order is not None:
        return _gauss_integrals(N, phi_lo, phi_hi, mu_lo, mu_hi, int(order))
    mu_pair = np.stack([mu_lo, mu_hi], axis=1)
    phi_pair = np.stack([phi_lo, phi_hi], axis=1)
    umu, imu = np.unique(mu_pair, axis=0, return_inverse=True)
    uphi, iphi = np.unique(phi_pair, axis=0, return_inverse=True)
    n_theta = N // 2 + 12
    polar = _polar_table(N, umu[:, 0], umu[:, 1], n_theta)
    azim = _azimuth_table(N, uphi[:, 0], uphi[:, 1])
    l, m = degree_order(N)
    return polar[imu.ravel()][:, l, np.abs(m)] * azim[iphi.ravel()]


def fpn_leafmeans_forest(coeffs, N, forest: Forest, nodes=None, order=None):
    """Leaf means of per-node harmonic fields on a forest.

    ``coeffs`` has shape ``(n_nodes, (N+1)**2)``.  If ``nodes`` is given only
    leaves of those nodes are evaluated and a dict-like pair
    ``(leaf_index, values)`` is returned; otherwise all leaf values are.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    _check_order(coeffs, N)
    if nodes is None:
        leaf_idx = np.arange(forest.n_dofs)
    else:
        sel = np.zeros(forest.n_nodes, dtype=bool)
        sel[np.asarray(nodes)] = True
        leaf_idx = np.flatnonzero(sel[forest.leaf_node])
    out = np.empty(leaf_idx.size, dtype=float)
    for s in range(0, leaf_idx.size, _CHUNK):
        li = leaf_idx[s : s + _CHUNK]
        I = leaf_integrals(N, forest.leaf_key[li], forest.leaf_level[li], order)
        out[s : s + _CHUNK] = np.einsum("ik,ik->i", I, coeffs[forest.leaf_node[li]]) / forest.leaf_area[li]
    if nodes is None:
        return out
    return leaf_idx, out


def fpn_to_forest_coeffs(coeffs, N, forest: Forest, order=None):
    """Wavelet coefficients on ``forest`` of per-node harmonic fields."""
    return forest.forward(fpn_leafmeans_forest(coeffs, N, forest, order=order))


def fpn_to_leafmeans(coeffs, N, tree: AngleMap, order=None) -> np.ndarray:
    """Mean of the harmonic expansion over every leaf of ``tree`` (key order)."""
    coeffs = np.asarray(coeffs, dtype=float)
    _check_order(coeffs, N)
    return fpn_leafmeans_forest(coeffs[None, :], N, tree.forest, order=order)


def fpn_to_anglemap(coeffs, N, tree: AngleMap, order=None) -> AngleMap:
    f = tree.forest
    means = fpn_to_leafmeans(coeffs, N, tree, order)
    return tree.with_coeffs(f.forward(means))


def scalar_flux_haar(m: AngleMap) -> float:
    if m.coeffs is None:
        raise TreeError("AngleMap has no coefficients")
    # every leaf value is a +-1 combination whose wavelet parts cancel in the integral
    return float(0.5 * np.pi * np.sum(m.coeffs[:8]))


def scalar_flux_fpn(coeffs) -> float:
    return float(np.sqrt(4.0 * np.pi) * np.asarray(coeffs, dtype=float)[..., 0])
