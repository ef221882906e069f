"""Real orthonormal spherical harmonics and the filtered P_N machinery.

Convention: no Condon-Shortley phase.  With ``K`` the usual normalisation
constant and ``P_l^m`` the associated Legendre function without the
``(-1)**m`` factor,

* ``Y_{l,0}  = K_{l,0} P_l(mu)``
* ``Y_{l,m}  = sqrt(2) K_{l,m} P_l^m(mu) cos(m phi)`` for ``m > 0``
* ``Y_{l,-m} = sqrt(2) K_{l,m} P_l^m(mu) sin(m phi)``

Harmonics are flattened as ``k = l*l + l + m``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import sph_harm_y

from .sphere_grid import Direction

__all__ = [
    "HarmonicIndex",
    "FpnConfig",
    "n_harmonics",
    "flat_index",
    "degree_order",
    "legendre_table",
    "eval_Y",
    "eval_Y_all",
    "filter_coeff",
    "FILTERS",
    "sphere_quadrature",
    "moment_matrices",
    "rotate_z",
]


def n_harmonics(order: int) -> int:
    return (order + 1) ** 2


def flat_index(l: int, m: int) -> int:
    if abs(m) > l:
        raise ValueError(f"|m| > l for (l, m) = ({l}, {m})")
    return l * l + l + m


def degree_order(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrays (l, m) for all flattened harmonics up to ``order``."""
    k = np.arange(n_harmonics(order))
    l = np.floor(np.sqrt(k)).astype(int)
    return l, k - l * l - l


@dataclass(frozen=True)
class HarmonicIndex:
    l: int
    m: int

    def __post_init__(self):
        if self.l < 0 or abs(self.m) > self.l:
            raise ValueError(f"invalid harmonic index ({self.l}, {self.m})")

    @property
    def flat(self) -> int:
        return flat_index(self.l, self.m)


def _sinc(eta):
    eta = np.asarray(eta, dtype=float)
    safe = np.where(eta == 0.0, 1.0, eta)
    return np.where(eta == 0.0, 1.0, np.sin(safe) / safe)


def _lanczos(eta):
    return _sinc(np.pi * np.asarray(eta, dtype=float))


#: available filter shapes sigma(eta); "sinc" is the literal sin(eta)/eta
FILTERS: dict[str, Callable] = {"sinc": _sinc, "lanczos": _lanczos}


@dataclass(frozen=True)
class FpnConfig:
    """Order ``N`` and filter strength ``sigma_f`` (1/cm) of a filtered P_N field."""

    order: int
    sigma_f: float = 0.0
    filter: str = "sinc"

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be non-negative")
        if self.sigma_f < 0:
            raise ValueError("filter strength must be non-negative")
        if self.filter not in FILTERS:
            raise ValueError(f"unknown filter {self.filter!r}")

    @property
    def n_functions(self) -> int:
        return n_harmonics(self.order)

    def removal(self) -> np.ndarray:
        """Filter removal coefficient for every flattened harmonic."""
        l, _ = degree_order(self.order)
        return filter_coeff(l, self.order, self.sigma_f, self.filter)


def filter_coeff(l, N: int, sigma_f: float, kind: str = "sinc"):
    """Removal coefficient ``-sigma_f * log(sigma(l / (N + 1)))``; exactly 0 at l = 0."""
    l_arr = np.asarray(l)
    if np.any(l_arr < 0) or np.any(l_arr > N):
        raise ValueError("degree outside 0..N")
    eta = l_arr / (N + 1.0)
    val = np.where(l_arr == 0, 0.0, -sigma_f * np.log(FILTERS[kind](eta)))
    return float(val) if np.ndim(val) == 0 else val


def legendre_table(order: int, mu) -> np.ndarray:
    """``K_{l,m} P_l^m(mu)`` (no phase) for l <= order, 0 <= m <= l.

    Returns an array of shape ``(order+1, order+1, *mu.shape)`` indexed
    ``[l, m]``; entries with m > l are zero.
    """
    mu = np.asarray(mu, dtype=float)
    theta = np.arccos(np.clip(mu, -1.0, 1.0))
    l = np.arange(order + 1)[:, None]
    m = np.arange(order + 1)[None, :]
    valid = m <= l
    lg = np.where(valid, l, 0)
    mg = np.where(valid, m, 0)
    shape = (order + 1, order + 1) + (1,) * theta.ndim
    y = sph_harm_y(lg.reshape(shape), mg.reshape(shape), theta, 0.0).real
    sign = np.where(mg % 2 == 1, -1.0, 1.0).reshape(shape)
    return np.where(valid.reshape(shape), sign * y, 0.0)


def eval_Y_all(order: int, phi, mu) -> np.ndarray:
    """All harmonics at the given directions, shape ``((order+1)**2, *phi.shape)``."""
    phi = np.asarray(phi, dtype=float)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), phi.shape)
    tab = legendre_table(order, mu)
    l, m = degree_order(order)
    am = np.abs(m)
    base = tab[l, am]
    ang = am.reshape((-1,) + (1,) * phi.ndim) * phi
    trig = np.where((m > 0).reshape((-1,) + (1,) * phi.ndim), np.cos(ang), np.sin(ang))
    trig = np.where((m == 0).reshape((-1,) + (1,) * phi.ndim), 1.0, trig)
    fac = np.where(m == 0, 1.0, np.sqrt(2.0)).reshape((-1,) + (1,) * phi.ndim)
    return fac * base * trig


def eval_Y(idx: HarmonicIndex | tuple[int, int], d: Direction) -> float:
    if not isinstance(idx, HarmonicIndex):
        idx = HarmonicIndex(*idx)
    vals = eval_Y_all(idx.l, np.array(d.phi), np.array(d.mu))
    return float(vals[idx.flat])


def sphere_quadrature(n_mu: int, n_phi: int):
    """Gauss-Legendre in mu times the trapezoid rule in phi.

    Returns flat arrays ``(phi, mu, weight)``.
    """
    x, w = np.polynomial.legendre.leggauss(n_mu)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    wp = np.full(n_phi, 2.0 * np.pi / n_phi)
    P, M = np.meshgrid(phi, x, indexing="ij")
    W = np.outer(wp, w)
    return P.ravel(), M.ravel(), W.ravel()


@lru_cache(maxsize=32)
def _moment_matrices_cached(order: int):
    ph, mu, w = sphere_quadrature(order + 2, 2 * (2 * order + 2) + 1)
    Y = eval_Y_all(order, ph, mu)
    s = np.sqrt(1.0 - mu * mu)
    out = []
    for comp in (s * np.cos(ph), s * np.sin(ph), mu):
        M = (Y * (w * comp)) @ Y.T
        M = 0.5 * (M + M.T)
        M[np.abs(M) < 1e-15] = 0.0
        M.setflags(write=False)
        out.append(M)
    return tuple(out)


def moment_matrices(order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Streaming matrices ``(M_x, M_y, M_z)`` with ``(M_k)_ab = int Y_a Omega_k Y_b``."""
    if order < 0:
        raise ValueError("order must be non-negative")
    return _moment_matrices_cached(int(order))


def rotate_z(coeffs, angle: float) -> np.ndarray:
    """Coefficients of the field rotated by ``angle`` about the z axis.

    The rotated field evaluated at ``phi`` equals the original at
    ``phi - angle``.
    """
    c = np.asarray(coeffs, dtype=float)
    n = c.shape[0]
    order = int(round(np.sqrt(n))) - 1
    if n_harmonics(order) != n:
        raise ValueError(f"coefficient length {n} is not a square")
    l, m = degree_order(order)
    out = c.copy()
    pos = m > 0
    kp = np.flatnonzero(pos)
    kn = l[pos] * l[pos] + l[pos] - m[pos]
    ca = np.cos(m[pos] * angle)
    sa = np.sin(m[pos] * angle)
    if c.ndim > 1:
        ca = ca.reshape((-1,) + (1,) * (c.ndim - 1))
        sa = sa.reshape((-1,) + (1,) * (c.ndim - 1))
    out[kp] = c[kp] * ca - c[kn] * sa
    out[kn] = c[kp] * sa + c[kn] * ca
    return out
