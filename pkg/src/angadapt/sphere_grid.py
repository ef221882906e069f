"""Hierarchical equal-area latitude-longitude partition of the unit sphere.

Directions are parametrised by azimuth ``phi`` in [0, 2pi) and ``mu``, the
cosine of the polar angle.  The sphere starts as eight octants (four
azimuthal quadrants in each hemisphere) and every patch splits into four
children at its ``phi`` and ``mu`` midpoints.  Because the area element is
``dphi dmu`` the midpoint split in ``mu`` gives four children of identical
area.

Patches are addressed two ways.  :class:`SpherePatch` is a small value
object for user-facing code and tests.  The vectorised kernels used by the
transport solver instead work with integer *keys*: the Morton (z-order)
start index of the patch on a virtual grid at depth :data:`DEPTH`, together
with its level.  A patch then covers the contiguous key range
``[key, key + 4**(DEPTH - level))`` which turns unions of partitions and
containment queries into sorting and ``searchsorted`` calls.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "DEPTH",
    "OCTANT_SPAN",
    "SPHERE_SPAN",
    "Direction",
    "SpherePatch",
    "base_octants",
    "subdivide",
    "uniform_patches",
    "patch_moment",
    "half_range_flux",
    "mu_sqrt_integral",
    "phi_half_range",
    "key_level_bounds",
    "child_keys",
    "patch_key",
    "key_path",
    "key_area",
    "key_moments",
    "key_half_range",
]

#: deepest level representable by the integer patch keys
DEPTH = 18
#: number of finest-level keys inside one octant
OCTANT_SPAN = 4 ** DEPTH
#: total key range of the sphere
SPHERE_SPAN = 8 * OCTANT_SPAN

_HALF_PI = 0.5 * np.pi


@dataclass(frozen=True)
class Direction:
    """A unit vector given by azimuth ``phi`` and polar cosine ``mu``."""

    phi: float
    mu: float

    def cartesian(self) -> np.ndarray:
        s = np.sqrt(max(0.0, 1.0 - self.mu * self.mu))
        return np.array([s * np.cos(self.phi), s * np.sin(self.phi), self.mu])


@dataclass(frozen=True)
class SpherePatch:
    """Rectangle in (phi, mu) belonging to the octant hierarchy."""

    phi_lo: float
    phi_hi: float
    mu_lo: float
    mu_hi: float
    level: int = 0
    path: tuple[int, ...] = field(default=())

    @property
    def octant(self) -> int:
        return octant_index(self.phi_lo, self.mu_lo)

    @property
    def area(self) -> float:
        return (self.phi_hi - self.phi_lo) * (self.mu_hi - self.mu_lo)

    @property
    def key(self) -> int:
        return patch_key(self.octant, self.path)

    def contains(self, d: Direction) -> bool:
        return (self.phi_lo <= d.phi <= self.phi_hi) and (self.mu_lo <= d.mu <= self.mu_hi)


def octant_index(phi_lo: float, mu_lo: float) -> int:
    quadrant = int(np.floor(phi_lo / _HALF_PI + 1e-12)) % 4
    return quadrant if mu_lo >= 0.0 else 4 + quadrant


def base_octants() -> list[SpherePatch]:
    """The eight level-0 patches, upper hemisphere first, then by azimuth."""
    out = []
    for hemi, (mlo, mhi) in enumerate(((0.0, 1.0), (-1.0, 0.0))):
        for q in range(4):
            out.append(SpherePatch(q * _HALF_PI, (q + 1) * _HALF_PI, mlo, mhi, 0, ()))
    return out


def subdivide(p: SpherePatch) -> list[SpherePatch]:
    """Split ``p`` at its midpoints.

    Children are ordered (phi_lo, mu_lo), (phi_hi, mu_lo), (phi_lo, mu_hi),
    (phi_hi, mu_hi); the child index is ``phi_bit + 2 * mu_bit``.
    """
    pm = 0.5 * (p.phi_lo + p.phi_hi)
    mm = 0.5 * (p.mu_lo + p.mu_hi)
    lvl = p.level + 1
    return [
        SpherePatch(p.phi_lo, pm, p.mu_lo, mm, lvl, p.path + (0,)),
        SpherePatch(pm, p.phi_hi, p.mu_lo, mm, lvl, p.path + (1,)),
        SpherePatch(p.phi_lo, pm, mm, p.mu_hi, lvl, p.path + (2,)),
        SpherePatch(pm, p.phi_hi, mm, p.mu_hi, lvl, p.path + (3,)),
    ]


def uniform_patches(level: int, root: SpherePatch | None = None) -> list[SpherePatch]:
    """All descendants of ``root`` (or of the whole sphere) at a fixed depth."""
    current = [root] if root is not None else base_octants()
    start = current[0].level
    for _ in range(level - start):
        current = [c for p in current for c in subdivide(p)]
    return current


def mu_sqrt_integral(mu_lo, mu_hi):
    """Closed-form integral of sqrt(1 - mu**2) over [mu_lo, mu_hi]."""

    def anti(m):
        m = np.clip(m, -1.0, 1.0)
        return 0.5 * (m * np.sqrt(1.0 - m * m) + np.arcsin(m))

    return anti(mu_hi) - anti(mu_lo)


def _moments(phi_lo, phi_hi, mu_lo, mu_hi):
    s_int = mu_sqrt_integral(mu_lo, mu_hi)
    mx = (np.sin(phi_hi) - np.sin(phi_lo)) * s_int
    my = (np.cos(phi_lo) - np.cos(phi_hi)) * s_int
    mz = (phi_hi - phi_lo) * 0.5 * (mu_hi * mu_hi - mu_lo * mu_lo)
    return mx, my, mz


def patch_moment(p: SpherePatch, k: str | int) -> float:
    """Integral of one Cartesian component of the direction over ``p``."""
    axis = {"x": 0, "y": 1, "z": 2}.get(k, k)
    return float(_moments(p.phi_lo, p.phi_hi, p.mu_lo, p.mu_hi)[axis])


def _positive_cos_antiderivative(u):
    # antiderivative of max(cos u, 0), continuous and non-decreasing
    shifted = u + _HALF_PI
    periods = np.floor(shifted / (2.0 * np.pi))
    r = shifted - 2.0 * np.pi * periods
    inner = np.where(r <= np.pi, 1.0 - np.cos(r), 2.0)
    return 2.0 * periods + inner


def phi_half_range(phi_lo, phi_hi, nx, ny):
    """Azimuthal factors of the half-range fluxes for in-plane unit normals.

    ``int max(cos(phi - alpha), 0) dphi`` and the matching negative part,
    where ``alpha`` is the angle of ``(nx, ny)``.
    """
    alpha = np.arctan2(ny, nx)
    ulo = phi_lo - alpha
    uhi = phi_hi - alpha
    cplus = _positive_cos_antiderivative(uhi) - _positive_cos_antiderivative(ulo)
    ctotal = np.sin(uhi) - np.sin(ulo)
    return cplus, ctotal - cplus


def _half_range_exact(phi_lo, phi_hi, mu_lo, mu_hi, nx, ny):
    s_int = mu_sqrt_integral(mu_lo, mu_hi)
    cplus, cminus = phi_half_range(phi_lo, phi_hi, nx, ny)
    return s_int * cplus, s_int * cminus


def _half_range_gauss(phi_lo, phi_hi, mu_lo, mu_hi, nx, ny, order):
    x, w = np.polynomial.legendre.leggauss(order)
    phi_lo, phi_hi, mu_lo, mu_hi = (np.asarray(v, dtype=float)[..., None] for v in (phi_lo, phi_hi, mu_lo, mu_hi))
    ph = 0.5 * (phi_lo + phi_hi) + 0.5 * (phi_hi - phi_lo) * x
    mu = 0.5 * (mu_lo + mu_hi) + 0.5 * (mu_hi - mu_lo) * x
    wp = 0.5 * (phi_hi - phi_lo) * w
    wm = 0.5 * (mu_hi - mu_lo) * w
    s = np.sqrt(np.clip(1.0 - mu * mu, 0.0, None))
    nx = np.asarray(nx, dtype=float)[..., None]
    ny = np.asarray(ny, dtype=float)[..., None]
    proj = nx * np.cos(ph) + ny * np.sin(ph)
    sw = (s * wm).sum(-1)
    plus = sw * (np.maximum(proj, 0.0) * wp).sum(-1)
    minus = sw * (np.minimum(proj, 0.0) * wp).sum(-1)
    return plus, minus


def half_range_flux(p: SpherePatch, n: Sequence[float], order: int | None = None) -> tuple[float, float]:
    """Split the normal flux of ``p`` into outgoing and incoming parts.

    ``n`` is an in-plane unit normal.  With ``order=None`` the integrals are
    evaluated in closed form (the sign of ``Omega . n`` depends on ``phi``
    only, so the integrand factorises); an integer order uses a tensor
    Gauss-Legendre rule with that many points per direction instead.
    """
    nx, ny = float(n[0]), float(n[1])
    if not np.isclose(np.hypot(nx, ny), 1.0, atol=1e-12):
        raise ValueError("normal must have unit length")
    if order is None:
        plus, minus = _half_range_exact(p.phi_lo, p.phi_hi, p.mu_lo, p.mu_hi, nx, ny)
    else:
        plus, minus = _half_range_gauss(p.phi_lo, p.phi_hi, p.mu_lo, p.mu_hi, nx, ny, order)
    return float(plus), float(minus)


# ---------------------------------------------------------------------------
# integer-key representation used by the vectorised kernels


def patch_key(octant: int, path: Sequence[int]) -> int:
    key = 0
    for c in path:
        key = 4 * key + int(c)
    return octant * OCTANT_SPAN + key * 4 ** (DEPTH - len(path))


def key_path(key: int, level: int) -> tuple[int, ...]:
    """Child indices leading from the base octant to the keyed patch."""
    local = (int(key) % OCTANT_SPAN) >> (2 * (DEPTH - level))
    return tuple((local >> (2 * (level - t))) & 3 for t in range(1, level + 1))


def _compact_bits(v):
    # gather every other bit of a 2*DEPTH-bit integer
    out = np.zeros_like(v)
    for b in range(DEPTH):
        out |= ((v >> (2 * b)) & 1) << b
    return out


def key_level_bounds(keys, levels):
    """(phi_lo, phi_hi, mu_lo, mu_hi) arrays for keyed patches."""
    keys = np.asarray(keys, dtype=np.int64)
    levels = np.asarray(levels, dtype=np.int64)
    octant = keys // OCTANT_SPAN
    local = keys - octant * OCTANT_SPAN
    i_fine = _compact_bits(local)
    j_fine = _compact_bits(local >> 1)
    shift = DEPTH - levels
    i = i_fine >> shift
    j = j_fine >> shift
    n = np.left_shift(np.int64(1), levels).astype(float)
    dphi = _HALF_PI / n
    phi_lo = (octant % 4) * _HALF_PI + i * dphi
    mu0 = np.where(octant < 4, 0.0, -1.0)
    dmu = 1.0 / n
    mu_lo = mu0 + j * dmu
    return phi_lo, phi_lo + dphi, mu_lo, mu_lo + dmu


def child_keys(keys, levels):
    """Keys of the four children (shape ``(n, 4)``) in child order."""
    keys = np.asarray(keys, dtype=np.int64)
    step = np.power(np.int64(4), DEPTH - np.asarray(levels, dtype=np.int64) - 1)
    return keys[:, None] + step[:, None] * np.arange(4, dtype=np.int64)


def key_area(levels):
    return _HALF_PI / np.power(4.0, np.asarray(levels, dtype=float))


def key_moments(keys, levels):
    """Closed-form x, y moments of keyed patches."""
    b = key_level_bounds(keys, levels)
    mx, my, _ = _moments(*b)
    return mx, my


def key_half_range(keys, levels, nx, ny):
    """Exact outgoing/incoming flux parts of keyed patches for normals (nx, ny)."""
    b = key_level_bounds(keys, levels)
    return _half_range_exact(*b, nx, ny)
