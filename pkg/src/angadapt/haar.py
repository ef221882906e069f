"""Non-standard Haar wavelets over the octant patch hierarchy.

Each spatial node carries its own adaptive tree.  The node's function space
is spanned by one constant scaling function per octant plus three wavelets
(``phi``, ``mu`` and diagonal sign patterns) on every subdivided patch, so a
node with ``k`` subdivided patches has ``8 + 3k`` functions and exactly the
same number of undivided leaves.

Coefficients of a node are stored as ``[8 scaling | 3 wavelets per
subdivided patch]`` with the subdivided patches in (key, level) order, i.e.
depth-first pre-order.  Leaf values are stored in key order.

:class:`Forest` holds the trees of all nodes in flat arrays and provides the
O(n) Mallat transforms (and their transposes) for every node at once.
:class:`AngleMap` is the single-node view with its coefficients.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .sphere_grid import (
    DEPTH,
    OCTANT_SPAN,
    SpherePatch,
    child_keys,
    key_area,
    key_level_bounds,
    key_path,
)

log = logging.getLogger(__name__)

__all__ = [
    "TreeError",
    "Forest",
    "AngleMap",
    "mallat_inverse",
    "mallat_forward",
    "refine",
    "coarsen",
    "WAVELET_SIGNS",
]

# rows: scaling, phi, mu, diagonal; columns: children in subdivide() order
WAVELET_SIGNS = np.array(
    [[1, 1, 1, 1], [-1, 1, -1, 1], [-1, -1, 1, 1], [1, -1, -1, 1]], dtype=float
)

_LEVEL_BITS = 5
_KEY_BITS = 39 + _LEVEL_BITS
_MAX_NODES = 1 << (63 - _KEY_BITS)
_OCTANT_KEYS = np.arange(8, dtype=np.int64) * OCTANT_SPAN


class TreeError(ValueError):
    """Raised for structurally invalid trees or mismatched coefficient blocks."""


def _composite(nodes, keys, levels):
    return (np.asarray(nodes, np.int64) << _KEY_BITS) | (np.asarray(keys, np.int64) << _LEVEL_BITS) | np.asarray(
        levels, np.int64
    )


def _parent_keys(keys, levels):
    span = np.power(np.int64(4), DEPTH - np.asarray(levels, np.int64) + 1)
    return (keys // span) * span


def _ptr_from_counts(counts):
    ptr = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr


class Forest:
    """Adaptive trees of many nodes in flat, sorted arrays.

    Parameters
    ----------
    n_nodes : int
    sub_node, sub_key, sub_level : array_like
        Subdivided patches (any order).  Every patch above level 0 must have
        its parent subdivided as well.
    max_level : int
        Refinement cap used by :meth:`refine`.
    """

    def __init__(self, n_nodes, sub_node=(), sub_key=(), sub_level=(), max_level=DEPTH - 1, check=True):
        if n_nodes >= _MAX_NODES:
            raise TreeError(f"too many nodes for the key layout ({n_nodes})")
        self.n_nodes = int(n_nodes)
        self.max_level = int(max_level)
        sub_node = np.asarray(sub_node, dtype=np.int64)
        sub_key = np.asarray(sub_key, dtype=np.int64)
        sub_level = np.asarray(sub_level, dtype=np.int64)
        comp = _composite(sub_node, sub_key, sub_level)
        order = np.argsort(comp, kind="stable")
        comp = comp[order]
        if comp.size and np.any(comp[1:] == comp[:-1]):
            raise TreeError("duplicate subdivided patch")
        self.sub_node = sub_node[order]
        self.sub_key = sub_key[order]
        self.sub_level = sub_level[order]
        self._sub_comp = comp
        if check:
            self._check_closure()
        self._build_leaves()

    # -- construction -----------------------------------------------------

    @classmethod
    def uniform(cls, n_nodes, level, max_level=DEPTH - 1):
        """Every node refined uniformly to ``level`` (level 0 is H_1)."""
        keys, levels = [], []
        cur = _OCTANT_KEYS.copy()
        for lvl in range(level):
            keys.append(cur)
            levels.append(np.full(cur.size, lvl, dtype=np.int64))
            cur = child_keys(cur, np.full(cur.size, lvl)).ravel()
        if keys:
            k = np.concatenate(keys)
            lv = np.concatenate(levels)
        else:
            k = lv = np.zeros(0, dtype=np.int64)
        nodes = np.repeat(np.arange(n_nodes, dtype=np.int64), k.size)
        return cls(n_nodes, nodes, np.tile(k, n_nodes), np.tile(lv, n_nodes), max_level=max(max_level, level), check=False)

    @classmethod
    def from_maps(cls, maps: Sequence["AngleMap"]):
        nodes = np.concatenate([np.full(len(m.sub_key), i, dtype=np.int64) for i, m in enumerate(maps)] or [np.zeros(0, np.int64)])
        keys = np.concatenate([m.sub_key for m in maps] or [np.zeros(0, np.int64)])
        levels = np.concatenate([m.sub_level for m in maps] or [np.zeros(0, np.int64)])
        max_level = max((m.max_level for m in maps), default=DEPTH - 1)
        return cls(len(maps), nodes, keys, levels, max_level=max_level)

    def _check_closure(self):
        deep = self.sub_level > 0
        if not np.any(deep):
            if np.any(self.sub_level < 0):
                raise TreeError("negative level")
            return
        pk = _parent_keys(self.sub_key[deep], self.sub_level[deep])
        pc = _composite(self.sub_node[deep], pk, self.sub_level[deep] - 1)
        pos = np.searchsorted(self._sub_comp, pc)
        pos = np.minimum(pos, self._sub_comp.size - 1)
        ok = self._sub_comp[pos] == pc
        if not np.all(ok):
            bad = np.flatnonzero(deep)[~ok][0]
            raise TreeError(
                f"orphan subdivided patch at node {self.sub_node[bad]}, key {self.sub_key[bad]}, level {self.sub_level[bad]}"
            )
        if np.any(self.sub_level >= DEPTH):
            raise TreeError("level exceeds key depth")

    def _build_leaves(self):
        n = self.n_nodes
        oct_nodes = np.repeat(np.arange(n, dtype=np.int64), 8)
        oct_keys = np.tile(_OCTANT_KEYS, n)
        oct_lv = np.zeros(8 * n, dtype=np.int64)
        ck = child_keys(self.sub_key, self.sub_level).ravel()
        cn = np.repeat(self.sub_node, 4)
        cl = np.repeat(self.sub_level + 1, 4)
        nodes = np.concatenate([oct_nodes, cn])
        keys = np.concatenate([oct_keys, ck])
        levels = np.concatenate([oct_lv, cl])
        comp = _composite(nodes, keys, levels)
        is_sub = np.isin(comp, self._sub_comp, assume_unique=False)
        nodes, keys, levels, comp = nodes[~is_sub], keys[~is_sub], levels[~is_sub], comp[~is_sub]
        order = np.argsort(comp, kind="stable")
        self.leaf_node = nodes[order]
        self.leaf_key = keys[order]
        self.leaf_level = levels[order]
        self._leaf_comp = comp[order]
        counts = np.bincount(self.leaf_node, minlength=n)
        self.ptr = _ptr_from_counts(counts)
        sub_counts = np.bincount(self.sub_node, minlength=n)
        self.sub_ptr = _ptr_from_counts(sub_counts)
        if not np.array_equal(counts, 8 + 3 * sub_counts):
            raise TreeError("leaf count does not match function count")

    # -- basic properties -------------------------------------------------

    @property
    def n_dofs(self) -> int:
        return int(self.ptr[-1])

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.ptr)

    @cached_property
    def leaf_area(self) -> np.ndarray:
        return key_area(self.leaf_level)

    @cached_property
    def leaf_bounds(self):
        return key_level_bounds(self.leaf_key, self.leaf_level)

    @cached_property
    def scaling_index(self) -> np.ndarray:
        """Global coefficient index of the 8 scaling functions, shape (n, 8)."""
        return self.ptr[:-1, None] + np.arange(8)

    @cached_property
    def wavelet_index(self) -> np.ndarray:
        """Global coefficient indices (n_sub, 3) of each subdivided patch."""
        local = np.arange(self.sub_key.size, dtype=np.int64) - self.sub_ptr[self.sub_node]
        base = self.ptr[self.sub_node] + 8 + 3 * local
        return base[:, None] + np.arange(3)

    @cached_property
    def coeff_node(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_nodes), self.counts)

    def leaf_lookup(self, nodes, keys) -> np.ndarray:
        """Index of the leaf of ``nodes`` that contains the finest key ``keys``."""
        q = _composite(nodes, keys, (1 << _LEVEL_BITS) - 1)
        return np.searchsorted(self._leaf_comp, q, side="right") - 1

    def sub_lookup(self, nodes, keys, levels) -> np.ndarray:
        """Index of the given subdivided patches, or -1 where absent."""
        q = _composite(nodes, keys, levels)
        pos = np.searchsorted(self._sub_comp, q)
        pos_c = np.minimum(pos, max(self._sub_comp.size - 1, 0))
        found = (self._sub_comp.size > 0) & (self._sub_comp[pos_c] == q) if self._sub_comp.size else np.zeros(q.shape, bool)
        return np.where(found, pos_c, -1)

    def node_max_level(self) -> np.ndarray:
        out = np.zeros(self.n_nodes, dtype=np.int64)
        np.maximum.at(out, self.leaf_node, self.leaf_level)
        return out

    def node_map(self, node: int, coeffs=None) -> "AngleMap":
        s = slice(self.sub_ptr[node], self.sub_ptr[node + 1])
        c = None if coeffs is None else np.asarray(coeffs[self.ptr[node] : self.ptr[node + 1]], dtype=float).copy()
        return AngleMap(self.sub_key[s].copy(), self.sub_level[s].copy(), c, self.max_level)

    def same_structure(self, other: "Forest") -> bool:
        return (
            self.n_nodes == other.n_nodes
            and np.array_equal(self._sub_comp, other._sub_comp)
        )

    # -- Mallat machinery -------------------------------------------------

    @cached_property
    def _plan(self):
        """Per-level index maps shared by all four transforms."""
        n = self.n_nodes
        levels = []
        p_node = np.repeat(np.arange(n, dtype=np.int64), 8)
        p_key = np.tile(_OCTANT_KEYS, n)
        lvl = 0
        while True:
            p_comp = _composite(p_node, p_key, lvl)
            in_level = self.sub_level == lvl
            s_idx_global = np.flatnonzero(in_level)
            s_comp = self._sub_comp[s_idx_global]
            pos_s = np.searchsorted(p_comp, s_comp)
            leafmask = np.ones(p_comp.size, dtype=bool)
            leafmask[pos_s] = False
            leaf_pos = np.searchsorted(self._leaf_comp, p_comp[leafmask])
            levels.append(
                dict(
                    size=p_comp.size,
                    sub_pos=pos_s,
                    wav=self.wavelet_index[s_idx_global] if s_idx_global.size else np.zeros((0, 3), np.int64),
                    leafmask=leafmask,
                    leaf_idx=leaf_pos,
                )
            )
            if s_idx_global.size == 0:
                break
            p_node = np.repeat(self.sub_node[s_idx_global], 4)
            p_key = child_keys(self.sub_key[s_idx_global], np.full(s_idx_global.size, lvl)).ravel()
            lvl += 1
        return levels

    def _coarse_to_fine(self, coeffs, scale):
        out = np.empty(self.n_dofs, dtype=float)
        plan = self._plan
        v = coeffs[self.scaling_index.ravel()]
        for lv in plan:
            out[lv["leaf_idx"]] = v[lv["leafmask"]]
            if lv["sub_pos"].size == 0:
                break
            s = v[lv["sub_pos"]]
            w = coeffs[lv["wav"]]
            block = np.column_stack([s, w]) @ WAVELET_SIGNS
            if scale != 1.0:
                block *= scale
            v = block.ravel()
        return out

    def _fine_to_coarse(self, leafvals, scale):
        out = np.empty(self.n_dofs, dtype=float)
        plan = self._plan
        child = None
        for lv in reversed(plan):
            v = np.empty(lv["size"], dtype=float)
            v[lv["leafmask"]] = leafvals[lv["leaf_idx"]]
            if child is not None:
                block = child.reshape(-1, 4) @ WAVELET_SIGNS.T
                if scale != 1.0:
                    block *= scale
                v[lv["sub_pos"]] = block[:, 0]
                out[lv["wav"]] = block[:, 1:]
            child = v
        out[self.scaling_index.ravel()] = child
        return out

    def inverse(self, coeffs):
        """Wavelet coefficients -> leaf values (reconstruction)."""
        return self._coarse_to_fine(np.asarray(coeffs, dtype=float), 1.0)

    def forward(self, leafvals):
        """Leaf values -> wavelet coefficients (exact inverse of :meth:`inverse`)."""
        return self._fine_to_coarse(np.asarray(leafvals, dtype=float), 0.25)

    def inverse_T(self, leafvec):
        """Transpose of :meth:`inverse`, mapping tested leaf data to coefficients."""
        return self._fine_to_coarse(np.asarray(leafvec, dtype=float), 1.0)

    def forward_T(self, coeffvec):
        """Transpose of :meth:`forward`."""
        return self._coarse_to_fine(np.asarray(coeffvec, dtype=float), 0.25)

    def support_sum(self, leafvec):
        """For every function, the sum of ``leafvec`` over the leaves of its support."""
        leafvec = np.asarray(leafvec, dtype=float)
        out = np.empty(self.n_dofs, dtype=float)
        child = None
        for lv in reversed(self._plan):
            v = np.empty(lv["size"], dtype=float)
            v[lv["leafmask"]] = leafvec[lv["leaf_idx"]]
            if child is not None:
                tot = child.reshape(-1, 4).sum(axis=1)
                v[lv["sub_pos"]] = tot
                out[lv["wav"]] = tot[:, None]
            child = v
        out[self.scaling_index.ravel()] = child
        return out

    def scalar_flux(self, coeffs):
        """Angular integral per node, from the scaling coefficients."""
        return 0.5 * np.pi * coeffs[self.scaling_index].sum(axis=1)

    # -- adaptation -------------------------------------------------------

    def adapt(self, refine_leaves=(), coarsen_subs=(), coeffs=None):
        """Subdivide leaves and undo subdivisions in one step.

        ``refine_leaves`` are global leaf indices; those at ``max_level`` are
        skipped and logged.  ``coarsen_subs`` are indices of subdivided
        patches whose four children must all be leaves.  Coefficients (a
        vector or a list of vectors) are carried over, new wavelets start at
        zero.
        """
        t = np.unique(np.asarray(refine_leaves, dtype=np.int64))
        capped = self.leaf_level[t] >= self.max_level
        if np.any(capped):
            log.info("refine: %d targets at max level %d skipped", int(capped.sum()), self.max_level)
            t = t[~capped]
        c = np.unique(np.asarray(coarsen_subs, dtype=np.int64))
        if c.size:
            ck = child_keys(self.sub_key[c], self.sub_level[c])
            is_sub = self.sub_lookup(np.repeat(self.sub_node[c], 4), ck.ravel(), np.repeat(self.sub_level[c] + 1, 4))
            if np.any(is_sub >= 0):
                raise TreeError("cannot coarsen a patch with subdivided children")
        keep = np.ones(self.sub_key.size, dtype=bool)
        keep[c] = False
        new = Forest(
            self.n_nodes,
            np.concatenate([self.sub_node[keep], self.leaf_node[t]]),
            np.concatenate([self.sub_key[keep], self.leaf_key[t]]),
            np.concatenate([self.sub_level[keep], self.leaf_level[t]]),
            max_level=self.max_level,
            check=False,
        )
        if coeffs is None:
            return new
        if isinstance(coeffs, (list, tuple)):
            return new, [self.transfer(v, new) for v in coeffs]
        return new, self.transfer(coeffs, new)

    def refine(self, leaf_targets, coeffs=None):
        """Subdivide the given leaves (global leaf indices); see :meth:`adapt`."""
        return self.adapt(leaf_targets, (), coeffs)

    def coarsen(self, sub_targets, coeffs=None):
        """Remove subdivided patches whose four children are all leaves."""
        return self.adapt((), sub_targets, coeffs)

    def replicate(self, n_nodes: int) -> "Forest":
        """Forest with every node carrying node 0's tree."""
        s = slice(self.sub_ptr[0], self.sub_ptr[1])
        k = self.sub_key[s]
        lv = self.sub_level[s]
        return Forest(
            n_nodes,
            np.repeat(np.arange(n_nodes, dtype=np.int64), k.size),
            np.tile(k, n_nodes),
            np.tile(lv, n_nodes),
            max_level=self.max_level,
            check=False,
        )

    def transfer(self, coeffs, new: "Forest"):
        """Carry coefficients onto ``new``; wavelets absent in ``self`` start at 0."""
        coeffs = np.asarray(coeffs, dtype=float)
        out = np.zeros(new.n_dofs, dtype=float)
        out[new.scaling_index] = coeffs[self.scaling_index]
        if new.sub_key.size and self.sub_key.size:
            old = self.sub_lookup(new.sub_node, new.sub_key, new.sub_level)
            hit = old >= 0
            out[new.wavelet_index[hit]] = coeffs[self.wavelet_index[old[hit]]]
        return out

    def mirrored_mu(self) -> "Forest":
        """Forest whose trees are reflected through the equator."""
        phi_lo, phi_hi, mu_lo, mu_hi = key_level_bounds(self.sub_key, self.sub_level)
        keys = _keys_from_bounds(phi_lo, -mu_hi, self.sub_level)
        return Forest(self.n_nodes, self.sub_node, keys, self.sub_level, max_level=self.max_level)


def _keys_from_bounds(phi_lo, mu_lo, levels):
    levels = np.asarray(levels, np.int64)
    n = np.left_shift(np.int64(1), levels)
    quad = np.floor(phi_lo / (0.5 * np.pi) + 1e-9).astype(np.int64) % 4
    octant = np.where(mu_lo >= -1e-15, quad, quad + 4)
    i = np.rint((phi_lo - quad * 0.5 * np.pi) / (0.5 * np.pi) * n).astype(np.int64)
    mu0 = np.where(octant < 4, 0.0, -1.0)
    j = np.rint((mu_lo - mu0) * n).astype(np.int64)
    code = np.zeros_like(i)
    for b in range(DEPTH):
        code |= ((i >> b) & 1) << (2 * b)
        code |= ((j >> b) & 1) << (2 * b + 1)
    return octant * OCTANT_SPAN + code * np.power(np.int64(4), DEPTH - levels)


@dataclass
class AngleMap:
    """Single-node adaptive Haar expansion.

    ``sub_key``/``sub_level`` list the subdivided patches; ``coeffs`` holds
    ``8 + 3 * len(sub_key)`` values in the node layout described in the
    module docstring (or ``None`` for a bare tree).
    """

    sub_key: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    sub_level: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    coeffs: np.ndarray | None = None
    max_level: int = DEPTH - 1

    def __post_init__(self):
        k = np.asarray(self.sub_key, dtype=np.int64)
        lv = np.asarray(self.sub_level, dtype=np.int64)
        order = np.lexsort((lv, k))
        self.sub_key, self.sub_level = k[order], lv[order]
        if self.coeffs is not None:
            c = np.asarray(self.coeffs, dtype=float)
            if c.size != self.n_functions:
                raise TreeError(f"expected {self.n_functions} coefficients, got {c.size}")
            if order.size:
                wav = c[8:].reshape(-1, 3)[order]
                c = np.concatenate([c[:8], wav.ravel()])
            self.coeffs = c

    @classmethod
    def uniform(cls, level, coeffs=None, max_level=DEPTH - 1):
        f = Forest.uniform(1, level)
        return cls(f.sub_key, f.sub_level, coeffs, max(max_level, level))

    @classmethod
    def from_patches(cls, subdivided: Iterable[SpherePatch], coeffs=None, max_level=DEPTH - 1):
        pats = list(subdivided)
        return cls(
            np.array([p.key for p in pats], dtype=np.int64),
            np.array([p.level for p in pats], dtype=np.int64),
            coeffs,
            max_level,
        )

    @property
    def n_functions(self) -> int:
        return 8 + 3 * len(self.sub_key)

    @property
    def forest(self) -> Forest:
        return Forest(1, np.zeros(len(self.sub_key), np.int64), self.sub_key, self.sub_level, max_level=self.max_level)

    def leaves(self) -> list[SpherePatch]:
        f = self.forest
        b = f.leaf_bounds
        return [
            SpherePatch(
                float(b[0][i]),
                float(b[1][i]),
                float(b[2][i]),
                float(b[3][i]),
                int(f.leaf_level[i]),
                key_path(f.leaf_key[i], f.leaf_level[i]),
            )
            for i in range(f.n_dofs)
        ]

    def leaf_keys(self):
        f = self.forest
        return f.leaf_key.copy(), f.leaf_level.copy()

    def with_coeffs(self, coeffs) -> "AngleMap":
        return AngleMap(self.sub_key.copy(), self.sub_level.copy(), np.asarray(coeffs, dtype=float).copy(), self.max_level)


def _require_coeffs(m: AngleMap) -> np.ndarray:
    if m.coeffs is None:
        raise TreeError("AngleMap has no coefficients")
    return m.coeffs


def mallat_inverse(m: AngleMap) -> np.ndarray:
    """Values on the effective leaves (key order) of the expansion in ``m``."""
    return m.forest.inverse(_require_coeffs(m))


def mallat_forward(leaf_values, tree: AngleMap) -> AngleMap:
    """Wavelet expansion on ``tree`` that reproduces ``leaf_values``."""
    f = tree.forest
    leaf_values = np.asarray(leaf_values, dtype=float)
    if leaf_values.size != f.n_dofs:
        raise TreeError(f"tree has {f.n_dofs} leaves, got {leaf_values.size} values")
    return tree.with_coeffs(f.forward(leaf_values))


def _target_keys(targets) -> tuple[np.ndarray, np.ndarray]:
    keys, levels = [], []
    for t in targets:
        if isinstance(t, SpherePatch):
            keys.append(t.key)
            levels.append(t.level)
        else:
            keys.append(int(t[0]))
            levels.append(int(t[1]))
    return np.array(keys, dtype=np.int64), np.array(levels, dtype=np.int64)


def refine(m: AngleMap, targets) -> AngleMap:
    """Subdivide undivided patches of ``m``; new wavelet coefficients are 0.

    Targets already at ``m.max_level`` are skipped and logged.  Targets that
    are not leaves of ``m`` raise :class:`TreeError`.
    """
    keys, levels = _target_keys(targets)
    if keys.size == 0:
        return m.with_coeffs(m.coeffs) if m.coeffs is not None else AngleMap(m.sub_key.copy(), m.sub_level.copy(), None, m.max_level)
    f = m.forest
    idx = f.leaf_lookup(np.zeros(keys.size, np.int64), keys)
    if np.any(idx < 0) or np.any(f.leaf_key[idx] != keys) or np.any(f.leaf_level[idx] != levels):
        raise TreeError("refine target is not an undivided patch")
    if m.coeffs is None:
        nf = f.refine(idx)
        return AngleMap(nf.sub_key, nf.sub_level, None, m.max_level)
    nf, c = f.refine(idx, m.coeffs)
    return AngleMap(nf.sub_key, nf.sub_level, c, m.max_level)


def coarsen(m: AngleMap, targets) -> AngleMap:
    """Undo the subdivision of patches whose children are all undivided."""
    keys, levels = _target_keys(targets)
    if keys.size == 0:
        return m.with_coeffs(m.coeffs) if m.coeffs is not None else AngleMap(m.sub_key.copy(), m.sub_level.copy(), None, m.max_level)
    f = m.forest
    idx = f.sub_lookup(np.zeros(keys.size, np.int64), keys, levels)
    if np.any(idx < 0):
        raise TreeError("coarsen target is not subdivided")
    if m.coeffs is None:
        nf = f.coarsen(idx)
        return AngleMap(nf.sub_key, nf.sub_level, None, m.max_level)
    nf, c = f.coarsen(idx, m.coeffs)
    return AngleMap(nf.sub_key, nf.sub_level, c, m.max_level)
