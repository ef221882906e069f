"""Discrete steady transport operators and matrix-free solves.

Space: linear discontinuous Galerkin on triangles with upwind face coupling,
weak form ``-(psi, Omega . grad v) + <psi_hat Omega . n, v> + (sigma_t psi,
v) - (sigma_s / 4pi phi, v) = (q, v)``.

Angle, two options:

* :class:`HaarDiscretisation` -- adaptive Haar trees per DG node.  The
  operator is assembled in *leaf space* (piecewise constants on the union
  refinement of the trees involved in each element or face) and wrapped in
  the tree-restricted Mallat transforms, ``A = W^T A_leaf W``.  Values are
  gathered by injection and tested contributions are summed back onto the
  coarser leaves, which is exact for piecewise constants.
* :class:`FpnDiscretisation` -- filtered spherical harmonics with a global
  Lax-Friedrichs flux (wave speed 1); the filter enters as an extra
  per-degree removal term.

The adjoint is the exact transpose of the discrete forward operator.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .haar import Forest
from .harmonics import FpnConfig, moment_matrices
from .mesh import TriMesh
from .sphere_grid import (
    DEPTH,
    SPHERE_SPAN,
    key_area,
    key_half_range,
    key_level_bounds,
    key_moments,
    mu_sqrt_integral,
    phi_half_range,
)

log = logging.getLogger(__name__)

__all__ = [
    "SolveOptions",
    "SolveResult",
    "SolverError",
    "ShapeError",
    "HaarDiscretisation",
    "FpnDiscretisation",
    "solve",
]

_FOUR_PI = 4.0 * np.pi
_HALF_PI = 0.5 * np.pi
_ME = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
_EDGE_LOCAL = np.array([[0, 1], [1, 2], [2, 0]])


class ShapeError(ValueError):
    """Vector does not match the discretisation's block structure."""


class SolverError(RuntimeError):
    """Iterative solve did not reach the requested tolerance."""

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolveOptions:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_iterations: int = 20000
    restart: int = 60

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1 or self.restart < 1:
            raise ValueError("iteration limits must be positive")


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    residual: float


class _Discretisation:
    mesh: TriMesh

    @property
    def n_dofs(self) -> int:  # pragma: no cover - abstract
        raise NotImplementedError

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_dofs,):
            raise ShapeError(f"expected a vector of {self.n_dofs} coefficients, got shape {x.shape}")
        return x

    @cached_property
    def _materials(self):
        m = self.mesh
        return m.region_array("sigma_t"), m.region_array("sigma_s"), m.region_array("source")

    def apply(self, x, direction: str = "forward") -> np.ndarray:
        """Discrete operator (or its transpose for ``direction='adjoint'``) times ``x``."""
        if direction not in ("forward", "adjoint"):
            raise ValueError("direction must be 'forward' or 'adjoint'")
        return self._apply(self._check(x), direction == "adjoint")

    def operator(self, direction="forward") -> LinearOperator:
        adj = direction == "adjoint"
        return LinearOperator((self.n_dofs, self.n_dofs), matvec=lambda v: self._apply(np.ravel(v), adj), dtype=float)

    def functional(self, x, region: int) -> float:
        """Average scalar flux over ``region``."""
        return float(np.dot(self._check(x), self.goal_vector(region)))

    def goal_vector(self, region: int) -> np.ndarray:
        """Vector ``g`` with ``g . x`` equal to the region-averaged scalar flux.

        It is also the discrete load vector of an isotropic adjoint source of
        density ``1 / V_region`` on the region, so it serves as the adjoint
        right-hand side.
        """
        m = self.mesh
        if region not in set(np.unique(m.tri_region).tolist()):
            raise ValueError(f"region {region} has no elements")
        vol = m.region_volume(region)
        w = np.where(m.tri_region == region, m.areas / (3.0 * vol), 0.0)
        return self._isotropic_load(np.repeat(w, 3) * _FOUR_PI)

    adjoint_source = goal_vector

    def source_vector(self) -> np.ndarray:
        """Load vector of the region sources (angle-integrated density S, isotropic)."""
        m = self.mesh
        s = self._materials[2]
        return self._isotropic_load(np.repeat(s * m.areas / 3.0, 3))

    def node_scalar_flux(self, x) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def region_mean_flux(self, x, region: int) -> float:
        phi = self.node_scalar_flux(x).reshape(-1, 3)
        m = self.mesh
        sel = m.tri_region == region
        return float((phi[sel].sum(1) * m.areas[sel] / 3.0).sum() / m.areas[sel].sum())


# ---------------------------------------------------------------------------
# Haar wavelets


def _union_cells(forest: Forest, groups: np.ndarray):
    """Common refinement of the leaf sets of each row of ``groups`` (node ids).

    Returns ``(cell_group, cell_key, cell_level, idx)`` where ``idx[j]`` is
    the global leaf index of node ``groups[g, j]`` containing each cell.
    """
    ng, k = groups.shape
    counts = forest.counts[groups]  # (ng, k)
    parts = []
    for j in range(k):
        nodes = groups[:, j]
        c = counts[:, j]
        starts = forest.ptr[nodes]
        rep = np.repeat(np.arange(ng, dtype=np.int64), c)
        offs = np.arange(c.sum(), dtype=np.int64) - np.repeat(np.cumsum(c) - c, c)
        parts.append((rep << 40) | forest.leaf_key[np.repeat(starts, c) + offs])
    comp = np.unique(np.concatenate(parts))
    cg = comp >> 40
    ck = comp & ((1 << 40) - 1)
    nxt = np.empty_like(ck)
    nxt[:-1] = ck[1:]
    same = np.zeros(len(ck), dtype=bool)
    same[:-1] = cg[1:] == cg[:-1]
    end = np.where(same, nxt, SPHERE_SPAN)
    span = end - ck
    lvl = DEPTH - (np.round(np.log2(span.astype(float))).astype(np.int64) // 2)
    idx = np.empty((k, len(ck)), dtype=np.int64)
    for j in range(k):
        idx[j] = forest.leaf_lookup(groups[cg, j], ck)
    return cg, ck, lvl, idx


class HaarDiscretisation(_Discretisation):
    """Upwind DG in space, adaptive Haar wavelets in angle.

    Boundaries are vacuum; :meth:`inflow_vector` turns prescribed incoming
    values into a right-hand side for manufactured-solution checks.
    """

    def __init__(self, mesh: TriMesh, forest: Forest, precond: str = "angular"):
        if forest.n_nodes != mesh.n_nodes:
            raise ShapeError(f"forest has {forest.n_nodes} nodes, mesh has {mesh.n_nodes} DG nodes")
        self.mesh = mesh
        self.forest = forest
        self.precond = precond

    @property
    def n_dofs(self) -> int:
        return self.forest.n_dofs

    def node_scalar_flux(self, x) -> np.ndarray:
        return self.forest.scalar_flux(self._check(x))

    # -- precomputed cell tables ------------------------------------------

    @cached_property
    def _elem(self):
        m = self.mesh
        groups = np.arange(m.n_nodes, dtype=np.int64).reshape(-1, 3)
        cg, ck, cl, idx = _union_cells(self.forest, groups)
        area = key_area(cl)
        mx, my = key_moments(ck, cl)
        g = m.grads[cg]  # (n, 3, 2)
        ea = m.areas[cg]
        A = -(ea / 3.0)[:, None] * (g[:, :, 0] * mx[:, None] + g[:, :, 1] * my[:, None])
        T = self._materials[0][cg] * area * ea / 12.0
        return dict(group=cg, key=ck, level=cl, idx=idx, area=area, A=A, T=T)

    @cached_property
    def _face(self):
        f = self.mesh.faces
        nodes = f["int_nodes"].reshape(-1, 4)  # P1, Q1, P2, Q2
        cg, ck, cl, idx = _union_cells(self.forest, nodes)
        n = f["int_normal"][cg]
        plus, minus = key_half_range(ck, cl, n[:, 0], n[:, 1])
        L6 = f["int_length"][cg] / 6.0
        return dict(idx=idx, plus=plus * L6, minus=minus * L6)

    @cached_property
    def _bnd(self):
        f = self.mesh.faces
        nodes = f["bnd_nodes"]
        cg, ck, cl, idx = _union_cells(self.forest, nodes)
        n = f["bnd_normal"][cg]
        plus, minus = key_half_range(ck, cl, n[:, 0], n[:, 1])
        L6 = f["bnd_length"][cg] / 6.0
        return dict(group=cg, key=ck, level=cl, idx=idx, plus=plus * L6, minus=minus * L6)

    # -- operator ---------------------------------------------------------

    def _leaf_apply(self, u, adjoint):
        E, F, B = self._elem, self._face, self._bnd
        n = self.forest.n_dofs
        ie = E["idx"]
        U = u[ie]  # (3, nc)
        sU = U.sum(0)
        A = E["A"].T  # (3, nc)
        if not adjoint:
            R = A * sU + E["T"] * (U + sU)
        else:
            R = (A * U).sum(0) + E["T"] * (U + sU)
        out = np.bincount(ie.ravel(), weights=R.ravel(), minlength=n)

        i = F["idx"]
        V = u[i]  # (4, nc): P1, Q1, P2, Q2
        p, q = F["plus"], F["minus"]
        if not adjoint:
            f_P = p * (2 * V[0] + V[1]) + q * (2 * V[2] + V[3])
            f_Q = p * (V[0] + 2 * V[1]) + q * (V[2] + 2 * V[3])
            contrib = np.stack([f_P, f_Q, -f_P, -f_Q])
        else:
            dP = V[0] - V[2]
            dQ = V[1] - V[3]
            mP = 2 * dP + dQ
            mQ = dP + 2 * dQ
            contrib = np.stack([p * mP, p * mQ, q * mP, q * mQ])
        out += np.bincount(i.ravel(), weights=contrib.ravel(), minlength=n)

        ib = B["idx"]
        Vb = u[ib]
        pb = B["plus"]
        cb = np.stack([pb * (2 * Vb[0] + Vb[1]), pb * (Vb[0] + 2 * Vb[1])])
        out += np.bincount(ib.ravel(), weights=cb.ravel(), minlength=n)
        return out

    def _scatter_coeff(self, x):
        # isotropic scattering only sees the scaling coefficients
        sig_s = self._materials[1]
        if not np.any(sig_s):
            return None
        m = self.mesh
        si = self.forest.scaling_index
        phi = _HALF_PI * x[si].sum(1).reshape(-1, 3)
        mphi = (phi @ _ME) * (m.areas * sig_s)[:, None]
        out = np.zeros(self.n_dofs)
        val = -(_HALF_PI / _FOUR_PI) * mphi.ravel()
        out[si] = val[:, None]
        return out

    def _apply(self, x, adjoint):
        f = self.forest
        r = f.inverse_T(self._leaf_apply(f.inverse(x), adjoint))
        s = self._scatter_coeff(x)
        return r if s is None else r + s

    def _isotropic_load(self, nodal):
        # nodal = angle-integrated load per DG node; spread as density / 4pi over angle
        out = np.zeros(self.n_dofs)
        out[self.forest.scaling_index] = (nodal * _HALF_PI / _FOUR_PI)[:, None]
        return out

    def inflow_vector(self, g: Callable) -> np.ndarray:
        """Right-hand side contribution of prescribed incoming boundary values."""
        B = self._bnd
        f = self.forest
        m = self.mesh
        ib = B["idx"]
        bn = m.faces["bnd_nodes"][B["group"]]  # (nc, 2)
        g0 = g(m.node_xy[bn[:, 0]], B["key"], B["level"])
        g1 = g(m.node_xy[bn[:, 1]], B["key"], B["level"])
        q = B["minus"]
        c = np.stack([-q * (2 * g0 + g1), -q * (g0 + 2 * g1)])
        leaf = np.bincount(ib.ravel(), weights=c.ravel(), minlength=f.n_dofs)
        return f.inverse_T(leaf)

    def leaf_load(self, q_nodal_leaf) -> np.ndarray:
        """Load vector of a source given by nodal values per leaf (leaf-space layout).

        ``q_nodal_leaf[j]`` is the value at DG node ``forest.leaf_node[j]``
        of the (spatially linear) source on leaf ``j``.
        """
        f = self.forest
        E = self._elem
        ie = E["idx"]
        Q = np.asarray(q_nodal_leaf, dtype=float)[ie]
        ea = self.mesh.areas[E["group"]]
        R = (ea * E["area"] / 12.0) * (Q + Q.sum(0))
        return f.inverse_T(np.bincount(ie.ravel(), weights=R.ravel(), minlength=f.n_dofs))

    # -- diagonal and preconditioning ---------------------------------------

    @cached_property
    def _blocks(self):
        """3x3 element blocks per element cell (row = test node, column = trial node)."""
        E = self._elem
        m = self.mesh
        nc = len(E["T"])
        K = np.empty((nc, 3, 3))
        K[:] = E["A"][:, :, None]
        K += E["T"][:, None, None] * (np.eye(3) + 1.0)[None]
        cg = E["group"]
        tri = m.triangles[cg]
        verts = m.vertices
        sign = np.sign(m.signed_areas[cg])
        for j, (a, b) in enumerate(_EDGE_LOCAL):
            p = verts[tri[:, a]]
            q = verts[tri[:, b]]
            d = q - p
            L = np.hypot(d[:, 0], d[:, 1])
            nx = sign * d[:, 1] / L
            ny = -sign * d[:, 0] / L
            plus, _ = key_half_range(E["key"], E["level"], nx, ny)
            w = plus * L / 6.0
            K[:, a, a] += 2 * w
            K[:, b, b] += 2 * w
            K[:, a, b] += w
            K[:, b, a] += w
        return K

    @cached_property
    def _block_inv(self):
        return np.linalg.inv(self._blocks)

    def diagonal(self) -> np.ndarray:
        """Diagonal of the discrete operator in wavelet coordinates."""
        E = self._elem
        f = self.forest
        K = self._blocks
        d_leaf = np.bincount(E["idx"].ravel(), weights=np.einsum("nii->in", K).ravel(), minlength=f.n_dofs)
        d = f.support_sum(d_leaf)
        sig_s = self._materials[1]
        if np.any(sig_s):
            me = self.mesh.areas * sig_s * (2.0 / 12.0)
            d[f.scaling_index] -= (_HALF_PI * _HALF_PI / _FOUR_PI) * np.repeat(me, 3)[:, None]
        return d

    def preconditioner(self, direction="forward", kind: str | None = None) -> LinearOperator:
        """Approximate inverse in wavelet coordinates.

        ``"angular"`` (default) solves the streaming-removal operator of every
        patch of the global union tree exactly over the whole mesh;
        ``"element"`` inverts 3x3 element blocks on union cells.  Both split
        leaf residuals onto finer cells by area and average the corrections
        back.
        """
        kind = kind or self.precond
        if kind == "angular":
            return self._angular.operator(direction)
        if kind != "element":
            raise ValueError(f"unknown preconditioner {kind!r}")
        E = self._elem
        f = self.forest
        inv = self._block_inv
        if direction == "adjoint":
            inv = np.transpose(inv, (0, 2, 1))
        ie = E["idx"]
        frac = E["area"][None, :] / f.leaf_area[ie]
        n = f.n_dofs

        def mv(r):
            rl = f.forward_T(np.ravel(r))
            rc = (rl[ie] * frac).T  # (nc, 3)
            uc = np.einsum("nij,nj->ni", inv, rc).T
            ul = np.bincount(ie.ravel(), weights=(uc * frac).ravel(), minlength=n)
            return f.forward(ul)

        return LinearOperator((n, n), matvec=mv, dtype=float)

    @cached_property
    def _angular(self) -> "_AngularBlocks":
        return _AngularBlocks(self)


class _AngularBlocks:
    """Exact per-patch spatial solves on the global union of all trees.

    For one patch ``c`` the streaming part of the operator equals
    ``S_mu(c)`` times a matrix that depends on the azimuthal range only
    (moments and half-range fluxes factorise), and the removal part is
    ``|c| sigma_t`` times the mass matrix.  Factorisations are shared
    between patches with the same azimuthal range, and in void also across
    polar ranges.
    """

    def __init__(self, disc: HaarDiscretisation):
        from scipy.sparse import csc_matrix
        from scipy.sparse.linalg import splu

        self.disc = disc
        f = disc.forest
        m = disc.mesh
        keys = np.unique(f.leaf_key)
        nxt = np.r_[keys[1:], SPHERE_SPAN]
        levels = DEPTH - (np.round(np.log2((nxt - keys).astype(float))).astype(np.int64) // 2)
        self.keys, self.levels = keys, levels
        phi_lo, phi_hi, mu_lo, mu_hi = key_level_bounds(keys, levels)
        s_mu = mu_sqrt_integral(mu_lo, mu_hi)
        self.s_mu = s_mu
        sig_t = disc._materials[0]
        void = not np.any(sig_t)
        ratio = np.zeros_like(s_mu) if void else key_area(levels) / s_mu
        group_key = np.stack([phi_lo, phi_hi, ratio], 1)
        ukeys, self.group = np.unique(group_key, axis=0, return_inverse=True)
        self.group = self.group.ravel()
        self._pattern(m, sig_t)
        self.lu = []
        for phl, phh, rt in ukeys:
            data = self._values(phl, phh, rt)
            A = csc_matrix((data, self.indices, self.indptr), shape=(m.n_nodes, m.n_nodes))
            self.lu.append(splu(A))
        # leaf of every node containing every union patch, stored per group
        nodes = np.arange(m.n_nodes, dtype=np.int64)
        self.members = [np.flatnonzero(self.group == g) for g in range(len(ukeys))]
        self.lidx = []
        self.frac = []
        for mem in self.members:
            li = f.leaf_lookup(np.broadcast_to(nodes[:, None], (m.n_nodes, mem.size)), np.broadcast_to(keys[mem], (m.n_nodes, mem.size)))
            self.lidx.append(li)
            self.frac.append(key_area(levels[mem])[None, :] / f.leaf_area[li])

    def _pattern(self, m: TriMesh, sig_t):
        rows, cols, cx, cy, cm = [], [], [], [], []
        g = m.grads
        ea = m.areas
        e = np.arange(m.n_elements)
        for b in range(3):
            for a in range(3):
                rows.append(3 * e + b)
                cols.append(3 * e + a)
                cx.append(-(ea / 3.0) * g[:, b, 0])
                cy.append(-(ea / 3.0) * g[:, b, 1])
                cm.append(sig_t * ea / 12.0 * (2.0 if a == b else 1.0))
        nel = 9 * m.n_elements
        F = m.faces
        fi = F["int_nodes"]
        nf = len(fi)
        mf = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
        frows, fcols, fw, fidx, fwhich = [], [], [], [], []
        fl = F["int_length"]
        for side, sgn in ((0, 1.0), (1, -1.0)):
            for i in range(2):
                for j in range(2):
                    for src, wh in ((0, 0), (1, 1)):
                        frows.append(fi[:, side, i])
                        fcols.append(fi[:, src, j])
                        fw.append(sgn * mf[i, j] * fl)
                        fidx.append(np.arange(nf))
                        fwhich.append(np.full(nf, wh))
        bi = F["bnd_nodes"]
        nb = len(bi)
        bl = F["bnd_length"]
        for i in range(2):
            for j in range(2):
                frows.append(bi[:, i])
                fcols.append(bi[:, j])
                fw.append(mf[i, j] * bl)
                fidx.append(nf + np.arange(nb))
                fwhich.append(np.zeros(nb, dtype=np.int64))
        r = np.concatenate(rows + frows)
        c = np.concatenate(cols + fcols)
        n = m.n_nodes
        lin = c * n + r  # column-major order
        uniq, inv = np.unique(lin, return_inverse=True)
        self.inv = inv.ravel()
        self.nnz = len(uniq)
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.searchsorted(uniq // n, np.arange(n + 1)).astype(np.int32)
        self.cx = np.concatenate(cx)
        self.cy = np.concatenate(cy)
        self.cm = np.concatenate(cm)
        self.nel = nel
        self.fw = np.concatenate(fw)
        self.fidx = np.concatenate(fidx)
        self.fwhich = np.concatenate(fwhich)
        self.normals = np.vstack([F["int_normal"], F["bnd_normal"]])

    def _values(self, phi_lo, phi_hi, ratio):
        # operator divided by S_mu
        mx = np.sin(phi_hi) - np.sin(phi_lo)
        my = np.cos(phi_lo) - np.cos(phi_hi)
        vel = mx * self.cx + my * self.cy + ratio * self.cm
        cp, cmn = phi_half_range(phi_lo, phi_hi, self.normals[:, 0], self.normals[:, 1])
        pm = np.where(self.fwhich == 0, cp[self.fidx], cmn[self.fidx])
        vals = np.concatenate([vel, self.fw * pm])
        return np.bincount(self.inv, weights=vals, minlength=self.nnz)

    def operator(self, direction="forward") -> LinearOperator:
        f = self.disc.forest
        n = f.n_dofs
        trans = "T" if direction == "adjoint" else "N"

        def mv(r):
            rl = f.forward_T(np.ravel(r))
            ul = np.zeros(n)
            for g, lu in enumerate(self.lu):
                li, fr = self.lidx[g], self.frac[g]
                mem = self.members[g]
                rhs = rl[li] * fr / self.s_mu[mem][None, :]
                sol = lu.solve(np.ascontiguousarray(rhs), trans=trans)
                ul += np.bincount(li.ravel(), weights=(sol * fr).ravel(), minlength=n)
            return f.forward(ul)

        return LinearOperator((n, n), matvec=mv, dtype=float)


# ---------------------------------------------------------------------------
# filtered spherical harmonics


class FpnDiscretisation(_Discretisation):
    """Upwind-type DG in space, filtered P_N in angle."""

    _DENSE_LIMIT = 3 * 10**8  # bytes allowed for dense element-block inverses

    def __init__(self, mesh: TriMesh, config: FpnConfig):
        self.mesh = mesh
        self.config = config
        self.nh = config.n_functions
        Mx, My, Mz = moment_matrices(config.order)
        self.Mx, self.My = Mx, My
        self.removal = config.removal()

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_nodes * self.nh

    def node_scalar_flux(self, x) -> np.ndarray:
        return np.sqrt(_FOUR_PI) * self._check(x).reshape(-1, self.nh)[:, 0]

    def _isotropic_load(self, nodal):
        out = np.zeros((self.mesh.n_nodes, self.nh))
        out[:, 0] = nodal / np.sqrt(_FOUR_PI)
        return out.ravel()

    @cached_property
    def _geo(self):
        m = self.mesh
        f = m.faces
        st, ss, _ = self._materials
        return dict(
            area=m.areas,
            grads=m.grads,
            st=st,
            ss=ss,
            fi=f["int_nodes"],
            fn=f["int_normal"],
            fl=f["int_length"],
            bi=f["bnd_nodes"],
            bn=f["bnd_normal"],
            bl=f["bnd_length"],
        )

    def _apply(self, x, adjoint):
        G = self._geo
        nh = self.nh
        X = x.reshape(-1, 3, nh)
        ea = G["area"]
        out = np.zeros_like(X)
        # removal, filter and scattering (symmetric)
        MX = np.einsum("ab,ebh->eah", _ME, X) * ea[:, None, None]
        out += MX * (G["st"][:, None, None] + self.removal[None, None, :])
        out[:, :, 0] -= G["ss"][:, None] * MX[:, :, 0]
        gx = G["grads"][:, :, 0]
        gy = G["grads"][:, :, 1]
        if not adjoint:
            S = X.sum(1)
            Sx = S @ self.Mx
            Sy = S @ self.My
            out -= (ea / 3.0)[:, None, None] * (gx[:, :, None] * Sx[:, None, :] + gy[:, :, None] * Sy[:, None, :])
        else:
            Wx = np.einsum("eb,ebh->eh", gx, X) @ self.Mx
            Wy = np.einsum("eb,ebh->eh", gy, X) @ self.My
            out -= (ea / 3.0)[:, None, None] * (Wx + Wy)[:, None, :]
        flat = out.reshape(-1, nh)
        xf = x.reshape(-1, nh)

        fi = G["fi"]
        L6 = (G["fl"] / 6.0)[:, None, None]
        nx = G["fn"][:, 0][:, None, None]
        ny = G["fn"][:, 1][:, None, None]
        V1 = xf[fi[:, 0]]  # (F, 2, nh)
        V2 = xf[fi[:, 1]]

        def mn(V):
            return nx * (V @ self.Mx) + ny * (V @ self.My)

        def face_mass(V):
            return L6 * np.stack([2 * V[:, 0] + V[:, 1], V[:, 0] + 2 * V[:, 1]], 1)

        if not adjoint:
            Fl = 0.5 * mn(V1 + V2) + 0.5 * (V1 - V2)
            R = face_mass(Fl)
            np.add.at(flat, fi[:, 0], R)
            np.add.at(flat, fi[:, 1], -R)
        else:
            D = face_mass(V1 - V2)
            MD = 0.5 * mn(D)
            np.add.at(flat, fi[:, 0], MD + 0.5 * D)
            np.add.at(flat, fi[:, 1], MD - 0.5 * D)

        bi = G["bi"]
        Lb = (G["bl"] / 6.0)[:, None, None]
        nbx = G["bn"][:, 0][:, None, None]
        nby = G["bn"][:, 1][:, None, None]
        Vb = xf[bi]
        Mb = Lb * np.stack([2 * Vb[:, 0] + Vb[:, 1], Vb[:, 0] + 2 * Vb[:, 1]], 1)
        Rb = 0.5 * (nbx * (Mb @ self.Mx) + nby * (Mb @ self.My)) + 0.5 * Mb
        np.add.at(flat, bi, Rb)
        return flat.ravel()

    def inflow_vector(self, g: Callable) -> np.ndarray:
        """Right-hand side of incoming boundary data ``g(xy) -> (n, nh)`` coefficients."""
        G = self._geo
        m = self.mesh
        bi = G["bi"]
        gv = np.stack([g(m.node_xy[bi[:, 0]]), g(m.node_xy[bi[:, 1]])], 1)
        Lb = (G["bl"] / 6.0)[:, None, None]
        Mg = Lb * np.stack([2 * gv[:, 0] + gv[:, 1], gv[:, 0] + 2 * gv[:, 1]], 1)
        nbx = G["bn"][:, 0][:, None, None]
        nby = G["bn"][:, 1][:, None, None]
        R = -(0.5 * (nbx * (Mg @ self.Mx) + nby * (Mg @ self.My)) - 0.5 * Mg)
        out = np.zeros((m.n_nodes, self.nh))
        np.add.at(out, bi, R)
        return out.ravel()

    def diagonal(self) -> np.ndarray:
        G = self._geo
        m = self.mesh
        nh = self.nh
        d = np.zeros((m.n_elements, 3, nh))
        me = G["area"] * (2.0 / 12.0)
        d += me[:, None, None] * (G["st"][:, None, None] + self.removal[None, None, :])
        d[:, :, 0] -= (me * G["ss"])[:, None]
        flat = d.reshape(-1, nh)
        # streaming diagonals vanish by parity; faces add half the face mass diagonal
        Mx_d, My_d = np.diag(self.Mx), np.diag(self.My)
        for nodes, normal, length in ((G["fi"][:, 0], G["fn"], G["fl"]), (G["fi"][:, 1], -G["fn"], G["fl"]), (G["bi"], G["bn"], G["bl"])):
            w = (length / 3.0)[:, None]
            val = w * (0.5 * (normal[:, 0:1] * Mx_d + normal[:, 1:2] * My_d) + 0.5)
            np.add.at(flat, nodes[:, 0], val)
            np.add.at(flat, nodes[:, 1], val)
        return flat.ravel()

    def _own_face_terms(self):
        """Per element and local edge: (outward normal, length)."""
        m = self.mesh
        p = m.vertices[m.triangles]
        sign = np.sign(m.signed_areas)
        out = []
        for a, b in _EDGE_LOCAL:
            d = p[:, b] - p[:, a]
            L = np.hypot(d[:, 0], d[:, 1])
            n = sign[:, None] * np.stack([d[:, 1], -d[:, 0]], 1) / L[:, None]
            out.append((a, b, n, L))
        return out

    @cached_property
    def _block_inv(self):
        m = self.mesh
        G = self._geo
        nh = self.nh
        ne = m.n_elements
        dense = ne * (3 * nh) ** 2 * 8 <= self._DENSE_LIMIT
        ea = G["area"]
        if dense:
            I = np.eye(nh)
            K = np.zeros((ne, 3, nh, 3, nh))
            rem = np.diag(self.removal)
            for b in range(3):
                for a in range(3):
                    blk = _ME[b, a] * ea[:, None, None] * (G["st"][:, None, None] * I + rem)
                    blk[:, 0, 0] -= _ME[b, a] * ea * G["ss"]
                    stream = -(ea / 3.0)[:, None, None] * (
                        G["grads"][:, b, 0][:, None, None] * self.Mx + G["grads"][:, b, 1][:, None, None] * self.My
                    )
                    K[:, b, :, a, :] = blk + stream
            for a, b, n, L in self._own_face_terms():
                own = 0.5 * (n[:, 0][:, None, None] * self.Mx + n[:, 1][:, None, None] * self.My) + 0.5 * I
                w = (L / 6.0)[:, None, None]
                K[:, a, :, a, :] += 2 * w * own
                K[:, b, :, b, :] += 2 * w * own
                K[:, a, :, b, :] += w * own
                K[:, b, :, a, :] += w * own
            return "dense", np.linalg.inv(K.reshape(ne, 3 * nh, 3 * nh))
        # angular diagonal: one 3x3 block per element and harmonic
        K = np.zeros((ne, nh, 3, 3))
        K += _ME[None, None] * (ea[:, None] * (G["st"][:, None] + self.removal[None, :]))[:, :, None, None]
        K[:, 0] -= _ME[None] * (ea * G["ss"])[:, None, None]
        Mx_d, My_d = np.diag(self.Mx), np.diag(self.My)
        for a, b, n, L in self._own_face_terms():
            own = 0.5 * (n[:, 0:1] * Mx_d + n[:, 1:2] * My_d) + 0.5
            w = (L / 6.0)[:, None] * own
            K[:, :, a, a] += 2 * w
            K[:, :, b, b] += 2 * w
            K[:, :, a, b] += w
            K[:, :, b, a] += w
        return "diag", np.linalg.inv(K)

    def preconditioner(self, direction="forward") -> LinearOperator:
        kind, inv = self._block_inv
        ne = self.mesh.n_elements
        nh = self.nh
        adj = direction == "adjoint"
        if kind == "dense":
            P = np.transpose(inv, (0, 2, 1)) if adj else inv

            def mv(r):
                return np.einsum("eij,ej->ei", P, np.ravel(r).reshape(ne, 3 * nh)).ravel()

        else:
            P = np.transpose(inv, (0, 1, 3, 2)) if adj else inv

            def mv(r):
                R = np.ravel(r).reshape(ne, 3, nh)
                return np.einsum("ehij,ejh->eih", P, R).ravel()

        return LinearOperator((self.n_dofs, self.n_dofs), matvec=mv, dtype=float)


# ---------------------------------------------------------------------------


def solve(disc: _Discretisation, rhs, options: SolveOptions = SolveOptions(), direction="forward", x0=None) -> SolveResult:
    """Preconditioned restarted GMRES on the matrix-free operator.

    Converged when ``||b - A x|| <= max(abs_tol, rel_tol * ||b||)``, checked
    on the true residual.  Raises :class:`SolverError` otherwise.
    """
    b = disc._check(rhs)
    adj = direction == "adjoint"
    A = disc.operator(direction)
    M = disc.preconditioner(direction)
    bnorm = float(np.linalg.norm(b))
    target = max(options.abs_tol, options.rel_tol * bnorm)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0 and x0 is None:
        return SolveResult(x, 0, 0.0)
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    res = float(np.linalg.norm(b - disc._apply(x, adj)))
    rtol_inner = 0.5 * target / max(bnorm, 1e-300)
    while res > target and iters < options.max_iterations:
        budget = options.max_iterations - iters
        x, _info = gmres(
            A,
            b,
            x0=x,
            rtol=min(rtol_inner, 1.0),
            atol=0.5 * target,
            restart=options.restart,
            maxiter=max(1, budget // options.restart),
            M=M,
            callback=count,
            callback_type="pr_norm",
        )
        res_new = float(np.linalg.norm(b - disc._apply(x, adj)))
        if res_new > target:
            rtol_inner *= 0.1
        if res_new >= res and res_new > target and _info == 0 and rtol_inner < 1e-17:
            break
        res = res_new
    log.debug("solve %s: %d iterations, residual %.3e", direction, iters, res)
    if res > target:
        raise SolverError("GMRES did not converge", res, iters)
    return SolveResult(x, iters, res)
