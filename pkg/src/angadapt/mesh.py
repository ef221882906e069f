"""Conforming 2D triangle meshes with material regions.

Besides the data model this module builds the face connectivity used by the
discontinuous discretisation: every element owns three DG nodes (one per
vertex, numbered ``3*e + a``), and each interior face records the matching
node pairs of its two sides.

Mesh file format (ASCII, 0-based indices)::

    tmesh 1
    vertices K
    x y                      (K lines)
    triangles M
    v0 v1 v2 region          (M lines)
    boundary B
    v0 v1 tag                (B lines)
    region id sigma_t sigma_s source
    ...
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "Material",
    "TriMesh",
    "MeshFormatError",
    "VACUUM",
    "generate_duct",
    "generate_box",
    "load",
    "save",
    "validate",
    "SOURCE_REGION",
    "DETECTOR_REGION",
]

#: boundary tag for zero incoming flux
VACUUM = 0
SOURCE_REGION = 1
DETECTOR_REGION = 2


class MeshFormatError(ValueError):
    """Parse or validation failure, with the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())
        self.line = line


@dataclass(frozen=True)
class Material:
    """Cross-sections (1/cm) and angle-integrated isotropic source density."""

    sigma_t: float = 0.0
    sigma_s: float = 0.0
    source: float = 0.0


@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    tri_region: np.ndarray
    boundary_edges: np.ndarray
    boundary_tag: np.ndarray
    regions: dict[int, Material] = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.tri_region = np.asarray(self.tri_region, dtype=np.int64).reshape(-1)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_tag = np.asarray(self.boundary_tag, dtype=np.int64).reshape(-1)

    # -- geometry ---------------------------------------------------------

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_nodes(self) -> int:
        return 3 * len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def grads(self) -> np.ndarray:
        """Gradients of the three linear basis functions, shape (M, 3, 2)."""
        p = self.vertices[self.triangles]
        two_a = 2.0 * self.signed_areas
        g = np.empty((self.n_elements, 3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            g[:, a, 0] = (p[:, b, 1] - p[:, c, 1]) / two_a
            g[:, a, 1] = (p[:, c, 0] - p[:, b, 0]) / two_a
        return g

    @cached_property
    def node_xy(self) -> np.ndarray:
        return self.vertices[self.triangles].reshape(-1, 2)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def region_array(self, attr: str) -> np.ndarray:
        return _lookup(self.tri_region, {r: getattr(m, attr) for r, m in self.regions.items()})

    def region_volume(self, region: int) -> float:
        return float(self.areas[self.tri_region == region].sum())

    # -- connectivity -----------------------------------------------------

    @cached_property
    def _edges(self):
        t = self.triangles
        loc = np.array([[0, 1], [1, 2], [2, 0]])
        ev = t[:, loc]  # (M, 3, 2)
        e = ev.reshape(-1, 2)
        key = np.sort(e, axis=1)
        order = np.lexsort((key[:, 1], key[:, 0]))
        ks = key[order]
        new = np.ones(len(ks), dtype=bool)
        new[1:] = np.any(ks[1:] != ks[:-1], axis=1)
        group = np.cumsum(new) - 1
        counts = np.bincount(group)
        return ev, order, group, counts, ks[new]

    @cached_property
    def faces(self):
        """Interior and boundary face tables.

        Returns a dict with ``int_elem`` (F, 2), ``int_nodes`` (F, 2, 2) DG
        node ids of (side, endpoint) with matching endpoints, ``int_normal``
        (F, 2) pointing out of side 0, ``int_length``; and ``bnd_elem``,
        ``bnd_nodes`` (B, 2), ``bnd_normal``, ``bnd_length``, ``bnd_tag``.
        """
        ev, order, group, counts, _ = self._edges
        if np.any(counts > 2):
            raise MeshFormatError("edge shared by more than two triangles")
        half = order  # half-edge ids (3*e + j) sorted by undirected edge
        start = np.r_[0, np.cumsum(counts)[:-1]]
        two = counts == 2
        h0 = half[start[two]]
        h1 = half[start[two] + 1]
        e0, j0 = h0 // 3, h0 % 3
        e1, j1 = h1 // 3, h1 % 3
        # side-0 endpoints in its own orientation
        a0 = j0
        b0 = (j0 + 1) % 3
        va = self.triangles[e0, a0]
        # matching local vertices on side 1 (reverse orientation)
        a1 = np.where(self.triangles[e1, j1] == va, j1, (j1 + 1) % 3)
        b1 = np.where(a1 == j1, (j1 + 1) % 3, j1)
        int_nodes = np.stack([np.stack([3 * e0 + a0, 3 * e0 + b0], 1), np.stack([3 * e1 + a1, 3 * e1 + b1], 1)], 1)
        n0, l0 = self._edge_normals(e0, j0)

        one = counts == 1
        hb = half[start[one]]
        eb, jb = hb // 3, hb % 3
        nb, lb = self._edge_normals(eb, jb)
        bnodes = np.stack([3 * eb + jb, 3 * eb + (jb + 1) % 3], 1)
        # boundary tags by edge lookup
        tags = np.full(len(eb), VACUUM, dtype=np.int64)
        if len(self.boundary_edges):
            key_b = np.sort(self.boundary_edges, axis=1)
            kb = key_b[:, 0] * (len(self.vertices) + 1) + key_b[:, 1]
            ve = np.sort(np.stack([self.triangles[eb, jb], self.triangles[eb, (jb + 1) % 3]], 1), axis=1)
            kq = ve[:, 0] * (len(self.vertices) + 1) + ve[:, 1]
            srt = np.argsort(kb)
            pos = np.searchsorted(kb[srt], kq)
            pos = np.minimum(pos, len(kb) - 1)
            hit = kb[srt][pos] == kq
            tags[hit] = self.boundary_tag[srt][pos[hit]]
        return dict(
            int_elem=np.stack([e0, e1], 1),
            int_nodes=int_nodes,
            int_normal=n0,
            int_length=l0,
            bnd_elem=eb,
            bnd_nodes=bnodes,
            bnd_normal=nb,
            bnd_length=lb,
            bnd_tag=tags,
        )

    def _edge_normals(self, e, j):
        p = self.vertices[self.triangles[e, j]]
        q = self.vertices[self.triangles[e, (j + 1) % 3]]
        d = q - p
        L = np.hypot(d[:, 0], d[:, 1])
        sgn = np.sign(self.signed_areas[e])[:, None]
        n = sgn * np.stack([d[:, 1], -d[:, 0]], 1) / L[:, None]
        return n, L


def _lookup(ids, table):
    keys = np.array(sorted(table), dtype=np.int64)
    vals = np.array([table[k] for k in keys], dtype=float)
    pos = np.searchsorted(keys, ids)
    pos = np.minimum(pos, max(len(keys) - 1, 0))
    ok = keys[pos] == ids if len(keys) else np.zeros(len(ids), bool)
    return np.where(ok, vals[pos] if len(keys) else 0.0, 0.0)


# -- generation -----------------------------------------------------------


def _axis(segments):
    pts = [0.0]
    for lo, hi, n in segments:
        pts.extend(np.linspace(lo, hi, n + 1)[1:])
    return np.array(pts)


def generate_duct(length: float, width: float = 1.0, h: float = 0.25, source: float = 1.0) -> TriMesh:
    """Straight void duct with a 1 x 1 source box and a 1 x 1 detector box.

    The duct runs along +y: the source occupies ``y in [0, 1]``, the
    detector ``y in [length + 1, length + 2]``, both spanning the full width
    (1 cm by default).  Each structured cell is split into four triangles
    through its centre.
    """
    if length <= 0 or width <= 0 or h <= 0:
        raise ValueError("length, width and h must be positive")
    if h >= min(1.0, width):
        raise ValueError(f"h = {h} does not resolve the unit source/detector boxes (need h < {min(1.0, width)})")
    nb = math.ceil(1.0 / h - 1e-9)
    nm = math.ceil(length / h - 1e-9)
    nx = math.ceil(width / h - 1e-9)
    ys = _axis([(0.0, 1.0, nb), (1.0, 1.0 + length, nm), (1.0 + length, 2.0 + length, nb)])
    xs = np.linspace(0.0, width, nx + 1)
    ny = len(ys) - 1
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    corners = np.stack([X.ravel(), Y.ravel()], 1)
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    CX, CY = np.meshgrid(cx, cy, indexing="ij")
    centres = np.stack([CX.ravel(), CY.ravel()], 1)
    verts = np.vstack([corners, centres])

    def vid(i, j):
        return i * (ny + 1) + j

    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    c = len(corners) + I * ny + J
    v00, v10, v11, v01 = vid(I, J), vid(I + 1, J), vid(I + 1, J + 1), vid(I, J + 1)
    tris = np.stack(
        [
            np.stack([v00, v10, c], 1),
            np.stack([v10, v11, c], 1),
            np.stack([v11, v01, c], 1),
            np.stack([v01, v00, c], 1),
        ],
        1,
    ).reshape(-1, 3)
    row_region = np.zeros(ny, dtype=np.int64)
    row_region[:nb] = SOURCE_REGION
    row_region[ny - nb :] = DETECTOR_REGION
    region = np.repeat(row_region[J], 4)

    bottom = [(vid(i, 0), vid(i + 1, 0)) for i in range(nx)]
    right = [(vid(nx, j), vid(nx, j + 1)) for j in range(ny)]
    top = [(vid(i + 1, ny), vid(i, ny)) for i in range(nx)]
    left = [(vid(0, j + 1), vid(0, j)) for j in range(ny)]
    bedges = np.array(bottom + right + top + left, dtype=np.int64)
    regions = {
        0: Material(0.0, 0.0, 0.0),
        SOURCE_REGION: Material(0.0, 0.0, float(source)),
        DETECTOR_REGION: Material(0.0, 0.0, 0.0),
    }
    return TriMesh(verts, tris, region, bedges, np.full(len(bedges), VACUUM), regions)


def generate_box(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0, material: Material = Material()) -> TriMesh:
    """Rectangle ``[0, lx] x [0, ly]`` split into ``2 * nx * ny`` triangles, one region."""
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], 1)

    def vid(i, j):
        return i * (ny + 1) + j

    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    a, b, c, d = vid(I, J), vid(I + 1, J), vid(I + 1, J + 1), vid(I, J + 1)
    tris = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    bedges = np.array(
        [(vid(i, 0), vid(i + 1, 0)) for i in range(nx)]
        + [(vid(nx, j), vid(nx, j + 1)) for j in range(ny)]
        + [(vid(i + 1, ny), vid(i, ny)) for i in range(nx)]
        + [(vid(0, j + 1), vid(0, j)) for j in range(ny)],
        dtype=np.int64,
    )
    return TriMesh(verts, tris, np.zeros(len(tris), np.int64), bedges, np.full(len(bedges), VACUUM), {0: material})


# -- validation -----------------------------------------------------------


def validate(m: TriMesh) -> list[str]:
    """Every violated mesh invariant, one message per violation."""
    out: list[str] = []
    if m.n_elements == 0:
        return ["no elements"]
    nv = len(m.vertices)
    bad_ids = np.flatnonzero(np.any((m.triangles < 0) | (m.triangles >= nv), axis=1))
    for t in bad_ids:
        out.append(f"triangle {t}: vertex id out of range")
    if len(bad_ids):
        return out
    sa = m.signed_areas
    for t in np.flatnonzero(sa <= 0):
        out.append(f"orientation: triangle {t} has non-positive signed area {sa[t]:.3e}")
    _, _, group, counts, uniq = m._edges
    for g in np.flatnonzero(counts > 2):
        out.append(f"conformity: edge {tuple(uniq[g])} shared by {counts[g]} triangles")
    single = {tuple(uniq[g]) for g in np.flatnonzero(counts == 1)}
    listed: dict[tuple, int] = {}
    for e in np.sort(m.boundary_edges, axis=1):
        listed[tuple(e)] = listed.get(tuple(e), 0) + 1
    for e, c in listed.items():
        if c > 1:
            out.append(f"conformity: boundary edge {e} listed {c} times")
        if e not in single:
            out.append(f"conformity: boundary edge {e} is not on the mesh boundary")
    for e in sorted(single - set(listed)):
        out.append(f"conformity: edge {e} has one triangle but no boundary tag")
    for r in np.unique(m.tri_region):
        if int(r) not in m.regions:
            out.append(f"region {int(r)} used by triangles but not defined")
    for r, mat in sorted(m.regions.items()):
        if mat.sigma_t < 0 or mat.sigma_s < 0 or mat.source < 0:
            out.append(f"cross-section: region {r} has a negative value")
        if mat.sigma_s > mat.sigma_t:
            out.append(f"cross-section: region {r} has sigma_s {mat.sigma_s} > sigma_t {mat.sigma_t}")
    return out


# -- file I/O -------------------------------------------------------------


def save(m: TriMesh, path) -> None:
    lines = ["tmesh 1", f"vertices {len(m.vertices)}"]
    lines += [f"{x!r} {y!r}" for x, y in m.vertices.tolist()]
    lines.append(f"triangles {m.n_elements}")
    lines += [f"{a} {b} {c} {r}" for (a, b, c), r in zip(m.triangles.tolist(), m.tri_region.tolist())]
    lines.append(f"boundary {len(m.boundary_edges)}")
    lines += [f"{a} {b} {t}" for (a, b), t in zip(m.boundary_edges.tolist(), m.boundary_tag.tolist())]
    for r, mat in sorted(m.regions.items()):
        lines.append(f"region {r} {mat.sigma_t!r} {mat.sigma_s!r} {mat.source!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load(path) -> TriMesh:
    path = str(path)
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"mesh file not found: {path}") from None
    rows = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())]
    rows = [(i, t) for i, t in rows if t and not t[0].startswith("#")]
    it = iter(rows)

    def nxt(expect=None):
        try:
            ln, tok = next(it)
        except StopIteration:
            raise MeshFormatError(f"unexpected end of file{'' if expect is None else f', expected {expect}'}", path=path)
        return ln, tok

    ln, tok = nxt("header")
    if tok != ["tmesh", "1"]:
        raise MeshFormatError("expected header 'tmesh 1'", ln, path)

    def section(name):
        ln, tok = nxt(name)
        if len(tok) != 2 or tok[0] != name:
            raise MeshFormatError(f"expected '{name} <count>'", ln, path)
        try:
            n = int(tok[1])
        except ValueError:
            raise MeshFormatError(f"bad count {tok[1]!r}", ln, path) from None
        if n < 0:
            raise MeshFormatError("negative count", ln, path)
        return n

    def records(n, width, conv, what):
        out = []
        for _ in range(n):
            ln, tok = nxt(what)
            if len(tok) != width:
                raise MeshFormatError(f"{what}: expected {width} fields, got {len(tok)}", ln, path)
            try:
                out.append((ln, [c(t) for c, t in zip(conv, tok)]))
            except ValueError:
                raise MeshFormatError(f"{what}: cannot parse {' '.join(tok)!r}", ln, path) from None
        return out

    nv = section("vertices")
    verts = records(nv, 2, (float, float), "vertex")
    nt = section("triangles")
    if nt == 0:
        raise MeshFormatError("no elements", ln, path)
    tris = records(nt, 4, (int, int, int, int), "triangle")
    for ln, t in tris:
        if min(t[:3]) < 0 or max(t[:3]) >= nv:
            raise MeshFormatError(f"triangle references vertex outside 0..{nv - 1}", ln, path)
    nb = section("boundary")
    bnd = records(nb, 3, (int, int, int), "boundary edge")
    for ln, b in bnd:
        if min(b[:2]) < 0 or max(b[:2]) >= nv:
            raise MeshFormatError(f"boundary edge references vertex outside 0..{nv - 1}", ln, path)
    regions = {}
    for ln, tok in it:
        if tok[0] != "region" or len(tok) != 5:
            raise MeshFormatError("expected 'region id sigma_t sigma_s source'", ln, path)
        try:
            regions[int(tok[1])] = Material(float(tok[2]), float(tok[3]), float(tok[4]))
        except ValueError:
            raise MeshFormatError("cannot parse region line", ln, path) from None
    m = TriMesh(
        np.array([v for _, v in verts], dtype=float).reshape(-1, 2),
        np.array([t[:3] for _, t in tris], dtype=np.int64),
        np.array([t[3] for _, t in tris], dtype=np.int64),
        np.array([b[:2] for _, b in bnd], dtype=np.int64).reshape(-1, 2),
        np.array([b[2] for _, b in bnd], dtype=np.int64),
        regions,
    )
    problems = [p for p in validate(m) if p.startswith("conformity") or p.startswith("region")]
    if problems:
        raise MeshFormatError("non-conforming mesh: " + "; ".join(problems[:5]), path=path)
    return m
