"""Halving cell hierarchies and measure-exact weighted partitions.

Each model manifold carries a nested family of cells: arcs halved per
level (circle, and the ellipse in arc length), squares quartered in
Morton order (torus), octahedral triangles quartered through edge
midpoints (sphere).  A level-``k`` cell has a center ``z`` and certified
geodesic balls ``B(z, u1 * 2^-k)`` inside it and ``B(z, u2 * 2^-k)``
around it.

``weighted_partition`` splits the manifold into N regions whose measures
match a prescribed weight vector exactly.  Large N runs a spanning-tree
sweep over a coarse level: each node receives material (its own
fine-level cells plus the unused remainders of its tree children) as a
linear sequence, takes a maximal affordable set of still-unassigned
weights, and passes the remainder to its parent; the root absorbs the
rest exactly.  Regions are contiguous stretches of material: whole fine
cells plus at most one new fractional cut each, so region measures are
prefix sums plus a single root-find, never a quadrature.  Small N skips
the tree and sweeps one coarse level directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .geometry import (
    TWO_PI,
    Manifold,
    _neumaier_cumsum,
    arclength,
    arclength_inverse,
    charts_to_ambient,
    circumference,
    doubling_constants,
    manifold_from_descriptor,
    pairwise_distance,
    sphere_chart_from_ambient,
    sphere_tangent_frame,
)

__all__ = [
    "CellTree",
    "SpanningTree",
    "Region",
    "Partition",
    "PartitionReport",
    "build_cell_tree",
    "spanning_tree",
    "exact_cut",
    "weighted_partition",
    "verify_partition",
    "partition_to_json",
    "partition_from_json",
]

SCHEMA_VERSION = 1

_DELTA = 0.5
_CUT_TOL = 1e-12
# cells close to the cut tolerance make exact measures meaningless
_MIN_CELL_MEASURE = 1e-9


# ---------------------------------------------------------------------------
# Morton index arithmetic for the torus grid


def _morton_decode(m, k: int):
    m = np.asarray(m, dtype=np.int64)
    i = np.zeros_like(m)
    j = np.zeros_like(m)
    for p in range(k):
        i |= ((m >> (2 * p)) & 1) << p
        j |= ((m >> (2 * p + 1)) & 1) << p
    return i, j


def _morton_encode(i, j, k: int):
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    m = np.zeros_like(i)
    for p in range(k):
        m |= ((i >> p) & 1) << (2 * p)
        m |= ((j >> p) & 1) << (2 * p + 1)
    return m


# ---------------------------------------------------------------------------
# Spherical triangle helpers (ambient unit vectors throughout)


def _arc(u, v):
    """Stable geodesic arc length between unit vectors (vectorized)."""
    cr = np.cross(u, v)
    return np.arctan2(np.linalg.norm(cr, axis=-1), np.sum(u * v, axis=-1))


def _tri_area_raw(A, B, C):
    """Spherical excess of triangles via the half-side tangent formula."""
    a = _arc(B, C)
    b = _arc(C, A)
    c = _arc(A, B)
    s = 0.5 * (a + b + c)
    t = (
        np.tan(0.5 * s)
        * np.tan(0.5 * (s - a))
        * np.tan(0.5 * (s - b))
        * np.tan(0.5 * (s - c))
    )
    return 4.0 * np.arctan(np.sqrt(np.maximum(t, 0.0)))


def _slerp(B, C, t):
    theta = float(_arc(B, C))
    if theta < 1e-15:
        return B
    w = (math.sin((1.0 - t) * theta) * B + math.sin(t * theta) * C) / math.sin(
        theta
    )
    return w / np.linalg.norm(w)


def _tri_centers(A, B, C):
    z = A + B + C
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def _tri_inner_outer(A, B, C):
    """Inscribed and circumscribed geodesic radii about the centroid."""
    z = _tri_centers(A, B, C)
    outer = np.maximum(_arc(z, A), np.maximum(_arc(z, B), _arc(z, C)))
    inner = np.full(outer.shape, np.inf)
    for U, V in ((A, B), (B, C), (C, A)):
        n = np.cross(U, V)
        nn = np.linalg.norm(n, axis=-1)
        sin_d = np.abs(np.sum(z * n, axis=-1)) / np.maximum(nn, 1e-300)
        inner = np.minimum(inner, np.arcsin(np.clip(sin_d, 0.0, 1.0)))
    return inner, outer


def _subdivide(verts: np.ndarray, tris: np.ndarray):
    """Quarter every triangle through deduplicated edge midpoints."""
    T = len(tris)
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    uniq, inv = np.unique(np.sort(e, axis=1), axis=0, return_inverse=True)
    mids = verts[uniq[:, 0]] + verts[uniq[:, 1]]
    mids /= np.linalg.norm(mids, axis=1, keepdims=True)
    mid_id = len(verts) + np.arange(len(uniq), dtype=np.int64)
    verts = np.vstack([verts, mids])
    mab = mid_id[inv[:T]]
    mbc = mid_id[inv[T : 2 * T]]
    mca = mid_id[inv[2 * T :]]
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    children = np.empty((4 * T, 3), dtype=np.int64)
    children[0::4] = np.column_stack([a, mab, mca])
    children[1::4] = np.column_stack([mab, b, mbc])
    children[2::4] = np.column_stack([mca, mbc, c])
    children[3::4] = np.column_stack([mab, mbc, mca])
    return verts, children


def _sphere_level_entry(verts: np.ndarray, tris: np.ndarray) -> dict:
    A, B, C = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    raw = _tri_area_raw(A, B, C)
    scale = 1.0 / math.fsum(raw.tolist())
    areas = raw * scale
    inner, outer = _tri_inner_outer(A, B, C)
    return {
        "verts": verts,
        "tris": tris,
        "areas": areas,
        "prefix": _neumaier_cumsum(np.concatenate([[0.0], areas])),
        "scale": scale,
        "centers": _tri_centers(A, B, C),
        "inner": inner,
        "outer": outer,
    }


@lru_cache(maxsize=16)
def _sphere_levels(depth: int) -> dict:
    """Octahedral triangle hierarchy, levels 1..depth.

    Children of triangle t sit at indices 4t..4t+3, so descendant index
    ranges stay contiguous.  Areas are normalized per level to sum to
    one exactly; cuts reuse the same per-level scale factor so partial
    pieces stay additive to the whole-cell values.
    """
    if depth == 1:
        verts = np.array(
            [
                [1.0, 0.0, 0.0],
                [-1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, -1.0, 0.0],
                [0.0, 0.0, 1.0],
                [0.0, 0.0, -1.0],
            ]
        )
        tris = []
        for sx in (0, 1):
            for sy in (0, 1):
                for sz in (0, 1):
                    tri = [0 + sx, 2 + sy, 4 + sz]
                    A, B, C = verts[tri]
                    if np.dot(np.cross(A, B), C) < 0.0:
                        tri = [tri[1], tri[0], tri[2]]
                    tris.append(tri)
        tris = np.asarray(tris, dtype=np.int64)
        return {1: _sphere_level_entry(verts, tris)}
    levels = dict(_sphere_levels(depth - 1))
    last = levels[depth - 1]
    verts, tris = _subdivide(last["verts"], last["tris"])
    levels[depth] = _sphere_level_entry(verts, tris)
    return levels


@lru_cache(maxsize=16)
def _sphere_neighbors(level: int) -> np.ndarray:
    """Edge-sharing neighbor triples per triangle, sorted per row."""
    lev = _sphere_levels(level)[level]
    tris = lev["tris"]
    T = len(tris)
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    uniq, inv = np.unique(np.sort(e, axis=1), axis=0, return_inverse=True)
    owner = np.tile(np.arange(T, dtype=np.int64), 3)
    order = np.argsort(inv, kind="stable")
    inv_s, owner_s = inv[order], owner[order]
    if not (len(uniq) * 2 == len(inv_s) and np.all(inv_s[0::2] == inv_s[1::2])):
        raise RuntimeError("triangulation is not edge-to-edge")
    pair = owner_s.reshape(-1, 2)
    other = np.empty((len(uniq), 2), dtype=np.int64)
    other[:, 0], other[:, 1] = pair[:, 1], pair[:, 0]
    nbr = np.empty((T, 3), dtype=np.int64)
    slot = np.zeros(T, dtype=np.int64)
    for eid in range(len(uniq)):
        for s in range(2):
            t = pair[eid, s]
            nbr[t, slot[t]] = other[eid, s]
            slot[t] += 1
    if not np.all(slot == 3):
        raise RuntimeError("triangle with wrong neighbor count")
    return np.sort(nbr, axis=1)


# ---------------------------------------------------------------------------
# Cell tree


@dataclass(frozen=True)
class CellTree:
    """Nested halving cells for one manifold, levels up to ``depth``.

    Flat manifolds are implicit (index arithmetic); the sphere carries
    explicit per-level triangle arrays.  Every cell exposes a sweep
    coordinate t in [0, 1] along which measure-exact cuts are made.
    """

    manifold: Manifold
    delta: float
    depth: int
    u1: float
    u2: float
    _sphere: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def min_level(self) -> int:
        return 1 if self.manifold.kind == "sphere2" else 0

    @property
    def branching(self) -> int:
        return 2 if self.manifold.kind in ("circle", "ellipse") else 4

    def _check_level(self, level: int) -> None:
        if not (self.min_level <= level <= self.depth):
            raise ValueError(f"level {level} outside [{self.min_level}, {self.depth}]")

    def ncells(self, level: int) -> int:
        self._check_level(level)
        if self.manifold.kind == "sphere2":
            return 8 * 4 ** (level - 1)
        return self.branching**level

    def measures(self, level: int) -> np.ndarray:
        self._check_level(level)
        if self.manifold.kind == "sphere2":
            return self._sphere[level]["areas"]
        n = self.ncells(level)
        return np.full(n, 1.0 / n)

    def range_measure(self, level: int, start: int, stop: int) -> float:
        if self.manifold.kind == "sphere2":
            p = self._sphere[level]["prefix"]
            return float(p[stop] - p[start])
        return (stop - start) / self.ncells(level)

    def cut_measure(self, level: int, idx: int, t0: float, t1: float) -> float:
        """Measure of the sweep piece [t0, t1] of one cell."""
        self._check_level(level)
        if t1 < t0 - 1e-15:
            raise ValueError("cut interval reversed")
        if self.manifold.kind != "sphere2":
            return (t1 - t0) / self.ncells(level)
        lev = self._sphere[level]
        A, B, C = lev["verts"][lev["tris"][idx]]
        P0 = _slerp(B, C, min(max(t0, 0.0), 1.0))
        P1 = _slerp(B, C, min(max(t1, 0.0), 1.0))
        return float(_tri_area_raw(A, P0, P1)) * lev["scale"]

    def solve_cut(self, level: int, idx: int, t0: float, target: float) -> float:
        """Sweep coordinate t with measure([t0, t]) = target, to 1e-12."""
        rest = self.cut_measure(level, idx, t0, 1.0)
        if target < -_CUT_TOL or target > rest + _CUT_TOL:
            raise ValueError("cut target outside the remaining cell measure")
        if target <= 1e-16:
            return t0
        if target >= rest - 1e-16:
            return 1.0
        if self.manifold.kind != "sphere2":
            return t0 + target * self.ncells(level)
        f = lambda t: self.cut_measure(level, idx, t0, t) - target
        return float(brentq(f, t0, 1.0, xtol=1e-14, rtol=8.9e-16, maxiter=200))

    def centers_chart(self, level: int, idx) -> np.ndarray:
        self._check_level(level)
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        kind = self.manifold.kind
        n = self.ncells(level)
        if kind == "circle":
            return ((idx + 0.5) * (TWO_PI / n))[:, None]
        if kind == "ellipse":
            ell = circumference(self.manifold.a_ax, self.manifold.b_ax)
            h = (idx + 0.5) * (ell / n)
            return np.atleast_1d(
                arclength_inverse(self.manifold.a_ax, self.manifold.b_ax, h)
            )[:, None]
        if kind == "torus2":
            k = level
            i, j = _morton_decode(idx, k)
            s = TWO_PI / 2**k
            return np.column_stack([(i + 0.5) * s, (j + 0.5) * s])
        return sphere_chart_from_ambient(self._sphere[level]["centers"][idx])

    def cell_radii(self, level: int, idx) -> tuple[np.ndarray, np.ndarray]:
        """(inner, outer) certified geodesic ball radii about the center."""
        self._check_level(level)
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        kind = self.manifold.kind
        if kind == "sphere2":
            lev = self._sphere[level]
            return lev["inner"][idx], lev["outer"][idx]
        n = self.ncells(level)
        if kind == "circle":
            r = np.full(len(idx), math.pi / n)
            return r, r.copy()
        if kind == "ellipse":
            ell = circumference(self.manifold.a_ax, self.manifold.b_ax)
            r = np.full(len(idx), 0.5 * ell / n)
            return r, r.copy()
        s = TWO_PI / 2**level
        return np.full(len(idx), 0.5 * s), np.full(len(idx), 0.5 * s * math.sqrt(2))

    def piece_geometry(
        self, level: int, idx: int, t0: float, t1: float
    ) -> tuple[np.ndarray, float, float]:
        """(center chart, inner radius, outer radius) of a sweep piece."""
        self._check_level(level)
        kind = self.manifold.kind
        if t1 - t0 >= 1.0 - 1e-12:
            c = self.centers_chart(level, idx)[0]
            inner, outer = self.cell_radii(level, idx)
            return c, float(inner[0]), float(outer[0])
        n = self.ncells(level)
        if kind == "circle":
            w = TWO_PI / n
            lo = idx * w + t0 * w
            hi = idx * w + t1 * w
            r = 0.5 * (hi - lo)
            return np.array([0.5 * (lo + hi)]), r, r
        if kind == "ellipse":
            ell = circumference(self.manifold.a_ax, self.manifold.b_ax)
            w = ell / n
            lo, hi = (idx + t0) * w, (idx + t1) * w
            r = 0.5 * (hi - lo)
            t = arclength_inverse(
                self.manifold.a_ax, self.manifold.b_ax, 0.5 * (lo + hi)
            )
            return np.atleast_1d(t)[:1], r, r
        if kind == "torus2":
            s = TWO_PI / 2**level
            i, j = _morton_decode(np.asarray([idx]), level)
            x0 = i[0] * s + t0 * s
            x1 = i[0] * s + t1 * s
            w = x1 - x0
            c = np.array([0.5 * (x0 + x1), (j[0] + 0.5) * s])
            return c, 0.5 * min(w, s), 0.5 * math.hypot(w, s)
        lev = self._sphere[level]
        A, B, C = lev["verts"][lev["tris"][idx]]
        P0, P1 = _slerp(B, C, t0), _slerp(B, C, t1)
        z = _tri_centers(
            A[None, :], P0[None, :], P1[None, :]
        )[0]
        inner, outer = _tri_inner_outer(A[None, :], P0[None, :], P1[None, :])
        return sphere_chart_from_ambient(z[None, :])[0], float(inner[0]), float(
            outer[0]
        )

    def neighbors(self, level: int, idx: int) -> np.ndarray:
        """Adjacent same-level cells (shared boundary), sorted."""
        self._check_level(level)
        kind = self.manifold.kind
        n = self.ncells(level)
        if kind in ("circle", "ellipse"):
            if n == 1:
                return np.empty(0, dtype=np.int64)
            if n == 2:
                return np.asarray([1 - idx], dtype=np.int64)
            return np.sort(np.asarray([(idx - 1) % n, (idx + 1) % n]))
        if kind == "torus2":
            k = level
            m = 2**k
            if m == 1:
                return np.empty(0, dtype=np.int64)
            i, j = _morton_decode(np.asarray([idx]), k)
            i, j = int(i[0]), int(j[0])
            cand = {
                int(_morton_encode((i - 1) % m, j, k)),
                int(_morton_encode((i + 1) % m, j, k)),
                int(_morton_encode(i, (j - 1) % m, k)),
                int(_morton_encode(i, (j + 1) % m, k)),
            }
            cand.discard(idx)
            return np.sort(np.asarray(list(cand), dtype=np.int64))
        return _sphere_neighbors(level)[idx]

    def descendants(self, level: int, idx: int, target_level: int) -> tuple[int, int]:
        """Contiguous index range of a cell's descendants at a finer level."""
        self._check_level(level)
        self._check_level(target_level)
        if target_level < level:
            raise ValueError("target level must not be coarser")
        f = self.branching ** (target_level - level)
        return idx * f, (idx + 1) * f

    def locate(self, level: int, chart: np.ndarray) -> int:
        """Index of the level cell containing the given chart point."""
        self._check_level(level)
        kind = self.manifold.kind
        n = self.ncells(level)
        chart = np.asarray(chart, dtype=float)
        if kind == "circle":
            u = float(chart[0]) % TWO_PI
            return min(int(u / (TWO_PI / n)), n - 1)
        if kind == "ellipse":
            mf = self.manifold
            h = float(arclength(mf.a_ax, mf.b_ax, float(chart[0]) % TWO_PI))
            ell = circumference(mf.a_ax, mf.b_ax)
            return min(int(h / (ell / n)), n - 1)
        if kind == "torus2":
            m = 2**level
            s = TWO_PI / m
            i = min(int((float(chart[0]) % TWO_PI) / s), m - 1)
            j = min(int((float(chart[1]) % TWO_PI) / s), m - 1)
            return int(_morton_encode(i, j, level))
        p = charts_to_ambient(self.manifold, chart[None, :])[0]
        cur = -1
        best = -np.inf
        for t in range(8):
            s = self._tri_side(1, t, p)
            if s > best:
                best, cur = s, t
        for lev in range(2, level + 1):
            best = -np.inf
            nxt = -1
            for c in range(4 * cur, 4 * cur + 4):
                s = self._tri_side(lev, c, p)
                if s > best:
                    best, nxt = s, c
            cur = nxt
        return cur

    def _tri_side(self, level: int, idx: int, p: np.ndarray) -> float:
        """Smallest signed edge-circle distance; >= 0 means inside."""
        lev = self._sphere[level]
        V = lev["verts"][lev["tris"][idx]]
        out = np.inf
        for a in range(3):
            nvec = np.cross(V[a], V[(a + 1) % 3])
            nn = np.linalg.norm(nvec)
            out = min(out, float(np.dot(nvec, p)) / max(nn, 1e-300))
        return out

    def contains(self, level: int, idx: int, chart: np.ndarray, tol=1e-12) -> bool:
        kind = self.manifold.kind
        if kind != "sphere2":
            return self.locate(level, np.asarray(chart, dtype=float)) == idx
        p = charts_to_ambient(self.manifold, np.asarray(chart, dtype=float)[None, :])[0]
        return self._tri_side(level, idx, p) >= -tol

    def sweep_parameter(self, level: int, idx: int, chart: np.ndarray) -> float:
        """Sweep coordinate of a point inside the given cell, in [0, 1]."""
        kind = self.manifold.kind
        n = self.ncells(level)
        chart = np.asarray(chart, dtype=float)
        if kind == "circle":
            w = TWO_PI / n
            return float((chart[0] % TWO_PI) / w - idx)
        if kind == "ellipse":
            mf = self.manifold
            h = float(arclength(mf.a_ax, mf.b_ax, float(chart[0]) % TWO_PI))
            w = circumference(mf.a_ax, mf.b_ax) / n
            return h / w - idx
        if kind == "torus2":
            s = TWO_PI / 2**level
            i, _ = _morton_decode(np.asarray([idx]), level)
            return float((chart[0] % TWO_PI) / s - i[0])
        lev = self._sphere[level]
        A, B, C = lev["verts"][lev["tris"][idx]]
        p = charts_to_ambient(self.manifold, chart[None, :])[0]
        n1 = np.cross(A, p)
        if np.linalg.norm(n1) < 1e-13:
            return 0.0
        q = np.cross(n1, np.cross(B, C))
        q = q / np.linalg.norm(q)
        if np.dot(q, B + C) < 0.0:
            q = -q
        return min(max(float(_arc(B, q) / _arc(B, C)), 0.0), 1.0)


def _flat_u(manifold: Manifold) -> tuple[float, float]:
    kind = manifold.kind
    if kind == "circle":
        return math.pi, math.pi
    if kind == "ellipse":
        half = 0.5 * circumference(manifold.a_ax, manifold.b_ax)
        return half, half
    return math.pi, math.pi * math.sqrt(2)


@lru_cache(maxsize=64)
def _tree_cached(manifold: Manifold, depth: int) -> CellTree:
    kind = manifold.kind
    if kind == "sphere2":
        levels = _sphere_levels(depth)
        exp = {lev: 2.0**-lev for lev in levels}
        u1 = min(float(levels[k]["inner"].min()) / exp[k] for k in levels)
        u2 = max(float(levels[k]["outer"].max()) / exp[k] for k in levels)
        for k in levels:
            drift = abs(float(levels[k]["scale"]) - 1.0 / (4.0 * math.pi))
            if drift > 1e-3:
                raise RuntimeError("sphere areas drifted from the total measure")
        return CellTree(manifold, _DELTA, depth, u1, u2, dict(levels))
    u1, u2 = _flat_u(manifold)
    return CellTree(manifold, _DELTA, depth, u1, u2)


def build_cell_tree(manifold: Manifold, delta: float = _DELTA, depth: int = 6) -> CellTree:
    """Construct the nested cell family down to ``depth`` levels."""
    if delta != _DELTA:
        raise ValueError("only the halving ratio delta = 1/2 is implemented")
    if depth < 1:
        raise ValueError("depth must be at least 1")
    branching = 2 if manifold.kind in ("circle", "ellipse") else 4
    base = 8 if manifold.kind == "sphere2" else 1
    if 1.0 / (base * branching**depth) < _MIN_CELL_MEASURE:
        raise ValueError("cell measures at this depth fall below the cut tolerance")
    if manifold.kind == "sphere2" and depth > 10:
        raise ValueError("sphere trees beyond level 10 are not supported")
    return _tree_cached(manifold, depth)


# ---------------------------------------------------------------------------
# Spanning tree over one level


@dataclass(frozen=True)
class SpanningTree:
    """Deterministic BFS tree over the adjacency graph of one cell level."""

    level: int
    root: int
    order: tuple[int, ...]
    parent: tuple[int, ...]
    children: tuple[tuple[int, ...], ...]

    @property
    def nodes(self) -> int:
        return len(self.order)

    @property
    def edges(self) -> int:
        return len(self.order) - 1


def spanning_tree(tree: CellTree, level: int) -> SpanningTree:
    n = tree.ncells(level)
    parent = np.full(n, -2, dtype=np.int64)
    parent[0] = -1
    order = [0]
    head = 0
    while head < len(order):
        cur = order[head]
        head += 1
        for nb in tree.neighbors(level, cur):
            nb = int(nb)
            if parent[nb] == -2:
                parent[nb] = cur
                order.append(nb)
    if len(order) != n:
        raise RuntimeError("cell adjacency graph is disconnected")
    children: list[list[int]] = [[] for _ in range(n)]
    for v in order[1:]:
        children[parent[v]].append(v)
    return SpanningTree(
        level=level,
        root=0,
        order=tuple(order),
        parent=tuple(int(p) for p in parent),
        children=tuple(tuple(c) for c in children),
    )


# ---------------------------------------------------------------------------
# Measure-exact cuts and the material sweep


def exact_cut(
    tree: CellTree, level: int, idx: int, target: float, start: float = 0.0
) -> float:
    """Sweep coordinate closing a piece of the given measure.

    The piece [start, t] of the cell has measure ``target`` to 1e-12;
    target 0 returns the empty piece, the full remaining measure returns
    the whole cell.
    """
    return tree.solve_cut(level, idx, start, target)


def _run_measure(tree: CellTree, level: int, run) -> float:
    s, e, tf, tl = run
    if e <= s:
        return 0.0
    if e == s + 1:
        return tree.cut_measure(level, s, tf, tl)
    out = tree.cut_measure(level, s, tf, 1.0)
    out += tree.range_measure(level, s + 1, e - 1)
    out += tree.cut_measure(level, e - 1, 0.0, tl)
    return out


class _MaterialCursor:
    """Run queue consumed front to back with measure-exact slicing."""

    def __init__(self, tree: CellTree, level: int, runs):
        self.tree = tree
        self.level = level
        self.runs = [list(r) for r in runs if _run_measure(tree, level, r) > 1e-16]

    def total(self) -> float:
        return math.fsum(_run_measure(self.tree, self.level, r) for r in self.runs)

    def take_all(self) -> list[tuple]:
        out = [tuple(r) for r in self.runs]
        self.runs = []
        return out

    def take(self, target: float) -> list[tuple]:
        tree, level = self.tree, self.level
        out: list[tuple] = []
        need = target
        while need > 1e-15 and self.runs:
            run = self.runs[0]
            m = _run_measure(tree, level, run)
            if m <= 1e-16:
                self.runs.pop(0)
                continue
            if m <= need + 1e-15:
                out.append(tuple(run))
                self.runs.pop(0)
                need -= m
                continue
            piece, rest = self._split(run, need)
            out.append(piece)
            self.runs[0] = rest
            need = 0.0
        if need > 1e-11:
            raise RuntimeError("material exhausted before the weight was filled")
        return out

    def _split(self, run, need: float):
        """Cut ``need`` measure off the front of one run (need < measure)."""
        tree, level = self.tree, self.level
        s, e, tf, tl = run
        first_hi = tl if e == s + 1 else 1.0
        m0 = tree.cut_measure(level, s, tf, first_hi)
        if need <= m0 - _CUT_TOL * 0.5:
            t = tree.solve_cut(level, s, tf, need)
            return (s, s + 1, tf, t), [s, e, t, tl]
        if abs(need - m0) <= _CUT_TOL * 0.5 or e == s + 1:
            return (s, s + 1, tf, first_hi), [s + 1, e, 0.0, tl]
        rem = need - m0
        whole = tree.range_measure(level, s + 1, e - 1)
        if rem < whole - _CUT_TOL * 0.5:
            if tree.manifold.kind == "sphere2":
                p = tree._sphere[level]["prefix"]
                c = int(np.searchsorted(p, p[s + 1] + rem, side="right")) - 1
                c = min(max(c, s + 1), e - 2)
            else:
                n = tree.ncells(level)
                c = s + 1 + int(rem * n)
                c = min(max(c, s + 1), e - 2)
            rem_in = rem - tree.range_measure(level, s + 1, c)
            while rem_in < -1e-15 and c > s + 1:
                c -= 1
                rem_in = rem - tree.range_measure(level, s + 1, c)
            t = tree.solve_cut(level, c, 0.0, max(rem_in, 0.0))
            if t <= 1e-15:
                return (s, c, tf, 1.0), [c, e, 0.0, tl]
            if t >= 1.0 - 1e-15:
                return (s, c + 1, tf, 1.0), [c + 1, e, 0.0, tl]
            return (s, c + 1, tf, t), [c, e, t, tl]
        if abs(rem - whole) <= _CUT_TOL * 0.5:
            return (s, e - 1, tf, 1.0), [e - 1, e, 0.0, tl]
        rem2 = rem - whole
        t = tree.solve_cut(level, e - 1, 0.0, rem2)
        return (s, e, tf, t), [e - 1, e, t, tl]


# ---------------------------------------------------------------------------
# Partition data model


@dataclass(frozen=True)
class Region:
    """One piece of a weighted partition, a contiguous sweep of material.

    ``runs`` lists (first_cell, stop_cell, t_first, t_last) stretches of
    fine-level cells: the first cell enters at sweep coordinate t_first,
    the last leaves at t_last, cells between are whole.  ``closing_cut``
    is the one new cut this region introduced, if any.
    """

    weight_index: int
    level: int
    runs: tuple[tuple[int, int, float, float], ...]
    measure: float
    representative: tuple[float, ...]
    inner_radius: float
    outer_radius: float
    closing_cut: tuple[int, float] | None

    def whole_cells(self) -> list[tuple[int, int]]:
        """(start, stop) ranges of cells covered in full."""
        out = []
        for s, e, tf, tl in self.runs:
            lo = s if tf <= 1e-12 else s + 1
            hi = e if tl >= 1.0 - 1e-12 else e - 1
            if hi > lo:
                out.append((lo, hi))
        return out


@dataclass(frozen=True)
class Partition:
    """Disjoint regions with measures equal to the prescribed weights."""

    manifold: Manifold
    weights: tuple[float, ...]
    band: tuple[float, float]
    regions: tuple[Region, ...]
    c3: float
    c4: float
    delta: float
    branch: str
    coarse_level: int
    fine_level: int
    stats: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return len(self.regions)

    def representatives(self) -> np.ndarray:
        return np.asarray([r.representative for r in self.regions], dtype=float)


def _measure_centroid(manifold: Manifold, charts: np.ndarray, meas: np.ndarray):
    """Measure-weighted mean position, or None when it degenerates."""
    kind = manifold.kind
    if kind == "sphere2":
        amb = charts_to_ambient(manifold, charts)
        v = meas @ amb
        nv = np.linalg.norm(v)
        if nv < 1e-9 * meas.sum():
            return None
        return sphere_chart_from_ambient((v / nv)[None, :])[0]
    if kind in ("circle", "torus2"):
        out = []
        for col in range(charts.shape[1]):
            ang = charts[:, col]
            c, s = meas @ np.cos(ang), meas @ np.sin(ang)
            if math.hypot(c, s) < 1e-9 * meas.sum():
                return None
            out.append(math.atan2(s, c) % TWO_PI)
        return np.asarray(out)
    mf = manifold
    ell = circumference(mf.a_ax, mf.b_ax)
    h = np.asarray(arclength(mf.a_ax, mf.b_ax, charts[:, 0])) * (TWO_PI / ell)
    c, s = meas @ np.cos(h), meas @ np.sin(h)
    if math.hypot(c, s) < 1e-9 * meas.sum():
        return None
    hbar = (math.atan2(s, c) % TWO_PI) * (ell / TWO_PI)
    return np.atleast_1d(arclength_inverse(mf.a_ax, mf.b_ax, hbar))


def _region_geometry(tree: CellTree, level: int, runs) -> tuple:
    """Representative, certified inner and outer radii for one region."""
    whole_ranges = []
    partials = []
    for s, e, tf, tl in runs:
        lo = s if tf <= 1e-12 else s + 1
        hi = e if tl >= 1.0 - 1e-12 else e - 1
        if hi > lo:
            whole_ranges.append((lo, hi))
        if lo > s:
            partials.append((s, tf, tl if e == s + 1 else 1.0))
        if hi < e and e - 1 >= lo:
            partials.append((e - 1, 0.0 if e - 1 > s else tf, tl))
    if whole_ranges:
        cells_w = np.concatenate(
            [np.arange(lo, hi) for lo, hi in whole_ranges]
        )
        centers_w = tree.centers_chart(level, cells_w)
        meas_w = tree.measures(level)[cells_w]
        # anchor at the whole cell nearest the measure centroid; long
        # chain regions then get a certified outer ball of half reach
        centroid = _measure_centroid(tree.manifold, centers_w, meas_w)
        if centroid is None:
            pick = int(np.argmax(meas_w))
        else:
            dd = pairwise_distance(
                tree.manifold, np.tile(centroid, (len(cells_w), 1)), centers_w
            )
            pick = int(np.argmin(dd))
        best = int(cells_w[pick])
        rep = centers_w[pick]
        inner, _ = tree.cell_radii(level, best)
        inner_r = float(inner[0])
    else:
        best_piece, best_m = None, -1.0
        for c, t0, t1 in partials:
            m = tree.cut_measure(level, c, t0, t1)
            if m > best_m:
                best_piece, best_m = (c, t0, t1), m
        rep, inner_r, _ = tree.piece_geometry(level, *best_piece)
    cells = (
        np.concatenate([np.arange(lo, hi) for lo, hi in whole_ranges])
        if whole_ranges
        else np.empty(0, dtype=np.int64)
    )
    outer_r = 0.0
    if len(cells):
        centers = tree.centers_chart(level, cells)
        _, outs = tree.cell_radii(level, cells)
        d = pairwise_distance(
            tree.manifold, np.tile(rep, (len(cells), 1)), centers
        )
        outer_r = float(np.max(d + outs))
    for c, t0, t1 in partials:
        pc, _, po = tree.piece_geometry(level, c, t0, t1)
        d = pairwise_distance(tree.manifold, rep[None, :], pc[None, :])[0]
        outer_r = max(outer_r, float(d) + po)
    return tuple(float(x) for x in rep), inner_r, outer_r


@lru_cache(maxsize=16)
def _doubling_cached(manifold: Manifold) -> tuple[float, float]:
    return doubling_constants(manifold)


def _pick_coarse_level(manifold, threshold, deepest: bool):
    """Deepest (or shallowest) buildable level meeting a measure bound."""
    base = 8 if manifold.kind == "sphere2" else 1
    branching = 2 if manifold.kind in ("circle", "ellipse") else 4
    min_level = 1 if manifold.kind == "sphere2" else 0
    best = None
    level = min_level
    while 1.0 / (base * branching ** max(level, 1)) >= _MIN_CELL_MEASURE:
        if manifold.kind == "sphere2":
            if level > 10:
                break
            meas = build_cell_tree(manifold, depth=max(level, 1)).measures(level)
            lo, hi = float(meas.min()), float(meas.max())
        else:
            m = 1.0 / branching**level
            lo = hi = m
        if deepest:
            if lo >= threshold:
                best = level
            else:
                break
        else:
            if hi <= threshold + 1e-15:
                return level
        level += 1
    return best


def weighted_partition(manifold: Manifold, weights) -> Partition:
    """Split the manifold into regions with measures exactly the weights.

    Large N uses the spanning-tree material sweep over a coarse level
    whose cells all have measure at least 2b/N; small N sweeps a single
    level whose cells are no larger than the smallest weight.
    """
    from .weights import WeightVector

    if not isinstance(weights, WeightVector):
        weights = WeightVector(np.asarray(weights, dtype=float))
    vals = weights.values
    N = len(vals)
    a_fit, b_fit = weights.fitted_band()
    c1, c2 = _doubling_cached(manifold)
    d = manifold.dim
    diam = manifold.diameter
    small_threshold = 2.0 * b_fit / (c1 * _DELTA**d * diam**d)

    coarse = None
    if N >= small_threshold:
        coarse = _pick_coarse_level(manifold, 2.0 * b_fit / N, deepest=True)
        if coarse is not None and coarse < 1:
            coarse = None
    branch = "tree" if coarse is not None else "direct"

    if branch == "direct":
        k = _pick_coarse_level(manifold, a_fit / N, deepest=False)
        if k is None:
            raise ValueError("weights too small for the supported tree depth")
        tree = build_cell_tree(manifold, depth=max(k, 1))
        cursor = _MaterialCursor(tree, k, [(0, tree.ncells(k), 0.0, 1.0)])
        region_runs: list[list[tuple]] = []
        for j in range(N - 1):
            region_runs.append(cursor.take(vals[j]))
        region_runs.append(cursor.take_all())
        stats = {
            "small_threshold": small_threshold,
            "sweep_balance_error": 0.0,
            "nodes": tree.ncells(k),
            "edges": 0,
        }
        fine = k
        order_of_weight = list(range(N))
    else:
        k = coarse
        tree0 = build_cell_tree(manifold, depth=max(k, 1))
        u1, u2 = tree0.u1, tree0.u2
        C = (c2 / c1) * (u2 / u1) ** d * (2.0 / _DELTA**d) * 3.0**d * (b_fit / a_fit)
        fine_threshold = a_fit / (C * N)
        # the conservative threshold can outrun the buildable depth; then
        # cap, provided fine cells stay well below the smallest region
        depth_cap = 10 if manifold.kind == "sphere2" else (22 if d == 1 else 12)
        fine = None
        branching = tree0.branching
        mx = math.inf
        for lev in range(k + 1, depth_cap + 1):
            if manifold.kind == "sphere2":
                mx = float(build_cell_tree(manifold, depth=lev).measures(lev).max())
            else:
                mx = 1.0 / branching**lev
            if mx <= fine_threshold:
                fine = lev
                break
        if fine is None:
            if mx <= a_fit / (8.0 * N):
                fine = depth_cap
            else:
                raise ValueError("fine level for this N exceeds the supported depth")
        tree = build_cell_tree(manifold, depth=fine)
        st = spanning_tree(tree, k)

        unused = list(range(N))
        assigned: dict[int, list[tuple]] = {}
        remainder: dict[int, list] = {}
        balance = 0.0
        max_remainder = 0.0
        for node in reversed(st.order):
            runs = []
            for ch in st.children[node]:
                runs.extend(remainder.pop(ch))
            runs.append((*tree.descendants(k, node, fine), 0.0, 1.0))
            cursor = _MaterialCursor(tree, fine, runs)
            mu = cursor.total()
            if node == st.root:
                chosen = list(unused)
                unused = []
                total_w = math.fsum(vals[j] for j in chosen)
                if abs(total_w - mu) > 1e-9:
                    raise RuntimeError("root material does not balance the weights")
            else:
                chosen = []
                acc = 0.0
                still = []
                for j in unused:
                    if acc + vals[j] <= mu + 1e-13:
                        chosen.append(j)
                        acc += vals[j]
                    else:
                        still.append(j)
                unused = still
                if not unused:
                    raise RuntimeError("weights exhausted before the root")
            for pos, j in enumerate(chosen):
                if node == st.root and pos == len(chosen) - 1:
                    assigned[j] = cursor.take_all()
                else:
                    assigned[j] = cursor.take(vals[j])
            rest = cursor.runs
            w_alpha = math.fsum(
                _run_measure(tree, fine, r) for r in rest
            )
            if node != st.root:
                if w_alpha > b_fit / N + 1e-9:
                    raise RuntimeError("node remainder exceeded its bound")
                own_start = tree.descendants(k, node, fine)[0]
                if rest and rest[0][0] < own_start:
                    raise RuntimeError("remainder escaped its cell")
                max_remainder = max(max_remainder, w_alpha)
            taken = math.fsum(vals[j] for j in chosen)
            balance = max(balance, abs(mu - taken - w_alpha))
            remainder[node] = rest
        region_runs = [assigned[j] for j in range(N)]
        stats = {
            "small_threshold": small_threshold,
            "volume_factor": C,
            "sweep_balance_error": balance,
            "max_node_remainder": max_remainder,
            "nodes": st.nodes,
            "edges": st.edges,
        }
        order_of_weight = list(range(N))

    regions = []
    for j in order_of_weight:
        runs = tuple(tuple(r) for r in region_runs[j])
        meas = math.fsum(_run_measure(tree, fine, r) for r in runs)
        rep, inner_r, outer_r = _region_geometry(tree, fine, runs)
        s, e, tf, tl = runs[-1]
        cut = (int(e - 1), float(tl)) if tl < 1.0 - 1e-12 else None
        regions.append(
            Region(
                weight_index=j,
                level=fine,
                runs=runs,
                measure=meas,
                representative=rep,
                inner_radius=inner_r,
                outer_radius=outer_r,
                closing_cut=cut,
            )
        )
    inner_scale = (a_fit**2 / b_fit) ** (1.0 / d) * N ** (-1.0 / d)
    outer_scale = b_fit ** (1.0 / d) * N ** (-1.0 / d)
    c3 = min(r.inner_radius for r in regions) / inner_scale
    c4 = max(r.outer_radius for r in regions) / outer_scale
    return Partition(
        manifold=manifold,
        weights=tuple(float(v) for v in vals),
        band=(a_fit, b_fit),
        regions=tuple(regions),
        c3=c3,
        c4=c4,
        delta=_DELTA,
        branch=branch,
        coarse_level=k,
        fine_level=fine,
        stats=stats,
    )


# ---------------------------------------------------------------------------
# Verification


@dataclass(frozen=True)
class PartitionReport:
    measures_ok: bool
    cover_ok: bool
    disjoint_ok: bool
    inner_ok: bool
    outer_ok: bool
    max_measure_error: float
    max_cover_gap: float
    c3: float
    c4: float
    notes: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return (
            self.measures_ok
            and self.cover_ok
            and self.disjoint_ok
            and self.inner_ok
            and self.outer_ok
        )


def _ball_samples(manifold: Manifold, center_chart, radius: float) -> np.ndarray:
    """Deterministic points inside the geodesic ball, as chart rows."""
    center = np.asarray(center_chart, dtype=float)
    fracs = np.array([0.35, 0.7, 0.95])
    if manifold.dim == 1:
        rs = np.concatenate([radius * fracs, -radius * fracs, [0.0]])
        if manifold.kind == "circle":
            return (center[0] + rs)[:, None]
        mf = manifold
        h0 = float(arclength(mf.a_ax, mf.b_ax, center[0]))
        ell = circumference(mf.a_ax, mf.b_ax)
        hs = (h0 + rs) % ell
        return np.atleast_1d(arclength_inverse(mf.a_ax, mf.b_ax, hs))[:, None]
    angles = TWO_PI * np.arange(8) / 8.0 + 0.3
    rr, aa = np.meshgrid(radius * fracs, angles)
    rr, aa = rr.ravel(), aa.ravel()
    if manifold.kind == "torus2":
        pts = np.column_stack(
            [center[0] + rr * np.cos(aa), center[1] + rr * np.sin(aa)]
        )
        return np.vstack([pts, center[None, :]])
    c = charts_to_ambient(manifold, center[None, :])
    e1, e2 = sphere_tangent_frame(center[None, :])
    dirs = np.cos(aa)[:, None] * e1 + np.sin(aa)[:, None] * e2
    pts = np.cos(rr)[:, None] * c + np.sin(rr)[:, None] * dirs
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    return np.vstack([sphere_chart_from_ambient(pts), center[None, :]])


def verify_partition(p: Partition) -> PartitionReport:
    """Re-check measures, tiling, and ball containments from raw data."""
    tree = build_cell_tree(p.manifold, p.delta, max(p.fine_level, 1))
    level = p.fine_level
    notes: list[str] = []

    max_err = 0.0
    for r, w in zip(p.regions, p.weights):
        m = math.fsum(_run_measure(tree, level, run) for run in r.runs)
        max_err = max(max_err, abs(m - w))
    measures_ok = max_err <= 1e-11

    intervals = []
    for ridx, r in enumerate(p.regions):
        for s, e, tf, tl in r.runs:
            intervals.append((s + tf, (e - 1) + tl, ridx))
    intervals.sort()
    ncells = tree.ncells(level)
    gap = abs(intervals[0][0])
    overlap_ok = True
    for (s0, e0, _), (s1, e1, _) in zip(intervals, intervals[1:]):
        gap = max(gap, abs(s1 - e0))
        if s1 < e0 - 1e-9:
            overlap_ok = False
    gap = max(gap, abs(intervals[-1][1] - ncells))
    cover_ok = gap <= 1e-9 and len(intervals) > 0
    if not cover_ok:
        notes.append(f"tiling gap {gap:.3e}")

    inner_ok = True
    starts = np.asarray([iv[0] for iv in intervals])
    for ridx, r in enumerate(p.regions):
        pts = _ball_samples(p.manifold, r.representative, 0.98 * r.inner_radius)
        for chart in pts:
            cell = tree.locate(level, chart)
            t = tree.sweep_parameter(level, cell, chart)
            q = cell + min(max(t, 0.0), 1.0)
            pos = int(np.searchsorted(starts, q + 1e-12, side="right")) - 1
            if pos < 0 or not (
                intervals[pos][0] - 1e-9 <= q <= intervals[pos][1] + 1e-9
                and intervals[pos][2] == ridx
            ):
                inner_ok = False
                notes.append(f"inner ball of region {ridx} leaks")
                break
        if not inner_ok:
            break

    outer_ok = True
    for ridx, r in enumerate(p.regions):
        _, _, recomputed = _region_geometry(tree, level, r.runs)
        if recomputed > r.outer_radius + 1e-9:
            outer_ok = False
            notes.append(f"outer ball of region {ridx} too small")
            break

    a_fit, b_fit = p.band
    d = p.manifold.dim
    inner_scale = (a_fit**2 / b_fit) ** (1.0 / d) * p.n ** (-1.0 / d)
    outer_scale = b_fit ** (1.0 / d) * p.n ** (-1.0 / d)
    c3 = min(r.inner_radius for r in p.regions) / inner_scale
    c4 = max(r.outer_radius for r in p.regions) / outer_scale
    return PartitionReport(
        measures_ok=measures_ok,
        cover_ok=cover_ok,
        disjoint_ok=overlap_ok,
        inner_ok=inner_ok,
        outer_ok=outer_ok,
        max_measure_error=max_err,
        max_cover_gap=gap,
        c3=c3,
        c4=c4,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# Serialization


def partition_to_json(p: Partition) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "manifold": p.manifold.descriptor(),
        "weights": list(p.weights),
        "band": list(p.band),
        "c3": p.c3,
        "c4": p.c4,
        "delta": p.delta,
        "branch": p.branch,
        "coarse_level": p.coarse_level,
        "fine_level": p.fine_level,
        "stats": {k: v for k, v in sorted(p.stats.items())},
        "regions": [
            {
                "weight_index": r.weight_index,
                "level": r.level,
                "runs": [list(run) for run in r.runs],
                "measure": r.measure,
                "representative": list(r.representative),
                "inner_radius": r.inner_radius,
                "outer_radius": r.outer_radius,
                "closing_cut": list(r.closing_cut) if r.closing_cut else None,
            }
            for r in p.regions
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def partition_from_json(text: str) -> Partition:
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError("unsupported partition schema version")
    manifold = manifold_from_descriptor(doc["manifold"])
    regions = tuple(
        Region(
            weight_index=int(r["weight_index"]),
            level=int(r["level"]),
            runs=tuple(
                (int(a), int(b), float(c), float(d)) for a, b, c, d in r["runs"]
            ),
            measure=float(r["measure"]),
            representative=tuple(float(x) for x in r["representative"]),
            inner_radius=float(r["inner_radius"]),
            outer_radius=float(r["outer_radius"]),
            closing_cut=(
                (int(r["closing_cut"][0]), float(r["closing_cut"][1]))
                if r["closing_cut"]
                else None
            ),
        )
        for r in doc["regions"]
    )
    return Partition(
        manifold=manifold,
        weights=tuple(float(w) for w in doc["weights"]),
        band=tuple(float(x) for x in doc["band"]),
        regions=regions,
        c3=float(doc["c3"]),
        c4=float(doc["c4"]),
        delta=float(doc["delta"]),
        branch=str(doc["branch"]),
        coarse_level=int(doc["coarse_level"]),
        fine_level=int(doc["fine_level"]),
        stats=dict(doc["stats"]),
    )
