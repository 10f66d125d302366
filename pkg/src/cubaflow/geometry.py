"""Model manifolds: charts, geodesics, normalized measure, quadrature.

Supported manifolds and their global charts:

========  ========================  ===============================  ===
kind      chart                     ambient embedding                dim
========  ========================  ===============================  ===
circle    angle t in [0, 2pi)       (cos t, sin t)                   1
torus2    (t1, t2) in [0, 2pi)^2    (cos t1, sin t1, cos t2, ...)    2
sphere2   (colatitude, longitude)   unit vector in R^3               2
ellipse   angle t in [0, 2pi)       (a cos t, b sin t)               1
========  ========================  ===============================  ===

The flat torus keeps its flat metric only in R^4, so its ambient
coordinates live there; the other ambients are the familiar R^2/R^3
embeddings.  The measure is always the Riemannian volume normalized to
total mass one, and distances are exact geodesic distances.

Tangent vectors use one convention per kind and it is load-bearing for
every downstream module: a signed scalar in the arc-length frame
(circle, ellipse), a vector in the flat chart frame (torus2), or an
ambient vector orthogonal to the base point (sphere2).  Representing
sphere tangents in ambient coordinates keeps chart singularities at the
poles out of all callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import integrate as _scipy_integrate

TWO_PI = 2.0 * math.pi

MANIFOLD_KINDS = ("circle", "torus2", "sphere2", "ellipse")

# Colatitudes closer to a pole than this are snapped onto it, which moves
# the ambient point by less than the chart/ambient consistency tolerance.
_POLE_TOL = 5e-15


def _require_finite(values, what: str) -> None:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite {what}: {values!r}")


@dataclass(frozen=True)
class Manifold:
    """Identifier of a model manifold: kind plus ellipse semi-axes.

    ``a_ax``/``b_ax`` are meaningful for ``kind == "ellipse"`` only and are
    normalized to 1.0 otherwise so that equal manifolds compare equal.
    """

    kind: str
    a_ax: float = 1.0
    b_ax: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in MANIFOLD_KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}; expected one of {MANIFOLD_KINDS}")
        if self.kind == "ellipse":
            _require_finite((self.a_ax, self.b_ax), "ellipse semi-axes")
            if self.a_ax <= 0.0 or self.b_ax <= 0.0:
                raise ValueError("ellipse semi-axes must be positive")
            object.__setattr__(self, "a_ax", float(self.a_ax))
            object.__setattr__(self, "b_ax", float(self.b_ax))
        else:
            object.__setattr__(self, "a_ax", 1.0)
            object.__setattr__(self, "b_ax", 1.0)

    @property
    def dim(self) -> int:
        return 2 if self.kind in ("torus2", "sphere2") else 1

    @property
    def diameter(self) -> float:
        if self.kind == "circle":
            return math.pi
        if self.kind == "torus2":
            return math.sqrt(2.0) * math.pi
        if self.kind == "sphere2":
            return math.pi
        return 0.5 * circumference(self.a_ax, self.b_ax)

    def descriptor(self) -> dict:
        """JSON-ready descriptor; round-trips through :func:`manifold_from_descriptor`."""
        d = {"kind": self.kind}
        if self.kind == "ellipse":
            d["a"] = self.a_ax
            d["b"] = self.b_ax
        return d


def manifold_from_descriptor(d: dict) -> Manifold:
    kind = d.get("kind")
    if kind == "ellipse":
        return Manifold("ellipse", float(d["a"]), float(d["b"]))
    return Manifold(str(kind))


@dataclass(frozen=True)
class ManifoldPoint:
    """A point given by canonical chart coordinates plus derived ambient ones."""

    manifold: Manifold
    chart: tuple
    ambient: tuple


# ---------------------------------------------------------------------------
# ellipse arc length
# ---------------------------------------------------------------------------

# The arc-length coordinate s = h(t) and its inverse drive the ellipse
# basis, distance, and flow stepping, and they are evaluated millions of
# times.  A dense cumulative table plus fixed-order Gauss-Legendre tails
# and Newton refinement gives ~1e-15 accuracy at O(1) cost per call.

_GL10_NODES, _GL10_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _neumaier_cumsum(x: np.ndarray) -> np.ndarray:
    """Compensated running sum; plain cumsum drifts past 1e-12 at 4096 terms."""
    total = 0.0
    comp = 0.0
    out = np.empty(len(x))
    for i, v in enumerate(x):
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
        out[i] = total + comp
    return out


class _ArcLengthTable:
    """Cumulative arc length of the ellipse (a cos t, b sin t) over [0, 2pi]."""

    GRID = 4096

    def __init__(self, a: float, b: float):
        self.a = a
        self.b = b
        n = self.GRID
        self.step = TWO_PI / n
        t_edges = np.linspace(0.0, TWO_PI, n + 1)
        mid = 0.5 * (t_edges[:-1] + t_edges[1:])
        half = 0.5 * self.step
        # per-interval 10-point Gauss-Legendre, exact to machine precision here
        nodes = mid[:, None] + half * _GL10_NODES[None, :]
        seg = half * (self.speed(nodes) @ _GL10_WEIGHTS)
        self.t_grid = t_edges
        self.s_grid = np.concatenate([[0.0], _neumaier_cumsum(seg)])
        self.total = float(self.s_grid[-1])
        ref, _ = _scipy_integrate.quad(lambda t: float(self.speed(t)), 0.0, TWO_PI,
                                       epsabs=1e-13, limit=200)
        if abs(ref - self.total) > 1e-10:
            raise RuntimeError(
                f"arc-length table disagrees with adaptive quadrature: {self.total} vs {ref}")

    def speed(self, t):
        return np.hypot(self.a * np.sin(t), self.b * np.cos(t))

    def forward(self, t):
        """h(t) for t in [0, 2pi], vectorized."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        idx = np.clip((t / self.step).astype(int), 0, self.GRID - 1)
        t0 = self.t_grid[idx]
        half = 0.5 * (t - t0)
        nodes = (t0 + half)[:, None] + half[:, None] * _GL10_NODES[None, :]
        tail = half * (self.speed(nodes) @ _GL10_WEIGHTS)
        out = self.s_grid[idx] + tail
        return float(out[0]) if scalar else out

    def inverse(self, s):
        """h^{-1}(s) for s in [0, total], vectorized Newton with bracketing start."""
        s = np.asarray(s, dtype=float)
        scalar = s.ndim == 0
        s = np.atleast_1d(s).copy()
        idx = np.clip(np.searchsorted(self.s_grid, s, side="right") - 1, 0, self.GRID - 1)
        seg = self.s_grid[idx + 1] - self.s_grid[idx]
        t = self.t_grid[idx] + self.step * (s - self.s_grid[idx]) / seg
        lo = self.t_grid[idx]
        hi = self.t_grid[idx + 1]
        for _ in range(4):
            t -= (self.forward(t) - s) / self.speed(t)
            t = np.clip(t, lo, hi)
        return float(t[0]) if scalar else t


@lru_cache(maxsize=32)
def _arc_table(a: float, b: float) -> _ArcLengthTable:
    return _ArcLengthTable(a, b)


def circumference(a_ax: float, b_ax: float) -> float:
    """Total arc length of the ellipse with semi-axes ``a_ax``, ``b_ax``."""
    return _arc_table(float(a_ax), float(b_ax)).total


def arclength(a_ax: float, b_ax: float, t) -> float:
    """Arc length from angle 0 to angle t along the ellipse, t in [0, 2pi]."""
    t_arr = np.asarray(t, dtype=float)
    _require_finite(t_arr, "angle")
    if np.any(t_arr < -1e-9) or np.any(t_arr > TWO_PI + 1e-9):
        raise ValueError("angle outside [0, 2pi]")
    table = _arc_table(float(a_ax), float(b_ax))
    return table.forward(np.clip(t_arr, 0.0, TWO_PI))


def arclength_inverse(a_ax: float, b_ax: float, s) -> float:
    """Angle t with arclength(a_ax, b_ax, t) = s, for s in [0, circumference]."""
    table = _arc_table(float(a_ax), float(b_ax))
    s_arr = np.asarray(s, dtype=float)
    _require_finite(s_arr, "arc length")
    if np.any(s_arr < -1e-9) or np.any(s_arr > table.total + 1e-9):
        raise ValueError("arc length outside [0, circumference]")
    return table.inverse(np.clip(s_arr, 0.0, table.total))


# ---------------------------------------------------------------------------
# charts and ambient coordinates
# ---------------------------------------------------------------------------


def _wrap_angle(t):
    return np.mod(t, TWO_PI)


def charts_to_ambient(manifold: Manifold, charts: np.ndarray) -> np.ndarray:
    """Vectorized chart -> ambient map; charts has shape (n, dim)."""
    charts = np.asarray(charts, dtype=float)
    kind = manifold.kind
    if kind == "circle":
        t = charts[:, 0]
        return np.column_stack([np.cos(t), np.sin(t)])
    if kind == "ellipse":
        t = charts[:, 0]
        return np.column_stack([manifold.a_ax * np.cos(t), manifold.b_ax * np.sin(t)])
    if kind == "torus2":
        t1, t2 = charts[:, 0], charts[:, 1]
        return np.column_stack([np.cos(t1), np.sin(t1), np.cos(t2), np.sin(t2)])
    theta, phi = charts[:, 0], charts[:, 1]
    st = np.sin(theta)
    return np.column_stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)])


def sphere_chart_from_ambient(xyz: np.ndarray) -> np.ndarray:
    """Inverse chart for the sphere; longitude snaps to 0 at the poles."""
    xyz = np.asarray(xyz, dtype=float)
    theta = np.arccos(np.clip(xyz[:, 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(xyz[:, 1], xyz[:, 0]), TWO_PI)
    polar = np.minimum(theta, math.pi - theta) < _POLE_TOL
    phi = np.where(polar, 0.0, phi)
    return np.column_stack([theta, phi])


def canonical_point(manifold: Manifold, chart: Sequence[float]) -> ManifoldPoint:
    """Reduce chart coordinates to the canonical window and attach ambients.

    Angles are reduced mod 2pi; sphere colatitude is reflected into
    [0, pi] (adjusting longitude by pi when it crosses a pole) and the
    longitude at an exact pole is normalized to 0.
    """
    chart = tuple(float(c) for c in chart)
    _require_finite(chart, "chart coordinates")
    if len(chart) != manifold.dim:
        raise ValueError(f"chart arity {len(chart)} does not match {manifold.kind} (dim {manifold.dim})")
    kind = manifold.kind
    if kind in ("circle", "ellipse"):
        canon = (float(_wrap_angle(chart[0])),)
    elif kind == "torus2":
        canon = (float(_wrap_angle(chart[0])), float(_wrap_angle(chart[1])))
    else:
        theta = float(_wrap_angle(chart[0]))
        phi = chart[1]
        if theta > math.pi:
            theta = TWO_PI - theta
            phi = phi + math.pi
        phi = float(_wrap_angle(phi))
        if min(theta, math.pi - theta) < _POLE_TOL:
            theta = 0.0 if theta < 0.5 * math.pi else math.pi
            phi = 0.0
        canon = (theta, phi)
    ambient = charts_to_ambient(manifold, np.asarray([canon]))[0]
    return ManifoldPoint(manifold, canon, tuple(float(x) for x in ambient))


def point_consistency_error(p: ManifoldPoint) -> float:
    """Max-norm gap between the stored ambient and the one its chart implies."""
    amb = charts_to_ambient(p.manifold, np.asarray([p.chart]))[0]
    return float(np.max(np.abs(amb - np.asarray(p.ambient))))


# ---------------------------------------------------------------------------
# geodesic distance and exponential stepping
# ---------------------------------------------------------------------------


def _circle_dist(u, v, period=TWO_PI):
    d = np.abs(np.asarray(u) - np.asarray(v)) % period
    return np.minimum(d, period - d)


def distance(p: ManifoldPoint, q: ManifoldPoint) -> float:
    """Exact geodesic distance between two points of the same manifold."""
    if p.manifold != q.manifold:
        raise ValueError("points live on different manifolds")
    return float(pairwise_distance(p.manifold, np.asarray([p.chart]), np.asarray([q.chart]))[0])


def pairwise_distance(manifold: Manifold, charts_a: np.ndarray, charts_b: np.ndarray) -> np.ndarray:
    """Geodesic distance between row-aligned chart arrays."""
    charts_a = np.asarray(charts_a, dtype=float)
    charts_b = np.asarray(charts_b, dtype=float)
    kind = manifold.kind
    if kind == "circle":
        return _circle_dist(charts_a[:, 0], charts_b[:, 0])
    if kind == "torus2":
        d1 = _circle_dist(charts_a[:, 0], charts_b[:, 0])
        d2 = _circle_dist(charts_a[:, 1], charts_b[:, 1])
        return np.hypot(d1, d2)
    if kind == "sphere2":
        xa = charts_to_ambient(manifold, charts_a)
        xb = charts_to_ambient(manifold, charts_b)
        dot = np.sum(xa * xb, axis=1)
        crossn = np.linalg.norm(np.cross(xa, xb), axis=1)
        return np.arctan2(crossn, dot)
    table = _arc_table(manifold.a_ax, manifold.b_ax)
    sa = table.forward(_wrap_angle(charts_a[:, 0]))
    sb = table.forward(_wrap_angle(charts_b[:, 0]))
    return _circle_dist(sa, sb, period=table.total)


def tangent_norm(manifold: Manifold, v) -> float:
    if manifold.dim == 1:
        return abs(float(v))
    return float(np.linalg.norm(np.asarray(v, dtype=float)))


def exp_step(p: ManifoldPoint, v, s: float) -> ManifoldPoint:
    """Geodesic step of signed length ``s`` from ``p`` along unit tangent ``v``.

    ``v`` follows the per-kind tangent convention of this module.  The
    formulas are exact: angle addition on the circle and torus, arc-length
    addition plus the inverse arc-length chart on the ellipse, and the
    great-circle rotation on the sphere.
    """
    m = p.manifold
    _require_finite([s], "step length")
    kind = m.kind
    if kind == "sphere2":
        v = np.asarray(v, dtype=float)
        if v.shape != (3,):
            raise ValueError("sphere tangent must be an ambient 3-vector")
        x = np.asarray(p.ambient)
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("tangent vector is not unit length")
        if abs(float(v @ x)) > 1e-8:
            raise ValueError("tangent vector is not orthogonal to the base point")
        y = x * math.cos(s) + v * math.sin(s)
        y /= np.linalg.norm(y)
        chart = sphere_chart_from_ambient(y[None, :])[0]
        return canonical_point(m, chart)
    if kind == "torus2":
        v = np.asarray(v, dtype=float)
        if v.shape != (2,):
            raise ValueError("torus tangent must be a 2-vector")
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("tangent vector is not unit length")
        return canonical_point(m, (p.chart[0] + s * v[0], p.chart[1] + s * v[1]))
    vv = float(v)
    if abs(abs(vv) - 1.0) > 1e-9:
        raise ValueError("tangent vector is not unit length")
    if kind == "circle":
        return canonical_point(m, (p.chart[0] + vv * s,))
    table = _arc_table(m.a_ax, m.b_ax)
    s_new = (table.forward(p.chart[0]) + vv * s) % table.total
    return canonical_point(m, (table.inverse(s_new),))


def move_points(manifold: Manifold, charts: np.ndarray, disp) -> np.ndarray:
    """Vectorized exponential update: displacement = unit tangent times length.

    ``disp`` is (n,) for one-dimensional kinds, (n, 2) in the torus chart
    frame, (n, 3) ambient for the sphere (projected onto the tangent space
    before rotating, so callers may pass raw ambient increments).
    """
    charts = np.asarray(charts, dtype=float)
    kind = manifold.kind
    if kind == "circle":
        return _wrap_angle(charts + np.asarray(disp, dtype=float).reshape(-1, 1))
    if kind == "torus2":
        return _wrap_angle(charts + np.asarray(disp, dtype=float))
    if kind == "ellipse":
        table = _arc_table(manifold.a_ax, manifold.b_ax)
        s = table.forward(charts[:, 0]) + np.asarray(disp, dtype=float).reshape(-1)
        return table.inverse(np.mod(s, table.total)).reshape(-1, 1)
    x = charts_to_ambient(manifold, charts)
    v = np.asarray(disp, dtype=float)
    v = v - (np.sum(v * x, axis=1, keepdims=True)) * x
    ang = np.linalg.norm(v, axis=1)
    out = np.where(ang[:, None] > 0.0,
                   x * np.cos(ang)[:, None] + np.divide(v, np.where(ang[:, None] == 0.0, 1.0, ang[:, None])) * np.sin(ang)[:, None],
                   x)
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return sphere_chart_from_ambient(out)


def sphere_tangent_frame(charts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangent bases (e1, e2) at sphere chart rows.

    Built from the coordinate axis least aligned with each point, so the
    frame is well conditioned everywhere including the poles.
    """
    x = charts_to_ambient(Manifold("sphere2"), np.asarray(charts, dtype=float))
    axis = np.argmin(np.abs(x), axis=1)
    a = np.zeros_like(x)
    a[np.arange(len(x)), axis] = 1.0
    e1 = np.cross(a, x)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(x, e1)
    return e1, e2


# ---------------------------------------------------------------------------
# reference quadrature
# ---------------------------------------------------------------------------


@dataclass
class QuadratureGrid:
    """Reference quadrature: chart nodes, weights summing to one, exactness.

    ``exactness_band`` is the largest band ``Lq`` such that products of two
    functions of band ``Lq/2`` are integrated exactly (nominal, spectral
    rather than exact, on the ellipse where the speed factor is analytic
    but not band-limited).
    """

    manifold: Manifold
    charts: np.ndarray
    qweights: np.ndarray
    exactness_band: float

    def nodes(self) -> Iterator[ManifoldPoint]:
        for row in self.charts:
            yield canonical_point(self.manifold, tuple(row))


@lru_cache(maxsize=128)
def _reference_grid_cached(manifold: Manifold, band_int: int) -> QuadratureGrid:
    kind = manifold.kind
    if kind == "circle":
        m = 4 * band_int + 8
        t = np.arange(m) * (TWO_PI / m)
        return QuadratureGrid(manifold, t.reshape(-1, 1), np.full(m, 1.0 / m), float(m - 1))
    if kind == "torus2":
        m = 4 * band_int + 8
        t = np.arange(m) * (TWO_PI / m)
        t1, t2 = np.meshgrid(t, t, indexing="ij")
        charts = np.column_stack([t1.ravel(), t2.ravel()])
        w = np.full(m * m, 1.0 / (m * m))
        return QuadratureGrid(manifold, charts, w, float(m - 1))
    if kind == "sphere2":
        n_theta = band_int + 2
        n_phi = 2 * band_int + 4
        x, wx = np.polynomial.legendre.leggauss(n_theta)
        theta = np.arccos(x)
        phi = np.arange(n_phi) * (TWO_PI / n_phi)
        th, ph = np.meshgrid(theta, phi, indexing="ij")
        charts = np.column_stack([th.ravel(), ph.ravel()])
        w = np.repeat(wx, n_phi) / (n_phi * wx.sum())
        return QuadratureGrid(manifold, charts, w, float(min(2 * n_theta - 1, n_phi - 1)))
    # ellipse: uniform angle grid with speed weights; geometric convergence
    # thanks to analyticity, so a generous fixed margin reaches 1e-14
    m = 4 * band_int + 128
    t = np.arange(m) * (TWO_PI / m)
    table = _arc_table(manifold.a_ax, manifold.b_ax)
    w = table.speed(t)
    w /= w.sum()
    return QuadratureGrid(manifold, t.reshape(-1, 1), w, float(2 * band_int))


def reference_grid(manifold: Manifold, band_hint: float) -> QuadratureGrid:
    """Quadrature grid sized so band-``band_hint`` products integrate exactly."""
    if not (band_hint > 0 and math.isfinite(band_hint)):
        raise ValueError("band hint must be positive and finite")
    return _reference_grid_cached(manifold, int(math.ceil(band_hint)))


def reference_integrate(manifold: Manifold, f: Callable, band_hint: float) -> float:
    """Integrate a scalar field against the normalized measure.

    ``f`` receives the grid's chart array of shape (n, dim) and must return
    n values; the summation order is fixed, so results are reproducible
    bit-for-bit for a given grid.
    """
    grid = reference_grid(manifold, band_hint)
    vals = np.asarray(f(grid.charts), dtype=float).reshape(-1)
    if vals.shape != (len(grid.charts),):
        raise ValueError("integrand returned wrong shape")
    if not np.all(np.isfinite(vals)):
        raise ValueError("integrand returned non-finite values on the grid")
    return float(grid.qweights @ vals)


# ---------------------------------------------------------------------------
# balls and the doubling profile
# ---------------------------------------------------------------------------


def _ball_measure_profile(manifold: Manifold, r: np.ndarray) -> np.ndarray:
    """Measure of a geodesic ball of radius r; homogeneous, so center-free."""
    kind = manifold.kind
    r = np.asarray(r, dtype=float)
    if kind == "circle":
        return np.minimum(r / math.pi, 1.0)
    if kind == "sphere2":
        # cap fraction (1 - cos r)/2 in the cancellation-free half-angle form
        return np.sin(0.5 * r) ** 2
    if kind == "ellipse":
        return np.minimum(2.0 * r / circumference(manifold.a_ax, manifold.b_ax), 1.0)
    # flat torus: disk area, with the four edge overshoots removed once
    # r exceeds the half-period pi
    disk = math.pi * r ** 2
    over = np.maximum(r, math.pi)
    seg = over ** 2 * np.arccos(np.clip(math.pi / over, -1.0, 1.0)) - math.pi * np.sqrt(
        np.maximum(over ** 2 - math.pi ** 2, 0.0))
    area = np.where(r <= math.pi, disk, disk - 4.0 * seg)
    return np.minimum(area / (4.0 * math.pi ** 2), 1.0)


def ball_measure(manifold: Manifold, center: ManifoldPoint, r: float) -> float:
    """Normalized measure of the geodesic ball B(center, r), in closed form."""
    _require_finite([r], "radius")
    if r <= 0.0:
        raise ValueError("radius must be positive")
    if r > manifold.diameter + 1e-12:
        raise ValueError("radius exceeds the manifold diameter")
    if center is not None and center.manifold != manifold:
        raise ValueError("center lives on a different manifold")
    return float(_ball_measure_profile(manifold, np.asarray(r)))


@lru_cache(maxsize=16)
def doubling_constants(manifold: Manifold) -> tuple[float, float]:
    """Empirical Ahlfors bounds (c1, c2): c1 r^d <= mu(B(x, r)) <= c2 r^d.

    All four model manifolds are homogeneous, so the profile depends on r
    only; the constants come from a dense scan of mu(B(r)) / r^d with a
    tiny safety margin.
    """
    d = manifold.diameter
    r = np.concatenate([
        np.geomspace(1e-9 * d, d, 60_000),
        np.linspace(1e-4 * d, d, 60_000),
    ])
    ratio = _ball_measure_profile(manifold, r) / r ** manifold.dim
    return float(ratio.min() * (1.0 - 1e-6)), float(ratio.max() * (1.0 + 1e-6))
