"""Geometric core: polygons, building proxies, relevance ellipsoids.

Coordinates are meters. 2D polygons are sequences of ``(x, y)`` vertices in
counter-clockwise order; 3D points are ``(x, y, z)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

# Absolute tolerance (m) for all boundary predicates.
GEOM_TOL = 1e-9


class DegenerateGeometryError(ValueError):
    pass


def polygon_area(polygon) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    pts = np.asarray(polygon, dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        raise DegenerateGeometryError("polygon needs at least 3 vertices")
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points) -> list[tuple[float, float]]:
    """Monotone-chain convex hull.

    Returns the hull counter-clockwise, starting at the lexicographically
    smallest vertex, without collinear vertices. Input coordinates are
    passed through untouched.
    """
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if len(pts) < 3:
        raise DegenerateGeometryError("convex hull needs 3 distinct points")

    def half(seq):
        out: list[tuple[float, float]] = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateGeometryError("all points are collinear")
    return hull


def is_convex_ccw(polygon) -> bool:
    pts = [tuple(p) for p in polygon]
    n = len(pts)
    if n < 3:
        return False
    for i in range(n):
        if _cross(pts[i], pts[(i + 1) % n], pts[(i + 2) % n]) <= 0:
            return False
    return True


def point_in_polygon(u, polygon, tol: float = GEOM_TOL) -> bool:
    """Even-odd test; points within ``tol`` of an edge count as inside."""
    x, y = float(u[0]), float(u[1])
    pts = np.asarray(polygon, dtype=float)
    n = len(pts)
    inside = False
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        # boundary check
        ex, ey = x2 - x1, y2 - y1
        seg2 = ex * ex + ey * ey
        t = ((x - x1) * ex + (y - y1) * ey) / seg2 if seg2 > 0 else 0.0
        t = min(1.0, max(0.0, t))
        if math.hypot(x - (x1 + t * ex), y - (y1 + t * ey)) <= tol:
            return True
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * ex / ey
            if x < xc:
                inside = not inside
    return inside


def points_in_polygon(points: np.ndarray, polygon, tol: float = GEOM_TOL) -> np.ndarray:
    """Vectorized :func:`point_in_polygon` over an ``(n, 2)`` array."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    poly = np.asarray(polygon, dtype=float)
    x, y = p[:, 0], p[:, 1]
    inside = np.zeros(len(p), dtype=bool)
    on_edge = np.zeros(len(p), dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        ex, ey = x2 - x1, y2 - y1
        seg2 = ex * ex + ey * ey
        t = np.clip(((x - x1) * ex + (y - y1) * ey) / seg2, 0.0, 1.0) if seg2 > 0 else 0.0
        on_edge |= np.hypot(x - (x1 + t * ex), y - (y1 + t * ey)) <= tol
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x1 + (y - y1) * ex / ey
        inside ^= crosses & (x < xc)
    return inside | on_edge


# ---------------------------------------------------------------------------
# building proxies


@dataclass(frozen=True)
class BuildingProxy:
    """Convex-hull footprint extruded over ``[z_low, z_high]``."""

    building_id: int
    hull: tuple[tuple[float, float], ...]
    z_low: float
    z_high: float
    area: float

    @property
    def hull_array(self) -> np.ndarray:
        return np.asarray(self.hull, dtype=float)

    @property
    def volume(self) -> float:
        return self.area * (self.z_high - self.z_low)

    def bbox(self) -> tuple[float, float, float, float]:
        h = self.hull_array
        return float(h[:, 0].min()), float(h[:, 1].min()), float(h[:, 0].max()), float(h[:, 1].max())


def build_proxy(building) -> BuildingProxy:
    hull = tuple(convex_hull_2d(building.footprint))
    z_low = float(building.base_z)
    z_high = z_low + float(building.height)
    if not z_high > z_low:
        raise DegenerateGeometryError(f"building {building.id} has non-positive height")
    return BuildingProxy(building.id, hull, z_low, z_high, polygon_area(hull))


# ---------------------------------------------------------------------------
# propagation-relevance ellipsoid


@dataclass(frozen=True)
class Ellipsoid:
    """Prolate spheroid with foci at Tx and Rx and excess path length ``delta``."""

    focus_t: tuple[float, float, float]
    focus_r: tuple[float, float, float]
    delta: float
    d: float
    a: float
    c: float
    b: float
    center: tuple[float, float, float]
    axis: tuple[float, float, float]

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.a * self.b * self.b

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box of the spheroid."""
        w = np.asarray(self.axis)
        # half-extent along axis k: sqrt(a^2 w_k^2 + b^2 (1 - w_k^2))
        half = np.sqrt(self.a**2 * w**2 + self.b**2 * (1.0 - w**2))
        ctr = np.asarray(self.center)
        return ctr - half, ctr + half


def make_ellipsoid(x_t, x_r, delta: float) -> Ellipsoid:
    if delta < 0:
        raise ValueError("delta must be non-negative")
    t = np.asarray(x_t, dtype=float)
    r = np.asarray(x_r, dtype=float)
    diff = r - t
    d = float(np.linalg.norm(diff))
    a = 0.5 * (d + delta)
    c = 0.5 * d
    b = 0.5 * math.sqrt(delta * (2.0 * d + delta))
    axis = tuple(float(v) for v in diff / d) if d > 0 else (1.0, 0.0, 0.0)
    center = tuple(float(v) for v in 0.5 * (t + r))
    return Ellipsoid(
        tuple(float(v) for v in t), tuple(float(v) for v in r), float(delta),
        d, a, c, b, center, axis,
    )


def ellipsoid_contains(e: Ellipsoid, p, tol: float = GEOM_TOL) -> bool:
    p = np.asarray(p, dtype=float)
    s = np.linalg.norm(p - e.focus_t) + np.linalg.norm(p - e.focus_r)
    return bool(s <= e.d + e.delta + tol)


def vertical_overlap_thickness(e: Ellipsoid, u, z_low: float, z_high: float):
    """Length of the vertical line at ``u`` inside both the ellipsoid and
    the slab ``[z_low, z_high]``.

    ``u`` may be a single ``(x, y)`` or an ``(n, 2)`` array; the return value
    matches (float or array).
    """
    uu = np.asarray(u, dtype=float)
    scalar = uu.ndim == 1
    uu = uu.reshape(-1, 2)
    out = np.zeros(len(uu))
    if e.b <= 0.0 or np.any(np.asarray(z_high) < np.asarray(z_low)):
        return 0.0 if scalar else out
    cx, cy, cz = e.center
    wx, wy, wz = e.axis
    k = (e.c / e.a) ** 2
    v0x = uu[:, 0] - cx
    v0y = uu[:, 1] - cy
    wv = wx * v0x + wy * v0y
    # A t^2 + 2 B t + C <= 0 with t = z - cz
    # 1 - k wz^2, written without cancellation for thin ellipsoids
    A = (wx * wx + wy * wy) + wz * wz * (e.b / e.a) ** 2
    B = -k * wv * wz
    C = v0x * v0x + v0y * v0y - k * wv * wv - e.b * e.b
    disc = B * B - A * C
    # A underflows to 0 only for ellipsoids thinner than double precision
    ok = (disc >= 0.0) & (A > 0.0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    A = np.where(ok, A, 1.0)
    t1 = (-B - sq) / A + cz
    t2 = (-B + sq) / A + cz
    lo = np.maximum(t1, z_low)
    hi = np.minimum(t2, z_high)
    out = np.where(ok, np.maximum(hi - lo, 0.0), 0.0)
    return float(out[0]) if scalar else out


def footprint_samples(proxy: BuildingProxy, sampling_interval: float, rng) -> np.ndarray:
    """Jittered stratified samples inside the hull.

    One uniformly jittered point per cell of a grid with pitch
    ``sampling_interval`` laid over the hull's bounding box; points falling
    outside the hull are rejected.
    """
    if sampling_interval <= 0:
        raise ValueError("sampling_interval must be positive")
    rng = np.random.default_rng(rng)
    x0, y0, x1, y1 = proxy.bbox()
    nx = max(1, int(math.ceil((x1 - x0) / sampling_interval)))
    ny = max(1, int(math.ceil((y1 - y0) / sampling_interval)))
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    jitter = rng.random((ny * nx, 2))
    pts = np.column_stack([
        x0 + (ii.ravel() + jitter[:, 0]) * sampling_interval,
        y0 + (jj.ravel() + jitter[:, 1]) * sampling_interval,
    ])
    return pts[_in_convex(pts, proxy.hull_array)]


def _in_convex(pts: np.ndarray, hull: np.ndarray) -> np.ndarray:
    nxt = np.roll(hull, -1, axis=0)
    ex = nxt[:, 0] - hull[:, 0]
    ey = nxt[:, 1] - hull[:, 1]
    cr = ex[None, :] * (pts[:, 1:2] - hull[None, :, 1]) - ey[None, :] * (pts[:, 0:1] - hull[None, :, 0])
    return np.all(cr >= 0.0, axis=1)


def overlap_from_samples(proxy: BuildingProxy, samples: np.ndarray, e: Ellipsoid) -> float:
    """Monte-Carlo overlap volume ``|F| / Q * sum(tau(u_q))``."""
    if len(samples) == 0:
        return 0.0
    tau = vertical_overlap_thickness(e, samples, proxy.z_low, proxy.z_high)
    return proxy.area / len(samples) * float(np.sum(tau))


def normalized_overlap(volume: float, e: Ellipsoid) -> float:
    if e.b <= 0.0:
        return 0.0
    return volume / e.volume


def overlap_volume(proxy: BuildingProxy, e: Ellipsoid, sampling_interval: float = 2.0, seed=0) -> float:
    samples = footprint_samples(proxy, sampling_interval, seed)
    return overlap_from_samples(proxy, samples, e)


# ---------------------------------------------------------------------------
# segment / prism predicates


def _clip_interval_convex(p0, p1, hull: np.ndarray, z_low: float, z_high: float,
                          tol: float = GEOM_TOL) -> Optional[tuple[float, float]]:
    """Parameter interval of segment ``p0 -> p1`` strictly inside the prism.

    The prism is shrunk by ``tol`` on every face so grazing contacts are
    misses. Returns ``None`` when the interval is empty.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = p1 - p0
    t_in, t_out = 0.0, 1.0
    # vertical slab
    lo, hi = z_low + tol, z_high - tol
    if d[2] == 0.0:
        if not (lo < p0[2] < hi):
            return None
    else:
        ta, tb = (lo - p0[2]) / d[2], (hi - p0[2]) / d[2]
        if ta > tb:
            ta, tb = tb, ta
        t_in, t_out = max(t_in, ta), min(t_out, tb)
        if t_in >= t_out:
            return None
    n = len(hull)
    for i in range(n):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        L = math.hypot(ex, ey)
        nx, ny = ey / L, -ex / L  # outward for CCW
        # inside: n . (p - a) < -tol
        f0 = nx * (p0[0] - ax) + ny * (p0[1] - ay) + tol
        fd = nx * d[0] + ny * d[1]
        if fd == 0.0:
            if f0 >= 0.0:
                return None
            continue
        t = -f0 / fd
        if fd < 0.0:
            t_in = max(t_in, t)
        else:
            t_out = min(t_out, t)
        if t_in >= t_out:
            return None
    return t_in, t_out


def segment_prism_entry(x_t, x_r, proxy: BuildingProxy) -> Optional[float]:
    """Smallest parameter ``t`` in ``[0, 1]`` where the segment enters the proxy."""
    iv = _clip_interval_convex(x_t, x_r, proxy.hull_array, proxy.z_low, proxy.z_high)
    return None if iv is None else iv[0]


def segment_entries(x_t, rx: np.ndarray, proxy: BuildingProxy, tol: float = GEOM_TOL) -> np.ndarray:
    """Vectorized :func:`segment_prism_entry` for one Tx and many Rx.

    Returns entry parameters, ``nan`` where the segment misses the proxy.
    """
    p0 = np.asarray(x_t, dtype=float)
    rx = np.asarray(rx, dtype=float).reshape(-1, 3)
    d = rx - p0
    m = len(rx)
    t_in = np.zeros(m)
    t_out = np.ones(m)
    alive = np.ones(m, dtype=bool)
    lo, hi = proxy.z_low + tol, proxy.z_high - tol
    dz = d[:, 2]
    flat = dz == 0.0
    alive &= ~flat | ((lo < p0[2]) & (p0[2] < hi))
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - p0[2]) / dz
        tb = (hi - p0[2]) / dz
    tmin = np.where(flat, -np.inf, np.minimum(ta, tb))
    tmax = np.where(flat, np.inf, np.maximum(ta, tb))
    t_in = np.maximum(t_in, tmin)
    t_out = np.minimum(t_out, tmax)
    hull = proxy.hull_array
    n = len(hull)
    for i in range(n):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        L = math.hypot(ex, ey)
        nx, ny = ey / L, -ex / L
        f0 = nx * (p0[0] - ax) + ny * (p0[1] - ay) + tol
        fd = nx * d[:, 0] + ny * d[:, 1]
        par = fd == 0.0
        if f0 >= 0.0:
            alive &= ~par
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -f0 / fd
        t_in = np.where(fd < 0.0, np.maximum(t_in, t), t_in)
        t_out = np.where(fd > 0.0, np.minimum(t_out, t), t_out)
    alive &= t_in < t_out
    return np.where(alive, t_in, np.nan)


def primary_los_blocker(x_t, x_r, proxies: Iterable[BuildingProxy]) -> Optional[int]:
    """Id of the first proxy hit along ``x_t -> x_r``; ties go to the smaller id."""
    best: Optional[tuple[float, int]] = None
    for p in proxies:
        t = segment_prism_entry(x_t, x_r, p)
        if t is None:
            continue
        key = (t, p.building_id)
        if best is None or key < best:
            best = key
    return None if best is None else best[1]


# ---------------------------------------------------------------------------
# propagation paths


@dataclass(frozen=True)
class PropPath:
    x_t: tuple[float, float, float]
    x_r: tuple[float, float, float]
    points: tuple[tuple[float, float, float], ...] = field(default=())

    @property
    def length(self) -> float:
        nodes = np.asarray((self.x_t,) + tuple(self.points) + (self.x_r,), dtype=float)
        return float(np.sum(np.linalg.norm(np.diff(nodes, axis=0), axis=1)))
