"""Digital-twin scene representation, synthetic cities, degradation and refinement."""
from __future__ import annotations

import dataclasses
import enum
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .geometry import (
    DegenerateGeometryError,
    convex_hull_2d,
    points_in_polygon,
    polygon_area,
)

SCHEMA_TAG = "twinforge-scene/1"

Point2 = tuple[float, float]


class Fidelity(str, enum.Enum):
    HIGH = "HIGH"
    LOW = "LOW"


class SceneError(ValueError):
    pass


class PlacementError(RuntimeError):
    pass


class DegradeWarning(UserWarning):
    pass


def _is_simple(poly: Sequence[Point2]) -> bool:
    n = len(poly)

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            c, d = poly[j], poly[(j + 1) % n]
            o1, o2, o3, o4 = orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b)
            if o1 != o2 and o3 != o4:
                return False
            if (o1 == 0 and on_seg(a, b, c)) or (o2 == 0 and on_seg(a, b, d)) \
                    or (o3 == 0 and on_seg(c, d, a)) or (o4 == 0 and on_seg(c, d, b)):
                return False
    return True


@dataclass(frozen=True)
class Building:
    id: int
    footprint: tuple[Point2, ...]
    base_z: float
    height: float

    def __post_init__(self):
        fp = tuple((float(x), float(y)) for x, y in self.footprint)
        object.__setattr__(self, "footprint", fp)
        if len(fp) < 3:
            raise SceneError(f"building {self.id}: footprint needs >= 3 vertices")
        if not polygon_area(fp) > 0:
            raise SceneError(f"building {self.id}: footprint must be counter-clockwise with positive area")
        if not _is_simple(fp):
            raise SceneError(f"building {self.id}: footprint is self-intersecting")
        if not self.height > 0:
            raise SceneError(f"building {self.id}: height must be positive")

    @property
    def z_top(self) -> float:
        return self.base_z + self.height


@dataclass(frozen=True)
class Terrain:
    origin: Point2
    cell_size: float
    nx: int
    ny: int
    # flat plane (float) or ny rows of nx values
    elevation: Union[float, tuple[tuple[float, ...], ...]] = 0.0

    def __post_init__(self):
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        if not self.cell_size > 0:
            raise SceneError("terrain cell_size must be positive")
        if self.nx < 1 or self.ny < 1:
            raise SceneError("terrain needs nx, ny >= 1")
        if not isinstance(self.elevation, (int, float)):
            rows = tuple(tuple(float(v) for v in row) for row in self.elevation)
            if len(rows) != self.ny or any(len(r) != self.nx for r in rows):
                raise SceneError("terrain elevation grid must be ny x nx")
            object.__setattr__(self, "elevation", rows)
        else:
            object.__setattr__(self, "elevation", float(self.elevation))

    @property
    def shape(self) -> tuple[int, int]:
        return self.ny, self.nx

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return x0, y0, x0 + self.nx * self.cell_size, y0 + self.ny * self.cell_size

    def elevation_grid(self) -> np.ndarray:
        if isinstance(self.elevation, float):
            return np.full(self.shape, self.elevation)
        return np.asarray(self.elevation, dtype=float)

    def cell_centers(self) -> np.ndarray:
        """``(ny*nx, 3)`` cell centers, row-major (y outer), z on the terrain."""
        x0, y0 = self.origin
        xs = x0 + (np.arange(self.nx) + 0.5) * self.cell_size
        ys = y0 + (np.arange(self.ny) + 0.5) * self.cell_size
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel(), self.elevation_grid().ravel()])


@dataclass(frozen=True)
class TxConfig:
    position: tuple[float, float, float]
    carrier_frequency: float = 3.5e9
    array_size: int = 64
    element_spacing: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        if len(self.position) != 3:
            raise SceneError("tx position must be (x, y, z)")
        if not self.carrier_frequency > 0:
            raise SceneError("carrier frequency must be positive")
        if self.array_size < 1:
            raise SceneError("array_size must be >= 1")
        if not self.element_spacing > 0:
            raise SceneError("element spacing must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    def moved(self, position) -> "TxConfig":
        return dataclasses.replace(self, position=tuple(position))


SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class Scene:
    buildings: tuple[Building, ...]
    terrain: Terrain
    fidelity: tuple[Fidelity, ...] = ()
    tx: Optional[TxConfig] = None

    def __post_init__(self):
        object.__setattr__(self, "buildings", tuple(self.buildings))
        fid = tuple(Fidelity(f) for f in self.fidelity) if self.fidelity else (Fidelity.HIGH,) * len(self.buildings)
        object.__setattr__(self, "fidelity", fid)
        if len(fid) != len(self.buildings):
            raise SceneError("one fidelity tag per building required")
        ids = [b.id for b in self.buildings]
        if len(set(ids)) != len(ids):
            raise SceneError("building ids must be unique")
        x0, y0, x1, y1 = self.terrain.extent
        for b in self.buildings:
            fp = np.asarray(b.footprint)
            if fp[:, 0].min() < x0 or fp[:, 0].max() > x1 or fp[:, 1].min() < y0 or fp[:, 1].max() > y1:
                raise SceneError(f"building {b.id}: footprint outside terrain extent")

    @property
    def ids(self) -> list[int]:
        return [b.id for b in self.buildings]

    def building(self, bid: int) -> Building:
        for b in self.buildings:
            if b.id == bid:
                return b
        raise KeyError(bid)

    def fidelity_of(self, bid: int) -> Fidelity:
        return self.fidelity[self.ids.index(bid)]

    def without(self, bid: int) -> "Scene":
        keep = [i for i, b in enumerate(self.buildings) if b.id != bid]
        if len(keep) == len(self.buildings):
            raise KeyError(bid)
        return dataclasses.replace(
            self,
            buildings=tuple(self.buildings[i] for i in keep),
            fidelity=tuple(self.fidelity[i] for i in keep),
        )

    def with_tx(self, tx: TxConfig) -> "Scene":
        return dataclasses.replace(self, tx=tx)

    def footprint_mask(self) -> np.ndarray:
        """Boolean ``(ny*nx,)`` mask of cell centers inside any footprint."""
        centers = self.terrain.cell_centers()[:, :2]
        mask = np.zeros(len(centers), dtype=bool)
        for b in self.buildings:
            fp = np.asarray(b.footprint)
            box = ((centers[:, 0] >= fp[:, 0].min() - 1e-9) & (centers[:, 0] <= fp[:, 0].max() + 1e-9)
                   & (centers[:, 1] >= fp[:, 1].min() - 1e-9) & (centers[:, 1] <= fp[:, 1].max() + 1e-9))
            idx = np.flatnonzero(box & ~mask)
            if len(idx):
                mask[idx] = points_in_polygon(centers[idx], fp)
        return mask


@dataclass(frozen=True)
class RefinementPlan:
    selected: frozenset
    budget: int

    def __post_init__(self):
        object.__setattr__(self, "selected", frozenset(int(i) for i in self.selected))
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if len(self.selected) > self.budget:
            raise ValueError(f"plan selects {len(self.selected)} buildings over budget {self.budget}")

    def validate(self, scene: Scene) -> None:
        missing = sorted(self.selected - set(scene.ids))
        if missing:
            raise SceneError(f"plan references unknown building ids {missing}")


# ---------------------------------------------------------------------------
# synthetic cities


@dataclass(frozen=True)
class CityParams:
    cells: int = 50
    height_range: tuple[float, float] = (8.0, 45.0)
    radius_range: tuple[float, float] = (8.0, 22.0)
    aspect_range: tuple[float, float] = (0.55, 1.0)
    vertex_range: tuple[int, int] = (4, 8)
    min_gap: float = 6.0
    margin: float = 2.0
    # (x, y, radius) discs kept free of buildings, e.g. around Tx sites
    clear_zones: tuple[tuple[float, float, float], ...] = ()
    max_attempts: int = 200


def _random_convex(rng, center, radius, aspect, k) -> list[Point2]:
    base = 2 * math.pi * np.arange(k) / k
    ang = base + rng.uniform(-0.3, 0.3, size=k) * (2 * math.pi / k)
    ang = np.sort(ang)
    rot = rng.uniform(0, 2 * math.pi)
    ex, ey = np.cos(ang) * radius, np.sin(ang) * radius * aspect
    x = center[0] + ex * math.cos(rot) - ey * math.sin(rot)
    y = center[1] + ex * math.sin(rot) + ey * math.cos(rot)
    pts = [(round(float(a), 6), round(float(b), 6)) for a, b in zip(x, y)]
    return convex_hull_2d(pts)


def generate_synthetic_city(seed: int, n_buildings: int, extent: float,
                            params: CityParams = CityParams(), tx: Optional[TxConfig] = None) -> Scene:
    """Seeded city of non-overlapping convex prisms on a flat square terrain.

    Each footprint is inscribed in a disc; discs are kept ``min_gap`` apart,
    which guarantees disjoint footprints.
    """
    if n_buildings < 0:
        raise ValueError("n_buildings must be >= 0")
    if not extent > 0:
        raise ValueError("extent must be positive")
    rng = np.random.default_rng(seed)
    terrain = Terrain((0.0, 0.0), extent / params.cells, params.cells, params.cells, 0.0)
    discs: list[tuple[float, float, float]] = []
    buildings = []
    for bid in range(n_buildings):
        for _ in range(params.max_attempts):
            r = rng.uniform(*params.radius_range)
            lo, hi = r + params.margin, extent - r - params.margin
            if lo >= hi:
                continue
            cx, cy = rng.uniform(lo, hi, size=2)
            if any(math.hypot(cx - x, cy - y) < r + q + params.min_gap for x, y, q in discs):
                continue
            if any(math.hypot(cx - x, cy - y) < r + q for x, y, q in params.clear_zones):
                continue
            break
        else:
            raise PlacementError(
                f"could not place building {bid} after {params.max_attempts} attempts "
                f"(seed={seed}, density={n_buildings} buildings over {extent:g} m square)"
            )
        discs.append((cx, cy, r))
        k = int(rng.integers(params.vertex_range[0], params.vertex_range[1] + 1))
        aspect = rng.uniform(*params.aspect_range)
        fp = _random_convex(rng, (cx, cy), r, aspect, k)
        h = round(float(rng.uniform(*params.height_range)), 3)
        buildings.append(Building(bid, tuple(fp), 0.0, h))
    return Scene(tuple(buildings), terrain, (Fidelity.HIGH,) * len(buildings), tx)


# ---------------------------------------------------------------------------
# degradation and refinement


@dataclass(frozen=True)
class DegradeParams:
    vertex_jitter_sigma: float = 1.0
    height_sigma: float = 2.0
    simplify_to: Optional[int] = 5


def simplify_convex(poly: Sequence[Point2], max_vertices: Optional[int]) -> list[Point2]:
    """Drop vertices of least area contribution until ``max_vertices`` remain."""
    pts = list(poly)
    if max_vertices is None or max_vertices >= len(pts):
        return pts
    max_vertices = max(3, int(max_vertices))
    while len(pts) > max_vertices:
        n = len(pts)
        areas = []
        for i in range(n):
            a, b, c = pts[i - 1], pts[i], pts[(i + 1) % n]
            areas.append(abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])))
        pts.pop(int(np.argmin(areas)))
    return pts


def _bbox_footprint(fp) -> tuple[Point2, ...]:
    a = np.asarray(fp)
    x0, y0 = a.min(axis=0)
    x1, y1 = a.max(axis=0)
    return ((float(x0), float(y0)), (float(x1), float(y0)), (float(x1), float(y1)), (float(x0), float(y1)))


def degrade_scene(scene: Scene, level: DegradeParams = DegradeParams(), seed: int = 0) -> Scene:
    """Low-fidelity copy of an all-HIGH scene.

    Every building draws from its own stream seeded by ``(seed, id)``, so the
    result does not depend on building order. Degenerate outcomes fall back
    to the footprint's bounding box and emit a :class:`DegradeWarning`.
    """
    if any(f is not Fidelity.HIGH for f in scene.fidelity):
        raise SceneError("degrade_scene expects an all-HIGH scene")
    x0, y0, x1, y1 = scene.terrain.extent
    out = []
    for b in scene.buildings:
        rng = np.random.default_rng([int(seed), int(b.id)])
        fp = np.asarray(b.footprint, dtype=float)
        jitter = rng.normal(0.0, level.vertex_jitter_sigma, size=fp.shape)
        moved = fp + jitter
        moved[:, 0] = np.clip(moved[:, 0], x0, x1)
        moved[:, 1] = np.clip(moved[:, 1], y0, y1)
        height = b.height + float(rng.normal(0.0, level.height_sigma))
        try:
            hull = simplify_convex(convex_hull_2d(moved), level.simplify_to)
            if len(hull) < 3 or polygon_area(hull) <= 0:
                raise DegenerateGeometryError("empty hull")
            new_fp = tuple(hull)
        except DegenerateGeometryError:
            warnings.warn(f"building {b.id}: degraded footprint degenerate, using bounding box", DegradeWarning)
            new_fp = _bbox_footprint(b.footprint)
        if height <= 0:
            warnings.warn(f"building {b.id}: degraded height non-positive, keeping original", DegradeWarning)
            height = b.height
        out.append(Building(b.id, new_fp, b.base_z, height))
    return Scene(tuple(out), scene.terrain, (Fidelity.LOW,) * len(out), scene.tx)


def apply_refinement(low: Scene, hi: Scene, plan: RefinementPlan) -> Scene:
    """Swap in high-fidelity geometry for the planned buildings."""
    lo_ids, hi_ids = set(low.ids), set(hi.ids)
    if lo_ids != hi_ids:
        raise SceneError(f"building id mismatch between scenes: {sorted(lo_ids ^ hi_ids)}")
    plan.validate(low)
    buildings, tags = [], []
    for b, tag in zip(low.buildings, low.fidelity):
        if b.id in plan.selected:
            buildings.append(hi.building(b.id))
            tags.append(Fidelity.HIGH)
        else:
            buildings.append(b)
            tags.append(tag)
    return Scene(tuple(buildings), low.terrain, tuple(tags), low.tx)


# ---------------------------------------------------------------------------
# JSON I/O

_SCENE_SCHEMA = {
    "type": "object",
    "required": ["schema", "terrain", "buildings"],
    "properties": {
        "schema": {"const": SCHEMA_TAG},
        "terrain": {
            "type": "object",
            "required": ["origin", "cell_size", "nx", "ny", "elevation"],
            "properties": {
                "origin": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "cell_size": {"type": "number", "exclusiveMinimum": 0},
                "nx": {"type": "integer", "minimum": 1},
                "ny": {"type": "integer", "minimum": 1},
                "elevation": {"oneOf": [
                    {"type": "number"},
                    {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                ]},
            },
        },
        "tx": {
            "type": "object",
            "required": ["position", "frequency_hz", "array_size", "element_spacing_wavelengths"],
            "properties": {
                "position": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                "frequency_hz": {"type": "number", "exclusiveMinimum": 0},
                "array_size": {"type": "integer", "minimum": 1},
                "element_spacing_wavelengths": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "buildings": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "base_z", "height", "fidelity", "footprint"],
                "properties": {
                    "id": {"type": "integer"},
                    "base_z": {"type": "number"},
                    "height": {"type": "number", "exclusiveMinimum": 0},
                    "fidelity": {"enum": ["HIGH", "LOW"]},
                    "footprint": {
                        "type": "array", "minItems": 3,
                        "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                    },
                },
            },
        },
    },
}


class SceneSchemaError(SceneError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


def _pointer(path: Iterable) -> str:
    return "".join(f"/{p}" for p in path)


def scene_to_dict(scene: Scene) -> dict:
    t = scene.terrain
    d: dict = {
        "schema": SCHEMA_TAG,
        "terrain": {
            "origin": list(t.origin),
            "cell_size": t.cell_size,
            "nx": t.nx,
            "ny": t.ny,
            "elevation": t.elevation if isinstance(t.elevation, float) else [list(r) for r in t.elevation],
        },
    }
    if scene.tx is not None:
        d["tx"] = {
            "position": list(scene.tx.position),
            "frequency_hz": scene.tx.carrier_frequency,
            "array_size": scene.tx.array_size,
            "element_spacing_wavelengths": scene.tx.element_spacing,
        }
    d["buildings"] = [
        {"id": b.id, "base_z": b.base_z, "height": b.height, "fidelity": f.value,
         "footprint": [list(p) for p in b.footprint]}
        for b, f in zip(scene.buildings, scene.fidelity)
    ]
    return d


def scene_from_dict(d: dict) -> Scene:
    import jsonschema

    validator = jsonschema.Draft202012Validator(_SCENE_SCHEMA)
    errors = sorted(validator.iter_errors(d), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise SceneSchemaError(_pointer(e.absolute_path), e.message)
    t = d["terrain"]
    terrain = Terrain(tuple(t["origin"]), t["cell_size"], t["nx"], t["ny"],
                      t["elevation"] if isinstance(t["elevation"], (int, float)) else
                      tuple(tuple(r) for r in t["elevation"]))
    tx = None
    if "tx" in d:
        x = d["tx"]
        tx = TxConfig(tuple(x["position"]), x["frequency_hz"], x["array_size"], x["element_spacing_wavelengths"])
    buildings, tags = [], []
    for i, b in enumerate(d["buildings"]):
        try:
            buildings.append(Building(b["id"], tuple(tuple(p) for p in b["footprint"]), b["base_z"], b["height"]))
        except SceneError as exc:
            raise SceneSchemaError(f"/buildings/{i}", str(exc)) from None
        tags.append(Fidelity(b["fidelity"]))
    try:
        return Scene(tuple(buildings), terrain, tuple(tags), tx)
    except SceneError as exc:
        raise SceneSchemaError("/buildings", str(exc)) from None


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=1)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(dumps_scene(scene) + "\n", encoding="utf-8")


def load_scene(path) -> Scene:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneSchemaError("", f"invalid JSON: {exc}") from None
    return scene_from_dict(d)
