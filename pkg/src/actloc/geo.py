"""Geodesy primitives: local metric projection, distances, boxes, polygons and zones.

Coordinates are WGS84 degrees. Planar work happens in a local equirectangular
projection (meters east/north of an origin), which is accurate to well under
0.5% at city scale and is trivially invertible.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
MAX_PROJECTION_LAT_OFFSET = 5.0


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise InvalidInputError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise InvalidInputError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise InvalidInputError(f"longitude {self.lon} outside [-180, 180]")


class ProjectedPoint(NamedTuple):
    x: float
    y: float


def _wrap_lon(dlon):
    dlon = np.asarray(dlon, dtype=float)
    # only touch values outside the range so in-range inputs stay bit-exact
    out = (dlon < -180.0) | (dlon > 180.0)
    return np.where(out, (dlon + 180.0) % 360.0 - 180.0, dlon)


@dataclass(frozen=True)
class Projection:
    """Equirectangular projection about ``origin``.

    ``x = R cos(lat0) dlon``, ``y = R dlat`` (angles in radians). Inputs more
    than five degrees of latitude away from the origin are rejected.
    """

    origin: GeoPoint
    earth_radius: float = EARTH_RADIUS_M

    @property
    def _kx(self) -> float:
        return self.earth_radius * math.cos(math.radians(self.origin.lat))

    def forward(self, lat, lon):
        """Vectorised projection of degree arrays to an ``(n, 2)`` meter array."""
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
            raise InvalidInputError("non-finite coordinate")
        if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0):
            raise InvalidInputError("coordinate out of WGS84 range")
        dlat = lat - self.origin.lat
        if np.any(np.abs(dlat) >= MAX_PROJECTION_LAT_OFFSET):
            raise InvalidInputError(
                f"latitude more than {MAX_PROJECTION_LAT_OFFSET} degrees from projection origin"
            )
        dlon = _wrap_lon(lon - self.origin.lon)
        x = self._kx * np.radians(dlon)
        y = self.earth_radius * np.radians(dlat)
        return np.stack([x, y], axis=-1)

    def inverse(self, xy):
        """Vectorised inverse of :meth:`forward`; returns ``(lat, lon)`` arrays."""
        xy = np.asarray(xy, dtype=float)
        if not np.all(np.isfinite(xy)):
            raise InvalidInputError("non-finite projected coordinate")
        lat = self.origin.lat + np.degrees(xy[..., 1] / self.earth_radius)
        lon = self.origin.lon + np.degrees(xy[..., 0] / self._kx)
        lon = _wrap_lon(lon)
        return lat, lon


def project(p: GeoPoint, proj: Projection) -> ProjectedPoint:
    x, y = proj.forward(p.lat, p.lon)
    return ProjectedPoint(float(x), float(y))


def unproject(q: ProjectedPoint, proj: Projection) -> GeoPoint:
    lat, lon = proj.inverse([q[0], q[1]])
    return GeoPoint(float(lat), float(lon))


def euclidean_m(a: ProjectedPoint, b: ProjectedPoint) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def haversine_m(a: GeoPoint, b: GeoPoint, radius: float = EARTH_RADIUS_M) -> float:
    """Great-circle distance in meters on a sphere."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * radius * math.asin(min(1.0, math.sqrt(h)))


def haversine_array(lat1, lon1, lat2, lon2, radius: float = EARTH_RADIUS_M):
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=float)) for v in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * radius * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def local_distance_m(a: GeoPoint, b: GeoPoint) -> float:
    """Euclidean distance in an equirectangular projection centred between ``a`` and ``b``.

    Falls back to the great-circle distance when the pair is too far apart in
    latitude for the projection to be valid.
    """
    mid = GeoPoint((a.lat + b.lat) / 2.0, a.lon)
    if abs(a.lat - b.lat) / 2.0 >= MAX_PROJECTION_LAT_OFFSET:
        return haversine_m(a, b)
    proj = Projection(mid)
    return euclidean_m(project(a, proj), project(b, proj))


def unit_vectors(lat, lon):
    """Points on the unit sphere, used for chord-distance neighbour searches."""
    lat = np.radians(np.asarray(lat, dtype=float))
    lon = np.radians(np.asarray(lon, dtype=float))
    c = np.cos(lat)
    return np.stack([c * np.cos(lon), c * np.sin(lon), np.sin(lat)], axis=-1)


@dataclass(frozen=True)
class BoundingBox:
    min_lat: float
    max_lat: float
    min_lon: float
    max_lon: float

    def __post_init__(self):
        if self.min_lat > self.max_lat or self.min_lon > self.max_lon:
            raise InvalidInputError(f"inverted bounding box {self}")

    @property
    def center(self) -> GeoPoint:
        return GeoPoint((self.min_lat + self.max_lat) / 2.0, (self.min_lon + self.max_lon) / 2.0)

    def contains_array(self, lat, lon):
        lat = np.asarray(lat)
        lon = np.asarray(lon)
        return (lat >= self.min_lat) & (lat <= self.max_lat) & (lon >= self.min_lon) & (lon <= self.max_lon)


SINGAPORE_BOX = BoundingBox(1.15, 1.48, 103.59, 104.1)


def contains(b: BoundingBox, p: GeoPoint) -> bool:
    """Closed-box membership test."""
    return b.min_lat <= p.lat <= b.max_lat and b.min_lon <= p.lon <= b.max_lon


def _ring_array(ring) -> np.ndarray:
    """Ring as an ``(m, 2)`` array of ``(lon, lat)`` with the closing vertex dropped."""
    arr = np.array([(p.lon, p.lat) if isinstance(p, GeoPoint) else (p[0], p[1]) for p in ring], dtype=float)
    if len(arr) >= 2 and np.array_equal(arr[0], arr[-1]):
        arr = arr[:-1]
    return arr


def _crossings(ring: np.ndarray, x, y):
    """Even-odd ray casting towards +x with the half-open edge rule.

    An edge counts when exactly one endpoint lies strictly above the ray, and
    the crossing lies strictly to the right of the point. Points on an edge
    shared by two polygons are therefore counted in exactly one of them.
    """
    x = np.asarray(x, dtype=float)[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    xi, yi = ring[:, 0], ring[:, 1]
    xj, yj = np.roll(xi, 1), np.roll(yi, 1)
    straddles = (yi > y) != (yj > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = (xj - xi) * (y - yi) / (yj - yi) + xi
    hits = straddles & (x < x_cross)
    return (np.count_nonzero(hits, axis=-1) % 2) == 1


@dataclass(frozen=True)
class ZonePolygon:
    zone_id: str
    name: str
    exterior: tuple
    holes: tuple = ()
    _ext: np.ndarray = field(init=False, repr=False, compare=False)
    _holes: tuple = field(init=False, repr=False, compare=False)
    _bbox: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ext = _ring_array(self.exterior)
        if len(ext) < 3:
            raise InvalidInputError(f"zone {self.zone_id!r}: exterior ring has fewer than 3 vertices")
        holes = []
        for h in self.holes:
            ha = _ring_array(h)
            if len(ha) < 3:
                raise InvalidInputError(f"zone {self.zone_id!r}: hole ring has fewer than 3 vertices")
            holes.append(ha)
        object.__setattr__(self, "_ext", ext)
        object.__setattr__(self, "_holes", tuple(holes))
        object.__setattr__(
            self, "_bbox", (ext[:, 0].min(), ext[:, 0].max(), ext[:, 1].min(), ext[:, 1].max())
        )

    def contains_array(self, lat, lon):
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        x0, x1, y0, y1 = self._bbox
        inside = (lon >= x0) & (lon <= x1) & (lat >= y0) & (lat <= y1)
        if not np.any(inside):
            return inside
        inside = inside & _crossings(self._ext, lon, lat)
        for hole in self._holes:
            inside = inside & ~_crossings(hole, lon, lat)
        return inside


def point_in_polygon(z: ZonePolygon, p: GeoPoint) -> bool:
    return bool(z.contains_array(p.lat, p.lon))


class ZoneMap:
    """A set of polygonal zones. Several polygons may share a ``zone_id`` (MultiPolygon parts)."""

    def __init__(self, zones: Sequence[ZonePolygon], names: dict | None = None):
        self.zones = list(zones)
        ids = []
        for z in self.zones:
            if z.zone_id not in ids:
                ids.append(z.zone_id)
        self.zone_ids = ids
        self.names = names or {z.zone_id: z.name for z in self.zones}

    def __len__(self):
        return len(self.zone_ids)

    def assign(self, lat: float, lon: float) -> str | None:
        hits = sorted({z.zone_id for z in self.zones if z.contains_array(lat, lon)})
        if len(hits) > 1:
            logger.warning("point (%s, %s) lies in overlapping zones %s; using %r", lat, lon, hits, hits[0])
        return hits[0] if hits else None

    def assign_array(self, lat, lon) -> list:
        """Zone id (or None) for each point; overlaps resolved to the lexically lowest id."""
        lat = np.atleast_1d(np.asarray(lat, dtype=float))
        lon = np.atleast_1d(np.asarray(lon, dtype=float))
        out: list = [None] * len(lat)
        n_overlap = 0
        for zid in sorted(self.zone_ids):
            mask = np.zeros(len(lat), dtype=bool)
            for z in self.zones:
                if z.zone_id == zid:
                    mask |= z.contains_array(lat, lon)
            for i in np.flatnonzero(mask):
                if out[i] is None:
                    out[i] = zid
                elif out[i] != zid:
                    n_overlap += 1
        if n_overlap:
            logger.warning("%d point(s) fell in overlapping zones; lowest zone id kept", n_overlap)
        return out


def assign_zone(zm: ZoneMap, p: GeoPoint) -> str | None:
    return zm.assign(p.lat, p.lon)


def _rings_to_points(rings) -> tuple:
    return tuple(tuple(GeoPoint(float(c[1]), float(c[0])) for c in ring) for ring in rings)


def zonemap_from_geojson(doc: dict) -> ZoneMap:
    """Build a :class:`ZoneMap` from a GeoJSON FeatureCollection of (Multi)Polygons.

    Each feature needs a ``zone_id`` property (``name`` is optional). A zone id
    may appear in only one feature; MultiPolygon parts share their feature's id.
    """
    if doc.get("type") != "FeatureCollection":
        raise InvalidInputError("zone file must be a GeoJSON FeatureCollection")
    zones: list[ZonePolygon] = []
    seen: set[str] = set()
    for i, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        if "zone_id" not in props:
            raise InvalidInputError(f"feature {i} has no zone_id property")
        zid = str(props["zone_id"])
        if zid in seen:
            raise InvalidInputError(f"duplicate zone_id {zid!r}")
        seen.add(zid)
        name = str(props.get("name", zid))
        geom = feat.get("geometry") or {}
        if geom.get("type") == "Polygon":
            polys = [geom["coordinates"]]
        elif geom.get("type") == "MultiPolygon":
            polys = geom["coordinates"]
        else:
            raise InvalidInputError(f"zone {zid!r}: unsupported geometry {geom.get('type')!r}")
        for rings in polys:
            if not rings:
                raise InvalidInputError(f"zone {zid!r}: empty polygon")
            pts = _rings_to_points(rings)
            zones.append(ZonePolygon(zid, name, pts[0], pts[1:]))
    return ZoneMap(zones)


def load_zonemap(path: str | Path) -> ZoneMap:
    with open(path, encoding="utf-8") as fh:
        return zonemap_from_geojson(json.load(fh))


def zonemap_to_geojson(zm: ZoneMap) -> dict:
    """Inverse of :func:`zonemap_from_geojson` (rings are written closed)."""
    by_id: dict[str, list] = {}
    for z in zm.zones:
        rings = [z.exterior, *z.holes]
        coords = []
        for ring in rings:
            ring_c = [[p.lon, p.lat] for p in ring]
            if ring_c[0] != ring_c[-1]:
                ring_c.append(ring_c[0])
            coords.append(ring_c)
        by_id.setdefault(z.zone_id, []).append(coords)
    features = []
    for zid in zm.zone_ids:
        polys = by_id[zid]
        geom = {"type": "Polygon", "coordinates": polys[0]} if len(polys) == 1 else {
            "type": "MultiPolygon", "coordinates": polys}
        features.append({"type": "Feature", "properties": {"zone_id": zid, "name": zm.names.get(zid, zid)},
                         "geometry": geom})
    return {"type": "FeatureCollection", "features": features}


def square_zone(zone_id: str, lat0: float, lon0: float, size: float, name: str | None = None,
                holes: Iterable = ()) -> ZonePolygon:
    """Axis-aligned square zone with lower-left corner ``(lat0, lon0)``; handy for fixtures."""
    ext = (GeoPoint(lat0, lon0), GeoPoint(lat0 + size, lon0), GeoPoint(lat0 + size, lon0 + size),
           GeoPoint(lat0, lon0 + size))
    return ZonePolygon(zone_id, name or zone_id, ext, tuple(holes))
