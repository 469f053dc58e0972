"""Fixed-bandwidth Gaussian KDE clustering of a user's events.

The density is evaluated on a regular grid, every strict local maximum of the
grid is a candidate activity location, each event joins its nearest peak, and
a peak's strength is its density relative to the sum over all of the user's
peaks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import GridTooLargeError, InvalidInputError
from .geo import EARTH_RADIUS_M, GeoPoint, ProjectedPoint, Projection, unit_vectors

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class KdeConfig:
    """KDE parameters; distances in meters, radii in multiples of the bandwidth."""

    bandwidth_h: float = 200.0
    cell_size: float = 25.0
    truncation_radius: float = 4.0
    contribution_threshold: float = 0.10
    membership_radius: float | None = None
    max_cells: int = 40_000_000
    min_level: float = 1e-12

    def __post_init__(self):
        if not self.bandwidth_h > 0:
            raise InvalidInputError("bandwidth_h must be positive")
        if not 0 < self.cell_size <= self.bandwidth_h / 4:
            raise InvalidInputError("cell_size must be in (0, bandwidth_h / 4]")
        if not self.truncation_radius > 0:
            raise InvalidInputError("truncation_radius must be positive")
        if not 0 <= self.contribution_threshold < 1:
            raise InvalidInputError("contribution_threshold must be in [0, 1)")
        m = self.membership_radius
        if m is not None and not 0 < m <= self.truncation_radius:
            raise InvalidInputError("membership_radius must be in (0, truncation_radius]")

    @property
    def cutoff_m(self) -> float:
        return self.truncation_radius * self.bandwidth_h

    @property
    def membership_m(self) -> float:
        m = self.truncation_radius if self.membership_radius is None else self.membership_radius
        return m * self.bandwidth_h


@dataclass
class KdeGrid:
    """Density on cell centres ``origin + (col, row) * cell_size``; ``density[row, col]``."""

    origin: ProjectedPoint
    cell_size: float
    n_cols: int
    n_rows: int
    density: np.ndarray

    def cell_center(self, row, col):
        return (self.origin[0] + np.asarray(col) * self.cell_size,
                self.origin[1] + np.asarray(row) * self.cell_size)

    def mass(self) -> float:
        return float(self.density.sum() * self.cell_size ** 2)

    def value_at(self, x: float, y: float) -> float:
        """Density of the cell containing ``(x, y)``, zero outside the grid."""
        col = int(round((x - self.origin[0]) / self.cell_size))
        row = int(round((y - self.origin[1]) / self.cell_size))
        if 0 <= row < self.n_rows and 0 <= col < self.n_cols:
            return float(self.density[row, col])
        return 0.0


@dataclass
class KdeCluster:
    peak: ProjectedPoint
    level: float
    contribution: float
    members: np.ndarray
    location: GeoPoint | None = None

    @property
    def n_members(self) -> int:
        return len(self.members)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("non-finite point")
    return pts


def evaluate_kde(points, cfg: KdeConfig = KdeConfig(), n_total: int | None = None,
                 batch: int = 256) -> KdeGrid:
    """Truncated Gaussian KDE on a grid aligned to multiples of ``cfg.cell_size``.

    ``n_total`` overrides the normaliser, so that a subset of a user's points
    (one spatial block) yields the same densities as the full set would there.
    """
    pts = _as_points(points)
    n = len(pts)
    if n < 1:
        raise InvalidInputError("evaluate_kde needs at least one point")
    n_total = n if n_total is None else n_total
    h, cell, cut = cfg.bandwidth_h, cfg.cell_size, cfg.cutoff_m
    half = int(math.ceil(cut / cell)) + 1
    lo = np.floor((pts.min(axis=0) - cut) / cell).astype(np.int64) - 2
    hi = np.ceil((pts.max(axis=0) + cut) / cell).astype(np.int64) + 2
    n_cols, n_rows = (hi - lo + 1).tolist()
    if n_cols * n_rows > cfg.max_cells:
        raise GridTooLargeError(
            f"KDE grid of {n_cols}x{n_rows} cells exceeds max_cells={cfg.max_cells}; "
            "use a larger cell_size")
    origin = ProjectedPoint(float(lo[0] * cell), float(lo[1] * cell))
    off = np.arange(-half, half + 1)
    ox, oy = np.meshgrid(off, off)
    # cells whose centre can fall inside the cutoff for some sub-cell offset
    reach = (np.hypot(ox, oy) - math.sqrt(0.5)) * cell <= cut
    ox, oy = ox[reach], oy[reach]
    off_flat = oy * n_cols + ox
    oxm, oym = ox * cell, oy * cell
    flat = np.zeros(n_cols * n_rows)
    rel = (pts - np.asarray(origin)) / cell
    base = np.rint(rel).astype(np.int64)
    frac_m = (rel - base) * cell
    base_flat = base[:, 1] * n_cols + base[:, 0]
    # keep each batch's stencil block to a few million weights
    batch = max(1, min(batch, 4_000_000 // len(off_flat)))
    for s in range(0, n, batch):
        dx = oxm - frac_m[s:s + batch, 0:1]
        d2 = np.square(dx, out=dx)
        dy = oym - frac_m[s:s + batch, 1:2]
        d2 += np.square(dy, out=dy)
        w = np.exp(d2 * (-0.5 / (h * h)))
        w[d2 > cut * cut] = 0.0
        flat += np.bincount((base_flat[s:s + batch, None] + off_flat).ravel(), weights=w.ravel(),
                            minlength=flat.size)
    flat *= 1.0 / (n_total * 2 * math.pi * h * h)
    return KdeGrid(origin, cell, n_cols, n_rows, flat.reshape(n_rows, n_cols))


def find_peaks(grid: KdeGrid, min_level: float = 1e-12) -> list[tuple[ProjectedPoint, float]]:
    """Strict local maxima of the grid over the 8-neighbourhood, highest first.

    A plateau of equal cells counts once, at its centroid, provided no cell
    bordering the plateau is higher.
    """
    d = grid.density
    if d.size == 0:
        return []
    mx = ndimage.maximum_filter(d, size=3, mode="constant", cval=-np.inf)
    cand = (d >= mx) & (d >= min_level) & (d > 0)
    if not cand.any():
        return []
    labels, n_lab = ndimage.label(cand, structure=_EIGHT)
    peaks = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        rows, cols = sl
        if rows.stop - rows.start == 1 and cols.stop - cols.start == 1:
            r, c = rows.start, cols.start
            win = d[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2]
            v = d[r, c]
            if np.count_nonzero(win == v) > 1:
                continue
            x, y = grid.cell_center(r, c)
            peaks.append((ProjectedPoint(float(x), float(y)), float(v)))
            continue
        r0, r1 = max(rows.start - 1, 0), min(rows.stop + 1, d.shape[0])
        c0, c1 = max(cols.start - 1, 0), min(cols.stop + 1, d.shape[1])
        comp = labels[r0:r1, c0:c1] == i
        rr, cc = np.nonzero(comp)
        v = d[r0 + rr[0], c0 + cc[0]]
        ring = ndimage.binary_dilation(comp, structure=_EIGHT) & ~comp
        if np.any(d[r0:r1, c0:c1][ring] == v):
            continue
        x, y = grid.cell_center(r0 + rr.mean(), c0 + cc.mean())
        peaks.append((ProjectedPoint(float(x), float(y)), float(v)))
    peaks.sort(key=lambda p: (-p[1], p[0][0], p[0][1]))
    return peaks


def _nearest_peak(pts, peaks, radius):
    """Index of the nearest peak for each point, ``-1`` beyond ``radius``.

    ``peaks`` must be sorted by (level desc, x, y) so that argmin resolves
    equal distances to the higher, then lexicographically smaller, peak.
    """
    if not peaks or len(pts) == 0:
        return np.full(len(pts), -1, dtype=np.int64), np.zeros(len(pts), dtype=np.int64)
    pk = np.array([p[0] for p in peaks], dtype=float)
    idx = np.empty(len(pts), dtype=np.int64)
    n_within = np.empty(len(pts), dtype=np.int64)
    for s in range(0, len(pts), 1024):
        d2 = ((pts[s:s + 1024, None, :] - pk[None, :, :]) ** 2).sum(axis=-1)
        near = d2.argmin(axis=1)
        within = d2 <= radius * radius
        idx[s:s + 1024] = np.where(within[np.arange(len(near)), near], near, -1)
        n_within[s:s + 1024] = within.sum(axis=1)
    return idx, n_within


def assign_events(points, peaks, cfg: KdeConfig = KdeConfig()) -> list[KdeCluster]:
    """Attach every point to its nearest peak within the membership radius.

    One cluster is emitted per peak (possibly with no members), with
    ``contribution = level / sum(levels)``. Points near no peak stay unassigned.
    """
    pts = _as_points(points)
    if not peaks:
        return []
    peaks = sorted(peaks, key=lambda p: (-p[1], p[0][0], p[0][1]))
    idx, _ = _nearest_peak(pts, peaks, cfg.membership_m)
    total = sum(p[1] for p in peaks)
    return [KdeCluster(ProjectedPoint(*map(float, pk)), lvl, lvl / total, np.flatnonzero(idx == j))
            for j, (pk, lvl) in enumerate(peaks)]


def overlap_rate(points, peaks, cfg: KdeConfig = KdeConfig()) -> float:
    """Fraction of points lying within the membership radius of two or more peaks."""
    pts = _as_points(points)
    if len(pts) == 0:
        return 0.0
    _, n_within = _nearest_peak(pts, list(peaks), cfg.membership_m)
    return float(np.count_nonzero(n_within >= 2) / len(pts))


def filter_by_contribution(clusters, theta: float):
    """Drop clusters contributing less than ``theta``; survivors are not renormalised."""
    return [c for c in clusters if c.contribution >= theta]


def _components(neighbour_pairs: np.ndarray, n: int) -> list[np.ndarray]:
    if n == 1:
        return [np.array([0])]
    if len(neighbour_pairs):
        g = coo_matrix((np.ones(len(neighbour_pairs)), (neighbour_pairs[:, 0], neighbour_pairs[:, 1])),
                       shape=(n, n))
    else:
        g = coo_matrix((n, n))
    _, lab = connected_components(g, directed=False)
    groups: dict[int, list] = {}
    for i, c in enumerate(lab):
        groups.setdefault(int(c), []).append(i)
    return [np.array(v) for v in sorted(groups.values(), key=lambda v: v[0])]


def spatial_blocks(lat, lon, cfg: KdeConfig = KdeConfig()) -> list[np.ndarray]:
    """Split points into groups whose kernels cannot interact on the grid.

    Points closer than twice the cutoff (plus a few cells) are chained into
    the same block; densities, peaks and memberships computed per block equal
    those of one grid over all points.
    """
    link = 2 * cfg.cutoff_m + 3 * cfg.cell_size
    xyz = unit_vectors(lat, lon)
    pairs = cKDTree(xyz).query_pairs(1.01 * link / EARTH_RADIUS_M, output_type="ndarray")
    return _components(pairs, len(xyz))


def _planar_blocks(pts, cfg):
    link = 2 * cfg.cutoff_m + 3 * cfg.cell_size
    pairs = cKDTree(pts).query_pairs(link, output_type="ndarray")
    return _components(pairs, len(pts))


def detect_kde(lat, lon, cfg: KdeConfig = KdeConfig(), proj: Projection | None = None) -> list[KdeCluster]:
    """Unfiltered KDE clusters for one user's coordinates.

    With ``proj`` every point is projected with it. Otherwise each spatial block
    gets its own projection centred on the block, which lets traces span
    countries without leaving the projection's valid range.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    n = len(lat)
    if n < 1:
        raise InvalidInputError("a trace needs at least one event")
    if proj is not None:
        xy = proj.forward(lat, lon)
        blocks = [(b, proj, xy[b]) for b in _planar_blocks(xy, cfg)]
    else:
        blocks = []
        for b in spatial_blocks(lat, lon, cfg):
            centre = GeoPoint((lat[b].min() + lat[b].max()) / 2, (lon[b].min() + lon[b].max()) / 2)
            p = Projection(centre)
            blocks.append((b, p, p.forward(lat[b], lon[b])))
    found = []
    for b, p, xy in blocks:
        grid = evaluate_kde(xy, cfg, n_total=n)
        peaks = find_peaks(grid, cfg.min_level)
        idx, _ = _nearest_peak(xy, peaks, cfg.membership_m)
        for j, (pk, lvl) in enumerate(peaks):
            found.append((lvl, pk, b[idx == j], p))
    if not found:
        return []
    found.sort(key=lambda f: (-f[0], f[1][0], f[1][1]))
    total = sum(f[0] for f in found)
    out = []
    for lvl, pk, members, p in found:
        la, lo = p.inverse([pk[0], pk[1]])
        out.append(KdeCluster(pk, lvl, lvl / total, np.sort(members), GeoPoint(float(la), float(lo))))
    return out


def cluster_user_kde(trace, proj: Projection | None = None, cfg: KdeConfig = KdeConfig()) -> list[KdeCluster]:
    """Project, estimate, find peaks, assign events and apply the contribution threshold."""
    return filter_by_contribution(detect_kde(trace.lat, trace.lon, cfg, proj), cfg.contribution_threshold)


def write_grid(grid: KdeGrid, path: str | Path) -> None:
    """Dump a grid as ``<path>.bin`` (float64, row-major) plus a ``<path>.hdr`` text header."""
    path = Path(path)
    grid.density.astype("<f8").tofile(path.with_suffix(".bin"))
    path.with_suffix(".hdr").write_text(
        f"origin_x {grid.origin[0]!r}\norigin_y {grid.origin[1]!r}\ncell_size {grid.cell_size!r}\n"
        f"n_cols {grid.n_cols}\nn_rows {grid.n_rows}\ndtype <f8\n", encoding="utf-8")


def read_grid(path: str | Path) -> KdeGrid:
    path = Path(path)
    hdr = dict(line.split(None, 1) for line in path.with_suffix(".hdr").read_text().splitlines() if line)
    n_cols, n_rows = int(hdr["n_cols"]), int(hdr["n_rows"])
    dens = np.fromfile(path.with_suffix(".bin"), dtype=hdr["dtype"].strip()).reshape(n_rows, n_cols)
    return KdeGrid(ProjectedPoint(float(hdr["origin_x"]), float(hdr["origin_y"])),
                   float(hdr["cell_size"]), n_cols, n_rows, dens)
