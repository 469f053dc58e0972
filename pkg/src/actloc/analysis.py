"""Downstream analytics over detected activity locations.

Cluster-count distributions, pairwise separation distances, two-sample
comparisons (KS, Pearson), transition extraction, origin-destination matrices,
zone shares and regional breakdowns.

Most functions take *cluster sets*: a mapping from user id to that user's
clusters, where each cluster is either a :class:`~actloc.geo.GeoPoint` or an
object with a ``location`` attribute holding one.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import special, stats

from .errors import InvalidInputError, UndefinedStatisticError
from .geo import GeoPoint, ZoneMap, local_distance_m

logger = logging.getLogger(__name__)

DEFAULT_DISTANCE_EDGES = tuple([0.0] + [1000.0 * k for k in range(1, 16)] + [math.inf])
SECONDS_PER_DAY = 86_400


def _point(c) -> GeoPoint:
    return c if isinstance(c, GeoPoint) else c.location


# -- counts and distances -----------------------------------------------------------------

def cluster_count_distribution(cluster_sets: Mapping[str, Sequence]) -> dict[int, float]:
    """Fraction of users by number of clusters, keyed by cluster count (ascending)."""
    if not cluster_sets:
        raise InvalidInputError("need at least one user")
    c = Counter(len(v) for v in cluster_sets.values())
    n = len(cluster_sets)
    return {k: c[k] / n for k in sorted(c)}


@dataclass(frozen=True)
class DistanceSample:
    user_id: str
    meters: float


def _dedup_points(points: Sequence[GeoPoint], min_sep_m: float) -> list[GeoPoint]:
    kept: list[GeoPoint] = []
    for p in points:
        if all(local_distance_m(p, q) >= min_sep_m for q in kept):
            kept.append(p)
    return kept


def pairwise_distances(cluster_sets: Mapping[str, Sequence], dedup_m: float = 1.0) -> list[DistanceSample]:
    """All unordered pair distances between each user's cluster locations.

    Locations closer than ``dedup_m`` are merged first. Users (ordered by id)
    with fewer than two locations contribute nothing.
    """
    out = []
    for uid in sorted(cluster_sets):
        pts = [_point(c) for c in cluster_sets[uid]]
        if dedup_m > 0:
            pts = _dedup_points(pts, dedup_m)
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                out.append(DistanceSample(uid, local_distance_m(pts[i], pts[j])))
    return out


@dataclass
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    total: int

    @classmethod
    def from_values(cls, values, edges=DEFAULT_DISTANCE_EDGES) -> "Histogram":
        """Histogram over half-open bins ``[lo, hi)``; values outside all bins are ignored."""
        edges = np.asarray(edges, dtype=float)
        if np.any(np.diff(edges) <= 0):
            raise InvalidInputError("bin edges must be strictly ascending")
        v = np.asarray(values, dtype=float)
        idx = np.searchsorted(edges, v, side="right") - 1
        ok = (idx >= 0) & (idx < len(edges) - 1)
        counts = np.bincount(idx[ok], minlength=len(edges) - 1)
        return cls(edges, counts, int(counts.sum()))


# -- two-sample statistics ---------------------------------------------------------------

def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.

    ``D = sup |F_a - F_b|`` is exact. The p-value uses the limiting Kolmogorov
    distribution at ``sqrt(n_a n_b / (n_a + n_b)) * D``.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if len(a) == 0 or len(b) == 0:
        raise InvalidInputError("KS test needs two non-empty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    d = float(np.max(np.abs(fa - fb)))
    en = len(a) * len(b) / (len(a) + len(b))
    p = float(special.kolmogorov(math.sqrt(en) * d))
    return d, min(1.0, max(0.0, p))


def pearson(x, y) -> tuple[float, float]:
    """Product-moment correlation with a two-sided Student-t p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError("pearson needs two 1-D vectors of equal length")
    n = len(x)
    if n < 3:
        raise InvalidInputError("pearson needs at least 3 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise UndefinedStatisticError("correlation undefined for a constant vector")
    r = float(dx @ dy) / (sx * sy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1 - r * r))
    return r, float(2 * stats.t.sf(abs(t), n - 2))


@dataclass
class ComparisonReport:
    pearson_r: float | None = None
    pearson_p: float | None = None
    ks_d: float | None = None
    ks_p: float | None = None
    n_a: int = 0
    n_b: int = 0

    def rows(self) -> list[tuple[str, object]]:
        return [(k, v) for k, v in (("pearson_r", self.pearson_r), ("pearson_p", self.pearson_p),
                                    ("ks_d", self.ks_d), ("ks_p", self.ks_p),
                                    ("n_a", self.n_a), ("n_b", self.n_b)) if v is not None]


def compare_samples(a, b) -> ComparisonReport:
    d, p = ks_two_sample(a, b)
    return ComparisonReport(ks_d=d, ks_p=p, n_a=len(a), n_b=len(b))


# -- transitions -------------------------------------------------------------------------

def label_events(n_events: int, clusters: Sequence) -> np.ndarray:
    """Cluster index per event (position in ``clusters``), ``-1`` for unassigned events."""
    labels = np.full(n_events, -1, dtype=np.int64)
    for j, c in enumerate(clusters):
        labels[np.asarray(c.members, dtype=np.int64)] = j
    return labels


def weekday_mask(timestamps, tz_offset_min: int = 480) -> np.ndarray:
    """True for events falling Monday to Friday in local time (fixed UTC offset)."""
    local = np.asarray(timestamps, dtype=float) + tz_offset_min * 60
    days = np.floor(local / SECONDS_PER_DAY).astype(np.int64)
    # 1970-01-01 was a Thursday (weekday 3 with Monday = 0)
    return (days + 3) % 7 < 5


def extract_transitions(labels: Iterable) -> set[tuple[int, int]]:
    """Directed pairs of distinct clusters visited by consecutive labelled events.

    Unlabelled events (``None`` or negative) are skipped; each pair is kept once.
    """
    out = set()
    prev = None
    for lab in labels:
        if lab is None or lab < 0:
            continue
        lab = int(lab)
        if prev is not None and lab != prev:
            out.add((prev, lab))
        prev = lab
    return out


@dataclass
class ODMatrix:
    zone_ids: list
    counts: np.ndarray
    directed: bool = True
    n_dropped: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.zone_ids)
        if self.counts.shape != (n, n):
            raise InvalidInputError("OD counts shape does not match zone list")
        if len(set(self.zone_ids)) != n:
            raise InvalidInputError("duplicate zone id in OD matrix")

    @classmethod
    def empty(cls, zone_ids, directed=True) -> "ODMatrix":
        return cls(list(zone_ids), np.zeros((len(zone_ids), len(zone_ids)), dtype=np.int64), directed)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def index(self) -> dict:
        return {z: i for i, z in enumerate(self.zone_ids)}

    def merge(self, other: "ODMatrix") -> "ODMatrix":
        if self.zone_ids != other.zone_ids or self.directed != other.directed:
            raise InvalidInputError("cannot merge OD matrices over different zones")
        return ODMatrix(self.zone_ids, self.counts + other.counts, self.directed,
                        self.n_dropped + other.n_dropped)

    def off_diagonal_cells(self) -> list[tuple]:
        n = len(self.zone_ids)
        if self.directed:
            return [(i, j) for i in range(n) for j in range(n) if i != j]
        return [(i, j) for i in range(n) for j in range(i + 1, n)]

    def rows(self) -> list[tuple]:
        """Non-zero cells as ``(from_zone, to_zone, count, share)``."""
        tot = self.total
        out = []
        for i, zi in enumerate(self.zone_ids):
            for j, zj in enumerate(self.zone_ids):
                c = int(self.counts[i, j])
                if c:
                    out.append((zi, zj, c, c / tot))
        return out

    @classmethod
    def from_rows(cls, rows: Iterable[tuple], zone_ids: Sequence, directed: bool = True) -> "ODMatrix":
        """Matrix from ``(from_zone, to_zone, count)`` rows; unknown zones raise."""
        m = cls.empty(zone_ids, directed)
        idx = m.index()
        unknown = set()
        for a, b, c in rows:
            if a not in idx or b not in idx:
                unknown.update(z for z in (a, b) if z not in idx)
                continue
            i, j = idx[a], idx[b]
            if not directed and i > j:
                i, j = j, i
            m.counts[i, j] += int(c)
        if unknown:
            raise InvalidInputError(f"zones not in zone map: {sorted(unknown)}")
        return m


def user_zone_pairs(transitions: Iterable[tuple[int, int]], cluster_zones: Sequence,
                    exclude_intra: bool = True, directed: bool = True) -> tuple[set, int]:
    """Distinct zone pairs for one user plus the number of transitions dropped (unzoned end)."""
    pairs = set()
    dropped = 0
    for a, b in transitions:
        za, zb = cluster_zones[a], cluster_zones[b]
        if za is None or zb is None:
            dropped += 1
            continue
        if exclude_intra and za == zb:
            continue
        if not directed and zb < za:
            za, zb = zb, za
        pairs.add((za, zb))
    return pairs, dropped


def aggregate_od(per_user_transitions: Mapping[str, Iterable[tuple[int, int]]],
                 cluster_locations: Mapping[str, Sequence], zm: ZoneMap,
                 exclude_intra: bool = True, directed: bool = True) -> ODMatrix:
    """Zone-to-zone matrix counting each distinct zone pair once per user."""
    if zm is None or len(zm) == 0:
        raise InvalidInputError("zone map is empty")
    m = ODMatrix.empty(zm.zone_ids, directed)
    idx = m.index()
    for uid in sorted(per_user_transitions):
        locs = [_point(c) for c in cluster_locations.get(uid, ())]
        zones = zm.assign_array([p.lat for p in locs], [p.lon for p in locs]) if locs else []
        pairs, dropped = user_zone_pairs(per_user_transitions[uid], zones, exclude_intra, directed)
        m.n_dropped += dropped
        for za, zb in pairs:
            m.counts[idx[za], idx[zb]] += 1
    if exclude_intra:
        np.fill_diagonal(m.counts, 0)
    return m


def compare_od(test: ODMatrix, ref: ODMatrix) -> tuple[ComparisonReport, list[tuple]]:
    """Correlate per-pair shares of two OD matrices over the same zones.

    Returns the report and a table ``(pair, share_ref, share_test, rank)``
    ordered by the reference share (descending), for ranked-share plots.
    """
    if set(test.zone_ids) != set(ref.zone_ids):
        only_t = sorted(set(test.zone_ids) - set(ref.zone_ids))
        only_r = sorted(set(ref.zone_ids) - set(test.zone_ids))
        raise InvalidInputError(f"zone sets differ: only in test {only_t}, only in reference {only_r}")
    if test.directed != ref.directed:
        raise InvalidInputError("cannot compare directed with undirected matrices")
    ridx = ref.index()
    cells = test.off_diagonal_cells()
    pairs = [(test.zone_ids[i], test.zone_ids[j]) for i, j in cells]

    def ref_cell(a, b):
        i, j = ridx[a], ridx[b]
        if not ref.directed and i > j:
            i, j = j, i
        return ref.counts[i, j]

    t_vals = np.array([test.counts[i, j] for i, j in cells], dtype=float)
    r_vals = np.array([ref_cell(a, b) for a, b in pairs], dtype=float)
    t_share = t_vals / t_vals.sum() if t_vals.sum() else t_vals
    r_share = r_vals / r_vals.sum() if r_vals.sum() else r_vals
    r, p = pearson(t_share, r_share)
    order = sorted(range(len(pairs)), key=lambda k: (-r_share[k], pairs[k]))
    table = [(f"{pairs[k][0]}-{pairs[k][1]}", float(r_share[k]), float(t_share[k]), rank)
             for rank, k in enumerate(order, start=1)]
    return ComparisonReport(pearson_r=r, pearson_p=p, n_a=int(t_vals.sum()), n_b=int(r_vals.sum())), table


# -- zones and regions -------------------------------------------------------------------

def _user_zone_sets(cluster_sets: Mapping[str, Sequence], zm: ZoneMap) -> dict[str, set]:
    out = {}
    for uid in sorted(cluster_sets):
        locs = [_point(c) for c in cluster_sets[uid]]
        zones = zm.assign_array([p.lat for p in locs], [p.lon for p in locs]) if locs else []
        out[uid] = {z for z in zones if z is not None}
    return out


def zone_user_counts(cluster_sets: Mapping[str, Sequence], zm: ZoneMap) -> dict[str, int]:
    counts = dict.fromkeys(zm.zone_ids, 0)
    for zones in _user_zone_sets(cluster_sets, zm).values():
        for z in zones:
            counts[z] += 1
    return counts


def zone_share(cluster_sets: Mapping[str, Sequence], zm: ZoneMap) -> dict[str, float]:
    """Fraction of all users with at least one cluster in each zone."""
    n = len(cluster_sets)
    counts = zone_user_counts(cluster_sets, zm)
    return {z: (c / n if n else 0.0) for z, c in counts.items()}


@dataclass
class RegionBreakdown:
    home: str
    region_ids: list
    combinations: dict = field(default_factory=dict)
    only: dict = field(default_factory=dict)
    with_home: dict = field(default_factory=dict)
    unclassified: int = 0

    def rows(self) -> list[tuple]:
        """``(region, only_region, region_and_home)``; the home row counts home-only users."""
        out = []
        for r in self.region_ids:
            out.append((r, self.only.get(r, 0), "" if r == self.home else self.with_home.get(r, 0)))
        out.append(("unclassified", self.unclassified, ""))
        return out


def breakdown_by_region(cluster_sets: Mapping[str, Sequence], regions: ZoneMap, home: str) -> RegionBreakdown:
    """Classify users by the set of regions their clusters fall in.

    ``only[r]`` counts users whose clusters lie in region ``r`` alone;
    ``with_home[r]`` counts users with clusters both in ``home`` and in ``r``.
    """
    if home not in regions.zone_ids:
        raise InvalidInputError(f"home region {home!r} not among regions {regions.zone_ids}")
    out = RegionBreakdown(home, list(regions.zone_ids))
    for uid, zs in _user_zone_sets(cluster_sets, regions).items():
        if not zs:
            out.unclassified += 1
            continue
        key = "+".join(sorted(zs))
        out.combinations[key] = out.combinations.get(key, 0) + 1
        if len(zs) == 1:
            (r,) = zs
            out.only[r] = out.only.get(r, 0) + 1
        elif home in zs:
            for r in zs - {home}:
                out.with_home[r] = out.with_home.get(r, 0) + 1
    return out
