"""Per-user recursive k-means with silhouette-selected k and a dispersion cap.

A user's events are clustered with Lloyd's algorithm for every k in a range;
the k with the highest mean silhouette wins. Any resulting cluster whose
spread exceeds the cap is bisected with k=2, recursively, until every cluster
is tight enough or a singleton.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, UndefinedStatisticError
from .geo import GeoPoint, ProjectedPoint

DEFAULT_MAX_K = 10


@dataclass
class KMeansCluster:
    centroid: ProjectedPoint
    members: np.ndarray
    size: int
    dispersion_m: float
    location: GeoPoint | None = None

    @property
    def mean_sq_dist(self) -> float:
        return self.dispersion_m ** 2


@dataclass
class KMeansResult:
    clusters: list
    k_selected: int
    mean_silhouette: float | None
    labels: np.ndarray
    objective_history: list = field(default_factory=list)
    n_iter: int = 0
    flagged: bool = False

    @property
    def objective(self) -> float:
        return self.objective_history[-1] if self.objective_history else 0.0


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("non-finite point")
    return pts


def _sq_dists(pts, centers):
    return ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)


def _plus_plus_init(pts, k, rng):
    n = len(pts)
    centers = np.empty((k, 2))
    centers[0] = pts[rng.integers(n)]
    d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[j] = pts[idx]
        d2 = np.minimum(d2, ((pts - centers[j]) ** 2).sum(axis=1))
    return centers


def _build_clusters(pts, labels, k):
    clusters = []
    for j in range(k):
        members = np.flatnonzero(labels == j)
        if len(members) == 0:
            continue
        c = pts[members].mean(axis=0)
        disp = float(np.sqrt(((pts[members] - c) ** 2).sum(axis=1).mean()))
        clusters.append(KMeansCluster(ProjectedPoint(float(c[0]), float(c[1])), members, len(members), disp))
    return clusters


def _compact_labels(labels):
    """Renumber the used label ids consecutively in ascending order (cluster list order)."""
    _, inv = np.unique(labels, return_inverse=True)
    return inv


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100, refine: bool = True) -> KMeansResult:
    """Lloyd's algorithm from a seeded k-means++ start.

    With ``refine`` the Lloyd fixed point is polished by Hartigan single-point
    transfers, which escape many of the poor local optima Lloyd stops in.

    Empty clusters are repaired by moving their centre to the point farthest
    from its own centre. If all points coincide with centres the remaining empty
    clusters are dropped, so ``len(result.clusters)`` may be below ``k``.
    """
    pts = _as_points(points)
    n = len(pts)
    if n < 1:
        raise InvalidInputError("kmeans needs at least one point")
    if not 1 <= k <= n:
        raise InvalidInputError(f"k={k} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    centers = _plus_plus_init(pts, k, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(pts, centers)
        new = d2.argmin(axis=1)
        counts = np.bincount(new, minlength=k)
        for j in np.flatnonzero(counts == 0):
            own = d2[np.arange(n), new]
            # protect points that are the only member of their cluster
            own = np.where(np.bincount(new, minlength=k)[new] > 1, own, -1.0)
            far = int(own.argmax())
            if own[far] <= 0:
                break
            centers[j] = pts[far]
            new[far] = j
            d2[far, j] = 0.0
        for j in range(k):
            m = new == j
            if m.any():
                centers[j] = pts[m].mean(axis=0)
        history.append(float(((pts - centers[new]) ** 2).sum()))
        if labels is not None and np.array_equal(new, labels):
            labels = new
            break
        labels = new
    if refine:
        labels = _hartigan_refine(pts, labels, k, history)
    clusters = _build_clusters(pts, labels, k)
    return KMeansResult(clusters, k, None, _compact_labels(labels), history, it)


def _hartigan_refine(pts, labels, k, history, max_moves=None):
    """Single-point transfers that lower the objective, best move first.

    A Lloyd fixed point can still admit a move that pays off once the change in
    both centroids is accounted for: moving ``i`` from ``a`` to ``b`` changes the
    objective by ``n_b/(n_b+1)*|x-c_b|^2 - n_a/(n_a-1)*|x-c_a|^2``.
    """
    labels = labels.copy()
    sizes = np.bincount(labels, minlength=k).astype(float)
    sums = np.zeros((k, 2))
    np.add.at(sums, labels, pts)
    idx = np.arange(len(pts))
    max_moves = 10 * len(pts) if max_moves is None else max_moves
    for _ in range(max_moves):
        live = sizes > 0
        centers = np.where(live[:, None], sums / np.maximum(sizes, 1)[:, None], 0.0)
        d2 = _sq_dists(pts, centers)
        na = sizes[labels]
        with np.errstate(divide="ignore", invalid="ignore"):
            remove = np.where(na > 1, na / (na - 1) * d2[idx, labels], -np.inf)
        add = sizes / (sizes + 1) * d2
        add[:, ~live] = np.inf
        add[idx, labels] = np.inf
        best_b = add.argmin(axis=1)
        gain = remove - add[idx, best_b]
        i = int(gain.argmax())
        if not gain[i] > 1e-12 * max(1.0, history[-1] if history else 1.0):
            break
        a, b = labels[i], best_b[i]
        labels[i] = b
        sizes[a] -= 1
        sizes[b] += 1
        sums[a] -= pts[i]
        sums[b] += pts[i]
        history.append(float(history[-1] - gain[i]) if history else float(-gain[i]))
    if history:
        centers = np.stack([pts[labels == j].mean(axis=0) if sizes[j] else np.zeros(2) for j in range(k)])
        history[-1] = float(((pts - centers[labels]) ** 2).sum())
    return labels


def _onehot(labels):
    _, lab = np.unique(np.asarray(labels), return_inverse=True)
    onehot = np.zeros((len(lab), lab.max() + 1))
    onehot[np.arange(len(lab)), lab] = 1.0
    return lab, onehot


def _silhouette_from_sums(sums, lab, sizes) -> np.ndarray:
    # sums[i, c] = total distance from point i to members of cluster c
    rows = np.arange(len(lab))
    own = sizes[lab]
    a = np.where(own > 1, sums[rows, lab] / np.maximum(own - 1, 1), 0.0)
    means = sums / sizes
    means[rows, lab] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    return np.where(own > 1, s, 0.0)


def _silhouette_from_dist(dist, labels) -> np.ndarray:
    lab, onehot = _onehot(labels)
    return _silhouette_from_sums(dist @ onehot, lab, onehot.sum(axis=0))


def silhouette_samples(points, assignment, chunk: int = 2048) -> np.ndarray:
    """Per-point silhouette; singleton members score 0 and 0/0 is taken as 0."""
    pts = _as_points(points)
    labels = np.asarray(assignment)
    if len(labels) != len(pts):
        raise InvalidInputError("assignment length differs from number of points")
    if len(np.unique(labels)) < 2:
        raise UndefinedStatisticError("silhouette needs at least two clusters")
    lab, onehot = _onehot(labels)
    sums = np.empty_like(onehot)
    for lo in range(0, len(pts), chunk):
        sums[lo:lo + chunk] = np.sqrt(_sq_dists(pts[lo:lo + chunk], pts)) @ onehot
    return _silhouette_from_sums(sums, lab, onehot.sum(axis=0))


def silhouette_mean(points, assignment) -> float:
    """Mean silhouette of a partition; raises if there are fewer than two clusters."""
    return float(silhouette_samples(points, assignment).mean())


def _single_cluster(pts, flagged=True) -> KMeansResult:
    labels = np.zeros(len(pts), dtype=int)
    clusters = _build_clusters(pts, labels, 1)
    obj = float(((pts - pts.mean(axis=0)) ** 2).sum())
    return KMeansResult(clusters, 1, None, labels, [obj], 0, flagged)


def select_k(points, k_range: tuple | None = None, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """Run k-means for each k in ``k_range`` (inclusive) and keep the best mean silhouette.

    Ties go to the smaller k. With fewer than three points, or when no k yields
    two non-empty clusters, a flagged single-cluster result is returned.
    """
    pts = _as_points(points)
    n = len(pts)
    if n < 3:
        return _single_cluster(pts)
    if k_range is None:
        k_range = (2, min(DEFAULT_MAX_K, n - 1))
    lo, hi = k_range
    if lo < 2 or hi > n - 1 or lo > hi:
        raise InvalidInputError(f"k_range {k_range} not within [2, {n - 1}]")
    dist = np.sqrt(_sq_dists(pts, pts)) if n <= 2000 else None
    best = None
    for k in range(lo, hi + 1):
        res = kmeans(pts, k, seed=seed, max_iter=max_iter)
        if len(res.clusters) < 2:
            continue
        if dist is not None:
            score = float(_silhouette_from_dist(dist, res.labels).mean())
        else:
            score = silhouette_mean(pts, res.labels)
        res.mean_silhouette = score
        if best is None or score > best.mean_silhouette:
            best = res
    if best is None:
        return _single_cluster(pts)
    return best


def _exceeds(cluster: KMeansCluster, threshold: float, unit: str) -> bool:
    if unit == "rms":
        return cluster.dispersion_m > threshold
    if unit == "variance":
        return cluster.mean_sq_dist > threshold
    raise InvalidInputError(f"unknown dispersion unit {unit!r}")


def recursive_kmeans(points, max_dispersion_m: float = 200.0, seed: int = 0,
                     k_range: tuple | None = None, unit: str = "rms",
                     max_iter: int = 100) -> list[KMeansCluster]:
    """Silhouette-selected k-means followed by recursive bisection of loose clusters.

    ``unit="rms"`` caps the root-mean-square member distance to the centroid
    at ``max_dispersion_m`` meters; ``unit="variance"`` caps the mean squared
    distance at ``max_dispersion_m`` square meters. Member indices refer to
    the input order.
    """
    pts = _as_points(points)
    if len(pts) < 1:
        raise InvalidInputError("recursive_kmeans needs at least one point")
    if k_range is not None and len(pts) >= 3:
        lo, hi = k_range
        k_range = (lo, min(hi, len(pts) - 1))
        if k_range[0] > k_range[1]:
            k_range = None
    first = select_k(pts, k_range, seed=seed, max_iter=max_iter)
    out: list[KMeansCluster] = []
    stack = list(reversed(first.clusters))
    n_split = 0
    while stack:
        c = stack.pop()
        if c.size > 1 and _exceeds(c, max_dispersion_m, unit):
            n_split += 1
            sub = kmeans(pts[c.members], 2, seed=seed + n_split, max_iter=max_iter)
            if len(sub.clusters) < 2:
                out.append(c)
                continue
            for child in reversed(sub.clusters):
                child.members = c.members[child.members]
                stack.append(child)
        else:
            out.append(c)
    return out


def filter_by_size(clusters, min_size: int):
    if min_size < 1:
        raise InvalidInputError("min_size must be >= 1")
    return [c for c in clusters if c.size >= min_size]
