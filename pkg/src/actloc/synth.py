"""Deterministic synthetic traces with ground truth, for scoring the detectors.

Each user has a few anchors (true activity locations). Events are scattered
around anchors with an isotropic Gaussian, plus an optional share of en-route
events placed uniformly along straight segments between two anchors.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidInputError
from .events import UserTrace
from .geo import BoundingBox, GeoPoint, Projection, haversine_m

DEFAULT_WINDOW = (1_356_998_400.0, 1_377_993_600.0)  # 2013-01-01 .. 2013-09-01 UTC
CORPUS_REGION = BoundingBox(1.25, 1.45, 103.65, 104.0)


@dataclass(frozen=True)
class AnchorSpec:
    location: GeoPoint
    weight: float
    dispersion_m: float = 50.0


@dataclass
class SynthUserSpec:
    user_id: str
    anchors: list
    n_events: int
    en_route_fraction: float = 0.0
    time_window: tuple = DEFAULT_WINDOW
    seed: int = 0

    def validate(self) -> None:
        if not self.anchors:
            raise InvalidInputError(f"{self.user_id}: no anchors")
        if self.n_events < 1:
            raise InvalidInputError(f"{self.user_id}: n_events must be >= 1")
        if not 0 <= self.en_route_fraction <= 0.5:
            raise InvalidInputError(f"{self.user_id}: en_route_fraction must be in [0, 0.5]")
        if len(self.anchors) == 1 and self.en_route_fraction > 0:
            raise InvalidInputError(f"{self.user_id}: en-route events need at least two anchors")
        ws = [a.weight for a in self.anchors]
        if any(not 0 < w <= 1 for w in ws) or not math.isclose(sum(ws), 1.0, abs_tol=1e-9):
            raise InvalidInputError(f"{self.user_id}: anchor weights must lie in (0, 1] and sum to 1")
        if any(a.dispersion_m < 0 for a in self.anchors):
            raise InvalidInputError(f"{self.user_id}: negative dispersion")
        if self.time_window[1] < self.time_window[0]:
            raise InvalidInputError(f"{self.user_id}: inverted time window")


@dataclass
class GroundTruth:
    anchors: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"users": {uid: {"anchors": [[p.lat, p.lon] for p in self.anchors[uid]],
                                "labels": [int(v) for v in self.labels[uid]]}
                          for uid in sorted(self.anchors)}}

    @classmethod
    def from_json(cls, doc: dict) -> "GroundTruth":
        gt = cls()
        for uid, u in doc.get("users", {}).items():
            gt.anchors[uid] = [GeoPoint(float(a), float(b)) for a, b in u["anchors"]]
            gt.labels[uid] = np.asarray(u.get("labels", []), dtype=np.int64)
        return gt

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GroundTruth":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def derive_seed(master_seed: int, user_id: str) -> int:
    """Stable per-user seed from a master seed and the user id."""
    digest = hashlib.sha256(f"{master_seed}:{user_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def largest_remainder(weights: Sequence[float], n: int) -> list[int]:
    """Integer allocation of ``n`` items proportional to ``weights`` (Hamilton's method)."""
    w = np.asarray(weights, dtype=float)
    quotas = w / w.sum() * n
    base = np.floor(quotas).astype(int)
    rem = quotas - base
    # ties in the remainder go to the earlier bucket
    order = sorted(range(len(w)), key=lambda i: (-rem[i], i))
    for i in order[: n - int(base.sum())]:
        base[i] += 1
    return base.tolist()


def generate_user(spec: SynthUserSpec) -> tuple[UserTrace, list[GeoPoint], np.ndarray]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    anchors = [a.location for a in spec.anchors]
    centre = GeoPoint(float(np.mean([p.lat for p in anchors])), float(np.mean([p.lon for p in anchors])))
    proj = Projection(centre)
    axy = proj.forward([p.lat for p in anchors], [p.lon for p in anchors]).reshape(-1, 2)
    f = spec.en_route_fraction
    counts = largest_remainder([a.weight * (1 - f) for a in spec.anchors] + [f], spec.n_events)
    xy, labels = [], []
    for j, (a, c) in enumerate(zip(spec.anchors, counts[:-1])):
        xy.append(axy[j] + rng.normal(0.0, a.dispersion_m, (c, 2)) if a.dispersion_m > 0
                  else np.repeat(axy[j:j + 1], c, axis=0))
        labels.append(np.full(c, j))
    n_route = counts[-1]
    if n_route:
        k = len(anchors)
        i = rng.integers(k, size=n_route)
        j = (i + rng.integers(1, k, size=n_route)) % k
        t = rng.uniform(size=(n_route, 1))
        xy.append(axy[i] + t * (axy[j] - axy[i]))
        labels.append(np.full(n_route, -1))
    xy = np.concatenate(xy)
    labels = np.concatenate(labels)
    perm = rng.permutation(spec.n_events)
    xy, labels = xy[perm], labels[perm]
    t0, t1 = spec.time_window
    ts = np.sort(np.floor(rng.uniform(t0, t1, spec.n_events)))
    lat, lon = proj.inverse(xy)
    trace = UserTrace(spec.user_id, ts, lat, lon, np.arange(spec.n_events))
    return trace, anchors, labels


def generate(specs: Sequence[SynthUserSpec]) -> tuple[list[UserTrace], GroundTruth]:
    """Generate traces (ordered by user id) and their ground truth."""
    ids = [s.user_id for s in specs]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("duplicate user_id in synthetic specs")
    traces = []
    truth = GroundTruth()
    for spec in sorted(specs, key=lambda s: s.user_id):
        tr, anchors, labels = generate_user(spec)
        traces.append(tr)
        truth.anchors[spec.user_id] = anchors
        truth.labels[spec.user_id] = labels
    return traces, truth


def _place_anchors(rng, k, region: BoundingBox, min_sep_m: float, max_tries: int = 10_000):
    pts: list[GeoPoint] = []
    for _ in range(max_tries):
        if len(pts) == k:
            break
        p = GeoPoint(float(rng.uniform(region.min_lat, region.max_lat)),
                     float(rng.uniform(region.min_lon, region.max_lon)))
        if all(haversine_m(p, q) >= min_sep_m for q in pts):
            pts.append(p)
    if len(pts) < k:
        raise InvalidInputError(f"could not place {k} anchors {min_sep_m} m apart in {region}")
    return pts


def make_corpus(n_users: int, master_seed: int = 0, n_anchors=(1, 5), n_events=(20, 200),
                dispersion_m: float = 50.0, en_route_fraction: float = 0.1, min_sep_m: float = 1000.0,
                region: BoundingBox = CORPUS_REGION, time_window=DEFAULT_WINDOW) -> list[SynthUserSpec]:
    """Random population of equal-weight users; single-anchor users get no en-route events."""
    rng = np.random.default_rng(master_seed)
    specs = []
    width = len(str(max(n_users - 1, 1)))
    for u in range(n_users):
        uid = f"u{u:0{width}d}"
        k = int(rng.integers(n_anchors[0], n_anchors[1] + 1))
        anchors = _place_anchors(rng, k, region, min_sep_m)
        w = 1.0 / k
        specs.append(SynthUserSpec(
            uid, [AnchorSpec(p, w, dispersion_m) for p in anchors],
            int(rng.integers(n_events[0], n_events[1] + 1)),
            en_route_fraction if k > 1 else 0.0, tuple(time_window), derive_seed(master_seed, uid)))
    return specs


def specs_to_json(specs: Sequence[SynthUserSpec]) -> list[dict]:
    return [{"user_id": s.user_id,
             "anchors": [{"lat": a.location.lat, "lon": a.location.lon, "weight": a.weight,
                          "dispersion_m": a.dispersion_m} for a in s.anchors],
             "n_events": s.n_events, "en_route_fraction": s.en_route_fraction,
             "time_window": list(s.time_window), "seed": s.seed} for s in specs]


def specs_from_json(doc: list, master_seed: int = 0) -> list[SynthUserSpec]:
    """Parse a spec list; users without an explicit seed get one derived from ``master_seed``."""
    if not isinstance(doc, list):
        raise InvalidInputError("synthetic spec file must hold a JSON list")
    out = []
    for d in doc:
        try:
            uid = str(d["user_id"])
            anchors = [AnchorSpec(GeoPoint(float(a["lat"]), float(a["lon"])), float(a["weight"]),
                                  float(a.get("dispersion_m", 50.0))) for a in d["anchors"]]
            spec = SynthUserSpec(uid, anchors, int(d["n_events"]), float(d.get("en_route_fraction", 0.0)),
                                 tuple(d.get("time_window", DEFAULT_WINDOW)),
                                 int(d["seed"]) if "seed" in d else derive_seed(master_seed, uid))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad synthetic user spec {d!r}: {exc}") from exc
        spec.validate()
        out.append(spec)
    return out


@dataclass
class DetectionScore:
    precision: float
    recall: float
    rmse_m: float
    n_detected: int
    n_true: int
    n_matched: int

    def rows(self) -> list[tuple]:
        return [("precision", self.precision), ("recall", self.recall), ("rmse_m", self.rmse_m),
                ("n_detected", self.n_detected), ("n_true", self.n_true), ("n_matched", self.n_matched)]


def match_user(detected: Sequence[GeoPoint], anchors: Sequence[GeoPoint], radius_m: float) -> list[tuple]:
    """Greedy one-to-one matching by ascending distance; returns ``(i_det, j_true, meters)``."""
    cand = []
    for i, p in enumerate(detected):
        for j, q in enumerate(anchors):
            d = haversine_m(p, q)
            if d <= radius_m:
                cand.append((d, i, j))
    cand.sort()
    used_i, used_j, out = set(), set(), []
    for d, i, j in cand:
        if i not in used_i and j not in used_j:
            used_i.add(i)
            used_j.add(j)
            out.append((i, j, d))
    return out


def score_detection(detected: Mapping[str, Sequence], truth: GroundTruth,
                    match_radius_m: float = 250.0) -> DetectionScore:
    """Pooled precision, recall and RMSE of detected locations against true anchors.

    Ratios with a zero denominator are reported as NaN.
    """
    n_det = n_true = n_match = 0
    sq = 0.0
    for uid in sorted(set(detected) | set(truth.anchors)):
        pts = [c if isinstance(c, GeoPoint) else c.location for c in detected.get(uid, ())]
        anchors = truth.anchors.get(uid, [])
        matches = match_user(pts, anchors, match_radius_m)
        n_det += len(pts)
        n_true += len(anchors)
        n_match += len(matches)
        sq += sum(d * d for _, _, d in matches)
    nan = float("nan")
    return DetectionScore(n_match / n_det if n_det else nan, n_match / n_true if n_true else nan,
                          math.sqrt(sq / n_match) if n_match else nan, n_det, n_true, n_match)
