"""Ingestion, validation, filtering and summary statistics of geo-tagged event streams."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import EmptyStatisticsError, FormatError, InvalidInputError
from .geo import BoundingBox, GeoPoint

logger = logging.getLogger(__name__)

DEFAULT_SCHEMA = {"user": "user_id", "time": "timestamp", "lat": "lat", "lon": "lon"}
MAX_MALFORMED_FRACTION = 0.5


@dataclass(frozen=True)
class Event:
    user_id: str
    timestamp: float
    location: GeoPoint
    seq: int


@dataclass
class UserTrace:
    """All events of one user, sorted by ``(timestamp, seq)``; stored column-wise."""

    user_id: str
    timestamps: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    seq: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.lat = np.asarray(self.lat, dtype=float)
        self.lon = np.asarray(self.lon, dtype=float)
        self.seq = np.asarray(self.seq, dtype=np.int64)
        n = len(self.timestamps)
        if not (len(self.lat) == len(self.lon) == len(self.seq) == n):
            raise InvalidInputError("trace columns differ in length")

    def __len__(self):
        return len(self.timestamps)

    @classmethod
    def from_events(cls, events: Sequence[Event]) -> "UserTrace":
        if not events:
            raise InvalidInputError("a trace needs at least one event")
        uid = events[0].user_id
        if any(e.user_id != uid for e in events):
            raise InvalidInputError("events belong to several users")
        evs = sorted(events, key=lambda e: (e.timestamp, e.seq))
        return cls(uid, [e.timestamp for e in evs], [e.location.lat for e in evs],
                   [e.location.lon for e in evs], [e.seq for e in evs])

    @property
    def events(self) -> list[Event]:
        return [Event(self.user_id, float(t), GeoPoint(float(a), float(o)), int(s))
                for t, a, o, s in zip(self.timestamps, self.lat, self.lon, self.seq)]

    def subset(self, mask) -> "UserTrace":
        mask = np.asarray(mask)
        return UserTrace(self.user_id, self.timestamps[mask], self.lat[mask], self.lon[mask], self.seq[mask])


@dataclass
class DatasetStats:
    """Dataset counters, for all users and for users with at least ``min_events`` events."""

    min_events: int
    counts: dict = field(default_factory=dict)
    counts_min_events: dict = field(default_factory=dict)
    n_records: int = 0
    n_malformed: int = 0
    n_nongeo: int = 0
    n_out_of_window: int = 0

    COUNTERS = ("n_users", "n_events", "n_events_in_region", "n_events_out_region",
                "n_users_only_in_region", "n_users_only_out_region", "n_users_both")

    def rows(self) -> list[tuple]:
        out = [(k, self.counts[k], self.counts_min_events[k]) for k in self.COUNTERS]
        out += [("n_records", self.n_records, ""), ("n_malformed", self.n_malformed, ""),
                ("n_nongeo", self.n_nongeo, ""), ("n_out_of_window", self.n_out_of_window, "")]
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["counter", "all_users", f"users_min_{self.min_events}_events"])
            w.writerows(self.rows())


def parse_timestamp(value) -> float:
    """Epoch seconds from a number or an ISO-8601 string (naive strings are taken as UTC)."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        t = float(value)
    else:
        s = str(value).strip()
        try:
            t = float(s)
        except ValueError:
            if s.endswith(("Z", "z")):
                s = s[:-1] + "+00:00"
            dt = datetime.fromisoformat(s)
            if dt.tzinfo is None:
                dt = dt.replace(tzinfo=timezone.utc)
            t = dt.timestamp()
    if not math.isfinite(t):
        raise ValueError("non-finite timestamp")
    return t


def _is_blank(v) -> bool:
    return v is None or (isinstance(v, str) and v.strip() == "")


def read_records(path: str | Path) -> Iterator[dict]:
    """Yield raw records from a CSV (with header) or JSON-lines file."""
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    with fh:
        if path.suffix.lower() in (".jsonl", ".ndjson", ".json"):
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    rec = None
                yield rec if isinstance(rec, dict) else {}
        else:
            yield from csv.DictReader(fh)


def ingest(source, schema: Mapping[str, str] | None = None, box: BoundingBox | None = None,
           window: tuple | None = None, min_events: int = 10) -> tuple[list[UserTrace], DatasetStats]:
    """Parse records into per-user traces and compute dataset statistics.

    Parameters
    ----------
    source : path or iterable of dict
        A CSV/JSON-lines file path, or an iterable of already-decoded records.
    schema : mapping, optional
        Maps the logical fields ``user``, ``time``, ``lat``, ``lon`` to record keys.
    box : BoundingBox, optional
        Region used for the in/out-of-region counters. Without one, every event
        counts as in-region.
    window : (start, end), optional
        Study window in epoch seconds (inclusive); events outside are dropped and counted.
    min_events : int
        Threshold for the second column of the statistics.

    Malformed records are skipped and counted. Records with no coordinates are
    counted separately as non-geo and do not count towards the malformed limit.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    records: Iterable = read_records(source) if isinstance(source, (str, Path)) else source
    stats = DatasetStats(min_events=min_events)
    cols: dict[str, list] = defaultdict(lambda: [[], [], [], []])
    for seq, rec in enumerate(records):
        stats.n_records += 1
        try:
            uid = rec.get(schema["user"])
            lat_raw, lon_raw = rec.get(schema["lat"]), rec.get(schema["lon"])
            if _is_blank(uid):
                raise ValueError("missing user")
            if _is_blank(lat_raw) and _is_blank(lon_raw):
                stats.n_nongeo += 1
                continue
            t = parse_timestamp(rec.get(schema["time"]))
            loc = GeoPoint(float(lat_raw), float(lon_raw))
        except (ValueError, TypeError, AttributeError, OverflowError):
            stats.n_malformed += 1
            continue
        if window is not None and not (window[0] <= t <= window[1]):
            stats.n_out_of_window += 1
            continue
        c = cols[str(uid)]
        c[0].append(t)
        c[1].append(loc.lat)
        c[2].append(loc.lon)
        c[3].append(seq)
    n_considered = stats.n_records - stats.n_nongeo
    if stats.n_records == 0:
        raise FormatError("input contains no records")
    if n_considered and stats.n_malformed / n_considered > MAX_MALFORMED_FRACTION:
        raise FormatError(f"{stats.n_malformed} of {n_considered} records are malformed")
    traces = []
    for uid in sorted(cols):
        t, la, lo, sq = (np.asarray(v) for v in cols[uid])
        order = np.lexsort((sq, t))
        traces.append(UserTrace(uid, t[order], la[order], lo[order], sq[order]))
    if stats.n_malformed:
        logger.info("skipped %d malformed record(s)", stats.n_malformed)
    stats.counts = trace_counts(traces, box)
    stats.counts_min_events = trace_counts(filter_min_events(traces, min_events), box)
    return traces, stats


def trace_counts(traces: Sequence[UserTrace], box: BoundingBox | None) -> dict:
    c = dict.fromkeys(DatasetStats.COUNTERS, 0)
    for tr in traces:
        inside = np.ones(len(tr), dtype=bool) if box is None else box.contains_array(tr.lat, tr.lon)
        n_in = int(np.count_nonzero(inside))
        n_out = len(tr) - n_in
        c["n_users"] += 1
        c["n_events"] += len(tr)
        c["n_events_in_region"] += n_in
        c["n_events_out_region"] += n_out
        if n_out == 0:
            c["n_users_only_in_region"] += 1
        elif n_in == 0:
            c["n_users_only_out_region"] += 1
        else:
            c["n_users_both"] += 1
    return c


def filter_min_events(traces: Sequence[UserTrace], n_min: int = 10) -> list[UserTrace]:
    if n_min < 1:
        raise InvalidInputError("n_min must be >= 1")
    return [tr for tr in traces if len(tr) >= n_min]


def filter_bbox(traces: Sequence[UserTrace], box: BoundingBox, mode: str = "events") -> list[UserTrace]:
    """Restrict traces to a box.

    ``events`` drops out-of-box events (and empty traces), ``users_any`` keeps
    whole traces with at least one in-box event, ``users_all`` keeps only traces
    lying entirely inside.
    """
    out = []
    for tr in traces:
        inside = box.contains_array(tr.lat, tr.lon)
        if mode == "events":
            if inside.any():
                out.append(tr.subset(inside))
        elif mode == "users_any":
            if inside.any():
                out.append(tr)
        elif mode == "users_all":
            if inside.all():
                out.append(tr)
        else:
            raise InvalidInputError(f"unknown bbox filter mode {mode!r}")
    return out


def inter_event_stats(traces: Sequence[UserTrace]) -> tuple[float, float]:
    """Return ``(mean gap, mean of per-user median gaps)`` in minutes."""
    gaps = []
    medians = []
    for tr in traces:
        if len(tr) < 2:
            continue
        g = np.diff(tr.timestamps) / 60.0
        gaps.append(g)
        medians.append(float(np.median(g)))
    if not gaps:
        raise EmptyStatisticsError("no user has two or more events")
    return float(np.concatenate(gaps).mean()), float(np.mean(medians))


def write_events_csv(traces: Sequence[UserTrace], path) -> None:
    """Write traces in the default ingest schema, ordered by user then time."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "timestamp", "lat", "lon"])
        for tr in traces:
            for t, la, lo in zip(tr.timestamps, tr.lat, tr.lon):
                w.writerow([tr.user_id, repr(float(t)) if t != int(t) else int(t), f"{la:.8f}", f"{lo:.8f}"])
