"""Batch orchestration: configuration, per-user fan-out and report tables.

Every ``run_*`` function computes its tables fully in memory and returns an
:class:`Outputs` bundle; nothing is written until :meth:`Outputs.commit`, so a
failing run never leaves partial files behind.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import analysis, events, geo, kde, kmeans, synth
from .errors import EmptyStatisticsError, InvalidInputError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    events: str | None = None
    zones: str | None = None
    regions: str | None = None
    home_region: str = "SG"
    reference_distances: str | None = None
    reference_od: str | None = None
    reference_zones: str | None = None
    clusters: str | None = None
    truth: str | None = None
    synth_spec: str | None = None
    synth_users: int = 0
    schema: dict = field(default_factory=lambda: dict(events.DEFAULT_SCHEMA))
    bbox: tuple = (geo.SINGAPORE_BOX.min_lat, geo.SINGAPORE_BOX.max_lat,
                   geo.SINGAPORE_BOX.min_lon, geo.SINGAPORE_BOX.max_lon)
    bbox_mode: str = "users_any"
    window: tuple | None = None
    min_events: int = 10
    engine: str = "kde"
    projection_origin: tuple | str | None = None
    bandwidth_h: float = 200.0
    cell_size: float = 25.0
    truncation_radius: float = 4.0
    membership_radius: float | None = None
    max_cells: int = 40_000_000
    theta: float = 0.10
    thetas: tuple = (0.05, 0.10, 0.20)
    max_dispersion_m: float = 200.0
    dispersion_unit: str = "rms"
    k_max: int = kmeans.DEFAULT_MAX_K
    min_size: int = 4
    min_sizes: tuple = (1, 2, 3, 4, 5)
    tz_offset_min: int = 480
    weekdays_only: bool = True
    directed: bool = True
    exclude_intra: bool = True
    match_radius_m: float = 250.0
    seed: int = 0
    threads: int = 0
    out_dir: str = "out"

    @property
    def box(self) -> geo.BoundingBox:
        return geo.BoundingBox(*map(float, self.bbox))

    @property
    def kde_config(self) -> kde.KdeConfig:
        return kde.KdeConfig(self.bandwidth_h, self.cell_size, self.truncation_radius, self.theta,
                             self.membership_radius, int(self.max_cells))

    @property
    def projection(self) -> geo.Projection | None:
        o = self.projection_origin
        if o is None:
            return None
        if o == "bbox":
            return geo.Projection(self.box.center)
        return geo.Projection(geo.GeoPoint(float(o[0]), float(o[1])))

    @property
    def n_workers(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)

    def validate(self) -> None:
        if self.engine not in ("kde", "kmeans"):
            raise InvalidInputError(f"unknown engine {self.engine!r}")
        if self.bbox_mode not in ("events", "users_any", "users_all", "none"):
            raise InvalidInputError(f"unknown bbox_mode {self.bbox_mode!r}")
        if self.dispersion_unit not in ("rms", "variance"):
            raise InvalidInputError(f"unknown dispersion_unit {self.dispersion_unit!r}")
        if self.min_events < 1 or self.min_size < 1 or any(s < 1 for s in self.min_sizes):
            raise InvalidInputError("event and size thresholds must be >= 1")
        if self.k_max < 2:
            raise InvalidInputError("k_max must be >= 2")
        for t in (self.theta, *self.thetas):
            if not 0 <= t < 1:
                raise InvalidInputError(f"contribution threshold {t} outside [0, 1)")
        self.box
        self.kde_config
        self.projection
        if self.window is not None:
            if len(self.window) != 2:
                raise InvalidInputError("window must be [start, end]")
            w = tuple(events.parse_timestamp(v) for v in self.window)
            if w[1] < w[0]:
                raise InvalidInputError("inverted study window")

    def require(self, *names: str) -> None:
        for n in names:
            v = getattr(self, n)
            if v is None:
                raise InvalidInputError(f"missing required input: {n}")
            if not Path(v).is_file():
                raise InvalidInputError(f"{n} file not found: {v}")


# config file section -> field names (flat keys are accepted at top level as well)
_SECTIONS = {
    "input": ("events", "zones", "regions", "home_region", "reference_distances", "reference_od",
              "reference_zones", "clusters", "truth", "synth_spec"),
    "filter": ("bbox", "bbox_mode", "window", "min_events"),
    "engine": ("engine", "projection_origin"),
    "kde": ("bandwidth_h", "cell_size", "truncation_radius", "membership_radius", "max_cells",
            "theta", "thetas"),
    "kmeans": ("max_dispersion_m", "dispersion_unit", "k_max", "min_size", "min_sizes"),
    "transitions": ("tz_offset_min", "weekdays_only", "directed", "exclude_intra"),
    "score": ("match_radius_m",),
    "run": ("seed", "threads", "out_dir", "synth_users"),
}
_PATH_FIELDS = {"events", "zones", "regions", "reference_distances", "reference_od", "reference_zones",
                "clusters", "truth", "synth_spec", "out_dir"}


def _flatten_config(doc: Mapping[str, Any]) -> dict:
    names = {f.name for f in fields(PipelineConfig)}
    flat: dict = {}
    for key, val in doc.items():
        if key == "schema":
            flat["schema"] = {**events.DEFAULT_SCHEMA, **dict(val)}
        elif key in _SECTIONS and isinstance(val, Mapping):
            for k, v in val.items():
                if k == "name" and key == "engine":
                    k = "engine"
                if k not in names:
                    raise InvalidInputError(f"unknown config key [{key}] {k}")
                flat[k] = v
        elif key in names:
            flat[key] = val
        else:
            raise InvalidInputError(f"unknown config key {key!r}")
    return flat


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Defaults, then the TOML file, then ``overrides`` (command line); later wins.

    Relative paths in the file are resolved against the file's directory.
    """
    values: dict = {}
    if path is not None:
        path = Path(path)
        try:
            doc = tomllib.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise InvalidInputError(f"bad config {path}: {exc}") from exc
        values = _flatten_config(doc)
        for k in _PATH_FIELDS & values.keys():
            if values[k] is not None and not Path(values[k]).is_absolute():
                values[k] = str(path.parent / values[k])
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    for k in ("bbox", "thetas", "min_sizes", "window"):
        if isinstance(values.get(k), list):
            values[k] = tuple(values[k])
    if isinstance(values.get("projection_origin"), list):
        values["projection_origin"] = tuple(values["projection_origin"])
    cfg = PipelineConfig(**values)
    cfg.validate()
    return cfg


# -- outputs ------------------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".10g")
    return "" if v is None else str(v)


@dataclass
class Outputs:
    tables: dict = field(default_factory=dict)
    texts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def add(self, name: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
        self.tables[name] = (list(header), [[fmt(v) for v in r] for r in rows])

    def warn(self, msg: str) -> None:
        logger.warning(msg)
        self.warnings.append(msg)

    def commit(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, (header, rows) in sorted(self.tables.items()):
            p = out / name
            with open(p, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
            written.append(p)
        for name, text in sorted(self.texts.items()):
            p = out / name
            p.write_text(text, encoding="utf-8")
            written.append(p)
        return written


# -- loading and clustering ---------------------------------------------------------------

def load_traces(cfg: PipelineConfig) -> tuple[list[events.UserTrace], events.DatasetStats]:
    cfg.require("events")
    window = None if cfg.window is None else tuple(events.parse_timestamp(v) for v in cfg.window)
    return events.ingest(cfg.events, cfg.schema, cfg.box, window, cfg.min_events)


def study_traces(traces, cfg: PipelineConfig) -> list[events.UserTrace]:
    """Users retained for clustering: bounding-box rule, then the minimum event count."""
    if cfg.bbox_mode != "none":
        traces = events.filter_bbox(traces, cfg.box, cfg.bbox_mode)
    return events.filter_min_events(traces, cfg.min_events)


@dataclass
class UserClusters:
    user_id: str
    n_events: int
    clusters: list
    skipped: str | None = None


def _cluster_one(args) -> UserClusters:
    trace, cfg = args
    try:
        if cfg.engine == "kde":
            cl = kde.detect_kde(trace.lat, trace.lon, cfg.kde_config, cfg.projection)
            return UserClusters(trace.user_id, len(trace), cl)
        proj = cfg.projection
        if proj is None:
            proj = geo.Projection(geo.GeoPoint((trace.lat.min() + trace.lat.max()) / 2,
                                               (trace.lon.min() + trace.lon.max()) / 2))
        xy = proj.forward(trace.lat, trace.lon)
        seed = synth.derive_seed(cfg.seed, trace.user_id) % (2 ** 32)
        cl = kmeans.recursive_kmeans(xy, cfg.max_dispersion_m, seed, (2, cfg.k_max), cfg.dispersion_unit)
        for c in cl:
            la, lo = proj.inverse([c.centroid.x, c.centroid.y])
            c.location = geo.GeoPoint(float(la), float(lo))
        return UserClusters(trace.user_id, len(trace), cl)
    except InvalidInputError as exc:
        return UserClusters(trace.user_id, len(trace), [], str(exc))


def cluster_all(traces: Sequence[events.UserTrace], cfg: PipelineConfig) -> list[UserClusters]:
    """Cluster every trace, in parallel when configured; results ordered by user id."""
    traces = sorted(traces, key=lambda t: t.user_id)
    jobs = [(t, cfg) for t in traces]
    workers = min(cfg.n_workers, max(1, len(jobs) // 50))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(_cluster_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        res = [_cluster_one(j) for j in jobs]
    for r in res:
        if r.skipped:
            logger.warning("user %s not clustered: %s", r.user_id, r.skipped)
    return res


def filtered(uc: UserClusters, cfg: PipelineConfig, level=None) -> list:
    """A user's clusters surviving the engine's strength threshold (default: the primary one)."""
    if cfg.engine == "kde":
        return kde.filter_by_contribution(uc.clusters, cfg.theta if level is None else level)
    return kmeans.filter_by_size(uc.clusters, cfg.min_size if level is None else level)


def cluster_sets(results: Sequence[UserClusters], cfg: PipelineConfig, level=None) -> dict[str, list]:
    return {r.user_id: filtered(r, cfg, level) for r in results}


def cluster_rows(results: Sequence[UserClusters], cfg: PipelineConfig) -> tuple[list, list]:
    rows = []
    if cfg.engine == "kde":
        header = ["user_id", "cluster_idx", "peak_lat", "peak_lon", "level", "contribution", "n_members"]
        for r in results:
            for j, c in enumerate(filtered(r, cfg)):
                rows.append([r.user_id, j, f"{c.location.lat:.7f}", f"{c.location.lon:.7f}",
                             f"{c.level:.10e}", c.contribution, c.n_members])
    else:
        header = ["user_id", "cluster_idx", "centroid_lat", "centroid_lon", "size", "dispersion_m"]
        for r in results:
            for j, c in enumerate(filtered(r, cfg)):
                rows.append([r.user_id, j, f"{c.location.lat:.7f}", f"{c.location.lon:.7f}",
                             c.size, f"{c.dispersion_m:.3f}"])
    return header, rows


def read_clusters_csv(path) -> dict[str, list[geo.GeoPoint]]:
    """Cluster locations per user from either engine's cluster CSV."""
    out: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        cols = rd.fieldnames or []
        if "peak_lat" in cols:
            la, lo = "peak_lat", "peak_lon"
        elif "centroid_lat" in cols:
            la, lo = "centroid_lat", "centroid_lon"
        else:
            raise InvalidInputError(f"{path}: no peak_lat/centroid_lat column")
        for row in rd:
            try:
                out.setdefault(row["user_id"], []).append(geo.GeoPoint(float(row[la]), float(row[lo])))
            except (KeyError, ValueError) as exc:
                raise InvalidInputError(f"{path}: bad row {row}: {exc}") from exc
    return out


def _level_label(cfg, level) -> str:
    return f"theta_{level:.2f}" if cfg.engine == "kde" else f"min_size_{level}"


def _levels(cfg):
    return list(cfg.thetas) if cfg.engine == "kde" else list(cfg.min_sizes)


def _traces_and_clusters(cfg):
    traces, stats = load_traces(cfg)
    study = study_traces(traces, cfg)
    return study, cluster_all(study, cfg)


# -- subcommands --------------------------------------------------------------------------

def run_stats(cfg: PipelineConfig) -> Outputs:
    out = Outputs()
    traces, st = load_traces(cfg)
    rows = st.rows()
    try:
        mean_gap, mean_median = events.inter_event_stats(traces)
        rows += [("mean_inter_event_min", mean_gap, ""), ("mean_user_median_inter_event_min", mean_median, "")]
    except EmptyStatisticsError:
        out.warn("no user has two or more events; inter-event statistics omitted")
    out.add("dataset_stats.csv", ["counter", "all_users", f"users_min_{cfg.min_events}_events"], rows)
    return out


def run_cluster(cfg: PipelineConfig) -> Outputs:
    out = Outputs()
    study, results = _traces_and_clusters(cfg)
    out.add("clusters.csv", *cluster_rows(results, cfg))
    levels = _levels(cfg)
    per_user = []
    for r in results:
        per_user.append([r.user_id, r.n_events, len(r.clusters)] + [len(filtered(r, cfg, lv)) for lv in levels])
    out.add("events_vs_clusters.csv", ["user_id", "n_events", "n_clusters_all"]
            + [f"n_clusters_{_level_label(cfg, lv)}" for lv in levels], per_user)
    if not results:
        out.warn("no users passed the study filters")
        return out
    for lv in levels:
        dist = analysis.cluster_count_distribution(cluster_sets(results, cfg, lv))
        n = len(results)
        out.add(f"cluster_counts_{_level_label(cfg, lv)}.csv", ["n_clusters", "n_users", "fraction"],
                [[k, round(f * n), f] for k, f in dist.items()])
    return out


def read_reference_values(path) -> np.ndarray:
    """One numeric column: ``meters`` / ``distance_m`` if present, else the last column."""
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None:
            raise InvalidInputError(f"{path}: empty reference file")
        col = len(header) - 1
        for name in ("meters", "distance_m", "distance"):
            if name in header:
                col = header.index(name)
                break
        vals = []
        for row in rd:
            if not row:
                continue
            try:
                vals.append(float(row[col]))
            except (IndexError, ValueError) as exc:
                raise InvalidInputError(f"{path}: bad reference row {row}") from exc
    return np.asarray(vals)


def run_distances(cfg: PipelineConfig) -> Outputs:
    out = Outputs()
    if cfg.reference_distances is not None:
        cfg.require("reference_distances")
    study, results = _traces_and_clusters(cfg)
    samples = analysis.pairwise_distances(cluster_sets(results, cfg))
    test = np.array([s.meters for s in samples])
    out.add("distances.csv", ["user_id", "meters"], [[s.user_id, f"{s.meters:.3f}"] for s in samples])
    hist_a = analysis.Histogram.from_values(np.round(test, 3))
    ref = None
    if cfg.reference_distances is None:
        out.warn("no reference distances given; emitting the detected-side histogram only")
    else:
        ref = read_reference_values(cfg.reference_distances)
    hist_b = analysis.Histogram.from_values(ref) if ref is not None else None
    edges = hist_a.bin_edges
    out.add("distance_histogram.csv", ["bin_lo", "bin_hi", "count_a", "count_b"],
            [[edges[i], edges[i + 1], hist_a.counts[i], "" if hist_b is None else hist_b.counts[i]]
             for i in range(len(edges) - 1)])
    if ref is not None:
        if len(test) == 0 or len(ref) == 0:
            out.warn("a distance sample is empty; KS test skipped")
        else:
            rep = analysis.compare_samples(np.round(test, 3), ref)
            out.add("distance_ks.csv", ["metric", "value"], rep.rows())
    return out


def user_transitions(results, study, cfg: PipelineConfig) -> tuple[dict, dict]:
    """Per-user cluster transitions (weekday events only when configured) and cluster locations."""
    by_id = {t.user_id: t for t in study}
    trans, locs = {}, {}
    for r in results:
        cl = filtered(r, cfg)
        tr = by_id[r.user_id]
        labels = analysis.label_events(len(tr), cl)
        if cfg.weekdays_only:
            labels = labels[analysis.weekday_mask(tr.timestamps, cfg.tz_offset_min)]
        trans[r.user_id] = analysis.extract_transitions(labels)
        locs[r.user_id] = [c.location for c in cl]
    return trans, locs


def read_od_rows(path) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        need = {"from_zone", "to_zone", "count"}
        if not need <= set(rd.fieldnames or []):
            raise InvalidInputError(f"{path}: reference OD needs columns {sorted(need)}")
        rows = []
        for row in rd:
            try:
                rows.append((row["from_zone"], row["to_zone"], int(float(row["count"]))))
            except ValueError as exc:
                raise InvalidInputError(f"{path}: bad row {row}") from exc
    return rows


def run_transitions(cfg: PipelineConfig) -> Outputs:
    out = Outputs()
    cfg.require("zones")
    zm = geo.load_zonemap(cfg.zones)
    if len(zm) == 0:
        raise InvalidInputError("zone map is empty")
    ref = None
    if cfg.reference_od is not None:
        cfg.require("reference_od")
        ref = analysis.ODMatrix.from_rows(read_od_rows(cfg.reference_od), zm.zone_ids, cfg.directed)
    study, results = _traces_and_clusters(cfg)
    trans, locs = user_transitions(results, study, cfg)
    m = analysis.aggregate_od(trans, locs, zm, cfg.exclude_intra, cfg.directed)
    if m.total == 0:
        out.warn("no inter-zonal transitions found; OD matrix is empty")
    out.add("od_matrix.csv", ["from_zone", "to_zone", "count", "share"], m.rows())
    if ref is not None and m.total > 0:
        rep, table = analysis.compare_od(m, ref)
        out.add("od_ranked.csv", ["pair", "share_ref", "share_test", "rank"], table)
        out.add("od_comparison.csv", ["metric", "value"], rep.rows())
    return out


def read_zone_stats(path) -> tuple[list[str], dict[str, dict[str, float]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        cols = [c for c in (rd.fieldnames or []) if c not in ("zone_id", "name")]
        if "zone_id" not in (rd.fieldnames or []) or not cols:
            raise InvalidInputError(f"{path}: need a zone_id column and at least one value column")
        data = {}
        for row in rd:
            try:
                data[row["zone_id"]] = {c: float(row[c]) for c in cols}
            except ValueError as exc:
                raise InvalidInputError(f"{path}: bad row {row}") from exc
    return cols, data


def run_compare_zones(cfg: PipelineConfig) -> Outputs:
    out = Outputs()
    cfg.require("zones")
    zm = geo.load_zonemap(cfg.zones)
    cols, ref = [], {}
    if cfg.reference_zones is not None:
        cfg.require("reference_zones")
        cols, ref = read_zone_stats(cfg.reference_zones)
        unknown = sorted(set(ref) - set(zm.zone_ids))
        if unknown:
            raise InvalidInputError(f"reference zones not in zone map: {unknown}")
    study, results = _traces_and_clusters(cfg)
    sets = cluster_sets(results, cfg)
    counts = analysis.zone_user_counts(sets, zm)
    share = analysis.zone_share(sets, zm)
    totals = {c: sum(v[c] for v in ref.values()) for c in cols}
    rows = []
    for z in zm.zone_ids:
        row = [z, zm.names.get(z, z), counts[z], share[z]]
        for c in cols:
            v = ref.get(z, {}).get(c)
            row.append("" if v is None or not totals[c] else v / totals[c])
        rows.append(row)
    out.add("zone_shares.csv", ["zone_id", "name", "n_users", "user_share"] + [f"{c}_share" for c in cols], rows)
    comp = []
    for c in cols:
        zs = [z for z in zm.zone_ids if z in ref]
        try:
            r, p = analysis.pearson([share[z] for z in zs], [ref[z][c] for z in zs])
            comp.append([c, r, p, len(zs)])
        except (InvalidInputError, ValueError) as exc:
            out.warn(f"correlation with {c} undefined: {exc}")
            comp.append([c, "", "", len(zs)])
    if cols:
        out.add("zone_comparison.csv", ["reference", "pearson_r", "pearson_p", "n_zones"], comp)
    return out


def run_breakdown(cfg: PipelineConfig) -> Outputs:
    out = Outputs()
    cfg.require("regions")
    regions = geo.load_zonemap(cfg.regions)
    study, results = _traces_and_clusters(cfg)
    bd = analysis.breakdown_by_region(cluster_sets(results, cfg), regions, cfg.home_region)
    out.add("region_breakdown.csv", ["region", "only_region", f"region_and_{cfg.home_region}"], bd.rows())
    out.add("region_combinations.csv", ["regions", "n_users"], sorted(bd.combinations.items()))
    return out


def run_synth(cfg: PipelineConfig) -> Outputs:
    out = Outputs()
    if cfg.synth_spec is not None:
        cfg.require("synth_spec")
        try:
            doc = json.loads(Path(cfg.synth_spec).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{cfg.synth_spec}: not valid JSON ({exc})") from exc
        specs = synth.specs_from_json(doc, cfg.seed)
    else:
        specs = synth.make_corpus(cfg.synth_users, cfg.seed)
    traces, truth = synth.generate(specs)
    rows = []
    for tr in traces:
        for t, la, lo in zip(tr.timestamps, tr.lat, tr.lon):
            rows.append([tr.user_id, int(t), f"{la:.8f}", f"{lo:.8f}"])
    out.add("events.csv", ["user_id", "timestamp", "lat", "lon"], rows)
    out.texts["truth.json"] = json.dumps(truth.to_json(), sort_keys=True) + "\n"
    if cfg.synth_spec is None:
        out.texts["synth_spec.json"] = json.dumps(synth.specs_to_json(specs), indent=1) + "\n"
    return out


def run_score(cfg: PipelineConfig) -> Outputs:
    out = Outputs()
    cfg.require("clusters", "truth")
    detected = read_clusters_csv(cfg.clusters)
    truth = synth.GroundTruth.load(cfg.truth)
    score = synth.score_detection(detected, truth, cfg.match_radius_m)
    out.add("score.csv", ["metric", "value"], score.rows())
    return out


COMMANDS = {
    "stats": run_stats,
    "cluster": run_cluster,
    "distances": run_distances,
    "transitions": run_transitions,
    "compare-zones": run_compare_zones,
    "breakdown": run_breakdown,
    "synth": run_synth,
    "score": run_score,
}


def run(command: str, cfg: PipelineConfig, commit: bool = True) -> Outputs:
    out = COMMANDS[command](cfg)
    if commit:
        out.commit(cfg.out_dir)
    return out

