import csv
import json
import math

import numpy as np
import pytest

from actloc import pipeline
from actloc.cli import main
from actloc.errors import InvalidInputError
from actloc.geo import EARTH_RADIUS_M, GeoPoint, ZoneMap, square_zone, zonemap_to_geojson
from actloc.synth import make_corpus, specs_to_json
from oracles import ks_statistic_loop

MONDAY = 1_362_355_200          # 2013-03-04 00:00 UTC
SATURDAY = MONDAY + 5 * 86_400


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_events(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "timestamp", "lat", "lon"])
        w.writerows(rows)
    return path


def write_zones(path, zones):
    path.write_text(json.dumps(zonemap_to_geojson(ZoneMap(zones))))
    return path


def visits(uid, stops, t0=MONDAY + 3600, per_stop=3):
    """Consecutive blocks of ``per_stop`` identical events at each stop, one minute apart."""
    rows, t = [], t0
    for lat, lon in stops:
        for _ in range(per_stop):
            rows.append([uid, t, lat, lon])
            t += 60
    return rows


IN_SG = (1.35, 103.80)
OUT_SG = (3.10, 101.70)


def stats_fixture(tmp_path):
    rows = []
    for u in range(3):
        rows += visits(f"in{u}", [IN_SG] * 4)
    for u in range(5):
        rows += visits(f"out{u}", [OUT_SG] * 3)
    for u in range(2):
        rows += visits(f"both{u}", [IN_SG, OUT_SG])
    return write_events(tmp_path / "events.csv", rows)


# -- stats

def test_stats_counts_by_hand(tmp_path):
    ev = stats_fixture(tmp_path)
    assert main(["stats", "--events", str(ev), "--out-dir", str(tmp_path / "o"), "--min-events", "9"]) == 0
    rows = {r["counter"]: r for r in read_csv(tmp_path / "o" / "dataset_stats.csv")}
    expect = {"n_users": (10, 8), "n_events": (12 * 3 + 9 * 5 + 6 * 2, 12 * 3 + 9 * 5),
              "n_events_in_region": (36 + 6, 36), "n_events_out_region": (45 + 6, 45),
              "n_users_only_in_region": (3, 3), "n_users_only_out_region": (5, 5), "n_users_both": (2, 0)}
    for k, (a, b) in expect.items():
        assert (int(rows[k]["all_users"]), int(rows[k]["users_min_9_events"])) == (a, b), k
    assert float(rows["mean_inter_event_min"]["all_users"]) == 1.0


def test_stats_errors_and_empty_box(tmp_path):
    empty = write_events(tmp_path / "empty.csv", [])
    assert main(["stats", "--events", str(empty), "--out-dir", str(tmp_path / "o1")]) == 2
    assert not (tmp_path / "o1").exists()
    ev = stats_fixture(tmp_path)
    cfg = tmp_path / "c.toml"
    cfg.write_text('[filter]\nbbox = [10.0, 11.0, 10.0, 11.0]\n')
    assert main(["stats", "--config", str(cfg), "--events", str(ev), "--out-dir", str(tmp_path / "o2")]) == 0
    rows = {r["counter"]: r for r in read_csv(tmp_path / "o2" / "dataset_stats.csv")}
    assert rows["n_events_in_region"]["all_users"] == "0"
    assert rows["n_users_only_in_region"]["all_users"] == "0"
    assert main(["stats", "--events", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path / "o3")]) == 2


# -- usage and configuration

def test_usage_errors_exit_one(tmp_path, capsys):
    assert main([]) == 1
    assert main(["bogus"]) == 1
    assert main(["stats", "--no-such-flag"]) == 1
    assert main(["cluster", "--engine", "spectral"]) == 1
    assert main(["--help"]) == 0


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.toml"
    cfg_file.write_text('[input]\nevents = "ev.csv"\n[kde]\ntheta = 0.2\nbandwidth_h = 150\n'
                        '[run]\nseed = 5\n[engine]\nname = "kmeans"\n')
    cfg = pipeline.load_config(cfg_file)
    assert (cfg.theta, cfg.bandwidth_h, cfg.seed, cfg.engine) == (0.2, 150, 5, "kmeans")
    assert cfg.events == str(tmp_path / "ev.csv")
    cfg = pipeline.load_config(cfg_file, {"theta": 0.05, "seed": 9})
    assert (cfg.theta, cfg.seed, cfg.bandwidth_h) == (0.05, 9, 150)
    assert pipeline.load_config().theta == 0.10
    cfg_file.write_text("[kde]\nwobble = 1\n")
    with pytest.raises(InvalidInputError):
        pipeline.load_config(cfg_file)
    cfg_file.write_text("not = [toml\n")
    with pytest.raises(InvalidInputError):
        pipeline.load_config(cfg_file)


def test_invalid_config_writes_nothing(tmp_path):
    ev = stats_fixture(tmp_path)
    out = tmp_path / "o"
    assert main(["cluster", "--events", str(ev), "--theta", "1.5", "--out-dir", str(out)]) == 2
    assert main(["transitions", "--events", str(ev), "--zones", str(tmp_path / "none.geojson"),
                 "--out-dir", str(out)]) == 2
    assert main(["distances", "--events", str(ev), "--reference", str(tmp_path / "none.csv"),
                 "--out-dir", str(out)]) == 2
    assert not out.exists()


# -- synth, cluster, score

@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--users", "60", "--seed", "3", "--out-dir", str(d)]) == 0
    return d


def test_synth_outputs(corpus):
    truth = json.loads((corpus / "truth.json").read_text())
    assert len(truth["users"]) == 60
    spec = json.loads((corpus / "synth_spec.json").read_text())
    assert len(spec) == 60
    rows = read_csv(corpus / "events.csv")
    assert sum(len(u["labels"]) for u in truth["users"].values()) == len(rows)


def test_synth_empty_spec(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text("[]")
    assert main(["synth", str(spec), "--out-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "events.csv").read_text() == "user_id,timestamp,lat,lon\n"
    assert json.loads((tmp_path / "o" / "truth.json").read_text()) == {"users": {}}
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert main(["synth", str(bad), "--out-dir", str(tmp_path / "o2")]) == 2


def test_cluster_thresholds_and_truth(corpus, tmp_path):
    out = tmp_path / "o"
    assert main(["cluster", "--events", str(corpus / "events.csv"), "--out-dir", str(out)]) == 0
    for t in ("0.05", "0.10", "0.20"):
        assert (out / f"cluster_counts_theta_{t}.csv").exists()
    per_user = read_csv(out / "events_vs_clusters.csv")
    for r in per_user:
        a, b, c = (int(r[f"n_clusters_theta_{t}"]) for t in ("0.05", "0.10", "0.20"))
        assert int(r["n_clusters_all"]) >= a >= b >= c
    # the cluster-count distribution at 0.10 matches the true anchor counts
    truth = json.loads((corpus / "truth.json").read_text())["users"]
    true_counts = np.bincount([len(u["anchors"]) for u in truth.values()])
    got = {int(r["n_clusters"]): int(r["n_users"]) for r in read_csv(out / "cluster_counts_theta_0.10.csv")}
    assert got == {k: int(v) for k, v in enumerate(true_counts) if v}
    assert main(["score", "--clusters", str(out / "clusters.csv"), "--truth", str(corpus / "truth.json"),
                 "--out-dir", str(out)]) == 0
    score = {r["metric"]: float(r["value"]) for r in read_csv(out / "score.csv")}
    assert score["precision"] >= 0.95 and score["recall"] >= 0.95 and score["rmse_m"] <= 60


def test_cluster_kmeans_min_size(corpus, tmp_path):
    out = tmp_path / "o"
    assert main(["cluster", "--engine", "kmeans", "--min-size", "4", "--events", str(corpus / "events.csv"),
                 "--out-dir", str(out)]) == 0
    rows = read_csv(out / "clusters.csv")
    assert rows and list(rows[0]) == ["user_id", "cluster_idx", "centroid_lat", "centroid_lon", "size",
                                      "dispersion_m"]
    assert min(int(r["size"]) for r in rows) >= 4
    assert max(float(r["dispersion_m"]) for r in rows) <= 200
    for n in (1, 2, 3, 4, 5):
        assert (out / f"cluster_counts_min_size_{n}.csv").exists()


def test_parallel_matches_serial(corpus, tmp_path):
    ev = str(corpus / "events.csv")
    assert main(["cluster", "--events", ev, "--threads", "1", "--out-dir", str(tmp_path / "a")]) == 0
    cfg = pipeline.load_config(None, {"events": ev, "threads": 2})
    traces, _ = pipeline.load_traces(cfg)
    study = pipeline.study_traces(traces, cfg) * 2
    for i, t in enumerate(study[len(study) // 2:]):
        study[len(study) // 2 + i] = type(t)(t.user_id + "_dup", t.timestamps, t.lat, t.lon, t.seq)
    res = pipeline.cluster_all(study, cfg)
    serial = [pipeline._cluster_one((t, cfg)) for t in sorted(study, key=lambda t: t.user_id)]
    assert [r.user_id for r in res] == [r.user_id for r in serial]
    for a, b in zip(res, serial):
        assert [c.peak for c in a.clusters] == [c.peak for c in b.clusters]


def test_sigma_zero_rmse_within_half_cell(tmp_path):
    specs = make_corpus(30, 11, dispersion_m=0.0, en_route_fraction=0.0)
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(specs_to_json(specs)))
    out = tmp_path / "o"
    assert main(["synth", str(spec), "--out-dir", str(out)]) == 0
    assert main(["cluster", "--events", str(out / "events.csv"), "--out-dir", str(out)]) == 0
    assert main(["score", "--clusters", str(out / "clusters.csv"), "--truth", str(out / "truth.json"),
                 "--out-dir", str(out)]) == 0
    score = {r["metric"]: float(r["value"]) for r in read_csv(out / "score.csv")}
    assert score["precision"] == 1.0 and score["recall"] == 1.0
    assert score["rmse_m"] <= 12.5


def test_score_missing_inputs(tmp_path):
    assert main(["score", "--out-dir", str(tmp_path / "o")]) == 2


# -- distances

def east_of(p, meters):
    """Point due east of ``p`` at least ``meters`` away, on the 8-decimal event grid."""
    deg = math.degrees(meters / (EARTH_RADIUS_M * math.cos(math.radians(p[0]))))
    return (p[0], round(p[1] + math.ceil(deg * 1e8) / 1e8, 8))


def two_anchor_users(gaps_m):
    rows = []
    for i, gap in enumerate(gaps_m):
        a = (round(1.30 + 0.02 * i, 8), 103.70)
        rows += visits(f"u{i}", [a, east_of(a, gap)] * 2)
    return rows


def test_distances_five_km_bin(tmp_path):
    ev = write_events(tmp_path / "ev.csv", two_anchor_users([5000] * 4))
    out = tmp_path / "o"
    assert main(["distances", "--events", str(ev), "--min-events", "1", "--out-dir", str(out)]) == 0
    hist = read_csv(out / "distance_histogram.csv")
    counts = {float(r["bin_lo"]): int(r["count_a"]) for r in hist}
    assert counts[5000.0] == 4 and sum(counts.values()) == 4
    assert not (out / "distance_ks.csv").exists()
    # own output as the reference gives a perfect match
    own = out / "distances.csv"
    out2 = tmp_path / "o2"
    assert main(["distances", "--events", str(ev), "--min-events", "1", "--reference", str(own),
                 "--out-dir", str(out2)]) == 0
    ks = {r["metric"]: float(r["value"]) for r in read_csv(out2 / "distance_ks.csv")}
    assert ks["ks_d"] == 0.0 and ks["ks_p"] == 1.0


def test_distances_hand_built_reference(tmp_path):
    ev = write_events(tmp_path / "ev.csv", two_anchor_users([2000, 3000, 4000, 5000]))
    ref = tmp_path / "ref.csv"
    ref.write_text("meters\n1000\n2500\n3500\n6000\n")
    out = tmp_path / "o"
    assert main(["distances", "--events", str(ev), "--min-events", "1", "--reference", str(ref),
                 "--out-dir", str(out)]) == 0
    ks = {r["metric"]: float(r["value"]) for r in read_csv(out / "distance_ks.csv")}
    # ECDF steps: the largest gap is 1/4, reached at 1000, 2500, 3500 and 5000 m
    assert ks["ks_d"] == pytest.approx(0.25, abs=1e-12)
    test_side = [float(r["meters"]) for r in read_csv(out / "distances.csv")]
    assert ks["ks_d"] == pytest.approx(ks_statistic_loop(test_side, [1000, 2500, 3500, 6000]), abs=1e-12)
    hist = {float(r["bin_lo"]): (r["count_a"], r["count_b"]) for r in read_csv(out / "distance_histogram.csv")}
    assert hist[1000.0] == ("0", "1") and hist[2000.0] == ("1", "1")


# -- transitions and zones

ZA, ZB, ZC = (1.32, 103.72), (1.32, 103.82), (1.32, 103.92)


def zone_file(tmp_path):
    return write_zones(tmp_path / "zones.geojson",
                       [square_zone("A", 1.30, 103.70, 0.05), square_zone("B", 1.30, 103.80, 0.05),
                        square_zone("C", 1.30, 103.90, 0.05)])


def transition_fixture(tmp_path):
    a2 = (1.34, 103.74)  # second location inside zone A
    rows = []
    rows += visits("u1", [ZA, ZB, ZA])                  # A->B, B->A
    rows += visits("u2", [ZA, ZB, a2, ZB])              # A->B twice via two clusters, B->A
    rows += visits("u3", [ZB, ZC])                      # B->C
    rows += visits("u4", [ZC, ZA], t0=SATURDAY + 3600)  # weekend only
    return write_events(tmp_path / "ev.csv", rows)


def od_counts(path):
    return {(r["from_zone"], r["to_zone"]): int(r["count"]) for r in read_csv(path)}


def test_transitions_hand_fixture(tmp_path):
    ev, zones = transition_fixture(tmp_path), zone_file(tmp_path)
    out = tmp_path / "o"
    args = ["transitions", "--events", str(ev), "--zones", str(zones), "--min-events", "1"]
    assert main(args + ["--out-dir", str(out)]) == 0
    assert od_counts(out / "od_matrix.csv") == {("A", "B"): 2, ("B", "A"): 2, ("B", "C"): 1}
    assert main(args + ["--all-days", "--out-dir", str(tmp_path / "all")]) == 0
    assert od_counts(tmp_path / "all" / "od_matrix.csv")[("C", "A")] == 1
    # own matrix as the reference correlates perfectly
    ref = tmp_path / "ref.csv"
    ref.write_text((out / "od_matrix.csv").read_text())
    assert main(args + ["--reference", str(ref), "--out-dir", str(tmp_path / "cmp")]) == 0
    rep = {r["metric"]: float(r["value"]) for r in read_csv(tmp_path / "cmp" / "od_comparison.csv")}
    assert rep["pearson_r"] == pytest.approx(1.0, abs=1e-12)
    ranked = read_csv(tmp_path / "cmp" / "od_ranked.csv")
    assert len(ranked) == 6 and ranked[0]["rank"] == "1"


def test_transitions_single_zone_and_mismatch(tmp_path, caplog):
    zones = zone_file(tmp_path)
    a2 = (1.34, 103.74)
    ev = write_events(tmp_path / "ev.csv", visits("u", [ZA, a2, ZA, a2]))
    out = tmp_path / "o"
    assert main(["transitions", "--events", str(ev), "--zones", str(zones), "--min-events", "1",
                 "--out-dir", str(out)]) == 0
    assert read_csv(out / "od_matrix.csv") == []
    assert "empty" in caplog.text
    ref = tmp_path / "ref.csv"
    ref.write_text("from_zone,to_zone,count\nA,Z,3\n")
    assert main(["transitions", "--events", str(ev), "--zones", str(zones), "--min-events", "1",
                 "--reference", str(ref), "--out-dir", str(tmp_path / "o2")]) == 2
    assert "Z" in caplog.text
    assert not (tmp_path / "o2").exists()


def test_compare_zones(tmp_path):
    ev, zones = transition_fixture(tmp_path), zone_file(tmp_path)
    ref = tmp_path / "zstats.csv"
    ref.write_text("zone_id,population,jobs\nA,100,10\nB,50,40\nC,10,20\n")
    out = tmp_path / "o"
    assert main(["compare-zones", "--events", str(ev), "--zones", str(zones), "--reference", str(ref),
                 "--min-events", "1", "--out-dir", str(out)]) == 0
    shares = {r["zone_id"]: r for r in read_csv(out / "zone_shares.csv")}
    # users: u1 A,B  u2 A,B  u3 B,C  u4 A,C
    assert {z: int(r["n_users"]) for z, r in shares.items()} == {"A": 3, "B": 3, "C": 2}
    assert float(shares["C"]["user_share"]) == 0.5
    assert float(shares["A"]["population_share"]) == pytest.approx(100 / 160)
    comp = {r["reference"]: r for r in read_csv(out / "zone_comparison.csv")}
    assert set(comp) == {"population", "jobs"} and comp["jobs"]["n_zones"] == "3"


def test_breakdown(tmp_path):
    regions = write_zones(tmp_path / "regions.geojson",
                          [square_zone("SG", 1.15, 103.6, 0.35), square_zone("MY", 1.5, 103.3, 2.0)])
    jb = (1.9, 103.7)
    rows = visits("a", [ZA, ZB]) + visits("b", [ZA, jb]) + visits("c", [jb]) + visits("d", [(0.2, 100.0)])
    ev = write_events(tmp_path / "ev.csv", rows)
    out = tmp_path / "o"
    assert main(["breakdown", "--events", str(ev), "--regions", str(regions), "--home", "SG",
                 "--min-events", "1", "--config", str(_no_box(tmp_path)), "--out-dir", str(out)]) == 0
    rows = {r["region"]: r for r in read_csv(out / "region_breakdown.csv")}
    assert rows["SG"]["only_region"] == "1"
    assert rows["MY"]["only_region"] == "1" and rows["MY"]["region_and_SG"] == "1"
    assert rows["unclassified"]["only_region"] == "1"


def _no_box(tmp_path):
    p = tmp_path / "nobox.toml"
    p.write_text('[filter]\nbbox_mode = "none"\n')
    return p


# -- determinism

def test_full_run_is_byte_identical(corpus, tmp_path):
    def run(d):
        ev = str(corpus / "events.csv")
        assert main(["cluster", "--events", ev, "--out-dir", str(d)]) == 0
        assert main(["distances", "--events", ev, "--out-dir", str(d)]) == 0
        assert main(["cluster", "--engine", "kmeans", "--events", ev, "--out-dir", str(d / "km")]) == 0
        return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*.csv"))}
    a, b = run(tmp_path / "a"), run(tmp_path / "b")
    assert a.keys() == b.keys() and len(a) >= 8
    assert a == b
