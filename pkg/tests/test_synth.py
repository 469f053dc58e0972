import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from actloc.errors import InvalidInputError
from actloc.geo import GeoPoint, Projection, haversine_m
from actloc.synth import (AnchorSpec, GroundTruth, SynthUserSpec, derive_seed, generate, largest_remainder,
                          make_corpus, match_user, score_detection, specs_from_json, specs_to_json)

A = GeoPoint(1.30, 103.80)
B = GeoPoint(1.32, 103.82)


def test_single_anchor_without_dispersion():
    traces, truth = generate([SynthUserSpec("u", [AnchorSpec(A, 1.0, 0.0)], 10, seed=1)])
    tr = traces[0]
    assert len(tr) == 10
    assert len(set(zip(tr.lat.tolist(), tr.lon.tolist()))) == 1
    assert tr.lat[0] == pytest.approx(A.lat, abs=1e-12)
    assert truth.labels["u"].tolist() == [0] * 10


def test_weights_split_events_exactly():
    spec = SynthUserSpec("u", [AnchorSpec(A, 0.9), AnchorSpec(B, 0.1)], 100, seed=2)
    _, truth = generate([spec])
    assert np.bincount(truth.labels["u"]).tolist() == [90, 10]


def test_largest_remainder():
    assert largest_remainder([0.5, 0.5], 3) == [2, 1]
    assert largest_remainder([1 / 3] * 3, 10) == [4, 3, 3]
    assert largest_remainder([0.45, 0.45, 0.1], 20) == [9, 9, 2]
    assert sum(largest_remainder([0.2, 0.3, 0.5], 7)) == 7


def test_en_route_events():
    spec = SynthUserSpec("u", [AnchorSpec(A, 0.5, 10), AnchorSpec(B, 0.5, 10)], 200, 0.2, seed=3)
    traces, truth = generate([spec])
    lab = truth.labels["u"]
    assert np.count_nonzero(lab == -1) == 40
    proj = Projection(A)
    xy = proj.forward(traces[0].lat, traces[0].lon)
    bxy = proj.forward(B.lat, B.lon)
    route = xy[lab == -1]
    # en-route events lie on the segment between the two anchors
    cross = np.abs(route[:, 0] * bxy[1] - route[:, 1] * bxy[0]) / np.hypot(*bxy)
    assert cross.max() < 1.0
    t = route @ bxy / (bxy @ bxy)
    assert t.min() >= -1e-9 and t.max() <= 1 + 1e-9


def test_timestamps_sorted_and_in_window():
    spec = SynthUserSpec("u", [AnchorSpec(A, 1.0)], 50, time_window=(1000.0, 2000.0), seed=4)
    tr = generate([spec])[0][0]
    assert np.all(np.diff(tr.timestamps) >= 0)
    assert tr.timestamps.min() >= 1000 and tr.timestamps.max() <= 2000


def test_determinism_and_seed_sensitivity():
    specs = make_corpus(20, 5)
    a, ta = generate(specs)
    b, tb = generate(make_corpus(20, 5))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.lat, y.lat)
        np.testing.assert_array_equal(x.timestamps, y.timestamps)
    assert ta.to_json() == tb.to_json()
    c, _ = generate(make_corpus(20, 6))
    assert not np.array_equal(a[0].lat[:5], c[0].lat[:5]) or len(a[0]) != len(c[0])


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        SynthUserSpec("u", [AnchorSpec(A, 1.0)], 10, en_route_fraction=0.1).validate()
    with pytest.raises(InvalidInputError):
        SynthUserSpec("u", [AnchorSpec(A, 0.6), AnchorSpec(B, 0.6)], 10).validate()
    with pytest.raises(InvalidInputError):
        SynthUserSpec("u", [AnchorSpec(A, 1.0)], 0).validate()
    with pytest.raises(InvalidInputError):
        SynthUserSpec("u", [AnchorSpec(A, 0.5), AnchorSpec(B, 0.5)], 10, 0.6).validate()
    with pytest.raises(InvalidInputError):
        generate([SynthUserSpec("u", [AnchorSpec(A, 1.0)], 5), SynthUserSpec("u", [AnchorSpec(B, 1.0)], 5)])


def test_corpus_shape():
    specs = make_corpus(50, 1)
    ids = [s.user_id for s in specs]
    assert ids == sorted(ids) and ids[0] == "u00"
    for s in specs:
        assert 1 <= len(s.anchors) <= 5 and 20 <= s.n_events <= 200
        assert s.en_route_fraction == (0.1 if len(s.anchors) > 1 else 0.0)
        assert s.seed == derive_seed(1, s.user_id)
        locs = [a.location for a in s.anchors]
        for i in range(len(locs)):
            for j in range(i + 1, len(locs)):
                assert haversine_m(locs[i], locs[j]) >= 1000


def test_spec_json_round_trip():
    specs = make_corpus(5, 3)
    doc = json.loads(json.dumps(specs_to_json(specs)))
    back = specs_from_json(doc)
    assert specs_to_json(back) == specs_to_json(specs)
    no_seed = specs_from_json([{"user_id": "x", "n_events": 3, "anchors": [{"lat": 1.3, "lon": 103.8, "weight": 1}]}],
                              master_seed=9)
    assert no_seed[0].seed == derive_seed(9, "x")
    with pytest.raises(InvalidInputError):
        specs_from_json({"not": "a list"})
    with pytest.raises(InvalidInputError):
        specs_from_json([{"user_id": "x"}])


def test_truth_round_trip(tmp_path):
    _, truth = generate(make_corpus(4, 2))
    truth.save(tmp_path / "t.json")
    back = GroundTruth.load(tmp_path / "t.json")
    assert back.to_json() == truth.to_json()


@pytest.mark.parametrize("sigma", [30.0, 50.0, 120.0])
def test_dispersion_converges_to_sigma(sigma):
    spec = SynthUserSpec("u", [AnchorSpec(A, 1.0, sigma)], 400, seed=int(sigma))
    tr = generate([spec])[0][0]
    xy = Projection(A).forward(tr.lat, tr.lon)
    # per-axis RMS of an isotropic Gaussian is sigma
    rms_axis = math.sqrt(((xy - xy.mean(axis=0)) ** 2).sum(axis=1).mean() / 2)
    assert abs(rms_axis - sigma) / sigma < 0.10


def test_score_examples():
    anchors = [GeoPoint(1.30 + 0.01 * i, 103.8) for i in range(4)]
    truth = GroundTruth({"u": anchors}, {"u": np.zeros(0)})
    perfect = score_detection({"u": anchors}, truth)
    assert (perfect.precision, perfect.recall, perfect.rmse_m) == (1.0, 1.0, 0.0)
    extra = score_detection({"u": anchors + [GeoPoint(1.5, 103.9)]}, truth)
    assert extra.precision == pytest.approx(0.8) and extra.recall == 1.0
    one = GroundTruth({"u": [A]}, {"u": np.zeros(0)})
    off = GeoPoint(A.lat + 300 / 111_195, A.lon)
    miss = score_detection({"u": [off]}, one)
    assert miss.precision == 0 and miss.recall == 0 and math.isnan(miss.rmse_m)
    empty = score_detection({}, GroundTruth())
    assert math.isnan(empty.precision) and math.isnan(empty.recall)


def test_greedy_matching_is_one_to_one():
    anchors = [GeoPoint(1.3, 103.8), GeoPoint(1.3, 103.8 + 150 / 111_000)]
    det = [GeoPoint(1.3, 103.8 + 60 / 111_000)]
    m = match_user(det, anchors, 250)
    assert len(m) == 1 and m[0][1] == 0


points = st.lists(st.tuples(st.floats(-0.01, 0.01), st.floats(-0.01, 0.01)), min_size=0, max_size=6)


@settings(max_examples=60, deadline=None)
@given(points, points, st.randoms(use_true_random=False), st.floats(50, 1000))
def test_score_symmetric_and_radius_respected(det, true, rnd, radius):
    det = [GeoPoint(1.3 + a, 103.8 + b) for a, b in det]
    true = [GeoPoint(1.3 + a, 103.8 + b) for a, b in true]
    truth = GroundTruth({"u": true}, {"u": np.zeros(0)})
    s1 = score_detection({"u": det}, truth, radius)
    shuffled = list(det)
    rnd.shuffle(shuffled)
    s2 = score_detection({"u": shuffled}, truth, radius)
    assert (s1.n_matched, s1.n_detected, s1.n_true) == (s2.n_matched, s2.n_detected, s2.n_true)
    if s1.n_matched:
        assert s1.rmse_m == pytest.approx(s2.rmse_m, rel=1e-12)
    for i, j, d in match_user(det, true, radius):
        assert d <= radius
        assert d == haversine_m(det[i], true[j])
