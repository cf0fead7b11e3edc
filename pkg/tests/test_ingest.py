import json

import numpy as np
import pytest

from rrnco import geo, ingest
from rrnco.geo import GeoPoint
from rrnco.ingest import (DictTransport, FixtureTransport, OsrmEndpoint, SynthConfig,
                          osrm_table_fetch, synth_basemap, table_body,
                          table_request_urls, write_fixture)


def _points(n, seed=0):
    rng = np.random.default_rng(seed)
    return [GeoPoint(float(rng.uniform(-0.01, 0.01)), float(rng.uniform(-0.01, 0.01)))
            for _ in range(n)]


def _mock_transport(points, ep, dist, dur):
    """Bodies for every planned request, sliced from ground-truth matrices."""
    bodies = {}
    n = len(points)
    mts = ep.max_table_size
    blocks = [(lo, min(lo + mts, n)) for lo in range(0, n, mts)]
    urls = iter(table_request_urls(points, ep))
    for r0, r1 in blocks:
        for c0, c1 in blocks:
            bodies[next(urls)] = table_body(dur[r0:r1, c0:c1], dist[r0:r1, c0:c1])
    return DictTransport(bodies)


def test_endpoint_validation():
    with pytest.raises(ValueError):
        OsrmEndpoint(base_url="")
    with pytest.raises(ValueError):
        OsrmEndpoint(base_url="http://x", max_table_size=1)


def test_coincident_points_zero_fixture():
    pts = [GeoPoint(1.0, 2.0), GeoPoint(1.0, 2.0)]
    ep = OsrmEndpoint(base_url="http://osrm.test")
    transport = _mock_transport(pts, ep, np.zeros((2, 2)), np.zeros((2, 2)))
    raw_dist, raw_dur = osrm_table_fetch(pts, ep, transport=transport)
    assert np.array_equal(raw_dist, np.zeros((2, 2)))
    assert np.array_equal(raw_dur, np.zeros((2, 2)))


def test_fixture_file_3x3_exact(tmp_path):
    pts = _points(3, seed=1)
    ep = OsrmEndpoint(base_url="http://osrm.test")
    # hand-written body: distances in meters, durations in seconds, one null
    dist = [[0.0, 812.5, 433.25], [790.0, 0.0, None], [440.75, 655.5, 0.0]]
    dur = [[0.0, 97.2, 55.1], [95.3, 0.0, None], [56.4, 80.9, 0.0]]
    (url,) = table_request_urls(pts, ep)
    body = json.dumps({"code": "Ok", "durations": dur, "distances": dist})
    write_fixture(tmp_path / "req0.txt", url, body)
    raw_dist, raw_dur = osrm_table_fetch(pts, ep, transport=FixtureTransport(tmp_path))
    assert raw_dist[0, 1] == 812.5 and raw_dist[2, 0] == 440.75
    assert raw_dur[0, 2] == 55.1 and raw_dur[2, 1] == 80.9
    assert np.isnan(raw_dist[1, 2]) and np.isnan(raw_dur[1, 2])
    assert np.all(np.diagonal(raw_dist) == 0)


@pytest.mark.parametrize("n,mts", [(5, 2), (7, 3), (10, 10)])
def test_chunked_equals_single_call(n, mts):
    rng = np.random.default_rng(n * 100 + mts)
    dist = rng.uniform(100, 5000, size=(n, n))
    dur = rng.uniform(30, 900, size=(n, n))
    np.fill_diagonal(dist, 0)
    np.fill_diagonal(dur, 0)
    pts = _points(n, seed=n)

    ep_chunked = OsrmEndpoint(base_url="http://osrm.test", max_table_size=mts)
    ep_single = OsrmEndpoint(base_url="http://osrm.test", max_table_size=1000)
    d1, t1 = osrm_table_fetch(pts, ep_chunked, transport=_mock_transport(pts, ep_chunked, dist, dur))
    d2, t2 = osrm_table_fetch(pts, ep_single, transport=_mock_transport(pts, ep_single, dist, dur))
    assert np.array_equal(d1, d2)
    assert np.array_equal(t1, t2)
    assert np.array_equal(d1, dist)


def test_fetch_does_not_mutate_points():
    pts = _points(4, seed=2)
    before = [(p.lat, p.lon) for p in pts]
    ep = OsrmEndpoint(base_url="http://osrm.test", max_table_size=2)
    dist = np.ones((4, 4)) * 5
    np.fill_diagonal(dist, 0)
    osrm_table_fetch(pts, ep, transport=_mock_transport(pts, ep, dist, dist))
    assert [(p.lat, p.lon) for p in pts] == before


def test_http_error_after_retries():
    calls = []

    def failing(url):
        calls.append(url)
        raise ingest.OsrmHttpError("boom")

    ep = OsrmEndpoint(base_url="http://osrm.test")
    with pytest.raises(ingest.OsrmHttpError):
        osrm_table_fetch(_points(2), ep, transport=failing)


def test_malformed_json_error():
    ep = OsrmEndpoint(base_url="http://osrm.test")
    with pytest.raises(ingest.OsrmResponseError):
        osrm_table_fetch(_points(2), ep, transport=lambda url: "not json {")


def test_dimension_mismatch_error():
    ep = OsrmEndpoint(base_url="http://osrm.test")
    body = json.dumps({"code": "Ok", "durations": [[0.0]], "distances": [[0.0]]})
    with pytest.raises(ingest.OsrmShapeError):
        osrm_table_fetch(_points(3), ep, transport=lambda url: body)


def test_missing_fixture_is_http_error(tmp_path):
    ep = OsrmEndpoint(base_url="http://osrm.test")
    with pytest.raises(ingest.OsrmHttpError):
        osrm_table_fetch(_points(2), ep, transport=FixtureTransport(tmp_path))


def test_synth_symmetric_when_asymmetry_zero():
    bmap = synth_basemap(SynthConfig(n=20, seed=3, asymmetry=0.0))
    assert np.array_equal(bmap.dist, bmap.dist.T)
    assert np.array_equal(bmap.dur, bmap.dur.T)


def test_synth_deterministic():
    a = synth_basemap(SynthConfig(n=30, seed=4))
    b = synth_basemap(SynthConfig(n=30, seed=4))
    assert geo.basemap_equal(a, b)
    c = synth_basemap(SynthConfig(n=30, seed=5))
    assert not geo.basemap_equal(a, c)


def test_synth_asymmetry_present():
    bmap = synth_basemap(SynthConfig(n=50, seed=6, asymmetry=1.0))
    off = ~np.eye(50, dtype=bool)
    assert np.any(bmap.dist[off] != bmap.dist.T[off])


def test_synth_satisfies_basemap_invariants():
    for seed in range(5):
        bmap = synth_basemap(SynthConfig(n=15, seed=seed, asymmetry=0.7))
        bmap.validate()
        assert not bmap.unreachable_mask.any()


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(n=1)
    with pytest.raises(ValueError):
        SynthConfig(n=5, asymmetry=1.5)
    with pytest.raises(ValueError):
        SynthConfig(n=5, detour_factor=0.5)
