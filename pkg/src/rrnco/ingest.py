"""Base-map producers: OSRM table-service client and a synthetic topology generator."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geo import BaseMap, GeoPoint, normalize_basemap

RETRY_COUNT = 3
RETRY_BACKOFF_S = 0.5


class OsrmError(Exception):
    """Base class for table-service client failures."""


class OsrmHttpError(OsrmError):
    """Transport failed (after retries) or no fixture matched the URL."""


class OsrmResponseError(OsrmError):
    """Body was not valid JSON or reported a non-Ok code."""


class OsrmShapeError(OsrmError):
    """Response matrix dimensions disagree with the request."""


@dataclass(frozen=True)
class OsrmEndpoint:
    base_url: str
    max_table_size: int = 500
    timeout_s: float = 30.0

    def __post_init__(self):
        if not self.base_url:
            raise ValueError("base_url must be non-empty")
        if self.max_table_size < 2:
            raise ValueError("max_table_size must be >= 2")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")


@dataclass(frozen=True)
class SynthConfig:
    n: int
    seed: int = 0
    asymmetry: float = 0.5
    detour_factor: float = 1.3
    speed_kmh: float = 30.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not 0.0 <= self.asymmetry <= 1.0:
            raise ValueError("asymmetry must lie in [0, 1]")
        if self.detour_factor < 1.0:
            raise ValueError("detour_factor must be >= 1")
        if self.speed_kmh <= 0:
            raise ValueError("speed_kmh must be positive")


class HttpTransport:
    """GET a URL with retries and exponential backoff; returns the body text."""

    def __init__(self, timeout_s: float = 30.0, retries: int = RETRY_COUNT,
                 backoff_s: float = RETRY_BACKOFF_S):
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s

    def __call__(self, url: str) -> str:
        import requests

        last = None
        for attempt in range(self.retries):
            try:
                resp = requests.get(url, timeout=self.timeout_s)
                resp.raise_for_status()
                return resp.text
            except Exception as exc:  # noqa: BLE001 - any transport failure retries
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff_s * (2.0 ** attempt))
        raise OsrmHttpError(f"GET failed after {self.retries} attempts: {last}") from last


class DictTransport:
    """Serve recorded bodies from an in-memory {url: body} mapping."""

    def __init__(self, bodies: dict):
        self.bodies = dict(bodies)

    def __call__(self, url: str) -> str:
        try:
            return self.bodies[url]
        except KeyError:
            raise OsrmHttpError(f"no recorded body for url: {url}") from None


class FixtureTransport(DictTransport):
    """Serve bodies from fixture files: first line the URL, rest the verbatim body."""

    def __init__(self, fixture_dir):
        bodies = {}
        for path in sorted(Path(fixture_dir).iterdir()):
            if not path.is_file():
                continue
            text = path.read_text()
            url, _, body = text.partition("\n")
            bodies[url.strip()] = body
        super().__init__(bodies)


def write_fixture(path, url: str, body: str) -> None:
    Path(path).write_text(url + "\n" + body)


def _fmt_coord(p: GeoPoint) -> str:
    return f"{p.lon:.6f},{p.lat:.6f}"  # OSRM wants lon,lat


def _chunk_url(base_url: str, src_points, dst_points) -> str:
    coords = ";".join(_fmt_coord(p) for p in list(src_points) + list(dst_points))
    ns = len(src_points)
    sources = ";".join(str(i) for i in range(ns))
    destinations = ";".join(str(ns + j) for j in range(len(dst_points)))
    return (f"{base_url.rstrip('/')}/table/v1/driving/{coords}"
            f"?sources={sources}&destinations={destinations}"
            f"&annotations=duration,distance")


def _chunks(n: int, size: int):
    for lo in range(0, n, size):
        yield lo, min(lo + size, n)


def table_request_urls(points, ep: OsrmEndpoint) -> list[str]:
    """The exact request URLs a fetch will issue, in order (for fixtures/mocks)."""
    urls = []
    n = len(points)
    for r0, r1 in _chunks(n, ep.max_table_size):
        for c0, c1 in _chunks(n, ep.max_table_size):
            urls.append(_chunk_url(ep.base_url, points[r0:r1], points[c0:c1]))
    return urls


def table_body(durations, distances) -> str:
    """A table-service JSON body with the given source x destination matrices."""

    def cell(v):
        return None if v is None or (isinstance(v, float) and np.isnan(v)) else float(v)

    return json.dumps({
        "code": "Ok",
        "durations": [[cell(v) for v in row] for row in np.asarray(durations, dtype=object)],
        "distances": [[cell(v) for v in row] for row in np.asarray(distances, dtype=object)],
    })


def _parse_table(body: str, n_src: int, n_dst: int):
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise OsrmResponseError(f"malformed JSON body: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("code", "Ok") != "Ok":
        raise OsrmResponseError(f"table service returned code {doc.get('code')!r}")
    out = []
    for key in ("distances", "durations"):
        rows = doc.get(key)
        if rows is None:
            raise OsrmResponseError(f"response missing {key!r}")
        if len(rows) != n_src or any(len(r) != n_dst for r in rows):
            raise OsrmShapeError(
                f"{key}: got {len(rows)}x{len(rows[0]) if rows else 0}, "
                f"expected {n_src}x{n_dst}")
        mat = np.array([[np.nan if v is None else float(v) for v in row] for row in rows],
                       dtype=np.float64)
        out.append(mat)
    return out[0], out[1]  # distances, durations


def osrm_table_fetch(points, ep: OsrmEndpoint, transport=None):
    """Fetch full NxN distance (m) and duration (s) matrices via the table service.

    Requests are issued in row-major source x destination blocks of at most
    max_table_size each; null entries become the NaN sentinel and the diagonal
    is forced to 0. Returns (raw_dist, raw_dur) as float64 arrays.
    """
    n = len(points)
    if n < 2:
        raise ValueError("need at least 2 points")
    if transport is None:
        transport = HttpTransport(timeout_s=ep.timeout_s)
    raw_dist = np.empty((n, n), dtype=np.float64)
    raw_dur = np.empty((n, n), dtype=np.float64)
    for r0, r1 in _chunks(n, ep.max_table_size):
        for c0, c1 in _chunks(n, ep.max_table_size):
            url = _chunk_url(ep.base_url, points[r0:r1], points[c0:c1])
            body = transport(url)
            dist_blk, dur_blk = _parse_table(body, r1 - r0, c1 - c0)
            raw_dist[r0:r1, c0:c1] = dist_blk
            raw_dur[r0:r1, c0:c1] = dur_blk
    np.fill_diagonal(raw_dist, 0.0)
    np.fill_diagonal(raw_dur, 0.0)
    return raw_dist, raw_dur


DEG_PER_METER = 1.0 / 111194.92664455873  # meridian degree at Earth radius 6371 km
SYNTH_SIDE_M = 3000.0  # synthetic city footprint, matching the 3x3 km base maps


def synth_basemap(cfg: SynthConfig) -> BaseMap:
    """Deterministic synthetic city: uniform points, detoured planar metric.

    raw_dist[i][j] = detour_factor * ||p_i - p_j|| * (1 + asymmetry * u_ij)
    with u_ij independent uniforms (u_ij != u_ji), durations = dist / speed.
    asymmetry=0 gives exactly symmetric matrices.
    """
    rng = np.random.default_rng(cfg.seed)
    pos = rng.uniform(0.0, SYNTH_SIDE_M, size=(cfg.n, 2))  # planar meters
    base = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    noise = rng.uniform(0.0, 1.0, size=(cfg.n, cfg.n))
    raw_dist = cfg.detour_factor * base * (1.0 + cfg.asymmetry * noise)
    np.fill_diagonal(raw_dist, 0.0)
    speed_ms = cfg.speed_kmh / 3.6
    raw_dur = raw_dist / speed_ms
    coords_raw = np.column_stack([pos[:, 1] * DEG_PER_METER, pos[:, 0] * DEG_PER_METER])
    return normalize_basemap(raw_dist, raw_dur, coords_raw,
                             name=f"synth-n{cfg.n}-s{cfg.seed}",
                             center=GeoPoint(0.0, 0.0))
