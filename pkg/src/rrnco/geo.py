"""Geographic primitives, base-map normalization, and the on-disk container."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0

# Sentinel for unreachable entries in raw distance/duration matrices.
UNREACHABLE = float("nan")

BASEMAP_MAGIC = b"RRNC"
BASEMAP_VERSION = 1


class BaseMapFormatError(ValueError):
    """Base class for base-map container parse failures."""


class BadMagicError(BaseMapFormatError):
    pass


class VersionMismatchError(BaseMapFormatError):
    pass


class TruncatedPayloadError(BaseMapFormatError):
    pass


class PolarDegeneracyError(ValueError):
    pass


@dataclass(frozen=True)
class GeoPoint:
    lat: float  # degrees in [-90, 90]
    lon: float  # degrees in [-180, 180]

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError("GeoPoint coordinates must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class BBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if self.lat_min > self.lat_max or self.lon_min > self.lon_max:
            raise ValueError("BBox edges out of order (antimeridian boxes unsupported)")


def haversine(p1: GeoPoint, p2: GeoPoint, radius_km: float = EARTH_RADIUS_KM) -> float:
    """Great-circle distance in km between two points on a sphere."""
    if radius_km <= 0:
        raise ValueError("radius_km must be positive")
    phi1 = math.radians(p1.lat)
    phi2 = math.radians(p2.lat)
    dphi = math.radians(p2.lat - p1.lat)
    dlam = math.radians(p2.lon - p1.lon)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * radius_km * math.asin(min(1.0, math.sqrt(a)))


def bbox_for_area(center: GeoPoint, side_km: float, radius_km: float = EARTH_RADIUS_KM) -> BBox:
    """Square box of the given side length (km) centered on a point.

    North/south edges sit side_km/2 along the meridian; east/west edges sit
    side_km/2 along the center's parallel, so the longitudinal half-width
    grows with 1/cos(lat).
    """
    if abs(center.lat) >= 89.0:
        raise PolarDegeneracyError(f"center latitude {center.lat} too close to a pole")
    if side_km < 0:
        raise ValueError("side_km must be nonnegative")
    km_per_deg = math.pi * radius_km / 180.0  # meridian arc length of one degree
    half_lat = (side_km / 2.0) / km_per_deg
    half_lon = (side_km / 2.0) / (km_per_deg * math.cos(math.radians(center.lat)))
    return BBox(center.lat - half_lat, center.lat + half_lat,
                center.lon - half_lon, center.lon + half_lon)


def angle_matrix(coords: np.ndarray) -> np.ndarray:
    """Pairwise direction matrix in (-1, 1]: atan2(dy, dx) / pi, diagonal 0.

    coords: (n, 2) planar positions, column 0 = x, column 1 = y.
    """
    coords = np.asarray(coords)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError("coords must have shape (n, 2)")
    dx = coords[None, :, 0] - coords[:, None, 0]
    dy = coords[None, :, 1] - coords[:, None, 1]
    phi = np.arctan2(dy.astype(np.float64), dx.astype(np.float64)) / np.pi
    np.fill_diagonal(phi, 0.0)
    return phi.astype(coords.dtype) if coords.dtype.kind == "f" else phi


@dataclass
class BaseMap:
    """A city's sampled locations plus normalized asymmetric travel matrices."""

    name: str
    center: GeoPoint
    n_tot: int
    coords_raw: np.ndarray   # (n, 2) float64, degrees (lat, lon)
    coords_norm: np.ndarray  # (n, 2) float32 in [0, 1]^2
    dist: np.ndarray         # (n, n) float32, unitless
    dur: np.ndarray          # (n, n) float32, unitless
    dist_scale: float        # meters per unit
    dur_scale: float         # seconds per unit
    unreachable_mask: np.ndarray  # (n, n) bool

    def validate(self) -> None:
        n = self.n_tot
        if n < 2:
            raise ValueError("base map needs at least 2 locations")
        for arr, shape in ((self.coords_raw, (n, 2)), (self.coords_norm, (n, 2)),
                           (self.dist, (n, n)), (self.dur, (n, n)),
                           (self.unreachable_mask, (n, n))):
            if arr.shape != shape:
                raise ValueError(f"field shape {arr.shape} != {shape}")
        for m in (self.dist, self.dur):
            if not np.all(np.isfinite(m)):
                raise ValueError("matrix entries must be finite")
            if np.any(m < 0):
                raise ValueError("matrix entries must be nonnegative")
            if np.any(np.diagonal(m) != 0):
                raise ValueError("matrix diagonal must be exactly 0")
            if np.any(m[~self.unreachable_mask] > 1.0):
                raise ValueError("reachable entries must lie in [0, 1]")
        cn = self.coords_norm
        if np.any(cn < 0) or np.any(cn > 1):
            raise ValueError("coords_norm must lie in [0, 1]^2")
        for ax in range(2):
            col = self.coords_raw[:, ax]
            if col.max() > col.min():
                if cn[:, ax].min() != 0.0 or cn[:, ax].max() != 1.0:
                    raise ValueError("coords_norm must span [0, 1] per non-degenerate axis")


def minmax_normalize(coords: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Per-axis min-max map to [0, 1]; degenerate axes map to 0.5."""
    coords = np.asarray(coords, dtype=np.float64)
    lo = coords.min(axis=0)
    span = coords.max(axis=0) - lo
    out = np.empty_like(coords)
    for ax in range(coords.shape[1]):
        if span[ax] > 0:
            out[:, ax] = (coords[:, ax] - lo[ax]) / span[ax]
        else:
            out[:, ax] = 0.5
    return out.astype(dtype)


def _normalize_matrix(raw: np.ndarray, clip_percentile: float = 99.5):
    """Normalize one raw travel matrix to [0, 1] units.

    Entries equal to the NaN sentinel are unreachable: after clipping
    abnormal finite values at the given percentile, they are replaced by
    2x the maximum remaining finite value and flagged. The matrix is then
    divided by its maximum. Returns (matrix float32, scale, mask).
    """
    raw = np.array(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise ValueError("matrix must be square")
    n = raw.shape[0]
    if n < 2:
        raise ValueError("matrix must be at least 2x2")
    np.fill_diagonal(raw, 0.0)  # self-loops are zero, never unreachable
    mask = np.isnan(raw)
    off_diag = ~np.eye(n, dtype=bool)
    if mask[off_diag].all():
        raise ValueError("every off-diagonal entry is unreachable")
    finite = raw[~mask]
    if np.any(finite < 0):
        raise ValueError("raw entries must be nonnegative")
    clip_val = float(np.percentile(finite, clip_percentile, method="higher"))
    out = np.where(mask, 0.0, np.minimum(raw, clip_val))
    max_finite = out[~mask].max()
    out[mask] = 2.0 * max_finite
    scale = out.max()
    if scale <= 0:  # all points coincident; keep zeros
        scale = 1.0
    out /= scale
    return out.astype(np.float32), float(scale), mask


def normalize_basemap(raw_dist: np.ndarray, raw_dur: np.ndarray, coords_raw: np.ndarray,
                      name: str = "", center: GeoPoint | None = None) -> BaseMap:
    """Build a BaseMap from raw meter/second matrices with NaN for unreachable."""
    raw_dist = np.asarray(raw_dist, dtype=np.float64)
    raw_dur = np.asarray(raw_dur, dtype=np.float64)
    coords_raw = np.asarray(coords_raw, dtype=np.float64)
    if raw_dist.shape != raw_dur.shape:
        raise ValueError("dist and dur must have equal shapes")
    n = raw_dist.shape[0]
    if coords_raw.shape != (n, 2):
        raise ValueError("coords_raw must have shape (n, 2)")
    dist, dist_scale, mask_d = _normalize_matrix(raw_dist)
    dur, dur_scale, mask_t = _normalize_matrix(raw_dur)
    if center is None:
        center = GeoPoint(float(coords_raw[:, 0].mean()), float(coords_raw[:, 1].mean()))
    bmap = BaseMap(
        name=name,
        center=center,
        n_tot=n,
        coords_raw=coords_raw,
        coords_norm=minmax_normalize(coords_raw),
        dist=dist,
        dur=dur,
        dist_scale=dist_scale,
        dur_scale=dur_scale,
        unreachable_mask=mask_d | mask_t,
    )
    bmap.validate()
    return bmap


def write_basemap(bmap: BaseMap, path) -> None:
    """Serialize to the binary container (little-endian, magic RRNC, v1)."""
    n = bmap.n_tot
    name_bytes = bmap.name.encode("utf-8")
    parts = [
        BASEMAP_MAGIC,
        struct.pack("<I", BASEMAP_VERSION),
        struct.pack("<I", n),
        struct.pack("<I", len(name_bytes)),
        name_bytes,
        struct.pack("<dd", bmap.center.lat, bmap.center.lon),
        struct.pack("<dd", bmap.dist_scale, bmap.dur_scale),
        np.ascontiguousarray(bmap.coords_raw, dtype="<f8").tobytes(),
        np.ascontiguousarray(bmap.coords_norm, dtype="<f4").tobytes(),
        np.ascontiguousarray(bmap.dist, dtype="<f4").tobytes(),
        np.ascontiguousarray(bmap.dur, dtype="<f4").tobytes(),
        np.packbits(bmap.unreachable_mask.reshape(-1)).tobytes(),
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_basemap(path) -> BaseMap:
    """Parse the binary container written by write_basemap."""
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def take(nbytes: int) -> bytes:
        nonlocal pos
        if pos + nbytes > len(buf):
            raise TruncatedPayloadError(f"need {nbytes} bytes at offset {pos}, file has {len(buf)}")
        chunk = buf[pos:pos + nbytes]
        pos += nbytes
        return chunk

    magic = take(4)
    if magic != BASEMAP_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    (version,) = struct.unpack("<I", take(4))
    if version != BASEMAP_VERSION:
        raise VersionMismatchError(f"unsupported container version {version}")
    (n,) = struct.unpack("<I", take(4))
    (name_len,) = struct.unpack("<I", take(4))
    name = take(name_len).decode("utf-8")
    lat, lon = struct.unpack("<dd", take(16))
    dist_scale, dur_scale = struct.unpack("<dd", take(16))
    coords_raw = np.frombuffer(take(8 * n * 2), dtype="<f8").reshape(n, 2).copy()
    coords_norm = np.frombuffer(take(4 * n * 2), dtype="<f4").reshape(n, 2).copy()
    dist = np.frombuffer(take(4 * n * n), dtype="<f4").reshape(n, n).copy()
    dur = np.frombuffer(take(4 * n * n), dtype="<f4").reshape(n, n).copy()
    mask_bytes = take((n * n + 7) // 8)
    mask = np.unpackbits(np.frombuffer(mask_bytes, dtype=np.uint8), count=n * n)
    return BaseMap(
        name=name,
        center=GeoPoint(lat, lon),
        n_tot=n,
        coords_raw=coords_raw,
        coords_norm=coords_norm,
        dist=dist,
        dur=dur,
        dist_scale=dist_scale,
        dur_scale=dur_scale,
        unreachable_mask=mask.astype(bool).reshape(n, n),
    )


def basemap_equal(a: BaseMap, b: BaseMap) -> bool:
    """Bit-exact equality on every field."""
    return (
        a.name == b.name
        and a.center == b.center
        and a.n_tot == b.n_tot
        and a.dist_scale == b.dist_scale
        and a.dur_scale == b.dur_scale
        and np.array_equal(a.coords_raw, b.coords_raw)
        and np.array_equal(a.coords_norm, b.coords_norm)
        and np.array_equal(a.dist, b.dist)
        and np.array_equal(a.dur, b.dur)
        and np.array_equal(a.unreachable_mask, b.unreachable_mask)
    )
