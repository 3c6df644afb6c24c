"""Spatial primitives: geohash tessellation, great-circle distance, stops.

Raw per-user GPS streams become tile-level visits in three steps: anchor
stay-point runs (pass 1), merging of nearby runs into shared stop locations
(pass 2), and daily partitioning. Tiles are geohash cells at a configurable
precision; at precision 6 a cell is roughly 1.2 km x 609.4 m.
"""

from __future__ import annotations

import math
from datetime import datetime, timezone

from .errors import DataFormatError
from .types import GpsPing, SpatioTemporalPoint, Stop, Trajectory

BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"
_BASE32_INDEX = {c: i for i, c in enumerate(BASE32)}

EARTH_RADIUS_KM = 6371.0


def encode_geohash(lat: float, lon: float, precision: int = 6) -> str:
    """Encode a coordinate to its geohash cell identifier.

    Standard interleaved bisection, longitude first, over the base-32
    alphabet ``0123456789bcdefghjkmnpqrstuvwxyz``.

    Parameters
    ----------
    lat, lon : float
        Coordinate in degrees; lat in [-90, 90], lon in [-180, 180].
    precision : int
        Number of geohash characters, 1 to 12.

    Returns
    -------
    str
        Geohash string of length ``precision``.

    Examples
    --------
    >>> encode_geohash(0.0, 0.0, 6)
    's00000'
    """
    if not -90.0 <= lat <= 90.0:
        raise DataFormatError(f"latitude out of range: {lat}")
    if not -180.0 <= lon <= 180.0:
        raise DataFormatError(f"longitude out of range: {lon}")
    if not 1 <= precision <= 12:
        raise DataFormatError(f"precision out of range: {precision}")

    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars = []
    bit = 0
    value = 0
    even = True  # even bit positions refine longitude
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2.0
            if lon >= mid:
                value = value * 2 + 1
                lon_lo = mid
            else:
                value = value * 2
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2.0
            if lat >= mid:
                value = value * 2 + 1
                lat_lo = mid
            else:
                value = value * 2
                lat_hi = mid
        even = not even
        bit += 1
        if bit == 5:
            chars.append(BASE32[value])
            bit = 0
            value = 0
    return "".join(chars)


def decode_cell(code: str) -> tuple[float, float, float, float]:
    """Return the bounding box (lat_lo, lat_hi, lon_lo, lon_hi) of a cell."""
    if not code:
        raise DataFormatError("empty geohash")
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    even = True
    for ch in code:
        try:
            value = _BASE32_INDEX[ch]
        except KeyError:
            raise DataFormatError(f"invalid geohash character {ch!r} in {code!r}") from None
        for shift in range(4, -1, -1):
            bit = (value >> shift) & 1
            if even:
                mid = (lon_lo + lon_hi) / 2.0
                if bit:
                    lon_lo = mid
                else:
                    lon_hi = mid
            else:
                mid = (lat_lo + lat_hi) / 2.0
                if bit:
                    lat_lo = mid
                else:
                    lat_hi = mid
            even = not even
    return lat_lo, lat_hi, lon_lo, lon_hi


def cell_centroid(code: str) -> tuple[float, float]:
    """Return the (lat, lon) center of a geohash cell."""
    lat_lo, lat_hi, lon_lo, lon_hi = decode_cell(code)
    return (lat_lo + lat_hi) / 2.0, (lon_lo + lon_hi) / 2.0


def cell_size_deg(precision: int) -> tuple[float, float]:
    """Return (d_lat, d_lon) cell extent in degrees at a given precision."""
    if not 1 <= precision <= 12:
        raise DataFormatError(f"precision out of range: {precision}")
    bits = 5 * precision
    lon_bits = (bits + 1) // 2
    lat_bits = bits // 2
    return 180.0 / (1 << lat_bits), 360.0 / (1 << lon_bits)


def tile_diagonal_km(precision: int = 6, lat: float = 0.0) -> float:
    """Diagonal of one cell in km at a given latitude.

    Used as the default lower cutoff for distance fits: below one diagonal,
    distances reflect the tessellation, not travel.
    """
    d_lat, d_lon = cell_size_deg(precision)
    h = d_lat * math.pi / 180.0 * EARTH_RADIUS_KM
    w = d_lon * math.pi / 180.0 * EARTH_RADIUS_KM * math.cos(math.radians(lat))
    return math.hypot(h, w)


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance between two (lat, lon) pairs, in kilometers.

    Earth radius fixed at 6371.0 km.

    Examples
    --------
    >>> round(haversine_km((0.0, 0.0), (0.0, 1.0)), 2)
    111.19
    """
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    s = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(s)))


class _Candidate:
    """Pass-1 stay point: a maximal run of pings near the run's anchor."""

    __slots__ = ("lat", "lon", "start", "end", "n_pings", "anchor_lat", "anchor_lon")

    def __init__(self, lat, lon, start, end, n_pings, anchor_lat, anchor_lon):
        self.lat = lat
        self.lon = lon
        self.start = start
        self.end = end
        self.n_pings = n_pings
        self.anchor_lat = anchor_lat
        self.anchor_lon = anchor_lon


def _stay_point_runs(
    pings: list[GpsPing], radius_m: float, min_duration_s: float
) -> list[_Candidate]:
    """Find maximal temporal runs within radius_m of the run's first ping.

    The anchor variant: a run grows while every new ping stays within
    radius_m of the run's FIRST point. Runs shorter than min_duration_s are
    discarded and the scan resumes one ping later.
    """
    out = []
    n = len(pings)
    i = 0
    while i < n:
        anchor = pings[i]
        j = i + 1
        while j < n:
            d_m = haversine_km((anchor.lat, anchor.lon), (pings[j].lat, pings[j].lon)) * 1000.0
            if d_m > radius_m:
                break
            j += 1
        if pings[j - 1].timestamp - anchor.timestamp >= min_duration_s:
            run = pings[i:j]
            out.append(
                _Candidate(
                    lat=sum(p.lat for p in run) / len(run),
                    lon=sum(p.lon for p in run) / len(run),
                    start=run[0].timestamp,
                    end=run[-1].timestamp,
                    n_pings=len(run),
                    anchor_lat=anchor.lat,
                    anchor_lon=anchor.lon,
                )
            )
            i = j
        else:
            i += 1
    return out


def _eps_components(points: list[tuple[float, float]], eps_km: float) -> list[int]:
    """Label points by epsilon-connected component (DBSCAN with min_samples=1).

    With min_samples=1 every point is a core point, so DBSCAN clusters are
    exactly the connected components of the epsilon-neighborhood graph.
    """
    n = len(points)
    labels = [-1] * n
    cluster = 0
    for s in range(n):
        if labels[s] != -1:
            continue
        labels[s] = cluster
        frontier = [s]
        while frontier:
            u = frontier.pop()
            for v in range(n):
                if labels[v] == -1 and haversine_km(points[u], points[v]) <= eps_km:
                    labels[v] = cluster
                    frontier.append(v)
        cluster += 1
    return labels


def detect_stops(
    pings: list[GpsPing],
    radius_m: float = 65.0,
    min_duration_s: float = 300.0,
    dbscan_eps_m: float | None = None,
    precision: int = 6,
) -> list[Stop]:
    """Turn one user's time-sorted ping stream into stop visits.

    Pass 1 finds stay-point runs: maximal stretches where every ping lies
    within ``radius_m`` of the run's first ping and the run spans at least
    ``min_duration_s``. Pass 2 clusters run centroids with DBSCAN
    (eps = ``dbscan_eps_m``, min_samples = 1) so nearby runs share one stop
    location; temporally consecutive runs in the same cluster merge into a
    single visit. Each stop is tagged with the geohash tile of its cluster
    centroid.

    Parameters
    ----------
    pings : list of GpsPing
        One user's stream, sorted by timestamp.
    radius_m : float
        Stay-point radius in meters.
    min_duration_s : float
        Minimum dwell to qualify as a stay point.
    dbscan_eps_m : float, optional
        Merge radius for pass 2; defaults to ``radius_m - 5``.
    precision : int
        Geohash precision for the stop tile.

    Returns
    -------
    list of Stop
        Time-ordered, pairwise non-overlapping visits.
    """
    if not pings:
        return []
    users = {p.user_id for p in pings}
    if len(users) != 1:
        raise DataFormatError(f"detect_stops expects one user's stream, got {sorted(users)}")
    user_id = pings[0].user_id
    if dbscan_eps_m is None:
        dbscan_eps_m = radius_m - 5.0

    candidates = _stay_point_runs(pings, radius_m, min_duration_s)
    if not candidates:
        return []

    labels = _eps_components([(c.lat, c.lon) for c in candidates], dbscan_eps_m / 1000.0)

    # ping-count weighted centroid per cluster; shared by all member visits
    centroids: dict[int, tuple[float, float]] = {}
    for lab in set(labels):
        members = [c for c, l in zip(candidates, labels) if l == lab]
        w = sum(c.n_pings for c in members)
        centroids[lab] = (
            sum(c.lat * c.n_pings for c in members) / w,
            sum(c.lon * c.n_pings for c in members) / w,
        )

    stops: list[Stop] = []
    k = 0
    while k < len(candidates):
        lab = labels[k]
        end_idx = k
        while end_idx + 1 < len(candidates) and labels[end_idx + 1] == lab:
            end_idx += 1
        lat, lon = centroids[lab]
        stops.append(
            Stop(
                user_id=user_id,
                centroid_lat=lat,
                centroid_lon=lon,
                start=candidates[k].start,
                end=candidates[end_idx].end,
                tile=encode_geohash(lat, lon, precision),
            )
        )
        k = end_idx + 1
    return stops


def day_label(timestamp: float, tz_offset_hours: float = 0.0) -> str:
    """ISO date of a POSIX timestamp under a fixed UTC offset."""
    shifted = timestamp + tz_offset_hours * 3600.0
    return datetime.fromtimestamp(shifted, tz=timezone.utc).date().isoformat()


def to_daily_trajectories(
    stops: list[Stop], tz_offset_hours: float = 0.0
) -> list[Trajectory]:
    """Partition stop visits into per-user, per-calendar-day trajectories.

    A stop belongs to the day containing its start time under the configured
    fixed UTC offset. Within a day, points keep stop start order.
    """
    grouped: dict[tuple[str, str], list[Stop]] = {}
    for stop in stops:
        key = (stop.user_id, day_label(stop.start, tz_offset_hours))
        grouped.setdefault(key, []).append(stop)

    out = []
    for (user_id, day), day_stops in sorted(grouped.items()):
        day_stops.sort(key=lambda s: s.start)
        points = [SpatioTemporalPoint(s.tile, s.start) for s in day_stops]
        out.append(Trajectory(user_id=user_id, day=day, points=points))
    return out
