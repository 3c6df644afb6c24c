"""CSV/JSON readers and writers, plus the on-disk model store.

Floats are serialized with repr(), which round-trips exactly in Python 3, so
a saved model reloads bit-identical. All CSV output uses "\n" line endings
regardless of platform.
"""

from __future__ import annotations

import csv
import json
import math
import os
from datetime import datetime, timezone
from urllib.parse import quote

from .errors import DataFormatError
from .geo import cell_centroid
from .types import (
    GpsPing,
    MixedModel,
    SpatioTemporalPoint,
    Stop,
    Trajectory,
    Transition,
    TransitionRow,
)

PINGS_HEADER = ["user_id", "lat", "lon", "timestamp"]
STOPS_HEADER = ["user_id", "tile", "time_start", "time_end"]
TRAJ_HEADER = ["user_id", "day", "tile", "time"]
TRANSITIONS_HEADER = ["user_id", "day", "origin", "destination"]
ROW_HEADER = ["origin", "destination", "probability", "count"]
POI_HEADER = ["tile", "poi_count"]

AMENITIES = [
    "bar",
    "cafe",
    "cinema",
    "clinic",
    "fast food",
    "grocery",
    "gym",
    "library",
    "office",
    "park",
    "pharmacy",
    "restaurant",
    "school",
    "shop",
    "transit stop",
]

STORE_FORMAT = 1


def parse_timestamp(raw: str) -> float:
    """Epoch seconds from either a numeric string or ISO-8601 text."""
    try:
        return float(raw)
    except ValueError:
        pass
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _open_reader(path: str, expected_header: list[str]) -> tuple[object, csv.reader]:
    fh = open(path, newline="")
    reader = csv.reader(fh)
    header = next(reader, None)
    if header != expected_header:
        fh.close()
        raise DataFormatError(
            f"{path}: expected header {','.join(expected_header)}, "
            f"got {','.join(header) if header else '<empty file>'}"
        )
    return fh, reader


def read_pings_csv(path: str, max_malformed: float = 0.01) -> tuple[list[GpsPing], int]:
    """Read raw pings; returns (pings, n_skipped).

    Rows that fail to parse are skipped and counted. If more than
    max_malformed of the data rows are bad the file is rejected outright.
    """
    fh, reader = _open_reader(path, PINGS_HEADER)
    pings: list[GpsPing] = []
    skipped = 0
    total = 0
    with fh:
        for row in reader:
            if not row:
                continue
            total += 1
            try:
                if len(row) != 4:
                    raise ValueError("wrong column count")
                lat = float(row[1])
                lon = float(row[2])
                ts = parse_timestamp(row[3])
                if not row[0]:
                    raise ValueError("empty user_id")
                if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                    raise ValueError("coordinates out of range")
                if not math.isfinite(ts):
                    raise ValueError("non-finite timestamp")
            except ValueError:
                skipped += 1
                continue
            pings.append(GpsPing(row[0], lat, lon, ts))
    if total > 0 and skipped > max_malformed * total:
        raise DataFormatError(
            f"{path}: {skipped} of {total} rows malformed "
            f"(limit {max_malformed:.0%})"
        )
    return pings, skipped


def write_stops_csv(stops: list[Stop], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STOPS_HEADER)
        for s in stops:
            w.writerow([s.user_id, s.tile, repr(s.start), repr(s.end)])


def read_stops_csv(path: str) -> list[Stop]:
    """Read stops back; centroids are reconstructed from tile centers."""
    fh, reader = _open_reader(path, STOPS_HEADER)
    stops: list[Stop] = []
    with fh:
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}: bad stop row {row!r}")
            lat, lon = cell_centroid(row[1])
            stops.append(Stop(row[0], lat, lon, float(row[2]), float(row[3]), row[1]))
    return stops


def write_trajectories_csv(trajectories: list[Trajectory], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJ_HEADER)
        for t in trajectories:
            for p in t.points:
                w.writerow([t.user_id, t.day, p.tile, repr(p.time)])


def read_trajectories_csv(path: str) -> list[Trajectory]:
    fh, reader = _open_reader(path, TRAJ_HEADER)
    grouped: dict[tuple[str, str], list[SpatioTemporalPoint]] = {}
    order: list[tuple[str, str]] = []
    with fh:
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}: bad trajectory row {row!r}")
            key = (row[0], row[1])
            if key not in grouped:
                grouped[key] = []
                order.append(key)
            grouped[key].append(SpatioTemporalPoint(row[2], float(row[3])))
    return [Trajectory(u, d, grouped[(u, d)]) for u, d in order]


def write_transitions_csv(transitions: list[Transition], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRANSITIONS_HEADER)
        for t in transitions:
            w.writerow([t.user_id, t.day, t.origin, t.destination])


def read_transitions_csv(path: str) -> list[Transition]:
    fh, reader = _open_reader(path, TRANSITIONS_HEADER)
    out: list[Transition] = []
    with fh:
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}: bad transition row {row!r}")
            out.append(Transition(row[0], row[1], row[2], row[3]))
    return out


def normalize_amenity(name: str) -> str:
    return name.strip().lower().replace("_", " ")


def read_poi(path: str) -> dict[str, int]:
    """POI counts per tile, from tile,poi_count CSV or a nested JSON map.

    The JSON form maps tile -> {amenity: count}; amenity names are
    normalized (lowercase, underscores to spaces) and counts summed.
    """
    if path.endswith(".json"):
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise DataFormatError(f"{path}: expected an object at top level")
        out: dict[str, int] = {}
        for tile, amenities in data.items():
            if not isinstance(amenities, dict):
                raise DataFormatError(f"{path}: tile {tile!r} value is not an object")
            total = 0
            for name, count in amenities.items():
                normalize_amenity(name)
                if not isinstance(count, int) or count < 0:
                    raise DataFormatError(
                        f"{path}: bad count {count!r} for {name!r} in {tile!r}"
                    )
                total += count
            out[tile] = total
        return out
    fh, reader = _open_reader(path, POI_HEADER)
    counts: dict[str, int] = {}
    with fh:
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise DataFormatError(f"{path}: bad POI row {row!r}")
            try:
                n = int(row[1])
            except ValueError as exc:
                raise DataFormatError(f"{path}: bad POI count {row[1]!r}") from exc
            if n < 0:
                raise DataFormatError(f"{path}: negative POI count in {row!r}")
            counts[row[0]] = n
    return counts


def write_poi_csv(counts: dict[str, int], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POI_HEADER)
        for tile in sorted(counts):
            w.writerow([tile, counts[tile]])


def _write_rows_csv(rows: dict[str, TransitionRow], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_HEADER)
        for origin in sorted(rows):
            row = rows[origin]
            for dest in sorted(row.probs):
                count = row.counts[dest] if row.counts is not None else 0
                w.writerow([origin, dest, repr(row.probs[dest]), count])


def _read_rows_csv(path: str) -> dict[str, TransitionRow]:
    fh, reader = _open_reader(path, ROW_HEADER)
    probs: dict[str, dict[str, float]] = {}
    counts: dict[str, dict[str, int]] = {}
    with fh:
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}: bad transition row {row!r}")
            probs.setdefault(row[0], {})[row[1]] = float(row[2])
            counts.setdefault(row[0], {})[row[1]] = int(row[3])
    out: dict[str, TransitionRow] = {}
    for origin in probs:
        p = probs[origin]
        c = counts[origin]
        has_counts = any(c.values())
        total = math.fsum(p.values())
        if not math.isclose(total, 1.0, rel_tol=0.0, abs_tol=1e-9):
            raise DataFormatError(f"{path}: row {origin!r} sums to {total!r}")
        out[origin] = TransitionRow(
            origin, p, sum(c.values()) if has_counts else 0, c if has_counts else None
        )
    return out


def save_models(models: dict[str, MixedModel], directory: str) -> None:
    """Write a model store: meta.json, collective.csv, entropies.csv,
    individual/<user>.csv. Output is deterministic, so reloading and saving
    again reproduces the files byte for byte.
    """
    if not models:
        raise ValueError("refusing to save an empty model store")
    users = sorted(models)
    collective = models[users[0]].collective
    for user in users:
        m = models[user]
        if m.user_id != user:
            raise ValueError(f"model keyed {user!r} carries user_id {m.user_id!r}")
        if m.collective is not collective and m.collective != collective:
            raise ValueError("models disagree on the collective matrix")
    os.makedirs(directory, exist_ok=True)
    os.makedirs(os.path.join(directory, "individual"), exist_ok=True)
    meta = {
        "format": STORE_FORMAT,
        "n_users": len(users),
        "users": users,
        "n_collective_origins": len(collective),
    }
    write_json(meta, os.path.join(directory, "meta.json"))
    _write_rows_csv(collective, os.path.join(directory, "collective.csv"))
    with open(os.path.join(directory, "entropies.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "origin", "entropy"])
        for user in users:
            ent = models[user].entropies
            for origin in sorted(ent):
                w.writerow([user, origin, repr(ent[origin])])
    for user in users:
        path = os.path.join(directory, "individual", quote(user, safe="") + ".csv")
        _write_rows_csv(models[user].individual_rows, path)


def load_models(directory: str) -> dict[str, MixedModel]:
    """Load a model store; all models share one collective matrix object."""
    meta_path = os.path.join(directory, "meta.json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"{directory}: not a model store ({exc})") from exc
    if meta.get("format") != STORE_FORMAT:
        raise DataFormatError(
            f"{directory}: unsupported store format {meta.get('format')!r}"
        )
    collective = _read_rows_csv(os.path.join(directory, "collective.csv"))
    entropies: dict[str, dict[str, float]] = {u: {} for u in meta["users"]}
    fh, reader = _open_reader(
        os.path.join(directory, "entropies.csv"), ["user_id", "origin", "entropy"]
    )
    with fh:
        for row in reader:
            if not row:
                continue
            if row[0] not in entropies:
                raise DataFormatError(f"{directory}: entropy row for unknown user {row[0]!r}")
            entropies[row[0]][row[1]] = float(row[2])
    models: dict[str, MixedModel] = {}
    for user in meta["users"]:
        path = os.path.join(directory, "individual", quote(user, safe="") + ".csv")
        models[user] = MixedModel(user, _read_rows_csv(path), entropies[user], collective)
    return models


def write_json(payload: dict, path: str) -> None:
    """Deterministic JSON: sorted keys, stable float repr, trailing newline."""
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
