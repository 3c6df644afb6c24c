"""Shared domain types.

Tiles are plain geohash strings; everything downstream treats them as opaque
ordered identifiers. Times are POSIX seconds (UTC). Days are ISO date strings
so chronological order equals lexicographic order.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class GpsPing:
    """One raw GPS observation for one user."""

    user_id: str
    lat: float
    lon: float
    timestamp: float


@dataclass(frozen=True)
class SpatioTemporalPoint:
    """A visit: which tile, starting when."""

    tile: str
    time: float


@dataclass(frozen=True)
class Stop:
    """A dwell detected from raw pings, assigned to its cluster's tile.

    centroid_lat/centroid_lon are the cluster centroid, shared by all visits
    to the same place, so repeated visits map to a stable tile.
    """

    user_id: str
    centroid_lat: float
    centroid_lon: float
    start: float
    end: float
    tile: str


@dataclass
class Trajectory:
    """One user-day: the time-ordered tile sequence visited that day."""

    user_id: str
    day: str
    points: list[SpatioTemporalPoint]

    @property
    def tiles(self) -> list[str]:
        return [p.tile for p in self.points]

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class UserHistory:
    """A user's trajectory set plus the distinct tiles they visited."""

    user_id: str
    trajectories: list[Trajectory]
    visited: set[str] = field(default_factory=set)

    @classmethod
    def from_trajectories(cls, user_id: str, trajectories: list[Trajectory]) -> "UserHistory":
        visited = {t for traj in trajectories for t in traj.tiles}
        return cls(user_id, list(trajectories), visited)


@dataclass
class TransitionRow:
    """Sparse outgoing distribution from one origin tile.

    probs maps destination tile to probability (strictly positive, sums to 1).
    counts holds the raw transition counts the row was estimated from; rows
    produced by mixing carry counts=None. support is the total transition
    count behind the estimate.
    """

    origin: str
    probs: dict[str, float]
    support: int
    counts: dict[str, int] | None = None

    @classmethod
    def from_counts(cls, origin: str, counts: dict[str, int]) -> "TransitionRow":
        total = sum(counts.values())
        if total <= 0:
            raise ValueError(f"row {origin!r} has no transitions")
        probs = {dest: c / total for dest, c in counts.items() if c > 0}
        return cls(origin, probs, total, dict(counts))


@dataclass(frozen=True)
class Transition:
    """One observed move, tagged with the user and day it came from."""

    user_id: str
    day: str
    origin: str
    destination: str


@dataclass
class MixedModel:
    """Per-user composite: individual rows, per-origin entropies, shared C.

    entropies has a value exactly for origins present in individual_rows;
    absent origins are implicitly at maximum uncertainty (S = 1).
    """

    user_id: str
    individual_rows: dict[str, TransitionRow]
    entropies: dict[str, float]
    collective: dict[str, TransitionRow]
