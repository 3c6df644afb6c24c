"""Synthetic mobility data: routine-plus-exploration users on a POI grid.

Each user owns a small home tile set with a personal routine matrix and a
per-user routine strength beta; non-routine moves jump to tiles weighted by
POI mass with exponential distance decay. One tile cluster dominates the POI
field, so entropy, distance, and POI analyses have structure to find. An
optional behavioral shift re-draws routines for part of the population.

All randomness derives from per-(user, day) substreams of the configured
seed, so generation is reproducible and shift injection can regenerate a
user's later days without disturbing earlier ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from . import geo
from .types import GpsPing, SpatioTemporalPoint, Trajectory


@dataclass
class SynthConfig:
    rows: int = 12
    cols: int = 12
    origin_lat: float = 42.30
    origin_lon: float = -71.10
    precision: int = 6
    n_users: int = 500
    n_days: int = 60
    seed: int = 0
    base_day: str = "2024-01-01"
    # user structure
    beta_a: float = 5.0
    beta_b: float = 2.0
    home_set_size: int = 7
    routine_alpha: float = 2.0
    home_poi_power: float = 0.7
    return_prob: float = 0.6
    # day structure
    day_length_mean: float = 8.0
    day_skip_prob: float = 0.05
    trip_prob: float = 0.12
    start_hour: float = 8.0
    gap_mean_s: float = 2700.0
    # POI field
    poi_base: float = 2.0
    poi_amplitude: float = 120.0
    poi_scale_km: float = 1.5
    anchor_row: int | None = None
    anchor_col: int | None = None
    # exploration kernel
    lambda_km: float = 3.0
    # optional behavioral shift
    shift_day: int | None = None
    shift_severity: float = 0.0
    shift_rate_drop: float = 0.4
    # ping-level output
    ping_level: bool = False

    def validate(self) -> None:
        if self.rows < 3 or self.cols < 3:
            raise ValueError(f"grid must be at least 3x3, got {self.rows}x{self.cols}")
        if not 10 <= self.n_users <= 10000:
            raise ValueError(f"n_users must be in [10, 10000], got {self.n_users}")
        if self.n_days < 2:
            raise ValueError(f"n_days must be >= 2, got {self.n_days}")
        if not 0.0 <= self.shift_severity <= 1.0:
            raise ValueError(f"shift_severity must be in [0, 1], got {self.shift_severity}")
        if self.shift_day is not None and not 0 < self.shift_day < self.n_days:
            raise ValueError(f"shift_day {self.shift_day} outside (0, {self.n_days})")
        if self.home_set_size < 2 or self.home_set_size > self.rows * self.cols:
            raise ValueError(f"home_set_size out of range: {self.home_set_size}")
        for name in ("day_skip_prob", "return_prob", "trip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")


@dataclass
class Grid:
    """Tile lattice with POI weights, pairwise distances, exploration kernel."""

    tiles: list[str]
    lats: np.ndarray
    lons: np.ndarray
    dist_km: np.ndarray
    poi_weights: np.ndarray
    poi_counts: dict[str, int]
    anchor_index: int
    explore: np.ndarray  # row-stochastic, zero diagonal


def _pairwise_haversine_km(lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    lat = np.radians(lats)[:, None]
    lon = np.radians(lons)[:, None]
    dlat = lat - lat.T
    dlon = lon - lon.T
    s = np.sin(dlat / 2.0) ** 2 + np.cos(lat) * np.cos(lat.T) * np.sin(dlon / 2.0) ** 2
    return 2.0 * geo.EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(s)))


def build_grid(config: SynthConfig) -> Grid:
    """Materialize the tile lattice and derived fields for a config."""
    d_lat, d_lon = geo.cell_size_deg(config.precision)
    lat_lo, _, lon_lo, _ = geo.decode_cell(
        geo.encode_geohash(config.origin_lat, config.origin_lon, config.precision)
    )
    tiles, lats, lons = [], [], []
    for r in range(config.rows):
        for c in range(config.cols):
            la = lat_lo + (r + 0.5) * d_lat
            lo = lon_lo + (c + 0.5) * d_lon
            tiles.append(geo.encode_geohash(la, lo, config.precision))
            lats.append(la)
            lons.append(lo)
    if len(set(tiles)) != len(tiles):
        raise ValueError("grid cells collide; origin too close to a pole")
    lats_a = np.array(lats)
    lons_a = np.array(lons)
    dist = _pairwise_haversine_km(lats_a, lons_a)

    a_row = config.rows // 2 if config.anchor_row is None else config.anchor_row
    a_col = config.cols // 2 if config.anchor_col is None else config.anchor_col
    if not (0 <= a_row < config.rows and 0 <= a_col < config.cols):
        raise ValueError(f"anchor ({a_row}, {a_col}) outside the grid")
    anchor = a_row * config.cols + a_col
    poi = config.poi_base + config.poi_amplitude * np.exp(
        -dist[:, anchor] / config.poi_scale_km
    )
    poi_counts = {t: int(round(w)) for t, w in zip(tiles, poi)}

    kernel = poi[None, :] * np.exp(-dist / config.lambda_km)
    np.fill_diagonal(kernel, 0.0)
    explore = kernel / kernel.sum(axis=1, keepdims=True)
    return Grid(tiles, lats_a, lons_a, dist, poi, poi_counts, anchor, explore)


@dataclass
class _UserState:
    beta: float
    home: int
    home_set: list[int]
    home_set_lookup: set[int]
    routine: dict[int, np.ndarray]  # origin index -> distribution over home_set
    trip_rate: float
    explore_pool: list[int]  # second-tier haunts revisited on ordinary days
    pool_weights: np.ndarray  # visit distribution over explore_pool


def _draw_user_state(
    config: SynthConfig,
    grid: Grid,
    rng: np.random.Generator,
    avoid: int | None = None,
) -> _UserState:
    beta = float(rng.beta(config.beta_a, config.beta_b))
    w = grid.poi_weights ** config.home_poi_power
    if avoid is not None:
        # relocation: keep the new home out of the user's old activity region,
        # which spans the POI centre, not just the old home tile; on small
        # grids fall back to the unmasked weights
        radius = min(_MOVE_MIN_KM, 0.5 * float(grid.dist_km.max()))
        masked = np.where(grid.dist_km[avoid] > radius, w, 0.0)
        if masked.sum() > 0.0:
            w = masked
    home = int(rng.choice(len(grid.tiles), p=w / w.sum()))
    order = np.argsort(grid.dist_km[home], kind="stable")
    home_set = [int(i) for i in order[: config.home_set_size]]
    n_set = config.home_set_size
    # routine rows are Dirichlet draws around a shared kernel-shaped base, so
    # co-located users broadly agree on where a tile leads; concentration
    # drops steeply with beta, so strong-routine users land on spiky personal
    # rows while weak-routine users stay close to the shared base
    scale = max(((1.0 - beta) / 0.35) ** _COUPLE_EXP, 0.02)
    alpha_u = config.routine_alpha * scale
    routine = {}
    for origin in home_set:
        kw_o = grid.explore[origin][home_set]
        total = kw_o.sum()
        if total > 0.0:
            shared = 0.85 * kw_o / total + 0.15 / n_set
        else:
            shared = np.full(n_set, 1.0 / n_set)
        routine[origin] = rng.dirichlet(alpha_u * n_set * shared)
    # exploratory users travel more: trip_prob is the population-scale knob,
    # (1 - beta) ties it to the user's routine strength
    trip_rate = min(1.0, 3.0 * config.trip_prob * (1.0 - beta))
    # second-tier haunts drawn once per user from the home exploration kernel,
    # so ordinary-day exploration mostly revisits a stable personal set
    kw = grid.explore[home].copy()
    kw[home_set] = 0.0
    pool_size = min(10, int((kw > 0).sum()))
    pool = [
        int(i)
        for i in rng.choice(len(grid.tiles), size=pool_size, replace=False, p=kw / kw.sum())
    ]
    # routine-heavy users concentrate their pool visits on a couple of
    # favourites; exploratory users spread them kernel-shaped, keeping row
    # entropy tied to beta instead of flattening at a uniform tail
    pw = kw[pool]
    pw_total = pw.sum()
    if pw_total > 0.0:
        pool_shared = 0.85 * pw / pw_total + 0.15 / pool_size
    else:
        pool_shared = np.full(pool_size, 1.0 / pool_size)
    pool_weights = rng.dirichlet(_POOL_BASE * scale * pool_size * pool_shared)
    return _UserState(
        beta, home, home_set, set(home_set), routine, trip_rate, pool, pool_weights
    )


# fraction of non-routine moves that revisit the personal pool rather than
# following the exploration kernel
_POOL_SHARE = 0.60
# exponent tying Dirichlet concentration to (1 - beta); higher values separate
# routine-heavy users from exploratory ones more sharply
_COUPLE_EXP = 2.0
# base concentration for pool visit weights
_POOL_BASE = 2.0
# minimum relocation distance for shifted users
_MOVE_MIN_KM = 8.0


def _day_epoch(base_day: str, day_index: int) -> tuple[str, float]:
    d = date.fromisoformat(base_day) + timedelta(days=day_index)
    epoch = (d - date(1970, 1, 1)).days * 86400.0
    return d.isoformat(), epoch


def _gen_day(
    config: SynthConfig,
    grid: Grid,
    state: _UserState,
    rng: np.random.Generator,
    day_start: float,
    day_length_mean: float,
) -> list[tuple[int, float]] | None:
    if rng.random() < config.day_skip_prob:
        return None
    trip = rng.random() < state.trip_rate
    # floor of 5 points: two-to-four-point days quantize the overlap ratio so
    # coarsely that they smear the similarity strata
    length = max(5, int(rng.poisson(day_length_mean)))
    n_tiles = len(grid.tiles)
    prefix_left = 0
    if trip:
        # away day: the day orbits a uniformly drawn base tile; half the time
        # it opens with a point or two at home before leaving, which yields
        # days sharing a small fraction of their tiles with ordinary ones
        base = int(rng.integers(n_tiles))
        if rng.random() < 0.5:
            prefix_left = 1 + int(rng.integers(2))
            cur = state.home
        else:
            cur = base
    else:
        base = state.home
        if rng.random() < 0.9:
            cur = base
        else:
            cur = state.home_set[rng.integers(len(state.home_set))]
    t = day_start + config.start_hour * 3600.0 + rng.uniform(0.0, 1800.0)
    day_end = day_start + 86100.0
    points = [(cur, t)]
    for _ in range(length - 1):
        t += 300.0 + rng.exponential(config.gap_mean_s)
        if t >= day_end:
            break
        if prefix_left > 0:
            prefix_left -= 1
            if prefix_left == 0:
                cur = base
            elif cur in state.home_set_lookup:
                idx = rng.choice(config.home_set_size, p=state.routine[cur])
                cur = state.home_set[int(idx)]
            else:
                cur = state.home
        elif not trip and cur in state.home_set_lookup and rng.random() < state.beta:
            idx = rng.choice(config.home_set_size, p=state.routine[cur])
            cur = state.home_set[int(idx)]
        elif cur != base and rng.random() < config.return_prob:
            cur = base
        elif not trip and state.explore_pool and rng.random() < _POOL_SHARE:
            cur = state.explore_pool[int(rng.choice(len(state.explore_pool), p=state.pool_weights))]
        else:
            cur = int(rng.choice(n_tiles, p=grid.explore[cur]))
        points.append((cur, t))
    return points


def _user_id(index: int) -> str:
    return f"u{index:04d}"


def _user_index(user_id: str) -> int:
    return int(user_id[1:])


def _emit(
    user: str, day: str, points: list[tuple[int, float]], tiles: list[str]
) -> Trajectory:
    return Trajectory(user, day, [SpatioTemporalPoint(tiles[i], t) for i, t in points])


@dataclass
class SynthDataset:
    trajectories: list[Trajectory]
    poi_counts: dict[str, int]
    tiles: list[str]
    config: SynthConfig = field(repr=False, default=None)


def generate(config: SynthConfig) -> SynthDataset:
    """Generate the full synthetic dataset for a config, shift included."""
    config.validate()
    grid = build_grid(config)
    trajectories: list[Trajectory] = []
    for u in range(config.n_users):
        state = _draw_user_state(config, grid, np.random.default_rng([config.seed, 1, u]))
        for d in range(config.n_days):
            day, epoch = _day_epoch(config.base_day, d)
            rng = np.random.default_rng([config.seed, 2, u, d])
            points = _gen_day(config, grid, state, rng, epoch, config.day_length_mean)
            if points:
                trajectories.append(_emit(_user_id(u), day, points, grid.tiles))
    if config.shift_day is not None and config.shift_severity > 0.0:
        trajectories = inject_shift(
            trajectories, config.shift_day, config.shift_severity, config
        )
    return SynthDataset(trajectories, grid.poi_counts, grid.tiles, config)


def inject_shift(
    trajectories: list[Trajectory],
    shift_day: int,
    severity: float,
    config: SynthConfig,
    seed: int | None = None,
) -> list[Trajectory]:
    """Re-draw part of the population's routines from shift_day onward.

    Each user is affected with probability = severity. Affected users adopt a
    freshly drawn home set and routine matrix at a uniformly random day in
    [shift_day, n_days), and their trip rate drops by shift_rate_drop from
    that day on. The POI field and exploration kernel are untouched, so
    collective structure survives the shift. severity 0 returns the data
    unchanged.
    """
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity must be in [0, 1], got {severity}")
    if not 0 < shift_day < config.n_days:
        raise ValueError(f"shift_day {shift_day} outside (0, {config.n_days})")
    if severity == 0.0:
        return list(trajectories)
    base = config.seed if seed is None else seed
    grid = build_grid(config)
    base_date = date.fromisoformat(config.base_day)

    by_user: dict[str, list[Trajectory]] = {}
    for traj in trajectories:
        by_user.setdefault(traj.user_id, []).append(traj)

    out: list[Trajectory] = []
    for user in sorted(by_user):
        u = _user_index(user)
        rng_s = np.random.default_rng([base, 3, u])
        if rng_s.random() >= severity:
            out.extend(by_user[user])
            continue
        adoption = int(rng_s.integers(shift_day, config.n_days))
        # the original home comes from the generation stream, which is keyed
        # by config.seed regardless of the seed used for the shift draw
        old_home = _draw_user_state(
            config, grid, np.random.default_rng([config.seed, 1, u])
        ).home
        new_state = _draw_user_state(config, grid, rng_s, avoid=old_home)
        rate = config.day_length_mean * (1.0 - config.shift_rate_drop)
        adoption_date = (base_date + timedelta(days=adoption)).isoformat()
        out.extend(t for t in by_user[user] if t.day < adoption_date)
        for d in range(adoption, config.n_days):
            day, epoch = _day_epoch(config.base_day, d)
            rng = np.random.default_rng([base, 4, u, d])
            points = _gen_day(config, grid, new_state, rng, epoch, rate)
            if points:
                out.append(_emit(user, day, points, grid.tiles))
    out.sort(key=lambda t: (t.user_id, t.day))
    return out


def scatter_pings(
    dataset: SynthDataset,
    pings_per_point: int = 5,
    dwell_s: float = 420.0,
    jitter_m: float = 8.0,
    seed: int | None = None,
) -> list[GpsPing]:
    """Scatter raw pings around each visit centroid (stop-detection exercise).

    Each visit becomes pings_per_point fixes spread over dwell_s seconds with
    Gaussian positional jitter clipped to 20 m, safely inside the default
    65 m stay radius. Consecutive same-tile visits may merge back into one
    stop on re-detection; this mode exercises the ingestion path, it is not a
    lossless round trip.
    """
    base = dataset.config.seed if seed is None else seed
    base_date = date.fromisoformat(dataset.config.base_day)
    clip_m = 20.0
    out: list[GpsPing] = []
    for traj in dataset.trajectories:
        u = _user_index(traj.user_id)
        d = (date.fromisoformat(traj.day) - base_date).days
        rng = np.random.default_rng([base, 5, u, d])
        for point in traj.points:
            lat, lon = geo.cell_centroid(point.tile)
            m_per_deg_lat = 111194.9
            m_per_deg_lon = m_per_deg_lat * math.cos(math.radians(lat))
            for i in range(pings_per_point):
                dx, dy = map(float, rng.normal(0.0, jitter_m, size=2))
                norm = math.hypot(dx, dy)
                if norm > clip_m:
                    dx, dy = dx * clip_m / norm, dy * clip_m / norm
                t = point.time + dwell_s * i / max(1, pings_per_point - 1)
                out.append(
                    GpsPing(
                        traj.user_id,
                        lat + dy / m_per_deg_lat,
                        lon + dx / m_per_deg_lon,
                        t,
                    )
                )
    out.sort(key=lambda p: (p.user_id, p.timestamp))
    return out
