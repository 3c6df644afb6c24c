"""Evaluation: accuracy metrics, spatial statistics, distance analyses.

Models are consumed as predictor callables (user_id, origin) -> ranked tile
list, so the same machinery evaluates the individual, collective, and mixed
models side by side.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

from . import geo
from .errors import InsufficientDataError, UndefinedStatisticError
from .model import (
    build_collective,
    build_mixed_model,
    entropy,
    filter_dataset,
    predict_topk,
    topk_from_probs,
    transitions_of,
)
from .overlap import BINS, EXCLUDED_ZERO
from .types import Trajectory, Transition, TransitionRow, UserHistory

PredictFn = Callable[[str, str], list[str]]


def acc_at_k(predictions: Sequence[Sequence[str]], truths: Sequence[str], k: int = 5) -> float:
    """Fraction of cases whose truth appears in the first k predictions."""
    if len(predictions) != len(truths):
        raise ValueError(f"length mismatch: {len(predictions)} predictions, {len(truths)} truths")
    if not truths:
        raise ValueError("acc_at_k of empty input")
    hits = sum(1 for pred, truth in zip(predictions, truths) if truth in pred[:k])
    return hits / len(truths)


def transition_accuracy(transitions: Sequence[Transition], predict: PredictFn, k: int = 5) -> float:
    """ACC@k of one predictor over a transition list."""
    preds = [predict(t.user_id, t.origin) for t in transitions]
    return acc_at_k(preds, [t.destination for t in transitions], k)


@dataclass(frozen=True)
class TileAccuracy:
    acc: float
    n: int
    low_support: bool


def _grouped_accuracy(
    transitions: Sequence[Transition],
    predict: PredictFn,
    key: Callable[[Transition], str],
    k: int,
    min_support: int,
) -> dict[str, TileAccuracy]:
    groups: dict[str, list[Transition]] = {}
    for t in transitions:
        groups.setdefault(key(t), []).append(t)
    out = {}
    for tile in sorted(groups):
        members = groups[tile]
        acc = transition_accuracy(members, predict, k)
        out[tile] = TileAccuracy(acc, len(members), len(members) < min_support)
    return out


def per_origin_accuracy(
    transitions: Sequence[Transition], predict: PredictFn, k: int = 5, min_support: int = 5
) -> dict[str, TileAccuracy]:
    """ACC@k per origin tile. Tiles under min_support are flagged, not dropped."""
    return _grouped_accuracy(transitions, predict, lambda t: t.origin, k, min_support)


def per_destination_accuracy(
    transitions: Sequence[Transition], predict: PredictFn, k: int = 5, min_support: int = 5
) -> dict[str, TileAccuracy]:
    """ACC@k per destination tile, for attraction-side analyses."""
    return _grouped_accuracy(transitions, predict, lambda t: t.destination, k, min_support)


def collective_entropy(collective: dict[str, TransitionRow]) -> dict[str, float]:
    """Normalized entropy of each collective row.

    The normalization denominator uses |L|, the number of distinct tiles
    appearing anywhere in the collective matrix (origins or destinations).
    """
    tiles = set(collective)
    for row in collective.values():
        tiles.update(row.probs)
    if len(tiles) < 2:
        raise UndefinedStatisticError(
            f"collective entropy undefined over {len(tiles)} distinct tile(s)"
        )
    n = len(tiles)
    return {origin: entropy(row, n) for origin, row in sorted(collective.items())}


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation."""
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 3:
        raise UndefinedStatisticError(f"pearson needs >= 3 points, got {len(x)}")
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    xd = xs - xs.mean()
    yd = ys - ys.mean()
    sx = math.sqrt(float(xd @ xd))
    sy = math.sqrt(float(yd @ yd))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedStatisticError("pearson undefined under zero variance")
    return float(xd @ yd) / (sx * sy)


def _neighbor_codes(code: str, diagonal: bool) -> list[str]:
    """Geohash codes of the 4- or 8-neighborhood of a cell."""
    lat, lon = geo.cell_centroid(code)
    d_lat, d_lon = geo.cell_size_deg(len(code))
    out = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            if not diagonal and dr != 0 and dc != 0:
                continue
            lat2 = lat + dr * d_lat
            if not -90.0 <= lat2 <= 90.0:
                continue
            lon2 = ((lon + dc * d_lon + 180.0) % 360.0) - 180.0
            out.append(geo.encode_geohash(lat2, lon2, len(code)))
    return out


def spatial_weights(
    tiles: Sequence[str],
    scheme: str = "queen",
    row_standardize: bool = True,
    cutoff_km: float = 5.0,
) -> sparse.csr_matrix:
    """Spatial weight matrix over geohash tiles.

    queen/rook: binary contiguity from geohash cell adjacency.
    inverse_distance: 1/d between centroids for pairs within cutoff_km.
    """
    index = {t: i for i, t in enumerate(tiles)}
    n = len(tiles)
    rows, cols, data = [], [], []
    if scheme in ("queen", "rook"):
        diagonal = scheme == "queen"
        for t in tiles:
            i = index[t]
            for nb in _neighbor_codes(t, diagonal):
                j = index.get(nb)
                if j is not None and j != i:
                    rows.append(i)
                    cols.append(j)
                    data.append(1.0)
    elif scheme == "inverse_distance":
        cents = np.array([geo.cell_centroid(t) for t in tiles])
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                d = geo.haversine_km((cents[i, 0], cents[i, 1]), (cents[j, 0], cents[j, 1]))
                if 0.0 < d <= cutoff_km:
                    rows.append(i)
                    cols.append(j)
                    data.append(1.0 / d)
    else:
        raise ValueError(f"unknown weight scheme {scheme!r}")
    w = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    if row_standardize:
        sums = np.asarray(w.sum(axis=1)).ravel()
        inv = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
        w = sparse.diags(inv) @ w
    return w.tocsr()


@dataclass(frozen=True)
class MoranResult:
    statistic: float
    p_value: float
    scheme: str
    permutations: int


def moran_i(
    values: dict[str, float],
    scheme: str = "queen",
    permutations: int = 999,
    seed: int = 0,
    row_standardize: bool = True,
    cutoff_km: float = 5.0,
) -> MoranResult:
    """Global Moran's I over per-tile values with a permutation test.

    The p-value is one-sided (greater): the fraction of permuted statistics
    at or above the observed one, with the +1 correction
    p = (1 + #{I_perm >= I_obs}) / (permutations + 1).

    Raises UndefinedStatisticError for fewer than 3 tiles, zero variance, or
    a weight matrix with no positive entries.
    """
    tiles = sorted(values)
    n = len(tiles)
    if n < 3:
        raise UndefinedStatisticError(f"moran_i needs >= 3 tiles, got {n}")
    x = np.array([values[t] for t in tiles], dtype=float)
    z = x - x.mean()
    den = float(z @ z)
    if den == 0.0:
        raise UndefinedStatisticError("moran_i undefined for a constant field")
    w = spatial_weights(tiles, scheme, row_standardize, cutoff_km)
    s0 = float(w.sum())
    if s0 == 0.0:
        raise UndefinedStatisticError("weight matrix has no positive entries")
    scale = n / s0
    stat = scale * float(z @ (w @ z)) / den
    if permutations < 1:
        return MoranResult(stat, float("nan"), scheme, 0)
    rng = np.random.default_rng(seed)
    count = 0
    for _ in range(permutations):
        zp = rng.permutation(z)
        if scale * float(zp @ (w @ zp)) / den >= stat:
            count += 1
    p = (1 + count) / (permutations + 1)
    return MoranResult(stat, p, scheme, permutations)


@dataclass(frozen=True)
class PoiSplit:
    anchor: str
    near: set[str]
    far: set[str]
    d_km: float


def poi_split(poi_counts: dict[str, int], tiles: Iterable[str], d_km: float = 2.0) -> PoiSplit:
    """Split tiles by centroid distance to the densest-POI tile.

    The anchor is the tile with the largest POI count (lexicographic
    tie-break). A tile is near iff its centroid lies within d_km of the
    anchor centroid.
    """
    if not poi_counts:
        raise UndefinedStatisticError("empty POI counts")
    anchor = min(poi_counts, key=lambda t: (-poi_counts[t], t))
    if poi_counts[anchor] <= 0:
        raise UndefinedStatisticError("anchor undefined: all POI counts are zero")
    anchor_c = geo.cell_centroid(anchor)
    near, far = set(), set()
    for t in tiles:
        if geo.haversine_km(geo.cell_centroid(t), anchor_c) <= d_km:
            near.add(t)
        else:
            far.add(t)
    return PoiSplit(anchor, near, far, d_km)


def transition_distances(transitions: Sequence[Transition]) -> np.ndarray:
    """Haversine km between origin and destination centroids, per transition."""
    cache: dict[str, tuple[float, float]] = {}

    def cent(tile: str) -> tuple[float, float]:
        c = cache.get(tile)
        if c is None:
            c = geo.cell_centroid(tile)
            cache[tile] = c
        return c

    return np.array([geo.haversine_km(cent(t.origin), cent(t.destination)) for t in transitions])


@dataclass
class DensitySeries:
    """Log-binned empirical density of positive distances."""

    edges: np.ndarray
    centers: np.ndarray
    density: np.ndarray
    n: int
    zero_fraction: float
    samples: np.ndarray = field(repr=False, default=None)


def log_binned_density(
    r: np.ndarray, n_bins: int = 24, r_range: tuple[float, float] | None = None
) -> DensitySeries:
    """Normalized histogram of positive r over log-spaced bins.

    Zero distances cannot enter log bins; their share is reported as
    zero_fraction and the density integrates to 1 over the positive part.
    """
    r = np.asarray(r, dtype=float)
    n_total = len(r)
    if n_total == 0:
        raise InsufficientDataError("no distances to bin")
    pos = r[r > 0.0]
    zero_fraction = 1.0 - len(pos) / n_total
    if len(pos) == 0:
        raise InsufficientDataError("no positive distances to bin")
    if r_range is None:
        r_range = (float(pos.min()), float(pos.max()))
    lo, hi = r_range
    if not 0.0 < lo < hi:
        raise ValueError(f"invalid range {r_range}")
    edges = np.logspace(math.log10(lo), math.log10(hi), n_bins + 1)
    counts, _ = np.histogram(pos, bins=edges)
    widths = np.diff(edges)
    density = counts / (counts.sum() * widths) if counts.sum() else np.zeros_like(widths)
    centers = np.sqrt(edges[:-1] * edges[1:])
    return DensitySeries(edges, centers, density, int(len(pos)), zero_fraction, pos)


@dataclass
class DistanceDistribution:
    near: DensitySeries
    far: DensitySeries


def distance_distribution(
    transitions: Sequence[Transition],
    split: PoiSplit,
    n_bins: int = 24,
    r_range: tuple[float, float] | None = None,
) -> DistanceDistribution:
    """Travel-distance densities for transitions from near vs far origins."""
    near_t = [t for t in transitions if t.origin in split.near]
    far_t = [t for t in transitions if t.origin in split.far]
    if not near_t or not far_t:
        raise InsufficientDataError(
            f"need transitions on both sides of the split, got {len(near_t)} near / {len(far_t)} far"
        )
    r_near = transition_distances(near_t)
    r_far = transition_distances(far_t)
    if r_range is None:
        both = np.concatenate([r_near[r_near > 0], r_far[r_far > 0]])
        if len(both) == 0:
            raise InsufficientDataError("all transitions are same-tile")
        r_range = (float(both.min()), float(both.max()))
    return DistanceDistribution(
        near=log_binned_density(r_near, n_bins, r_range),
        far=log_binned_density(r_far, n_bins, r_range),
    )


@dataclass(frozen=True)
class PowerLawFit:
    gamma: float
    stderr: float
    n_samples: int
    n_bins_used: int


def fit_power_law_density(r: Sequence[float], density: Sequence[float]) -> PowerLawFit:
    """Least-squares slope of log density against log r.

    Returns gamma with P(r) proportional to r^(-gamma), and the standard
    error of the fitted slope from the regression residuals.
    """
    r = np.asarray(r, dtype=float)
    d = np.asarray(density, dtype=float)
    keep = (r > 0) & (d > 0)
    lx = np.log(r[keep])
    ly = np.log(d[keep])
    if len(lx) < 3:
        raise InsufficientDataError(f"power-law fit needs >= 3 positive bins, got {len(lx)}")
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    dof = len(lx) - 2
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    stderr = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else float("inf")
    return PowerLawFit(float(-slope), stderr, len(lx), len(lx))


def power_law_fit(
    samples: Sequence[float],
    fit_range: tuple[float, float] | None = None,
    n_bins: int = 16,
) -> PowerLawFit:
    """Fit a power-law exponent to distance samples over a log-binned range.

    The default range starts at one tile diagonal (discretization floor) and
    ends at 10 km. Requires at least 30 samples inside the range.
    """
    if fit_range is None:
        fit_range = (geo.tile_diagonal_km(6), 10.0)
    lo, hi = fit_range
    if not 0.0 < lo < hi:
        raise ValueError(f"invalid fit range {fit_range}")
    r = np.asarray(samples, dtype=float)
    r = r[(r >= lo) & (r <= hi)]
    if len(r) < 30:
        raise InsufficientDataError(f"power-law fit needs >= 30 in-range samples, got {len(r)}")
    edges = np.logspace(math.log10(lo), math.log10(hi), n_bins + 1)
    counts, _ = np.histogram(r, bins=edges)
    widths = np.diff(edges)
    density = counts / (len(r) * widths)
    centers = np.sqrt(edges[:-1] * edges[1:])
    keep = counts > 0
    if int(keep.sum()) < 3:
        raise InsufficientDataError(
            f"power-law fit needs >= 3 occupied bins, got {int(keep.sum())}"
        )
    # unweighted least-squares slope over the occupied log bins; the slope
    # error propagates Poisson counting noise (var of log density ~ 1/count)
    # instead of relying on the residual scatter of a handful of bins
    lx = np.log(centers[keep])
    ly = np.log(density[keep])
    cx = lx - lx.mean()
    sxx = float(cx @ cx)
    slope = float(cx @ ly / sxx)
    stderr = math.sqrt(float(np.sum(cx**2 / counts[keep]))) / sxx
    return PowerLawFit(float(-slope), stderr, int(len(r)), int(keep.sum()))


@dataclass
class ShiftReport:
    """Per-month accuracies after a training cutoff, per model."""

    months: list[str]
    accuracy: dict[str, dict[str, float]]  # model -> month -> ACC@k
    counts: dict[str, int]  # month -> transitions evaluated
    relative_drop: dict[str, float]  # model -> (first - last) / first


def shift_evaluate(
    trajectories: list[Trajectory],
    cutoff_day: str,
    k: int = 5,
    min_points: int = 4,
    min_trajectories: int = 2,
    user_percentile: float = 95.0,
) -> ShiftReport:
    """Train on trajectories up to cutoff_day, evaluate per post-cutoff month.

    Models are trained on the full pre-cutoff history (no further holdout)
    with standard dataset filtering; evaluation is restricted to users that
    survived training. Months with no data are skipped with a warning.
    relative_drop compares the first and last post-cutoff months.
    """
    past = [t for t in trajectories if t.day <= cutoff_day]
    future = [t for t in trajectories if t.day > cutoff_day]
    if not past or not future:
        raise InsufficientDataError(
            f"cutoff {cutoff_day} leaves {len(past)} train / {len(future)} eval trajectories"
        )
    by_user: dict[str, list[Trajectory]] = {}
    for t in past:
        by_user.setdefault(t.user_id, []).append(t)
    histories = filter_dataset(
        [UserHistory.from_trajectories(u, ts) for u, ts in sorted(by_user.items())],
        min_points=min_points,
        min_trajectories=min_trajectories,
        user_percentile=user_percentile,
    )
    if not histories:
        raise InsufficientDataError("no users survive filtering before the cutoff")
    collective = build_collective(histories)
    models = {h.user_id: build_mixed_model(h, collective) for h in histories}

    def predict_i(user_id: str, origin: str) -> list[str]:
        row = models[user_id].individual_rows.get(origin)
        return topk_from_probs(row.probs, k) if row is not None else []

    def predict_c(user_id: str, origin: str) -> list[str]:
        row = collective.get(origin)
        return topk_from_probs(row.probs, k) if row is not None else []

    def predict_m(user_id: str, origin: str) -> list[str]:
        return predict_topk(models[user_id], origin, k)

    predictors = {"I": predict_i, "C": predict_c, "M": predict_m}

    monthly: dict[str, list[Transition]] = {}
    for traj in future:
        if traj.user_id not in models:
            continue
        monthly.setdefault(traj.day[:7], []).extend(transitions_of(traj))

    if not monthly:
        raise InsufficientDataError("no post-cutoff transitions for trained users")
    first_month = min(monthly)
    last_month = max(monthly)
    months = []
    cursor = first_month
    while cursor <= last_month:
        months.append(cursor)
        year, mon = int(cursor[:4]), int(cursor[5:7])
        cursor = f"{year + mon // 12:04d}-{mon % 12 + 1:02d}"
    present = []
    for m in months:
        if m not in monthly or not monthly[m]:
            warnings.warn(f"month {m} has no evaluable transitions; skipped", stacklevel=2)
            continue
        present.append(m)

    accuracy = {name: {} for name in predictors}
    counts = {}
    for m in present:
        counts[m] = len(monthly[m])
        for name, fn in predictors.items():
            accuracy[name][m] = transition_accuracy(monthly[m], fn, k)

    relative_drop = {}
    for name in predictors:
        first = accuracy[name][present[0]]
        last = accuracy[name][present[-1]]
        relative_drop[name] = (first - last) / first if first > 0 else float("nan")
    return ShiftReport(present, accuracy, counts, relative_drop)
