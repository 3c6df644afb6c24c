import math

import numpy as np
import pytest

from mobmix import evaluation, geo
from mobmix.errors import InsufficientDataError, UndefinedStatisticError
from mobmix.types import SpatioTemporalPoint, Trajectory, Transition, TransitionRow


def lattice(n_rows, n_cols, lat0=42.30, lon0=-71.10, precision=6):
    """Row-major geohash tiles forming a contiguous n_rows x n_cols block."""
    lat_lo, lat_hi, lon_lo, lon_hi = geo.decode_cell(geo.encode_geohash(lat0, lon0, precision))
    d_lat, d_lon = lat_hi - lat_lo, lon_hi - lon_lo
    return [
        geo.encode_geohash(lat_lo + (i + 0.5) * d_lat, lon_lo + (j + 0.5) * d_lon, precision)
        for i in range(n_rows)
        for j in range(n_cols)
    ]


def trans(user, origin, dest, day="2024-01-01"):
    return Transition(user, day, origin, dest)


def table_predictor(table):
    return lambda user_id, origin: table.get(origin, [])


# --- accuracy ---


def test_acc_at_k_counts_topk_hits():
    preds = [["a", "b", "c"], ["x", "y", "z"], ["m"]]
    truths = ["b", "q", "m"]
    assert evaluation.acc_at_k(preds, truths, k=3) == pytest.approx(2 / 3)
    assert evaluation.acc_at_k(preds, truths, k=1) == pytest.approx(1 / 3)


def test_acc_at_k_input_checks():
    with pytest.raises(ValueError):
        evaluation.acc_at_k([["a"]], [])
    with pytest.raises(ValueError):
        evaluation.acc_at_k([], [])


def test_transition_accuracy_uses_predictor():
    ts = [trans("u", "a", "b"), trans("u", "b", "a"), trans("u", "a", "c")]
    predict = table_predictor({"a": ["b"], "b": ["a"]})
    assert evaluation.transition_accuracy(ts, predict, k=1) == pytest.approx(2 / 3)


def test_per_origin_accuracy_groups_and_flags_support():
    ts = [trans("u", "aa", "b")] * 5 + [trans("u", "bb", "b"), trans("u", "bb", "c")]
    predict = table_predictor({"aa": ["b"], "bb": ["c"]})
    got = evaluation.per_origin_accuracy(ts, predict, k=1, min_support=5)
    assert got["aa"].acc == 1.0
    assert got["aa"].n == 5
    assert not got["aa"].low_support
    assert got["bb"].acc == 0.5
    assert got["bb"].low_support


def test_per_destination_accuracy_groups_by_destination():
    ts = [trans("u", "a", "dd"), trans("u", "b", "dd"), trans("u", "a", "ee")]
    predict = table_predictor({"a": ["dd"], "b": ["x"]})
    got = evaluation.per_destination_accuracy(ts, predict, k=1, min_support=1)
    assert got["dd"].n == 2
    assert got["dd"].acc == 0.5
    assert got["ee"].n == 1


# --- collective entropy and correlation ---


def test_collective_entropy_uses_all_distinct_tiles():
    collective = {
        "a": TransitionRow("a", {"b": 0.5, "c": 0.5}, 2),
        "b": TransitionRow("b", {"a": 1.0}, 1),
    }
    got = evaluation.collective_entropy(collective)
    # |L| = 3 tiles; uniform over 2 gives ln2/ln3, single destination gives 0
    assert got["a"] == pytest.approx(math.log(2) / math.log(3))
    assert got["b"] == 0.0


def test_collective_entropy_undefined_for_single_tile():
    collective = {"a": TransitionRow("a", {"a": 1.0}, 1)}
    with pytest.raises(UndefinedStatisticError):
        evaluation.collective_entropy(collective)


def test_pearson_known_values():
    assert evaluation.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert evaluation.pearson([1, 2, 3], [6, 4, 2]) == pytest.approx(-1.0)
    # hand value: x=[1,2,3,4], y=[1,3,2,4] -> r = 0.8
    assert evaluation.pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)


def test_pearson_error_cases():
    with pytest.raises(UndefinedStatisticError):
        evaluation.pearson([1, 2], [1, 2])
    with pytest.raises(UndefinedStatisticError):
        evaluation.pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        evaluation.pearson([1, 2, 3], [1, 2])


# --- spatial weights and Moran's I ---


def test_spatial_weights_rook_and_queen_neighbor_counts():
    tiles = lattice(3, 3)
    rook = evaluation.spatial_weights(tiles, "rook", row_standardize=False)
    queen = evaluation.spatial_weights(tiles, "queen", row_standardize=False)
    rook_deg = np.asarray(rook.sum(axis=1)).ravel()
    queen_deg = np.asarray(queen.sum(axis=1)).ravel()
    # center cell: 4 rook, 8 queen; corners: 2 rook, 3 queen
    assert rook_deg[4] == 4
    assert queen_deg[4] == 8
    assert rook_deg[0] == 2
    assert queen_deg[0] == 3
    assert (rook.toarray() == rook.toarray().T).all()


def test_spatial_weights_row_standardized_rows_sum_to_one():
    tiles = lattice(3, 3)
    w = evaluation.spatial_weights(tiles, "queen", row_standardize=True)
    sums = np.asarray(w.sum(axis=1)).ravel()
    assert sums == pytest.approx(np.ones(9))


def test_spatial_weights_inverse_distance_cutoff():
    tiles = lattice(1, 3)
    d01 = geo.haversine_km(geo.cell_centroid(tiles[0]), geo.cell_centroid(tiles[1]))
    w = evaluation.spatial_weights(
        tiles, "inverse_distance", row_standardize=False, cutoff_km=d01 * 1.5
    )
    dense = w.toarray()
    assert dense[0, 1] == pytest.approx(1.0 / d01)
    assert dense[0, 2] == 0.0  # two cells away, beyond the cutoff


def test_spatial_weights_unknown_scheme():
    with pytest.raises(ValueError):
        evaluation.spatial_weights(lattice(1, 3), "knight")


def test_moran_checkerboard_is_exactly_minus_one():
    tiles = lattice(2, 2)
    values = {t: 1.0 if (i // 2 + i % 2) % 2 == 0 else -1.0 for i, t in enumerate(tiles)}
    got = evaluation.moran_i(values, scheme="rook", permutations=0, row_standardize=False)
    assert got.statistic == -1.0
    assert math.isnan(got.p_value)
    assert got.permutations == 0


def test_moran_gradient_is_positive_and_significant():
    tiles = lattice(4, 4)
    values = {t: float(i // 4) for i, t in enumerate(tiles)}  # smooth row gradient
    got = evaluation.moran_i(values, scheme="queen", permutations=999, seed=0)
    assert got.statistic > 0.5
    assert got.p_value <= 0.01
    assert got.scheme == "queen"


def test_moran_permutation_seed_is_reproducible():
    tiles = lattice(3, 3)
    rng = np.random.default_rng(5)
    values = {t: float(v) for t, v in zip(tiles, rng.standard_normal(9))}
    a = evaluation.moran_i(values, permutations=99, seed=7)
    b = evaluation.moran_i(values, permutations=99, seed=7)
    assert a == b


def test_moran_undefined_cases():
    tiles = lattice(2, 2)
    with pytest.raises(UndefinedStatisticError):
        evaluation.moran_i({tiles[0]: 1.0, tiles[1]: 2.0})
    with pytest.raises(UndefinedStatisticError):
        evaluation.moran_i({t: 3.0 for t in tiles})
    # two clusters farther apart than the cutoff: no positive weights
    far = lattice(1, 2) + lattice(1, 2, lat0=44.0, lon0=-60.0)
    values = {t: float(i) for i, t in enumerate(far)}
    with pytest.raises(UndefinedStatisticError):
        evaluation.moran_i(values, scheme="inverse_distance", cutoff_km=0.5)


# --- POI split and distances ---


def test_poi_split_anchor_and_membership():
    tiles = lattice(1, 8)
    counts = {tiles[0]: 3, tiles[1]: 10, tiles[5]: 2}
    split = evaluation.poi_split(counts, tiles, d_km=2.0)
    assert split.anchor == tiles[1]
    assert tiles[1] in split.near
    assert split.near | split.far == set(tiles)
    assert not (split.near & split.far)
    # cells are ~1.2 km apart along this row; two cells away exceeds 2 km
    assert tiles[2] in split.near
    assert tiles[7] in split.far


def test_poi_split_tie_breaks_lexicographically():
    tiles = sorted(lattice(1, 3))
    counts = {tiles[2]: 5, tiles[0]: 5}
    split = evaluation.poi_split(counts, tiles)
    assert split.anchor == tiles[0]


def test_poi_split_undefined_cases():
    tiles = lattice(1, 2)
    with pytest.raises(UndefinedStatisticError):
        evaluation.poi_split({}, tiles)
    with pytest.raises(UndefinedStatisticError):
        evaluation.poi_split({tiles[0]: 0}, tiles)


def test_transition_distances_zero_for_self_loops():
    tiles = lattice(1, 2)
    ts = [trans("u", tiles[0], tiles[0]), trans("u", tiles[0], tiles[1])]
    d = evaluation.transition_distances(ts)
    assert d[0] == 0.0
    expected = geo.haversine_km(geo.cell_centroid(tiles[0]), geo.cell_centroid(tiles[1]))
    assert d[1] == pytest.approx(expected)


def test_log_binned_density_integrates_to_one():
    rng = np.random.default_rng(2)
    r = rng.uniform(0.5, 9.0, size=5000)
    series = evaluation.log_binned_density(r, n_bins=20)
    assert float(series.density @ np.diff(series.edges)) == pytest.approx(1.0)
    assert series.zero_fraction == 0.0
    assert series.n == 5000


def test_log_binned_density_reports_zero_share():
    r = np.array([0.0, 0.0, 1.0, 2.0])
    series = evaluation.log_binned_density(r, n_bins=4)
    assert series.zero_fraction == pytest.approx(0.5)
    assert series.n == 2


def test_log_binned_density_error_cases():
    with pytest.raises(InsufficientDataError):
        evaluation.log_binned_density(np.array([]))
    with pytest.raises(InsufficientDataError):
        evaluation.log_binned_density(np.zeros(5))
    with pytest.raises(ValueError):
        evaluation.log_binned_density(np.array([1.0, 2.0]), r_range=(3.0, 1.0))


# --- power-law fitting ---


def pareto_samples(gamma, n, lo, hi, seed):
    """Inverse-CDF truncated Pareto draw with density proportional to r^-gamma."""
    rng = np.random.default_rng(seed)
    p = 1.0 - gamma
    u = rng.random(n)
    return (lo**p + u * (hi**p - lo**p)) ** (1.0 / p)


def test_power_law_fit_recovers_exponent():
    r = pareto_samples(2.2, 200_000, 0.5, 10.0, seed=9)
    fit = evaluation.power_law_fit(r, fit_range=(0.5, 10.0), n_bins=16)
    assert fit.gamma == pytest.approx(2.2, abs=3 * fit.stderr)
    assert fit.stderr < 0.02
    assert fit.n_samples == 200_000
    assert fit.n_bins_used == 16


def test_power_law_fit_restricts_to_range():
    r = np.concatenate([pareto_samples(2.0, 50_000, 1.0, 8.0, seed=4), np.full(1000, 50.0)])
    fit = evaluation.power_law_fit(r, fit_range=(1.0, 8.0))
    assert fit.n_samples == 50_000


def test_power_law_fit_default_range_floor_is_tile_diagonal():
    r = pareto_samples(1.8, 50_000, 0.1, 10.0, seed=1)
    fit = evaluation.power_law_fit(r)
    lo = geo.tile_diagonal_km(6)
    assert fit.n_samples == int(((r >= lo) & (r <= 10.0)).sum())


def test_power_law_fit_error_cases():
    with pytest.raises(InsufficientDataError):
        evaluation.power_law_fit(np.full(10, 2.0), fit_range=(1.0, 10.0))
    with pytest.raises(ValueError):
        evaluation.power_law_fit(np.ones(100), fit_range=(5.0, 1.0))
    # plenty of samples but all in one bin: not enough occupied bins
    with pytest.raises(InsufficientDataError):
        evaluation.power_law_fit(np.full(100, 2.0), fit_range=(1.9, 2.1), n_bins=3)


def test_fit_power_law_density_exact_on_analytic_input():
    r = np.logspace(0.0, 1.0, 12)
    density = r**-2.5
    fit = evaluation.fit_power_law_density(r, density)
    assert fit.gamma == pytest.approx(2.5, abs=1e-12)
    assert fit.stderr == pytest.approx(0.0, abs=1e-12)


def test_fit_power_law_density_needs_three_bins():
    with pytest.raises(InsufficientDataError):
        evaluation.fit_power_law_density([1.0, 2.0], [1.0, 0.5])


def test_distance_distribution_requires_both_sides():
    tiles = lattice(1, 4)
    split = evaluation.poi_split({tiles[0]: 5}, tiles, d_km=2.0)
    ts = [trans("u", tiles[0], tiles[1])]
    with pytest.raises(InsufficientDataError):
        evaluation.distance_distribution(ts, split)


def test_distance_distribution_splits_by_origin():
    tiles = lattice(1, 8)
    split = evaluation.poi_split({tiles[0]: 5}, tiles, d_km=2.0)
    near_o = tiles[0]
    far_o = tiles[6]
    ts = [trans("u", near_o, tiles[3])] * 3 + [trans("u", far_o, tiles[2])] * 2
    dist = evaluation.distance_distribution(ts, split, n_bins=6)
    assert dist.near.n == 3
    assert dist.far.n == 2


# --- shift protocol ---


def routine(user, day, tiles):
    points = [SpatioTemporalPoint(t, float(i)) for i, t in enumerate(tiles)]
    return Trajectory(user_id=user, day=day, points=points)


def _shift_corpus():
    """u1 runs an a/b routine, then switches to x/y after January; u2's
    pre-cutoff history teaches the collective the x/y rows."""
    out = []
    for d in range(1, 21):
        out.append(routine("u1", f"2024-01-{d:02d}", ["a", "b", "a", "b"]))
        out.append(routine("u2", f"2024-01-{d:02d}", ["x", "y", "x", "y"]))
    for d in range(1, 4):
        out.append(routine("u1", f"2024-02-{d:02d}", ["a", "b", "a", "b"]))
    for d in range(1, 4):
        out.append(routine("u1", f"2024-03-{d:02d}", ["x", "y", "x", "y"]))
    return out


def test_shift_evaluate_personal_model_decays_collective_holds():
    report = evaluation.shift_evaluate(_shift_corpus(), "2024-01-31", k=1)
    assert report.months == ["2024-02", "2024-03"]
    assert report.accuracy["I"]["2024-02"] == 1.0
    assert report.accuracy["I"]["2024-03"] == 0.0  # origins never seen by u1
    assert report.accuracy["C"]["2024-03"] == 1.0  # learned from u2
    assert report.accuracy["M"]["2024-03"] == 1.0  # unseen origin falls back to C
    assert report.relative_drop == {"I": 1.0, "C": 0.0, "M": 0.0}
    assert report.counts == {"2024-02": 9, "2024-03": 9}


def test_shift_evaluate_skips_empty_months_with_warning():
    corpus = _shift_corpus()
    # push March's trajectories to April, leaving a hole
    moved = [
        routine(t.user_id, "2024-04" + t.day[7:], t.tiles) if t.day.startswith("2024-03") else t
        for t in corpus
    ]
    with pytest.warns(UserWarning, match="2024-03"):
        report = evaluation.shift_evaluate(moved, "2024-01-31", k=1)
    assert report.months == ["2024-02", "2024-04"]


def test_shift_evaluate_bad_cutoffs():
    corpus = _shift_corpus()
    with pytest.raises(InsufficientDataError):
        evaluation.shift_evaluate(corpus, "2023-12-31")  # nothing to train on
    with pytest.raises(InsufficientDataError):
        evaluation.shift_evaluate(corpus, "2024-12-31")  # nothing to evaluate
