import math

import pytest

from mobmix import model
from mobmix.errors import DegenerateUserError
from mobmix.types import SpatioTemporalPoint, Trajectory, TransitionRow, UserHistory


def traj(user, day, tiles):
    points = [SpatioTemporalPoint(t, float(i)) for i, t in enumerate(tiles)]
    return Trajectory(user_id=user, day=day, points=points)


def history(user, *day_tiles):
    trajectories = [traj(user, day, tiles) for day, tiles in day_tiles]
    return UserHistory.from_trajectories(user, trajectories)


def test_transitions_of_pairs_within_day():
    t = traj("u1", "2024-01-01", ["a", "b", "b", "c"])
    got = model.transitions_of(t)
    assert [(x.origin, x.destination) for x in got] == [("a", "b"), ("b", "b"), ("b", "c")]
    assert all(x.user_id == "u1" and x.day == "2024-01-01" for x in got)


def test_transitions_of_single_point_is_empty():
    assert model.transitions_of(traj("u1", "2024-01-01", ["a"])) == []


def test_count_transitions_accumulates_across_days():
    counts = model.count_transitions(
        [
            traj("u1", "2024-01-01", ["a", "b", "a"]),
            traj("u1", "2024-01-02", ["a", "b"]),
        ]
    )
    assert counts == {"a": {"b": 2}, "b": {"a": 1}}


def test_build_individual_rows_normalized():
    h = history("u1", ("2024-01-01", ["a", "b", "a", "c", "a", "b"]))
    rows = model.build_individual(h)
    assert set(rows) == {"a", "b", "c"}
    row_a = rows["a"]
    assert row_a.probs == {"b": 2 / 3, "c": 1 / 3}
    assert row_a.support == 3
    assert row_a.counts == {"b": 2, "c": 1}
    assert math.fsum(row_a.probs.values()) == pytest.approx(1.0)


def test_build_collective_pools_users():
    h1 = history("u1", ("2024-01-01", ["a", "b"]))
    h2 = history("u2", ("2024-01-01", ["a", "c", "a", "c"]))
    pooled = model.build_collective([h1, h2])
    assert pooled["a"].counts == {"b": 1, "c": 2}
    assert pooled["a"].probs["c"] == pytest.approx(2 / 3)
    assert pooled["c"].counts == {"a": 1}


def test_entropy_single_destination_is_exactly_zero():
    row = TransitionRow("a", {"b": 1.0}, 7)
    assert model.entropy(row, visited_count=5) == 0.0


def test_entropy_uniform_over_visited_is_exactly_one():
    n = 6
    row = TransitionRow("a", {f"t{i}": 1.0 / n for i in range(n)}, n)
    assert model.entropy(row, visited_count=n) == 1.0


def test_entropy_uniform_subset_closed_form():
    # uniform over 4 of 16 visited tiles: S = ln 4 / ln 16 = 1/2 exactly
    row = TransitionRow("a", {f"t{i}": 0.25 for i in range(4)}, 4)
    assert model.entropy(row, visited_count=16) == pytest.approx(0.5, abs=1e-15)


def test_entropy_requires_two_visited_tiles():
    row = TransitionRow("a", {"a": 1.0}, 3)
    with pytest.raises(DegenerateUserError):
        model.entropy(row, visited_count=1)


def test_user_entropies_single_location_user_gets_zero():
    rows = {"a": TransitionRow("a", {"a": 1.0}, 2)}
    assert model.user_entropies(rows, visited_count=1) == {"a": 0.0}


def test_mix_s_one_equals_collective_ranking():
    ind = TransitionRow("a", {"b": 0.9, "c": 0.1}, 10)
    col = TransitionRow("a", {"c": 0.7, "d": 0.3}, 100)
    mixed = model.mix(ind, col, s=1.0)
    # individual-only destinations drop out at the boundary
    assert set(mixed.probs) == {"c", "d"}
    assert model.topk_from_probs(mixed.probs, 2) == ["c", "d"]


def test_mix_s_zero_equals_individual_ranking():
    ind = TransitionRow("a", {"b": 0.9, "c": 0.1}, 10)
    col = TransitionRow("a", {"c": 0.7, "d": 0.3}, 100)
    mixed = model.mix(ind, col, s=0.0)
    assert set(mixed.probs) == {"b", "c"}
    assert model.topk_from_probs(mixed.probs, 2) == ["b", "c"]


def test_mix_missing_individual_forces_collective():
    col = TransitionRow("a", {"c": 0.7, "d": 0.3}, 100)
    mixed = model.mix(None, col, s=0.2)  # s is ignored
    assert model.topk_from_probs(mixed.probs, 2) == ["c", "d"]
    assert mixed.probs["c"] > mixed.probs["d"]


def test_mix_requires_some_row():
    with pytest.raises(ValueError):
        model.mix(None, None, s=0.5)


def test_mix_interpolates_between_rows():
    """With s strictly inside (0,1) both supports survive and the softmax
    preserves the pre-softmax score order."""
    ind = TransitionRow("a", {"b": 0.8, "c": 0.2}, 10)
    col = TransitionRow("a", {"c": 0.9, "d": 0.1}, 50)
    mixed = model.mix(ind, col, s=0.5)
    assert set(mixed.probs) == {"b", "c", "d"}
    # scores: b=0.4, c=0.55, d=0.05
    assert model.topk_from_probs(mixed.probs, 3) == ["c", "b", "d"]
    assert math.fsum(mixed.probs.values()) == pytest.approx(1.0)
    assert mixed.support == 60


def test_topk_ties_break_lexicographically():
    probs = {"z": 0.25, "m": 0.25, "a": 0.25, "q": 0.25}
    assert model.topk_from_probs(probs, 3) == ["a", "m", "q"]


def test_topk_k_larger_than_support():
    assert model.topk_from_probs({"a": 1.0}, 5) == ["a"]
    with pytest.raises(ValueError):
        model.topk_from_probs({"a": 1.0}, 0)


def _two_user_model():
    h1 = history(
        "u1",
        ("2024-01-01", ["a", "b", "a", "b"]),
        ("2024-01-02", ["a", "c"]),
    )
    h2 = history("u2", ("2024-01-01", ["a", "c", "a", "c", "d", "a"]))
    collective = model.build_collective([h1, h2])
    return model.build_mixed_model(h1, collective), collective


def test_build_mixed_model_fields():
    m, collective = _two_user_model()
    assert m.user_id == "u1"
    assert set(m.individual_rows) == {"a", "b"}
    assert set(m.entropies) == {"a", "b"}
    assert m.collective is collective
    # origin a: 2x a->b, 1x a->c over 3 visited tiles
    h = -(2 / 3) * math.log(2 / 3) - (1 / 3) * math.log(1 / 3)
    assert m.entropies["a"] == pytest.approx(h / math.log(3))


def test_predict_topk_unseen_origin_falls_back_to_collective():
    m, collective = _two_user_model()
    # u1 never left d; the collective knows d -> a
    assert "d" not in m.individual_rows
    assert model.predict_topk(m, "d", k=2) == model.topk_from_probs(
        collective["d"].probs, 2
    )


def test_predict_topk_unknown_origin_returns_empty():
    m, _ = _two_user_model()
    assert model.predict_topk(m, "zzz", k=3) == []


def test_predict_topk_s_override_boundaries():
    m, collective = _two_user_model()
    ind_top = model.topk_from_probs(m.individual_rows["a"].probs, 2)
    col_top = model.topk_from_probs(collective["a"].probs, 2)
    assert model.predict_topk(m, "a", k=2, s_override=0.0) == ind_top
    assert model.predict_topk(m, "a", k=2, s_override=1.0) == col_top


def test_predict_topk_override_ignored_without_individual_row():
    m, collective = _two_user_model()
    got = model.predict_topk(m, "d", k=2, s_override=0.0)
    assert got == model.topk_from_probs(collective["d"].probs, 2)


def test_nearest_rank_examples():
    values = [15.0, 20.0, 35.0, 40.0, 50.0]
    assert model.nearest_rank(values, 30.0) == 20.0
    assert model.nearest_rank(values, 40.0) == 20.0
    assert model.nearest_rank(values, 50.0) == 35.0
    assert model.nearest_rank(values, 100.0) == 50.0
    assert model.nearest_rank(values, 1.0) == 15.0


def test_nearest_rank_input_checks():
    with pytest.raises(ValueError):
        model.nearest_rank([], 50.0)
    with pytest.raises(ValueError):
        model.nearest_rank([1.0], 0.0)
    with pytest.raises(ValueError):
        model.nearest_rank([1.0], 101.0)


def test_filter_dataset_drops_short_trajectories_then_sparse_users():
    rich = history(
        "rich",
        ("2024-01-01", ["a", "b", "c", "d"]),
        ("2024-01-02", ["a", "b", "c", "e"]),
    )
    # one long day and one too-short day: falls under min_trajectories
    sparse = history(
        "sparse",
        ("2024-01-01", ["a", "b", "c", "d"]),
        ("2024-01-02", ["a", "b"]),
    )
    kept = model.filter_dataset([rich, sparse], min_points=4, min_trajectories=2)
    assert [h.user_id for h in kept] == ["rich"]


def test_filter_dataset_percentile_removes_heavy_tail():
    def bulk(user, n_days):
        days = [(f"2024-01-{d + 1:02d}", ["a", "b", "c", "d"]) for d in range(n_days)]
        return history(user, *days)

    histories = [bulk(f"u{i}", 5) for i in range(19)] + [bulk("heavy", 50)]
    kept = model.filter_dataset(histories, user_percentile=95.0)
    assert "heavy" not in {h.user_id for h in kept}
    assert len(kept) == 19


def test_filter_dataset_recomputes_visited():
    h = history(
        "u1",
        ("2024-01-01", ["a", "b", "c", "d"]),
        ("2024-01-02", ["a", "z"]),  # dropped by min_points
        ("2024-01-03", ["a", "b", "c", "e"]),
    )
    kept = model.filter_dataset([h], min_points=4, min_trajectories=2)
    assert kept[0].visited == {"a", "b", "c", "d", "e"}


def test_train_test_split_chronological():
    days = [(f"2024-01-{d:02d}", ["a", "b"]) for d in range(1, 11)]
    train, test = model.train_test_split(history("u1", *days), test_fraction=0.2)
    assert len(train.trajectories) == 8
    assert len(test.trajectories) == 2
    assert max(t.day for t in train.trajectories) < min(t.day for t in test.trajectories)


def test_train_test_split_always_holds_one_out():
    h = history("u1", ("2024-01-01", ["a", "b"]), ("2024-01-02", ["b", "a"]))
    train, test = model.train_test_split(h, test_fraction=0.2)
    assert len(train.trajectories) == 1
    assert len(test.trajectories) == 1


def test_train_test_split_rejects_degenerate():
    h = history("u1", ("2024-01-01", ["a", "b"]))
    with pytest.raises(DegenerateUserError):
        model.train_test_split(h)
    good = history("u1", ("2024-01-01", ["a", "b"]), ("2024-01-02", ["a", "b"]))
    with pytest.raises(ValueError):
        model.train_test_split(good, test_fraction=1.0)
