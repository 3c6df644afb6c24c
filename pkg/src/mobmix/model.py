"""Markov mobility models.

Builds per-user individual transition rows I, the pooled collective matrix C,
per-origin normalized entropies S, and the entropy-weighted mixed predictor
M_i = softmax((1 - S_i) I_i + S_i C_i). Prediction is top-k over the mixed
row with a deterministic lexicographic tie-break.
"""

from __future__ import annotations

import math

from .errors import DegenerateUserError
from .types import MixedModel, Trajectory, Transition, TransitionRow, UserHistory


def transitions_of(trajectory: Trajectory) -> list[Transition]:
    """Consecutive-point pairs within one trajectory, self-loops included.

    Transitions never cross day boundaries: the last point of a day and the
    first point of the next day do not form a pair.
    """
    pts = trajectory.points
    return [
        Transition(trajectory.user_id, trajectory.day, a.tile, b.tile)
        for a, b in zip(pts, pts[1:])
    ]


def count_transitions(trajectories: list[Trajectory]) -> dict[str, dict[str, int]]:
    """Accumulate origin -> destination -> count over trajectories."""
    counts: dict[str, dict[str, int]] = {}
    for traj in trajectories:
        tiles = traj.tiles
        for a, b in zip(tiles, tiles[1:]):
            row = counts.setdefault(a, {})
            row[b] = row.get(b, 0) + 1
    return counts


def build_individual(history: UserHistory) -> dict[str, TransitionRow]:
    """Estimate one user's transition rows from their training trajectories."""
    counts = count_transitions(history.trajectories)
    return {origin: TransitionRow.from_counts(origin, row) for origin, row in counts.items()}


def build_collective(histories: list[UserHistory]) -> dict[str, TransitionRow]:
    """Pool every user's transition counts into the collective matrix C."""
    pooled: dict[str, dict[str, int]] = {}
    for history in histories:
        for origin, row in count_transitions(history.trajectories).items():
            target = pooled.setdefault(origin, {})
            for dest, c in row.items():
                target[dest] = target.get(dest, 0) + c
    return {origin: TransitionRow.from_counts(origin, row) for origin, row in pooled.items()}


def entropy(row: TransitionRow, visited_count: int) -> float:
    """Normalized Shannon entropy of one outgoing distribution.

    S = -sum_k p_k ln p_k / ln(visited_count), clamped to [0, 1]. Natural
    logarithm; the normalization makes the result base-invariant. Rows whose
    probabilities are all equal use the closed form H = ln(k), which keeps
    uniform rows exactly at ln(k)/ln(n) with no summation error.

    Raises DegenerateUserError if visited_count < 2 (ln 1 = 0); callers that
    tolerate single-location users must handle that case themselves.
    """
    if visited_count < 2:
        raise DegenerateUserError(
            f"entropy undefined for visited_count={visited_count} (needs >= 2 tiles)"
        )
    probs = list(row.probs.values())
    first = probs[0]
    if all(p == first for p in probs):
        h = math.log(len(probs))
    else:
        h = -math.fsum(p * math.log(p) for p in probs)
    s = h / math.log(visited_count)
    if s < 0.0:
        return 0.0
    if s > 1.0:
        return 1.0
    return s + 0.0  # normalize -0.0


def user_entropies(
    individual_rows: dict[str, TransitionRow], visited_count: int
) -> dict[str, float]:
    """Per-origin entropies for one user's rows.

    Users with a single distinct location get S = 0 for their self-loop row:
    their only observed behavior is fully deterministic.
    """
    if visited_count < 2:
        return {origin: 0.0 for origin in individual_rows}
    return {origin: entropy(row, visited_count) for origin, row in individual_rows.items()}


def build_mixed_model(
    history: UserHistory, collective: dict[str, TransitionRow]
) -> MixedModel:
    """Assemble the per-user mixed model from training data and shared C."""
    rows = build_individual(history)
    entropies = user_entropies(rows, len(history.visited))
    return MixedModel(history.user_id, rows, entropies, collective)


def mix(
    individual: TransitionRow | None,
    collective: TransitionRow | None,
    s: float,
) -> TransitionRow:
    """Blend one origin's individual and collective rows with weight S.

    Pre-softmax scores are (1 - s) I_j + s C_j over the union of the two
    supports, with missing entries contributing 0. The result is the softmax
    of those scores. Destinations whose score is exactly 0 are dropped before
    the softmax; that can only happen at the s = 0 or s = 1 boundary (rows
    are strictly positive), and it makes the boundary cases collapse exactly
    onto the individual or collective row's ranking.

    An absent individual row forces s = 1: with no personal history from this
    origin the model relies on collective information alone.
    """
    if individual is None and collective is None:
        raise ValueError("mix needs at least one of the individual/collective rows")
    if individual is None:
        s = 1.0
    i_probs = individual.probs if individual is not None else {}
    c_probs = collective.probs if collective is not None else {}

    scores = {}
    for dest in i_probs.keys() | c_probs.keys():
        score = (1.0 - s) * i_probs.get(dest, 0.0) + s * c_probs.get(dest, 0.0)
        if score != 0.0:
            scores[dest] = score
    origin = individual.origin if individual is not None else collective.origin
    if not scores:
        # s = 1 with no collective row, or s = 0 with no individual mass
        raise ValueError(f"no destinations with positive score for origin {origin!r}")

    peak = max(scores.values())
    exps = {dest: math.exp(v - peak) for dest, v in scores.items()}
    z = math.fsum(exps.values())
    probs = {dest: e / z for dest, e in exps.items()}
    support = (individual.support if individual is not None else 0) + (
        collective.support if collective is not None else 0
    )
    return TransitionRow(origin, probs, support, counts=None)


def topk_from_probs(probs: dict[str, float], k: int) -> list[str]:
    """Destinations by descending probability, ties broken lexicographically."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranked = sorted(probs.items(), key=lambda item: (-item[1], item[0]))
    return [dest for dest, _ in ranked[:k]]


def predict_topk(
    model: MixedModel, origin: str, k: int = 5, s_override: float | None = None
) -> list[str]:
    """Top-k next tiles from one origin under the mixed model.

    Unknown origins (absent from both I and C) return an empty list, which
    downstream accuracy counting treats as a miss. s_override forces the
    mixing weight, used by the collapse diagnostics; an absent individual row
    still forces S = 1 regardless of the override.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    individual = model.individual_rows.get(origin)
    collective = model.collective.get(origin)
    if individual is None and collective is None:
        return []
    if s_override is not None:
        s = s_override
    else:
        s = model.entropies.get(origin, 1.0) if individual is not None else 1.0
    try:
        row = mix(individual, collective, s)
    except ValueError:
        return []
    return topk_from_probs(row.probs, k)


def nearest_rank(values: list[float], percentile: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th order statistic."""
    if not values:
        raise ValueError("nearest_rank of empty list")
    if not 0.0 < percentile <= 100.0:
        raise ValueError(f"percentile out of range: {percentile}")
    ordered = sorted(values)
    rank = max(1, math.ceil(percentile / 100.0 * len(ordered)))
    return ordered[rank - 1]


def filter_dataset(
    histories: list[UserHistory],
    min_points: int = 4,
    min_trajectories: int = 2,
    user_percentile: float = 95.0,
) -> list[UserHistory]:
    """Apply the dataset filters, in order.

    1. Drop trajectories with fewer than min_points points.
    2. Drop users left with fewer than min_trajectories trajectories.
    3. Drop users whose trajectory count strictly exceeds the nearest-rank
       user_percentile of the remaining per-user counts (removes the
       over-represented tail).
    """
    trimmed = []
    for history in histories:
        kept = [t for t in history.trajectories if len(t) >= min_points]
        if len(kept) >= min_trajectories:
            trimmed.append(UserHistory.from_trajectories(history.user_id, kept))
    if not trimmed:
        return []
    threshold = nearest_rank([len(h.trajectories) for h in trimmed], user_percentile)
    return [h for h in trimmed if len(h.trajectories) <= threshold]


def train_test_split(
    history: UserHistory, test_fraction: float = 0.2
) -> tuple[UserHistory, UserHistory]:
    """Chronological per-user split: earliest trajectories train, latest test.

    n_test = max(1, floor(test_fraction * n)); both sides are non-empty for
    any history with at least two trajectories.
    """
    if len(history.trajectories) < 2:
        raise DegenerateUserError(
            f"user {history.user_id!r} has {len(history.trajectories)} trajectories, needs >= 2"
        )
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction out of range: {test_fraction}")
    ordered = sorted(history.trajectories, key=lambda t: t.day)
    n_test = max(1, math.floor(test_fraction * len(ordered)))
    n_train = len(ordered) - n_test
    train = UserHistory.from_trajectories(history.user_id, ordered[:n_train])
    test = UserHistory.from_trajectories(history.user_id, ordered[n_train:])
    return train, test
