"""Sample-size bias controls: pruning procedures and the pruned-C ensemble.

Collective rows estimated from very different per-origin sample sizes are not
comparable; these procedures cap over-represented users, origins, and rows,
then average spatial accuracy over an ensemble of independently sub-sampled
collective matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .evaluation import TileAccuracy, per_origin_accuracy
from .model import nearest_rank, predict_topk
from .types import MixedModel, Transition, TransitionRow


@dataclass(frozen=True)
class PruneConfig:
    user_percentile: float = 50.0
    origin_percentile: float = 50.0
    test_user_percentile: float = 95.0
    n_samples: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("user_percentile", "origin_percentile", "test_user_percentile"):
            value = getattr(self, name)
            if not 0.0 < value < 100.0:
                raise ValueError(f"{name} must be in (0, 100), got {value}")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")


def _keep_subset(rng: np.random.Generator, indices: list[int], keep: int) -> list[int]:
    # uniform without replacement, original order preserved
    chosen = rng.choice(len(indices), size=keep, replace=False)
    chosen.sort()
    return [indices[i] for i in chosen]


def prune_test_users(
    transitions: Sequence[Transition], percentile: float = 95.0, seed=0
) -> list[Transition]:
    """Cap each user's test transitions at the percentile of per-user counts.

    Users above the nearest-rank threshold T* lose uniformly random
    transitions until they hold exactly T*; everyone else is untouched.
    Deterministic given (input order, seed).
    """
    by_user: dict[str, list[int]] = {}
    for i, t in enumerate(transitions):
        by_user.setdefault(t.user_id, []).append(i)
    threshold = int(nearest_rank([len(v) for v in by_user.values()], percentile))
    rng = np.random.default_rng(seed)
    kept: set[int] = set()
    for user in sorted(by_user):
        indices = by_user[user]
        if len(indices) > threshold:
            kept.update(_keep_subset(rng, indices, threshold))
        else:
            kept.update(indices)
    return [t for i, t in enumerate(transitions) if i in kept]


def prune_user_origins(
    transitions: Sequence[Transition], percentile: float = 50.0, seed=0
) -> list[Transition]:
    """Per origin, cap each user's transition count at the user-count percentile.

    For every origin tile i the nearest-rank percentile of the per-user counts
    from i becomes that origin's threshold; users above it are down-sampled to
    exactly the threshold.
    """
    per_origin: dict[str, dict[str, list[int]]] = {}
    for i, t in enumerate(transitions):
        per_origin.setdefault(t.origin, {}).setdefault(t.user_id, []).append(i)
    rng = np.random.default_rng(seed)
    kept: set[int] = set()
    for origin in sorted(per_origin):
        users = per_origin[origin]
        threshold = int(nearest_rank([len(v) for v in users.values()], percentile))
        for user in sorted(users):
            indices = users[user]
            if len(indices) > threshold:
                kept.update(_keep_subset(rng, indices, threshold))
            else:
                kept.update(indices)
    return [t for i, t in enumerate(transitions) if i in kept]


def prune_collective_od(
    transitions: Sequence[Transition], x: float = 50.0, seed=0
) -> dict[str, TransitionRow]:
    """Re-estimate the collective matrix with per-origin totals capped at P_X.

    P_X is the nearest-rank X-th percentile of the per-origin totals T_i.
    Origins holding more than P_X transitions are re-estimated from a uniform
    without-replacement sub-sample of exactly P_X transitions; the rest keep
    their full sample. Per-origin totals of the result never exceed P_X.
    """
    groups: dict[str, list[Transition]] = {}
    for t in transitions:
        groups.setdefault(t.origin, []).append(t)
    if not groups:
        return {}
    p_x = int(nearest_rank([len(g) for g in groups.values()], x))
    rng = np.random.default_rng(seed)
    rows = {}
    for origin in sorted(groups):
        members = groups[origin]
        if len(members) > p_x:
            chosen = rng.choice(len(members), size=p_x, replace=False)
            chosen.sort()
            members = [members[i] for i in chosen]
        counts: dict[str, int] = {}
        for t in members:
            counts[t.destination] = counts.get(t.destination, 0) + 1
        rows[origin] = TransitionRow.from_counts(origin, counts)
    return rows


@dataclass(frozen=True)
class EnsembleAccuracy:
    mean_acc: float
    std_acc: float
    n_samples: int
    n_transitions: int


def ensemble_spatial_accuracy(
    train_transitions: Sequence[Transition],
    test_transitions: Sequence[Transition],
    models: dict[str, MixedModel],
    config: PruneConfig | None = None,
    k: int = 5,
    novel_only: bool = False,
) -> dict[str, EnsembleAccuracy]:
    """Per-tile accuracy of M averaged over an ensemble of pruned C matrices.

    Each ensemble member keeps every user's individual rows and entropies
    intact and swaps in an independently sub-sampled collective matrix drawn
    by prune_collective_od with a per-sample seed. novel_only restricts the
    evaluation to transitions whose destination never appears in the user's
    own row for that origin (collective-only information).
    """
    if config is None:
        config = PruneConfig()
    test = list(test_transitions)
    if novel_only:
        def is_novel(t: Transition) -> bool:
            model = models.get(t.user_id)
            if model is None:
                return True
            row = model.individual_rows.get(t.origin)
            return row is None or t.destination not in row.probs
        test = [t for t in test if is_novel(t)]
    if not test:
        return {}

    per_sample: list[dict[str, TileAccuracy]] = []
    for s in range(config.n_samples):
        pruned = prune_collective_od(train_transitions, config.origin_percentile, seed=[config.seed, s])
        sample_models = {
            uid: replace(model, collective=pruned) for uid, model in models.items()
        }
        memo: dict[tuple[str, str], list[str]] = {}

        def predict(user_id: str, origin: str) -> list[str]:
            key = (user_id, origin)
            got = memo.get(key)
            if got is None:
                model = sample_models.get(user_id)
                got = predict_topk(model, origin, k) if model is not None else []
                memo[key] = got
            return got

        per_sample.append(per_origin_accuracy(test, predict, k=k, min_support=1))

    tiles = sorted(per_sample[0])
    out = {}
    for tile in tiles:
        accs = np.array([sample[tile].acc for sample in per_sample])
        std = float(accs.std(ddof=1)) if len(accs) > 1 else 0.0
        out[tile] = EnsembleAccuracy(
            float(accs.mean()), std, config.n_samples, per_sample[0][tile].n
        )
    return out
