"""Pipeline drivers: the work behind each CLI subcommand.

Each run_* function takes a PipelineConfig, reads and writes files under the
configured paths, and returns a plain dict of summary numbers for printing.
Nothing here writes timestamps or absolute paths into outputs, so runs with
the same seed and inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import math
import os

from . import geo, io, overlap
from .config import PipelineConfig, format_config
from .errors import DataFormatError, InsufficientDataError, InvariantError
from .evaluation import (
    collective_entropy,
    distance_distribution,
    moran_i,
    pearson,
    per_origin_accuracy,
    poi_split,
    power_law_fit,
    shift_evaluate,
    transition_accuracy,
)
from .model import (
    build_collective,
    build_mixed_model,
    filter_dataset,
    nearest_rank,
    predict_topk,
    topk_from_probs,
    train_test_split,
    transitions_of,
)
from .overlap import stratify
from .robustness import PruneConfig, ensemble_spatial_accuracy
from .synth import SynthDataset, generate, scatter_pings
from .types import MixedModel, Trajectory, Transition, UserHistory

MODEL_NAMES = ("I", "C", "M")


def _out(config: PipelineConfig, name: str) -> str:
    os.makedirs(config.output_dir, exist_ok=True)
    return os.path.join(config.output_dir, name)


def store_path(config: PipelineConfig) -> str:
    if os.path.isabs(config.model_store):
        return config.model_store
    return os.path.join(config.output_dir, config.model_store)


def _require_input(config: PipelineConfig, fallback: str | None = None) -> str:
    if config.input:
        return config.input
    if fallback is not None:
        candidate = os.path.join(config.output_dir, fallback)
        if os.path.exists(candidate):
            return candidate
    raise DataFormatError("no input file configured ([paths] input)")


def _read_header(path: str) -> list[str]:
    try:
        with open(path, newline="") as fh:
            row = next(csv.reader(fh), None)
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    return row or []


def run_ingest(config: PipelineConfig) -> dict:
    """Raw pings (or pre-tessellated input) to stops.csv + trajectories.csv.

    Dispatch is by header: ping files run stop detection; trajectory or stop
    files skip it and only re-group into daily trajectories.
    """
    path = _require_input(config)
    header = _read_header(path)
    stops = []
    skipped = 0
    n_pings = 0
    if header == io.PINGS_HEADER or header == []:
        pings, skipped = io.read_pings_csv(path)
        n_pings = len(pings)
        by_user: dict[str, list] = {}
        for p in pings:
            by_user.setdefault(p.user_id, []).append(p)
        for user in sorted(by_user):
            ordered = sorted(by_user[user], key=lambda p: p.timestamp)
            stops.extend(
                geo.detect_stops(
                    ordered,
                    radius_m=config.stop_radius_m,
                    min_duration_s=config.stop_min_duration_s,
                    precision=config.precision,
                )
            )
    elif header == io.STOPS_HEADER:
        stops = io.read_stops_csv(path)
    elif header == io.TRAJ_HEADER:
        trajectories = io.read_trajectories_csv(path)
        io.write_trajectories_csv(trajectories, _out(config, "trajectories.csv"))
        return {
            "mode": "pre-tessellated",
            "n_trajectories": len(trajectories),
            "n_points": sum(len(t) for t in trajectories),
        }
    else:
        raise DataFormatError(f"{path}: unrecognized header {','.join(header)!r}")
    io.write_stops_csv(stops, _out(config, "stops.csv"))
    trajectories = geo.to_daily_trajectories(stops, tz_offset_hours=config.tz_offset_hours)
    io.write_trajectories_csv(trajectories, _out(config, "trajectories.csv"))
    return {
        "mode": "pings" if header != io.STOPS_HEADER else "stops",
        "n_pings": n_pings,
        "n_rows_skipped": skipped,
        "n_stops": len(stops),
        "n_trajectories": len(trajectories),
    }


def run_train(config: PipelineConfig) -> dict:
    """Filter, split, and fit; writes the model store and both split files."""
    path = _require_input(config, "trajectories.csv")
    trajectories = io.read_trajectories_csv(path)
    by_user: dict[str, list[Trajectory]] = {}
    for t in trajectories:
        by_user.setdefault(t.user_id, []).append(t)
    histories = [
        UserHistory.from_trajectories(u, sorted(ts, key=lambda t: t.day))
        for u, ts in sorted(by_user.items())
    ]
    retained = filter_dataset(
        histories,
        min_points=config.min_points,
        min_trajectories=config.min_trajectories,
        user_percentile=config.user_percentile,
    )
    if not retained:
        raise InsufficientDataError("no users survive dataset filtering")
    train_trajs: list[Trajectory] = []
    test_trajs: list[Trajectory] = []
    train_histories: list[UserHistory] = []
    for h in retained:
        tr, te = train_test_split(h, config.test_fraction)
        train_trajs.extend(tr.trajectories)
        test_trajs.extend(te.trajectories)
        train_histories.append(tr)
    collective = build_collective(train_histories)
    models = {h.user_id: build_mixed_model(h, collective) for h in train_histories}
    io.save_models(models, store_path(config))
    io.write_trajectories_csv(train_trajs, _out(config, "train_trajectories.csv"))
    io.write_trajectories_csv(test_trajs, _out(config, "test_trajectories.csv"))
    return {
        "n_users_in": len(histories),
        "n_users_retained": len(retained),
        "n_train_trajectories": len(train_trajs),
        "n_test_trajectories": len(test_trajs),
        "n_collective_origins": len(collective),
    }


def _split_histories(config: PipelineConfig) -> tuple[list[UserHistory], list[UserHistory]]:
    train = io.read_trajectories_csv(os.path.join(config.output_dir, "train_trajectories.csv"))
    test = io.read_trajectories_csv(os.path.join(config.output_dir, "test_trajectories.csv"))

    def group(trajs: list[Trajectory]) -> list[UserHistory]:
        by_user: dict[str, list[Trajectory]] = {}
        for t in trajs:
            by_user.setdefault(t.user_id, []).append(t)
        return [UserHistory.from_trajectories(u, ts) for u, ts in sorted(by_user.items())]

    return group(train), group(test)


def run_stratify(config: PipelineConfig) -> dict:
    """Score test trajectories against training history; writes overlap.csv."""
    train_histories, test_histories = _split_histories(config)
    result = stratify(test_histories, train_histories)
    with open(_out(config, "overlap.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "day", "lcst_raw", "lcst_norm", "bin"])
        for r in result.records:
            w.writerow([r.user_id, r.day, r.raw, repr(r.normalized), r.bin])
    counts = {name: len(ts) for name, ts in result.by_bin.items()}
    return {
        "n_trajectories_scored": len(result.records),
        "transitions_per_bin": counts,
    }


def make_predictors(models: dict[str, MixedModel], k: int):
    """Memoized (user, origin) -> top-k callables for the I, C, and M models.

    I predicts from the user's own rows only (unknown origin: no prediction);
    C from the shared collective; M through the entropy-weighted mix.
    """
    collective = next(iter(models.values())).collective if models else {}
    cache: dict[tuple[str, str, str], list[str]] = {}

    def predict_i(user_id: str, origin: str) -> list[str]:
        key = ("I", user_id, origin)
        if key not in cache:
            model = models.get(user_id)
            row = model.individual_rows.get(origin) if model is not None else None
            cache[key] = topk_from_probs(row.probs, k) if row is not None else []
        return cache[key]

    def predict_c(user_id: str, origin: str) -> list[str]:
        key = ("C", "", origin)
        if key not in cache:
            row = collective.get(origin)
            cache[key] = topk_from_probs(row.probs, k) if row is not None else []
        return cache[key]

    def predict_m(user_id: str, origin: str) -> list[str]:
        key = ("M", user_id, origin)
        if key not in cache:
            model = models.get(user_id)
            if model is None:
                row = collective.get(origin)
                cache[key] = topk_from_probs(row.probs, k) if row is not None else []
            else:
                cache[key] = predict_topk(model, origin, k)
        return cache[key]

    return {"I": predict_i, "C": predict_c, "M": predict_m}


def _write_fig2a(path: str, by_bin, predictors, k: int) -> dict:
    rows = {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "n_transitions", "acc_i", "acc_c", "acc_m"])
        for name in overlap.BINS:
            transitions = by_bin.get(name, [])
            if not transitions:
                w.writerow([name, 0, "", "", ""])
                continue
            accs = {
                m: transition_accuracy(transitions, predictors[m], k) for m in MODEL_NAMES
            }
            rows[name] = {
                "n": len(transitions),
                **{f"acc_{m.lower()}": accs[m] for m in MODEL_NAMES},
            }
            w.writerow(
                [name, len(transitions)]
                + [repr(accs[m]) for m in MODEL_NAMES]
            )
    return rows


def _median(values: list[float]) -> float:
    return nearest_rank(values, 50.0)


def run_evaluate(
    config: PipelineConfig,
    with_stratify: bool = True,
    with_spatial: bool = True,
    with_prune: bool = False,
    with_shift: bool = False,
) -> dict:
    """Evaluate the trained store on the held-out split; writes figure CSVs
    plus summary.json.

    The summary always carries overall ACC@k for I, C, and M. Stratified
    (fig2a/fig2c), spatial (fig3 + Moran), POI/distance (fig4a/fig4c),
    pruning-ensemble, and shift (table3) blocks are added by the flags and
    config. Asserts the bin-weighted accuracy identity before writing.
    """
    models = io.load_models(store_path(config))
    train_histories, test_histories = _split_histories(config)
    k = config.k
    predictors = make_predictors(models, k)

    test_transitions: list[Transition] = []
    for h in test_histories:
        for traj in h.trajectories:
            test_transitions.extend(transitions_of(traj))
    if not test_transitions:
        raise InsufficientDataError("no test transitions to evaluate")

    summary: dict = {
        "k": k,
        "seed": config.seed,
        "precision": config.precision,
        "n_test_transitions": len(test_transitions),
        "n_users": len(models),
    }
    overall = {
        m: transition_accuracy(test_transitions, predictors[m], k) for m in MODEL_NAMES
    }
    summary["overall_acc"] = {m: overall[m] for m in MODEL_NAMES}
    with open(_out(config, "fig2b.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "acc", "n_transitions"])
        for m in MODEL_NAMES:
            w.writerow([m, repr(overall[m]), len(test_transitions)])

    if with_stratify:
        result = stratify(test_histories, train_histories)
        by_bin = result.by_bin
        fig2a = _write_fig2a(_out(config, "fig2a.csv"), by_bin, predictors, k)
        summary["per_bin_acc"] = fig2a

        # identity: bin-weighted accuracy equals overall accuracy
        consistency = {}
        for m in MODEL_NAMES:
            total = 0
            weighted = 0.0
            for name, transitions in by_bin.items():
                if not transitions:
                    continue
                total += len(transitions)
                weighted += len(transitions) * transition_accuracy(
                    transitions, predictors[m], k
                )
            if total != len(test_transitions):
                raise InvariantError(
                    f"strata cover {total} transitions, expected {len(test_transitions)}"
                )
            delta = abs(weighted / total - overall[m])
            if delta > 1e-9:
                raise InvariantError(
                    f"bin-weighted ACC@{k} for {m} differs from overall by {delta:.3e}"
                )
            consistency[m] = delta
        summary["bin_weighted_consistency_delta"] = consistency
        summary["excluded_zero_transitions"] = len(by_bin.get(overlap.EXCLUDED_ZERO, []))

        entropy_by_user = {u: models[u].entropies for u in models}
        with open(_out(config, "fig2c.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin", "n_transitions", "median_one_minus_s"])
            medians = {}
            for name in overlap.BINS:
                transitions = by_bin.get(name, [])
                if not transitions:
                    w.writerow([name, 0, ""])
                    continue
                values = []
                for t in transitions:
                    ent = entropy_by_user.get(t.user_id, {})
                    user_rows = models[t.user_id].individual_rows if t.user_id in models else {}
                    s = ent.get(t.origin, 1.0) if t.origin in user_rows else 1.0
                    values.append(1.0 - s)
                med = _median(values)
                medians[name] = med
                w.writerow([name, len(transitions), repr(med)])
            summary["median_one_minus_s"] = medians

    if with_spatial:
        per_tile = {
            m: per_origin_accuracy(test_transitions, predictors[m], k) for m in MODEL_NAMES
        }
        tiles = sorted(per_tile["M"])
        with open(_out(config, "fig3.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tile", "n_transitions", "low_support", "acc_i", "acc_c", "acc_m"])
            for tile in tiles:
                ta = per_tile["M"][tile]
                w.writerow(
                    [tile, ta.n, int(ta.low_support)]
                    + [repr(per_tile[m][tile].acc) for m in MODEL_NAMES]
                )
        moran_block = {}
        supported = {
            t: per_tile["M"][t].acc for t in tiles if not per_tile["M"][t].low_support
        }
        for m in ("C", "M"):
            values = {
                t: per_tile[m][t].acc for t in tiles if not per_tile[m][t].low_support
            }
            try:
                res = moran_i(
                    values,
                    scheme=config.moran_scheme,
                    permutations=config.moran_permutations,
                    seed=config.seed,
                )
                moran_block[m] = {
                    "statistic": res.statistic,
                    "p_value": res.p_value,
                    "scheme": res.scheme,
                    "permutations": res.permutations,
                    "n_tiles": len(values),
                }
            except ValueError as exc:
                moran_block[m] = {"undefined": str(exc)}
        summary["moran"] = moran_block
        summary["n_spatial_tiles"] = len(tiles)
        summary["n_spatial_tiles_supported"] = len(supported)

    if config.poi:
        summary["poi"] = _poi_block(config, models, test_transitions, predictors)

    if with_prune:
        summary["pruning"] = _prune_block(config, models, train_histories, test_transitions)

    if with_shift:
        if not config.shift_cutoff_day:
            raise DataFormatError("shift evaluation requires [shift] cutoff_day")
        summary["shift"] = _shift_block(config)

    io.write_json(summary, _out(config, "summary.json"))
    return summary


def _poi_block(config, models, test_transitions, predictors) -> dict:
    poi_counts = io.read_poi(config.poi)
    tiles = set()
    for t in test_transitions:
        tiles.add(t.origin)
        tiles.add(t.destination)
    split = poi_split(poi_counts, tiles, config.poi_distance_km)
    collective = next(iter(models.values())).collective
    block: dict = {"anchor": split.anchor, "d_km": split.d_km, "n_near": len(split.near)}

    # fig4a: collective entropy vs collective accuracy on low-overlap transitions
    try:
        s_c = collective_entropy(collective)
    except ValueError as exc:
        block["fig4a"] = {"undefined": str(exc)}
        s_c = None
    if s_c is not None:
        train_histories, test_histories = _split_histories(config)
        result = stratify(test_histories, train_histories)
        # low-overlap: days sharing at most 40% of their sequence with the
        # user's history, plus days with no seen tile at all
        low = (
            result.by_bin.get(overlap.BINS[0], [])
            + result.by_bin.get(overlap.BINS[1], [])
            + result.by_bin.get(overlap.EXCLUDED_ZERO, [])
        )
        fig4a_rows = []
        if low:
            per_tile = per_origin_accuracy(low, predictors["C"], config.k)
            for tile in sorted(per_tile):
                if tile in s_c and not per_tile[tile].low_support:
                    fig4a_rows.append((tile, s_c[tile], per_tile[tile].acc, per_tile[tile].n))
        with open(_out(config, "fig4a.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tile", "collective_entropy", "acc_c", "n_transitions"])
            for tile, s, acc, n in fig4a_rows:
                w.writerow([tile, repr(s), repr(acc), n])
        try:
            rho = pearson([r[1] for r in fig4a_rows], [r[2] for r in fig4a_rows])
            block["fig4a"] = {"pearson": rho, "n_tiles": len(fig4a_rows)}
        except ValueError as exc:
            block["fig4a"] = {"undefined": str(exc), "n_tiles": len(fig4a_rows)}

    # fig4c: distance densities near/far plus power-law exponents
    r_min = config.fit_r_min_km
    if r_min is None:
        r_min = geo.tile_diagonal_km(config.precision)
    fit_range = (r_min, config.fit_r_max_km)
    try:
        dist = distance_distribution(test_transitions, split, n_bins=config.fit_bins)
        with open(_out(config, "fig4c.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["segment", "center_km", "density"])
            for name, series in (("near", dist.near), ("far", dist.far)):
                for c, d in zip(series.centers, series.density):
                    w.writerow([name, repr(float(c)), repr(float(d))])
        fits = {}
        for name, series in (("near", dist.near), ("far", dist.far)):
            try:
                fit = power_law_fit(series.samples, fit_range, config.fit_bins)
                fits[name] = {
                    "gamma": fit.gamma,
                    "stderr": fit.stderr,
                    "n_samples": fit.n_samples,
                }
            except ValueError as exc:
                fits[name] = {"undefined": str(exc)}
        block["fig4c"] = {
            "fit_range_km": list(fit_range),
            "fits": fits,
            "zero_fraction": {"near": dist.near.zero_fraction, "far": dist.far.zero_fraction},
        }
    except ValueError as exc:
        block["fig4c"] = {"undefined": str(exc)}
    return block


def _prune_block(config, models, train_histories, test_transitions) -> dict:
    train_transitions: list[Transition] = []
    for h in train_histories:
        for traj in h.trajectories:
            train_transitions.extend(transitions_of(traj))
    prune_config = PruneConfig(
        user_percentile=config.prune_user_percentile,
        origin_percentile=config.prune_origin_percentile,
        test_user_percentile=config.prune_test_user_percentile,
        n_samples=config.prune_n_samples,
        seed=config.seed,
    )
    ensemble = ensemble_spatial_accuracy(
        train_transitions, test_transitions, models, prune_config, k=config.k
    )
    with open(_out(config, "ensemble.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tile", "mean_acc", "std_acc", "n_samples"])
        for tile in sorted(ensemble):
            e = ensemble[tile]
            w.writerow([tile, repr(e.mean_acc), repr(e.std_acc), e.n_samples])
    mean_over_tiles = (
        math.fsum(e.mean_acc for e in ensemble.values()) / len(ensemble) if ensemble else 0.0
    )
    return {
        "n_samples": prune_config.n_samples,
        "n_tiles": len(ensemble),
        "mean_acc_over_tiles": mean_over_tiles,
    }


def _shift_block(config: PipelineConfig) -> dict:
    path = _require_input(config, "trajectories.csv")
    trajectories = io.read_trajectories_csv(path)
    report = shift_evaluate(
        trajectories,
        config.shift_cutoff_day,
        k=config.k,
        min_points=config.min_points,
        min_trajectories=config.min_trajectories,
        user_percentile=config.user_percentile,
    )
    with open(_out(config, "table3.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "n_transitions", "acc_i", "acc_c", "acc_m"])
        for month in report.months:
            w.writerow(
                [month, report.counts[month]]
                + [repr(report.accuracy[m][month]) for m in MODEL_NAMES]
            )
    return {
        "cutoff_day": config.shift_cutoff_day,
        "months": report.months,
        "accuracy": report.accuracy,
        "relative_drop": report.relative_drop,
    }


def run_shift_eval(config: PipelineConfig) -> dict:
    """Standalone shift protocol; writes table3.csv + shift.json."""
    block = _shift_block(config)
    io.write_json(block, _out(config, "shift.json"))
    return block


def run_prune(config: PipelineConfig) -> dict:
    """Standalone pruning ensemble; writes ensemble.csv + prune.json."""
    models = io.load_models(store_path(config))
    train_histories, test_histories = _split_histories(config)
    test_transitions: list[Transition] = []
    for h in test_histories:
        for traj in h.trajectories:
            test_transitions.extend(transitions_of(traj))
    if not test_transitions:
        raise InsufficientDataError("no test transitions to evaluate")
    block = _prune_block(config, models, train_histories, test_transitions)
    io.write_json(block, _out(config, "prune.json"))
    return block


def run_synth(config: PipelineConfig) -> dict:
    """Generate the synthetic dataset; writes trajectories, POI, scenario echo."""
    dataset: SynthDataset = generate(config.synth)
    io.write_trajectories_csv(dataset.trajectories, _out(config, "trajectories.csv"))
    io.write_poi_csv(dataset.poi_counts, _out(config, "poi.csv"))
    with open(_out(config, "scenario.cfg"), "w") as fh:
        fh.write(format_config(config))
    result = {
        "n_users": config.synth.n_users,
        "n_trajectories": len(dataset.trajectories),
        "n_tiles": len(dataset.tiles),
        "n_points": sum(len(t) for t in dataset.trajectories),
    }
    if config.synth.ping_level:
        pings = scatter_pings(dataset)
        with open(_out(config, "pings.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(io.PINGS_HEADER)
            for p in pings:
                w.writerow([p.user_id, repr(p.lat), repr(p.lon), repr(p.timestamp)])
        result["n_pings"] = len(pings)
    return result
