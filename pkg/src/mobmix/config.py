"""Pipeline configuration: INI file with sections, printable defaults.

Every constant the pipeline uses lives here so `--print-config` can show the
effective value of each one. Precedence is CLI flags over the MOBMIX_SEED
environment variable over the config file over built-in defaults; the CLI
layer applies the first two, this module handles files and defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .errors import DataFormatError
from .synth import SynthConfig


@dataclass
class PipelineConfig:
    seed: int = 0
    threads: int = 1
    k: int = 5
    input: str = ""
    output_dir: str = "out"
    model_store: str = "model"
    precision: int = 6
    tz_offset_hours: float = 0.0
    stop_radius_m: float = 65.0
    stop_min_duration_s: float = 300.0
    min_points: int = 4
    min_trajectories: int = 2
    user_percentile: float = 95.0
    test_fraction: float = 0.2
    poi: str = ""
    poi_distance_km: float = 2.0
    moran_scheme: str = "queen"
    moran_permutations: int = 999
    fit_r_min_km: float | None = None
    fit_r_max_km: float = 10.0
    fit_bins: int = 16
    prune_user_percentile: float = 50.0
    prune_origin_percentile: float = 50.0
    prune_test_user_percentile: float = 95.0
    prune_n_samples: int = 10
    shift_cutoff_day: str = ""
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> None:
        if self.precision not in (5, 6, 7, 8):
            raise DataFormatError(f"precision must be 5..8, got {self.precision}")
        if not 0.0 < self.test_fraction < 1.0:
            raise DataFormatError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.k < 1:
            raise DataFormatError(f"k must be >= 1, got {self.k}")
        if self.threads < 1:
            raise DataFormatError(f"threads must be >= 1, got {self.threads}")
        if self.moran_scheme not in ("queen", "rook", "inverse_distance"):
            raise DataFormatError(f"unknown moran_scheme {self.moran_scheme!r}")
        if not 0.0 < self.user_percentile <= 100.0:
            raise DataFormatError(
                f"user_percentile must be in (0, 100], got {self.user_percentile}"
            )
        for name in (
            "prune_user_percentile",
            "prune_origin_percentile",
            "prune_test_user_percentile",
        ):
            p = getattr(self, name)
            if not 0.0 < p < 100.0:
                raise DataFormatError(f"{name} must be in (0, 100), got {p}")
        if self.prune_n_samples < 1:
            raise DataFormatError(f"prune_n_samples must be >= 1, got {self.prune_n_samples}")
        try:
            self.synth.validate()
        except ValueError as exc:
            raise DataFormatError(f"[synth] {exc}") from exc


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_opt(parse):
    def inner(raw: str):
        return None if raw.strip() == "" else parse(raw)

    return inner


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# (section, key, attribute path, parser)
SCHEMA: list[tuple[str, str, str, object]] = [
    ("run", "seed", "seed", int),
    ("run", "threads", "threads", int),
    ("run", "k", "k", int),
    ("paths", "input", "input", str),
    ("paths", "output_dir", "output_dir", str),
    ("paths", "model_store", "model_store", str),
    ("paths", "poi", "poi", str),
    ("tessellation", "precision", "precision", int),
    ("tessellation", "tz_offset_hours", "tz_offset_hours", float),
    ("stops", "radius_m", "stop_radius_m", float),
    ("stops", "min_duration_s", "stop_min_duration_s", float),
    ("filtering", "min_points", "min_points", int),
    ("filtering", "min_trajectories", "min_trajectories", int),
    ("filtering", "user_percentile", "user_percentile", float),
    ("split", "test_fraction", "test_fraction", float),
    ("eval", "poi_distance_km", "poi_distance_km", float),
    ("eval", "moran_scheme", "moran_scheme", str),
    ("eval", "moran_permutations", "moran_permutations", int),
    ("eval", "fit_r_min_km", "fit_r_min_km", _parse_opt(float)),
    ("eval", "fit_r_max_km", "fit_r_max_km", float),
    ("eval", "fit_bins", "fit_bins", int),
    ("pruning", "user_percentile", "prune_user_percentile", float),
    ("pruning", "origin_percentile", "prune_origin_percentile", float),
    ("pruning", "test_user_percentile", "prune_test_user_percentile", float),
    ("pruning", "n_samples", "prune_n_samples", int),
    ("shift", "cutoff_day", "shift_cutoff_day", str),
]

_SYNTH_PARSERS = {
    "rows": int,
    "cols": int,
    "origin_lat": float,
    "origin_lon": float,
    "precision": int,
    "n_users": int,
    "n_days": int,
    "seed": int,
    "base_day": str,
    "beta_a": float,
    "beta_b": float,
    "home_set_size": int,
    "routine_alpha": float,
    "home_poi_power": float,
    "return_prob": float,
    "day_length_mean": float,
    "day_skip_prob": float,
    "trip_prob": float,
    "start_hour": float,
    "gap_mean_s": float,
    "poi_base": float,
    "poi_amplitude": float,
    "poi_scale_km": float,
    "anchor_row": _parse_opt(int),
    "anchor_col": _parse_opt(int),
    "lambda_km": float,
    "shift_day": _parse_opt(int),
    "shift_severity": float,
    "shift_rate_drop": float,
    "ping_level": _parse_bool,
}

assert set(_SYNTH_PARSERS) == {f.name for f in fields(SynthConfig)}

_BY_SECTION: dict[str, dict[str, tuple[str, object]]] = {}
for _sect, _key, _attr, _parse in SCHEMA:
    _BY_SECTION.setdefault(_sect, {})[_key] = (_attr, _parse)


def _set(config: PipelineConfig, attr: str, value) -> None:
    setattr(config, attr, value)


def load_config(path: str | None = None) -> PipelineConfig:
    """Defaults, with values from the INI file at path layered on top."""
    config = PipelineConfig()
    if path is not None:
        apply_file(config, path)
    return config


def apply_file(config: PipelineConfig, path: str) -> None:
    """Layer the INI file at path onto an existing config in place."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise DataFormatError(f"bad config {path}: {exc}") from exc
    for section in parser.sections():
        if section == "synth":
            for key, raw in parser.items(section):
                if key not in _SYNTH_PARSERS:
                    raise DataFormatError(f"{path}: unknown key [synth] {key}")
                try:
                    setattr(config.synth, key, _SYNTH_PARSERS[key](raw))
                except ValueError as exc:
                    raise DataFormatError(f"{path}: [synth] {key} = {raw!r}: {exc}") from exc
            continue
        known = _BY_SECTION.get(section)
        if known is None:
            raise DataFormatError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in known:
                raise DataFormatError(f"{path}: unknown key [{section}] {key}")
            attr, parse = known[key]
            try:
                _set(config, attr, parse(raw))
            except ValueError as exc:
                raise DataFormatError(f"{path}: [{section}] {key} = {raw!r}: {exc}") from exc


def format_config(config: PipelineConfig) -> str:
    """The effective configuration as INI text, every key included."""
    lines: list[str] = []
    current = None
    for section, key, attr, _parse in SCHEMA:
        if section != current:
            if current is not None:
                lines.append("")
            lines.append(f"[{section}]")
            current = section
        lines.append(f"{key} = {_fmt(getattr(config, attr))}")
    lines.append("")
    lines.append("[synth]")
    for f in fields(SynthConfig):
        lines.append(f"{f.name} = {_fmt(getattr(config.synth, f.name))}")
    lines.append("")
    return "\n".join(lines)
