"""Next-location prediction from tile trajectories.

Individual and collective Markov transition models blended per origin by a
normalized-entropy weight, with overlap-stratified evaluation, spatial and
distance diagnostics, pruning robustness procedures, and a synthetic
trajectory generator.
"""

from .errors import (
    DataFormatError,
    DegenerateUserError,
    InsufficientDataError,
    InvariantError,
    MobmixError,
    UndefinedStatisticError,
)
from .geo import (
    decode_cell,
    detect_stops,
    encode_geohash,
    haversine_km,
    to_daily_trajectories,
)
from .model import (
    build_collective,
    build_individual,
    build_mixed_model,
    entropy,
    filter_dataset,
    mix,
    predict_topk,
    train_test_split,
)
from .overlap import lcst, max_overlap, pairwise_lcst, stratify
from .evaluation import (
    acc_at_k,
    collective_entropy,
    distance_distribution,
    moran_i,
    pearson,
    per_origin_accuracy,
    poi_split,
    power_law_fit,
    shift_evaluate,
)
from .robustness import (
    PruneConfig,
    ensemble_spatial_accuracy,
    prune_collective_od,
    prune_test_users,
    prune_user_origins,
)
from .synth import SynthConfig, SynthDataset, generate, inject_shift, scatter_pings
from .types import (
    GpsPing,
    MixedModel,
    SpatioTemporalPoint,
    Stop,
    Trajectory,
    Transition,
    TransitionRow,
    UserHistory,
)

__version__ = "0.1.0"
