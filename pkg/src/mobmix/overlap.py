"""Trajectory overlap: LCST scores and bin stratification.

The longest common sub-trajectory of two tile sequences is their longest
common subsequence. Each test trajectory is scored against the same user's
full training set, normalized by its own length, and assigned to one of five
overlap bins; exact-zero overlap is excluded from the bins and reported
separately.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import transitions_of
from .types import Trajectory, Transition, UserHistory

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


BINS = ("B0_20", "B20_40", "B40_60", "B60_80", "B80_100")
EXCLUDED_ZERO = "EXCLUDED_ZERO"


@dataclass(frozen=True)
class OverlapScore:
    raw: int
    normalized: float
    bin: str


@njit(cache=True)
def _lcs_len(a, b):  # pragma: no cover - exercised through wrappers
    # single-row LCS DP with diagonal carry; O(len(a)*len(b)) time
    n = b.shape[0]
    row = np.zeros(n + 1, dtype=np.int64)
    for i in range(a.shape[0]):
        diag = 0
        x = a[i]
        for j in range(1, n + 1):
            tmp = row[j]
            if x == b[j - 1]:
                v = diag + 1
                if v > tmp:
                    row[j] = v
            elif row[j - 1] > tmp:
                row[j] = row[j - 1]
            diag = tmp
    return row[n]


@njit(cache=True)
def _pairwise_lcs(flat_a, offs_a, flat_b, offs_b, out):  # pragma: no cover
    na = offs_a.shape[0] - 1
    nb = offs_b.shape[0] - 1
    for i in range(na):
        a = flat_a[offs_a[i] : offs_a[i + 1]]
        for j in range(nb):
            b = flat_b[offs_b[j] : offs_b[j + 1]]
            out[i, j] = _lcs_len(a, b)


@njit(cache=True)
def _max_lcs(test_arr, flat, offs):  # pragma: no cover
    best = 0
    for i in range(offs.shape[0] - 1):
        v = _lcs_len(test_arr, flat[offs[i] : offs[i + 1]])
        if v > best:
            best = v
    return best


def _encode(seq: Sequence, vocab: dict) -> np.ndarray:
    out = np.empty(len(seq), dtype=np.int32)
    for i, item in enumerate(seq):
        code = vocab.get(item)
        if code is None:
            code = len(vocab)
            vocab[item] = code
        out[i] = code
    return out


def _flatten(seqs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    offs = np.zeros(len(seqs) + 1, dtype=np.int64)
    for i, s in enumerate(seqs):
        offs[i + 1] = offs[i] + len(s)
    flat = np.empty(offs[-1], dtype=np.int32)
    for i, s in enumerate(seqs):
        flat[offs[i] : offs[i + 1]] = s
    return flat, offs


def lcst(p: Sequence, r: Sequence) -> int:
    """Length of the longest common subsequence of two tile sequences.

    Empty input on either side gives 0.
    """
    if len(p) == 0 or len(r) == 0:
        return 0
    vocab: dict = {}
    a = _encode(p, vocab)
    b = _encode(r, vocab)
    return int(_lcs_len(a, b))


def pairwise_lcst(seqs_a: list[Sequence], seqs_b: list[Sequence] | None = None) -> np.ndarray:
    """LCST matrix between two sequence lists (or one list against itself).

    Runs the same DP kernel as lcst() over all ordered pairs in one compiled
    pass; this is the bulk entry point for stratification-scale workloads.
    """
    vocab: dict = {}
    enc_a = [_encode(s, vocab) for s in seqs_a]
    enc_b = enc_a if seqs_b is None else [_encode(s, vocab) for s in seqs_b]
    flat_a, offs_a = _flatten(enc_a)
    flat_b, offs_b = (flat_a, offs_a) if seqs_b is None else _flatten(enc_b)
    out = np.zeros((len(enc_a), len(enc_b)), dtype=np.int32)
    if out.size:
        _pairwise_lcs(flat_a, offs_a, flat_b, offs_b, out)
    return out


def assign_bin(raw: int, test_length: int) -> str:
    """Bin a raw LCST score for a test trajectory of known length.

    Boundaries are half-open on the left: (0, 0.2], (0.2, 0.4], ... (0.8, 1].
    Exactly zero is the excluded class. Integer arithmetic, no float edges:
    the bin index is the smallest b in 1..5 with 5 * raw <= b * length.
    """
    if test_length <= 0:
        raise ValueError(f"test trajectory length must be positive, got {test_length}")
    if raw < 0 or raw > test_length:
        raise ValueError(f"raw LCST {raw} outside [0, {test_length}]")
    if raw == 0:
        return EXCLUDED_ZERO
    for b in range(1, 6):
        if 5 * raw <= b * test_length:
            return BINS[b - 1]
    raise AssertionError("unreachable: normalized overlap exceeds 1")


def max_overlap(test: Trajectory, training: list[Trajectory]) -> OverlapScore:
    """Best LCST of a test trajectory against the user's training set.

    raw is the max over training trajectories; normalized divides by the test
    trajectory's own length. An empty training set scores as excluded.
    """
    length = len(test)
    if length == 0:
        raise ValueError("empty test trajectory")
    if not training:
        return OverlapScore(0, 0.0, EXCLUDED_ZERO)
    vocab: dict = {}
    test_arr = _encode(test.tiles, vocab)
    flat, offs = _flatten([_encode(t.tiles, vocab) for t in training])
    raw = int(_max_lcs(test_arr, flat, offs))
    return OverlapScore(raw, raw / length, assign_bin(raw, length))


@dataclass
class OverlapRecord:
    """One scored test trajectory, for reporting."""

    user_id: str
    day: str
    raw: int
    normalized: float
    bin: str


@dataclass
class StratifyResult:
    """Test transitions grouped by overlap bin, plus per-trajectory scores.

    by_bin holds the five bins and the excluded class; the bins partition the
    retained transitions and excluded transitions appear only under
    EXCLUDED_ZERO.
    """

    by_bin: dict[str, list[Transition]]
    records: list[OverlapRecord]


def stratify(
    test_histories: list[UserHistory], train_histories: list[UserHistory]
) -> StratifyResult:
    """Score every test trajectory against its user's training set and bin it.

    Transitions inside a trajectory inherit the trajectory's bin, so each
    retained transition lands in exactly one bin.
    """
    train_by_user = {h.user_id: h for h in train_histories}
    by_bin: dict[str, list[Transition]] = {name: [] for name in BINS}
    by_bin[EXCLUDED_ZERO] = []
    records = []
    for history in sorted(test_histories, key=lambda h: h.user_id):
        train = train_by_user.get(history.user_id)
        training = train.trajectories if train is not None else []
        for traj in sorted(history.trajectories, key=lambda t: t.day):
            if len(traj) == 0:
                continue
            score = max_overlap(traj, training)
            records.append(
                OverlapRecord(traj.user_id, traj.day, score.raw, score.normalized, score.bin)
            )
            by_bin[score.bin].extend(transitions_of(traj))
    return StratifyResult(by_bin, records)
