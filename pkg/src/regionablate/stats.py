"""Correlation statistics for comparing experimental conditions.

Two conditions are compared through their Pearson correlations with the
ground truth: both correlations are Fisher-transformed, their difference is
standardised, and the result is converted to a p-value. The p-value is the
upper-tail normal probability of ``|z_obs|``, i.e. ``erfc(|z|/√2)/2``. Written
as a normal CDF, ``½[1 + erf(z/√2)]``, the same formula gives the lower tail
and would return values near 1 for large positive ``z``. The published
comparison tables were produced with the upper-tail form.
"""

from __future__ import annotations

import csv
import math
import numbers
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConstantInput,
    EmptyVideo,
    InvalidAlpha,
    LengthMismatch,
    MalformedInput,
    OutOfRange,
    RhoAtUnity,
    TooFewSamples,
)

TRAITS = ("O", "C", "E", "A", "N_bar")
RHO_LIMIT = 1 - 1e-12
MIN_SAMPLES = 4


@dataclass(frozen=True)
class TraitVector:
    """Five apparent-trait scores in [0, 1]; ``n_bar`` is ``1 - neuroticism``."""

    o: float
    c: float
    e: float
    a: float
    n_bar: float

    def __post_init__(self):
        for name, v in zip(TRAITS, self.as_tuple()):
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise OutOfRange(f"trait {name}={v!r} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.o, self.c, self.e, self.a, self.n_bar)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "TraitVector":
        vals = [float(v) for v in np.asarray(values, dtype=np.float64).ravel()]
        if len(vals) != 5:
            raise LengthMismatch(f"a trait vector has 5 components, got {len(vals)}")
        return cls(*vals)


def as_trait_matrix(rows) -> np.ndarray:
    """Coerce TraitVectors / sequences / arrays into an ``(n, 5)`` float array."""
    if isinstance(rows, np.ndarray):
        arr = rows.astype(np.float64, copy=False)
    elif isinstance(rows, TraitVector):
        arr = np.array(rows.as_tuple(), dtype=np.float64)
    else:
        items = list(rows)
        if items and all(isinstance(r, numbers.Real) for r in items):
            arr = np.array(items, dtype=np.float64)
        else:
            arr = np.array([r.as_tuple() if isinstance(r, TraitVector) else tuple(r) for r in items],
                           dtype=np.float64)
    if arr.ndim == 1 and arr.size == 5:
        arr = arr[None, :]
    if arr.ndim != 2 or (arr.size and arr.shape[1] != 5):
        raise LengthMismatch(f"expected rows of 5 trait values, got shape {arr.shape}")
    return arr.reshape(-1, 5)


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    n: int

    @property
    def z_prime(self) -> float:
        return fisher_z(self.rho)


@dataclass(frozen=True)
class ComparisonResult:
    z_obs: float
    p: float
    standard_error: float
    alpha_corrected: float
    significant: bool


def pearson(x, y) -> CorrelationResult:
    """Pearson correlation with population moments."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise LengthMismatch(f"length mismatch: {x.size} vs {y.size}")
    n = x.size
    if n < MIN_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_SAMPLES} pairs, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise MalformedInput("pearson inputs must be finite")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx)) / n
    syy = float(np.dot(dy, dy)) / n
    if sxx == 0.0 or syy == 0.0 or np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ConstantInput("correlation undefined for a constant vector")
    sxy = float(np.dot(dx, dy)) / n
    rho = sxy / math.sqrt(sxx * syy)
    return CorrelationResult(rho=min(1.0, max(-1.0, rho)), n=n)


def fisher_z(rho: float) -> float:
    if not math.isfinite(rho) or abs(rho) >= RHO_LIMIT:
        raise RhoAtUnity(f"Fisher transform undefined for rho={rho!r}")
    return math.atanh(rho)


def standard_error(n1: int, n2: int) -> float:
    """Standard error of the difference of two Fisher-transformed correlations."""
    if n1 <= 3 or n2 <= 3:
        raise TooFewSamples(f"sample sizes must exceed 3, got {n1} and {n2}")
    return math.sqrt(1.0 / (n1 - 3) + 1.0 / (n2 - 3))


def p_from_z(z_obs: float) -> float:
    """Upper-tail standard normal probability of ``|z_obs|``.

    This is a one-sided tail; the two-sided value would be twice as large.
    The one-sided form is what reproduces the reported comparison p values.
    """
    if not math.isfinite(z_obs):
        raise MalformedInput(f"z_obs must be finite, got {z_obs!r}")
    return 0.5 * math.erfc(abs(z_obs) / math.sqrt(2.0))


def significance(p: float, alpha: float = 0.05, num_models: int = 3) -> tuple[float, bool]:
    """Bonferroni-corrected decision: ``(alpha / num_models, p < alpha / num_models)``."""
    if not (0.0 < alpha < 1.0) or not math.isfinite(alpha):
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha!r}")
    if int(num_models) != num_models or num_models < 1:
        raise InvalidAlpha(f"num_models must be a positive integer, got {num_models!r}")
    if not (0.0 <= p <= 1.0):
        raise OutOfRange(f"p-value {p!r} outside [0, 1]")
    corrected = alpha / num_models
    return corrected, p < corrected


def compare_correlations(r1: CorrelationResult, r2: CorrelationResult,
                         alpha: float = 0.05, num_models: int = 3) -> ComparisonResult:
    se = standard_error(r1.n, r2.n)
    z_obs = (r1.z_prime - r2.z_prime) / se
    p = p_from_z(z_obs)
    corrected, sig = significance(p, alpha, num_models)
    return ComparisonResult(z_obs=z_obs, p=p, standard_error=se,
                            alpha_corrected=corrected, significant=sig)


def mae(pred, truth) -> float:
    """Mean absolute error over all rows and all five traits."""
    p = as_trait_matrix(pred)
    t = as_trait_matrix(truth)
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.shape[0]} predictions vs {t.shape[0]} targets")
    if p.shape[0] == 0:
        raise TooFewSamples("mae of an empty table")
    return float(np.abs(p - t).mean())


def aggregate_predictions(frame_preds: Iterable[tuple[str, int, object]]) -> list[tuple[str, TraitVector]]:
    """Average frame-level predictions into one trait vector per video.

    Videos are returned in order of first appearance.
    """
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for video_id, _frame_index, pred in frame_preds:
        vec = as_trait_matrix(pred)[0]
        if video_id in sums:
            sums[video_id] = sums[video_id] + vec
            counts[video_id] += 1
        else:
            sums[video_id] = vec.copy()
            counts[video_id] = 1
    if not sums:
        raise EmptyVideo("no frame predictions to aggregate")
    out = []
    for vid, total in sums.items():
        mean = np.clip(total / counts[vid], 0.0, 1.0)
        out.append((vid, TraitVector.from_array(mean)))
    return out


@dataclass(frozen=True)
class PredictionTable:
    """Per-video predictions aligned with ground truth, both ``(n, 5)``."""

    video_ids: tuple[str, ...]
    predicted: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        if len(set(self.video_ids)) != len(self.video_ids):
            raise MalformedInput("duplicate video ids in prediction table")
        p = as_trait_matrix(self.predicted)
        t = as_trait_matrix(self.truth)
        if p.shape != t.shape or p.shape[0] != len(self.video_ids):
            raise LengthMismatch("prediction table columns have different lengths")
        object.__setattr__(self, "predicted", p)
        object.__setattr__(self, "truth", t)

    def __len__(self):
        return len(self.video_ids)

    def rows(self):
        for vid, p, t in zip(self.video_ids, self.predicted, self.truth):
            yield vid, TraitVector.from_array(p), TraitVector.from_array(t)

    @classmethod
    def join(cls, predictions: Mapping[str, object], truth: Mapping[str, object]) -> "PredictionTable":
        """Pair predictions with ground truth by video id (sorted ids)."""
        missing = sorted(set(predictions) - set(truth))
        if missing:
            raise MalformedInput(f"{len(missing)} predicted video(s) lack ground truth, e.g. {missing[0]!r}")
        ids = tuple(sorted(predictions))
        return cls(ids,
                   as_trait_matrix([_vec(predictions[i]) for i in ids]),
                   as_trait_matrix([_vec(truth[i]) for i in ids]))


def _vec(v):
    return v.as_tuple() if isinstance(v, TraitVector) else tuple(np.asarray(v, dtype=float).ravel())


def mean_trait_correlation(table: PredictionTable) -> CorrelationResult:
    """Correlation between the trait-averaged prediction and trait-averaged truth per video."""
    return pearson(table.predicted.mean(axis=1), table.truth.mean(axis=1))


def per_trait_correlations(table: PredictionTable) -> dict[str, CorrelationResult]:
    return {name: pearson(table.predicted[:, j], table.truth[:, j]) for j, name in enumerate(TRAITS)}


def mean_baseline_mae(train_truth, test_truth) -> float:
    """MAE obtained by always predicting the training-set mean of each trait."""
    train = as_trait_matrix(train_truth)
    test = as_trait_matrix(test_truth)
    return mae(np.broadcast_to(train.mean(axis=0), test.shape), test)


# --- trait tables on disk ---------------------------------------------------

def read_trait_table(path: str | Path) -> dict[str, TraitVector]:
    """Read ``video_id,O,C,E,A,N_bar`` rows.

    A file with a raw ``N`` column instead of ``N_bar`` is accepted and
    inverted on read.
    """
    from .trainkit import label_transform

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        raw = "N" in fields and "N_bar" not in fields
        needed = ["video_id", "O", "C", "E", "A", "N" if raw else "N_bar"]
        if set(needed) - set(fields):
            raise MalformedInput(f"{path}: expected header {','.join(['video_id', *TRAITS])}")
        out: dict[str, TraitVector] = {}
        for row in reader:
            try:
                vals = [float(row[k]) for k in needed[1:]]
            except ValueError as exc:
                raise MalformedInput(f"{path}: {exc}") from None
            vid = row["video_id"]
            if vid in out:
                raise MalformedInput(f"{path}: duplicate video id {vid!r}")
            out[vid] = label_transform(vals) if raw else TraitVector(*vals)
    return out


def write_trait_table(rows: Mapping[str, TraitVector] | Sequence[tuple[str, TraitVector]],
                      path: str | Path) -> None:
    items = rows.items() if isinstance(rows, Mapping) else rows
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", *TRAITS])
        for vid, vec in items:
            w.writerow([vid, *(repr(float(v)) for v in _vec(vec))])
