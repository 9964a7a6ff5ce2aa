"""End-to-end composition: conditions -> features -> training -> evaluation.

These functions work on in-memory data. The command line uses the same
building blocks but round-trips condition images through PNG files, which
are lossless, so both routes see identical pixels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import imageops
from .corpus import SplitManifest, verify_disjoint
from .errors import EmptyClip, LeakageDetected, MissingPairedCondition
from .files import LandmarkRecord
from .report import Report, build_report
from .stats import PredictionTable, TraitVector
from .trainkit import (
    ClipData,
    FusionModel,
    PairedClipData,
    Regressor,
    TrainConfig,
    extract_features,
    predict,
    train,
    train_fusion,
)

log = logging.getLogger(__name__)

SIGMA_CONDITIONS = ("face", "background")


def check_splits(manifest: SplitManifest, allow_leakage: bool = False):
    """Refuse to continue on splits that share source videos, unless explicitly allowed."""
    verdict = verify_disjoint(manifest)
    if not verdict.passed and not allow_leakage:
        raise LeakageDetected(verdict.shared_uids)
    return verdict


def training_template(records: Mapping[tuple[str, int], LandmarkRecord], train_ids: Iterable[str],
                      size: int = imageops.FACE_SIZE) -> np.ndarray:
    """Mean landmark layout of the training split, placed in face-image coordinates."""
    train_ids = set(train_ids)
    sets = [r.points for (cid, _), r in sorted(records.items()) if cid in train_ids]
    return imageops.fit_template_to_output(imageops.compute_template(sets), size)


def condition_images(frame: np.ndarray, record: LandmarkRecord, template: np.ndarray) -> dict[str, np.ndarray]:
    """The three image conditions of one frame.

    The background condition is cut from the 256x465 entire-frame image, with
    the face box rescaled to that resolution.
    """
    frame = imageops.as_frame(frame)
    entire = imageops.make_entire_frame_condition(frame)
    h, w = frame.shape[:2]
    rows, cols = entire.shape[:2]
    box = record.face_box.scaled(cols / w, rows / h)
    bg = imageops.make_background_condition(entire, box, allow_full_cover=True)
    face = imageops.make_face_condition(frame, record.points, template)
    return {"face": face, "background": bg.image, "entire_frame": entire}


@dataclass
class ConditionFeatures:
    """Per-condition feature rows: ``features[condition][clip_id]`` is ``(n_frames, dim)``."""

    features: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    frame_indices: dict[str, list[int]] = field(default_factory=dict)
    sigma: dict[str, float] = field(default_factory=dict)
    skipped: list[tuple[str, int, str]] = field(default_factory=list)


def extract_condition_features(frames: Iterable[tuple[str, int, np.ndarray]],
                               records: Mapping[tuple[str, int], LandmarkRecord],
                               template: np.ndarray) -> ConditionFeatures:
    """Build condition images frame by frame and keep only their features.

    Frames without a landmark record, or whose preprocessing fails, are
    skipped and listed in ``skipped``. Sigma is accumulated for the face and
    background conditions.
    """
    rows: dict[str, dict[str, list[np.ndarray]]] = {c: {} for c in imageops.IMAGE_CONDITIONS}
    indices: dict[str, list[int]] = {}
    acc = {c: imageops.SigmaAccumulator() for c in SIGMA_CONDITIONS}
    skipped = []
    for clip_id, idx, frame in frames:
        rec = records.get((clip_id, idx))
        if rec is None:
            skipped.append((clip_id, idx, "no landmark record"))
            continue
        try:
            images = condition_images(frame, rec, template)
        except (ValueError, ArithmeticError) as exc:
            skipped.append((clip_id, idx, str(exc)))
            continue
        for cond, img in images.items():
            rows[cond].setdefault(clip_id, []).append(extract_features(img))
            if cond in acc:
                acc[cond].add(img)
        indices.setdefault(clip_id, []).append(idx)
    out = ConditionFeatures(skipped=skipped, frame_indices=indices)
    out.features = {c: {k: np.stack(v) for k, v in per.items()} for c, per in rows.items()}
    out.sigma = {c: a.sigma for c, a in acc.items() if a.count}
    return out


def clip_data(features: Mapping[str, np.ndarray], labels: Mapping[str, TraitVector],
              clip_ids: Sequence[str]) -> list[ClipData]:
    """Training items for the clips that have both features and a label."""
    out = []
    for cid in clip_ids:
        if cid in features and cid in labels:
            out.append(ClipData(cid, features[cid], labels[cid].as_array()))
        else:
            log.debug("clip %s has no features or label; left out", cid)
    return out


def paired_clip_data(face: Mapping[str, np.ndarray], background: Mapping[str, np.ndarray],
                     labels: Mapping[str, TraitVector], clip_ids: Sequence[str]) -> list[PairedClipData]:
    out = []
    for cid in clip_ids:
        if cid not in labels or (cid not in face and cid not in background):
            continue
        if cid not in face or cid not in background:
            raise MissingPairedCondition(f"clip {cid!r} has only one of the face/background streams")
        out.append(PairedClipData(cid, face[cid], background[cid], labels[cid].as_array()))
    return out


@dataclass
class StudyResult:
    report: Report
    models: dict[str, Regressor | FusionModel]
    histories: dict[str, list]
    predictions: dict[str, dict[str, TraitVector]]


def train_condition(condition: str, feats: ConditionFeatures, manifest: SplitManifest,
                    labels: Mapping[str, TraitVector], config: TrainConfig,
                    branches: Mapping[str, Regressor] | None = None,
                    fusion_config: TrainConfig | None = None):
    train_ids = [c.clip_id for c in manifest["training"]]
    val_ids = [c.clip_id for c in manifest["validation"]]
    if condition == "face_bg":
        if not branches or "face" not in branches or "background" not in branches:
            raise MissingPairedCondition("face+bg fusion needs trained face and background models")
        f, b = feats.features["face"], feats.features["background"]
        tr = paired_clip_data(f, b, labels, train_ids)
        va = paired_clip_data(f, b, labels, val_ids)
        return train_fusion(branches["face"], branches["background"], tr, va, fusion_config or config)
    tr = clip_data(feats.features[condition], labels, train_ids)
    va = clip_data(feats.features[condition], labels, val_ids)
    if not tr or not va:
        raise EmptyClip(f"no usable training or validation clips for condition {condition!r}")
    best, history = train(Regressor.initialize(_feature_dim(tr), rng=config.rng_seed), tr, va, config)
    return best.params, history


def _feature_dim(clips: Sequence[ClipData]) -> int:
    return int(clips[0].features.shape[1])


def predict_clips(model, condition: str, feats: ConditionFeatures,
                  clip_ids: Sequence[str]) -> dict[str, TraitVector]:
    out = {}
    for cid in clip_ids:
        if condition == "face_bg":
            f = feats.features["face"].get(cid)
            b = feats.features["background"].get(cid)
            if f is None or b is None:
                continue
            out[cid] = predict(model, (f, b))
        else:
            x = feats.features[condition].get(cid)
            if x is None:
                continue
            out[cid] = predict(model, x)
    return out


def run_study(frames: Iterable[tuple[str, int, np.ndarray]],
              records: Mapping[tuple[str, int], LandmarkRecord],
              manifest: SplitManifest, labels: Mapping[str, TraitVector],
              config: TrainConfig = TrainConfig(), fusion_config: TrainConfig | None = None,
              alpha: float = 0.05, num_models: int = 3, allow_leakage: bool = False,
              conditions: Sequence[str] = imageops.CONDITIONS,
              progress: Callable[[str], None] | None = None) -> StudyResult:
    """Train every condition on the training split and compare them on the test split."""
    verdict = check_splits(manifest, allow_leakage)
    say = progress or log.info
    train_ids = [c.clip_id for c in manifest["training"]]
    template = training_template(records, train_ids)
    say("extracting condition features")
    feats = extract_condition_features(frames, records, template)

    models: dict = {}
    histories: dict = {}
    for cond in [c for c in conditions if c != "face_bg"]:
        say(f"training {cond}")
        models[cond], histories[cond] = train_condition(cond, feats, manifest, labels, config)
    if "face_bg" in conditions:
        say("training face_bg fusion layer")
        models["face_bg"], histories["face_bg"] = train_condition(
            "face_bg", feats, manifest, labels, config, branches=models, fusion_config=fusion_config)

    test_ids = [c.clip_id for c in manifest["testing"]]
    predictions = {cond: predict_clips(models[cond], cond, feats, test_ids) for cond in conditions}
    tables = {cond: PredictionTable.join(p, labels) for cond, p in predictions.items()}
    report = build_report(tables, alpha=alpha, num_models=num_models, sigma=feats.sigma,
                          split_verdict="pass" if verdict.passed else "FAIL",
                          shared_uids=verdict.shared_uids, confounded=not verdict.passed)
    return StudyResult(report, models, histories, predictions)
