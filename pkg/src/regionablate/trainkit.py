"""Desk-scale training protocol.

A linear regressor over an 8x8 grayscale thumbnail stands in for a deep
network. What is kept faithful is the protocol around it: MAE loss,
classical-momentum SGD, one random frame per clip per epoch, validation every
few epochs with best-checkpoint selection, and a two-branch fusion model
whose branches are frozen while only the fusion layer learns.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    EmptyClip,
    EmptyVideo,
    LengthMismatch,
    MalformedInput,
    MissingPairedCondition,
    NonFiniteGradient,
    OutOfRange,
    ValidationError,
)
from .stats import TraitVector, aggregate_predictions

FEATURE_GRID = 8
FEATURE_DIM = FEATURE_GRID * FEATURE_GRID
N_TRAITS = 5
CHECKPOINT_FORMAT = "regionablate-checkpoint"
CHECKPOINT_VERSION = 1

_LUMA = np.array([0.299, 0.587, 0.114])


def label_transform(raw) -> TraitVector:
    """Raw (O, C, E, A, N) annotation -> trait vector with N stored as 1 - N."""
    vals = [float(v) for v in raw]
    if len(vals) != 5:
        raise LengthMismatch(f"expected 5 raw trait values, got {len(vals)}")
    for v in vals:
        if not (math.isfinite(v) and 0.0 <= v <= 1.0):
            raise OutOfRange(f"raw trait value {v!r} outside [0, 1]")
    o, c, e, a, n = vals
    return TraitVector(o, c, e, a, 1.0 - n)


def extract_features(image, grid: int = FEATURE_GRID) -> np.ndarray:
    """Grayscale block-average thumbnail of ``grid x grid`` cells, flattened to [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    gray = img @ _LUMA if img.ndim == 3 else img
    h, w = gray.shape
    if h < grid or w < grid:
        raise MalformedInput(f"image {w}x{h} smaller than the {grid}x{grid} feature grid")
    r_edges = (np.arange(grid + 1) * h) // grid
    c_edges = (np.arange(grid + 1) * w) // grid
    sums = np.add.reduceat(np.add.reduceat(gray, r_edges[:-1], axis=0), c_edges[:-1], axis=1)
    means = sums / np.outer(np.diff(r_edges), np.diff(c_edges))
    return np.clip(means.ravel() / 255.0, 0.0, 1.0)


@dataclass
class Regressor:
    weights: np.ndarray  # (feature_dim, 5)
    bias: np.ndarray  # (5,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).ravel()
        if self.weights.ndim != 2 or self.weights.shape[1] != self.bias.size:
            raise LengthMismatch(f"weights {self.weights.shape} do not match bias {self.bias.shape}")

    @classmethod
    def initialize(cls, feature_dim: int = FEATURE_DIM, rng=None, scale: float = 0.01) -> "Regressor":
        rng = np.random.default_rng(rng)
        return cls(rng.normal(0.0, scale, size=(feature_dim, N_TRAITS)), np.full(N_TRAITS, 0.5))

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size

    def forward(self, features) -> np.ndarray:
        """Unclamped outputs, as used by the training loss."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        return x @ self.weights + self.bias

    def predict(self, features) -> np.ndarray:
        return np.clip(self.forward(features), 0.0, 1.0)

    def copy(self) -> "Regressor":
        return Regressor(self.weights.copy(), self.bias.copy())

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}

    def to_bytes(self) -> bytes:
        return (np.ascontiguousarray(self.weights, dtype="<f8").tobytes()
                + np.ascontiguousarray(self.bias, dtype="<f8").tobytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Regressor":
        return cls(np.array(d["weights"], dtype=np.float64), np.array(d["bias"], dtype=np.float64))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 0.001
    momentum: float = 0.9
    validate_every: int = 10
    rng_seed: int = 0
    batch_size: int = 32

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValidationError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.validate_every < 1 or self.epochs % self.validate_every:
            raise ValidationError(
                f"validate_every={self.validate_every} must divide epochs={self.epochs}")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


@dataclass(frozen=True)
class Checkpoint:
    epoch: int
    params: Regressor
    val_loss: float
    train_loss: float = float("nan")


@dataclass(frozen=True)
class ClipData:
    """Per-frame feature rows of one clip and its label."""

    clip_id: str
    features: np.ndarray  # (n_frames, feature_dim)
    label: np.ndarray  # (5,)

    @property
    def n_frames(self) -> int:
        return len(self.features)


@dataclass(frozen=True)
class PairedClipData:
    """Face and background features of the same frames of one clip."""

    clip_id: str
    face: np.ndarray
    background: np.ndarray
    label: np.ndarray


def sample_epoch_frames(clips: Sequence, rng: np.random.Generator) -> list[tuple[str, int]]:
    """Draw one frame index per clip, uniformly over that clip's frames.

    ``clips`` holds :class:`ClipData` items or ``(clip_id, n_frames)`` pairs.
    """
    out = []
    for clip in clips:
        clip_id, n = (clip.clip_id, clip.n_frames) if isinstance(clip, ClipData) else clip
        if n < 1:
            raise EmptyClip(f"clip {clip_id!r} has no frames")
        out.append((clip_id, int(rng.integers(n))))
    return out


def mae_loss(model: Regressor, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.abs(model.forward(x) - y).mean())


def mae_gradients(model: Regressor, x: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of the batch-mean MAE; the subgradient at a zero residual is 0."""
    x = np.atleast_2d(x)
    resid = model.forward(x) - y
    g = np.sign(resid) / resid.size
    return {"weights": x.T @ g, "bias": g.sum(axis=0)}


def sgd_step(model: Regressor, batch, lr: float, momentum: float, velocity=None):
    """One classical-momentum step: ``v <- m·v + grad``, ``θ <- θ - lr·v``.

    Returns the updated ``(model, velocity)``; the inputs are not modified.
    """
    x, y = batch
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if len(x) == 0:
        raise EmptyClip("sgd_step needs a non-empty batch")
    if len(x) != len(y):
        raise LengthMismatch(f"{len(x)} inputs vs {len(y)} targets")
    grads = mae_gradients(model, x, y)
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise NonFiniteGradient("non-finite gradient")
    if velocity is None:
        velocity = {k: np.zeros_like(v) for k, v in grads.items()}
    new_v = {k: momentum * velocity[k] + grads[k] for k in grads}
    updated = Regressor(model.weights - lr * new_v["weights"], model.bias - lr * new_v["bias"])
    return updated, new_v


def _stack_first_frames(clips: Sequence[ClipData]) -> tuple[np.ndarray, np.ndarray]:
    for c in clips:
        if c.n_frames < 1:
            raise EmptyClip(f"clip {c.clip_id!r} has no frames")
    return (np.stack([c.features[0] for c in clips]),
            np.stack([np.asarray(c.label, dtype=np.float64) for c in clips]))


def validation_loss(model: Regressor, clips: Sequence[ClipData]) -> float:
    """MAE of clamped predictions on the first frame of every validation clip."""
    x, y = _stack_first_frames(clips)
    return float(np.abs(model.predict(x) - y).mean())


def select_best(history: Sequence[Checkpoint]) -> Checkpoint:
    """Lowest validation loss; earliest epoch on ties."""
    if not history:
        raise ValidationError("empty training history")
    return min(history, key=lambda ck: (ck.val_loss, ck.epoch))


def train(model: Regressor, train_clips: Sequence[ClipData], val_clips: Sequence[ClipData],
          config: TrainConfig = TrainConfig()) -> tuple[Checkpoint, list[Checkpoint]]:
    """Run the training protocol and return ``(best, history)``.

    Each epoch draws one random frame per training clip, shuffles the clips
    and takes momentum-SGD steps over minibatches. Every
    ``config.validate_every`` epochs the model is scored on the validation
    clips and snapshotted. Callers are responsible for the two splits being
    disjoint by source video.
    """
    if not train_clips or not val_clips:
        raise EmptyClip("training and validation splits must be non-empty")
    train_clips = list(train_clips)
    by_id = {c.clip_id: c for c in train_clips}
    labels = np.stack([np.asarray(c.label, dtype=np.float64) for c in train_clips])
    rng = np.random.default_rng(config.rng_seed)
    velocity = None
    history: list[Checkpoint] = []
    for epoch in range(1, config.epochs + 1):
        frames = sample_epoch_frames(train_clips, rng)
        x = np.stack([by_id[cid].features[idx] for cid, idx in frames])
        order = rng.permutation(len(frames))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            losses.append(mae_loss(model, x[idx], labels[idx]) * len(idx))
            model, velocity = sgd_step(model, (x[idx], labels[idx]), config.lr, config.momentum, velocity)
        if epoch % config.validate_every == 0:
            history.append(Checkpoint(epoch, model.copy(), validation_loss(model, val_clips),
                                      float(sum(losses) / len(order))))
    return select_best(history), history


def predict(model, frames) -> TraitVector:
    """Average of clamped per-frame predictions for one video."""
    feats = np.asarray(frames, dtype=np.float64)
    if feats.size == 0:
        raise EmptyVideo("cannot predict a video with no frames")
    preds = model.predict(feats)
    return aggregate_predictions(("video", i, p) for i, p in enumerate(preds))[0][1]


# --- fusion -----------------------------------------------------------------

@dataclass
class FusionModel:
    face_branch: Regressor
    bg_branch: Regressor
    fusion: Regressor  # 10 -> 5 over concatenated branch outputs

    @classmethod
    def initialize(cls, face_branch: Regressor, bg_branch: Regressor) -> "FusionModel":
        # start from the average of the two branches
        w = np.vstack([0.5 * np.eye(N_TRAITS), 0.5 * np.eye(N_TRAITS)])
        return cls(face_branch, bg_branch, Regressor(w, np.zeros(N_TRAITS)))

    def branch_outputs(self, face_features, bg_features) -> np.ndarray:
        return np.hstack([self.face_branch.predict(face_features), self.bg_branch.predict(bg_features)])

    def forward(self, paired) -> np.ndarray:
        face, bg = paired
        return self.fusion.forward(self.branch_outputs(face, bg))

    def predict(self, paired) -> np.ndarray:
        return np.clip(self.forward(paired), 0.0, 1.0)

    def contributions(self, face_features, bg_features) -> tuple[float, float]:
        """Mean absolute output variation routed through each branch.

        Branch outputs are centred first: a constant branch output is
        indistinguishable from the fusion bias and carries no information.
        """
        outs = self.branch_outputs(face_features, bg_features)
        outs = outs - outs.mean(axis=0)
        w = self.fusion.weights
        face_part = np.abs(outs[:, :N_TRAITS] @ w[:N_TRAITS]).mean()
        bg_part = np.abs(outs[:, N_TRAITS:] @ w[N_TRAITS:]).mean()
        return float(face_part), float(bg_part)

    def bg_share(self, face_features, bg_features) -> float:
        face_part, bg_part = self.contributions(face_features, bg_features)
        total = face_part + bg_part
        return bg_part / total if total else 0.0


def _check_pairs(clips: Sequence[PairedClipData]) -> None:
    for c in clips:
        if c.face is None or c.background is None:
            raise MissingPairedCondition(f"clip {c.clip_id!r} lacks a face or background stream")
        if len(c.face) != len(c.background):
            raise MissingPairedCondition(
                f"clip {c.clip_id!r}: {len(c.face)} face frames vs {len(c.background)} background frames")


def _as_regressor(obj) -> Regressor:
    return obj.params if isinstance(obj, Checkpoint) else obj


def train_fusion(face_ckpt, bg_ckpt, train_clips: Sequence[PairedClipData],
                 val_clips: Sequence[PairedClipData], config: TrainConfig = TrainConfig()):
    """Train only the fusion layer on top of two frozen branches.

    Branch outputs are computed once per frame from the frozen branches; the
    fusion layer is then trained with the same protocol as :func:`train`.
    Returns ``(best FusionModel, history)``.
    """
    face = _as_regressor(face_ckpt).copy()
    bg = _as_regressor(bg_ckpt).copy()
    _check_pairs(train_clips)
    _check_pairs(val_clips)
    init = FusionModel.initialize(face, bg)

    def fused(clips):
        return [ClipData(c.clip_id, init.branch_outputs(c.face, c.background), c.label) for c in clips]

    best, history = train(init.fusion, fused(train_clips), fused(val_clips), config)
    return FusionModel(face, bg, best.params), history


def fusion_training_set(clips: Sequence[PairedClipData]) -> tuple[np.ndarray, np.ndarray]:
    face = np.vstack([c.face for c in clips])
    bg = np.vstack([c.background for c in clips])
    return face, bg


# --- checkpoint files -------------------------------------------------------

def save_checkpoint(path: str | Path, model, *, config: TrainConfig | None = None,
                    epoch: int = 0, val_loss: float = float("nan"), condition: str = "") -> None:
    """Write a versioned JSON checkpoint; identical inputs give identical bytes."""
    if isinstance(model, FusionModel):
        params = {"kind": "fusion", "face_branch": model.face_branch.to_dict(),
                  "bg_branch": model.bg_branch.to_dict(), "fusion": model.fusion.to_dict()}
    else:
        params = {"kind": "regressor", **model.to_dict()}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "condition": condition,
        "config": asdict(config) if config else None,
        "epoch": epoch,
        "val_loss": val_loss,
        "params": params,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[Regressor | FusionModel, dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedInput(f"cannot read checkpoint {path}: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise MalformedInput(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
    p = doc["params"]
    if p["kind"] == "fusion":
        model = FusionModel(Regressor.from_dict(p["face_branch"]), Regressor.from_dict(p["bg_branch"]),
                            Regressor.from_dict(p["fusion"]))
    else:
        model = Regressor.from_dict(p)
    return model, doc
