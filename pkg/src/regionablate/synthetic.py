"""Synthetic corpora, frames and feature fixtures.

Everything here is deterministic given a seed. The generated frames mimic
the real setting loosely: one face per frame whose appearance carries the
trait signal, in front of a background shared by all clips of one source
video.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import corpus, files
from .corpus import ClipRef
from .imageops import LANDMARK_COUNT, BoundingBox
from .trainkit import N_TRAITS, ClipData, PairedClipData, Regressor

# Reference leakage-free split of the corpus: clips and source videos per split.
REFERENCE_CLIPS = (6744, 1676, 1580)
REFERENCE_UIDS = (2060, 500, 500)

_ALPHABET = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-"


def random_uids(n: int, rng, length: int = 11) -> list[str]:
    """Distinct YouTube-like identifiers."""
    out: set[str] = set()
    while len(out) < n:
        out.add("".join(rng.choice(list(_ALPHABET), size=length)))
    return list(out)


def spread_counts(total: int, n: int, rng, low: int = 1, high: int = 6) -> list[int]:
    """``n`` integers in ``[low, high]`` summing to ``total``, in random order."""
    if not n * low <= total <= n * high:
        raise ValueError(f"cannot spread {total} over {n} slots within [{low}, {high}]")
    base, extra = divmod(total, n)
    counts = [base + (i < extra) for i in range(n)]
    # shuffle mass between slots while keeping bounds and total
    for _ in range(n):
        i, j = rng.integers(n, size=2)
        if counts[i] > low and counts[j] < high:
            counts[i] -= 1
            counts[j] += 1
    rng.shuffle(counts)
    return counts


def clips_for(uid: str, n: int, first_segment: int = 0, ext: str = "mp4") -> list[ClipRef]:
    return [ClipRef(f"{uid}.{s:03d}.{ext}", uid, s) for s in range(first_segment, first_segment + n)]


def reference_corpus(seed: int = 0, clips: Sequence[int] = REFERENCE_CLIPS,
                  uids: Sequence[int] = REFERENCE_UIDS) -> list[ClipRef]:
    """A corpus whose sorted-UID split reproduces the given per-split clip counts.

    UIDs are drawn at random and sorted; consecutive blocks of the sorted list
    then receive clip counts that sum to each split's clip total.
    """
    rng = np.random.default_rng(seed)
    names = sorted(random_uids(sum(uids), rng), key=lambda u: u.encode("utf-8"))
    out: list[ClipRef] = []
    start = 0
    for n_clips, n_uids in zip(clips, uids):
        counts = spread_counts(n_clips, n_uids, rng)
        for uid, k in zip(names[start:start + n_uids], counts):
            out.extend(clips_for(uid, k))
        start += n_uids
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def legacy_leak_fixture(n_test: int = 100, n_train: int = 100, test_shared: int = 83,
                        train_shared: int = 46, shared_uids: int = 23) -> tuple[list[ClipRef], list[ClipRef]]:
    """Train/test clip lists with a planted source-video overlap.

    ``test_shared`` test clips and ``train_shared`` train clips come from the
    same ``shared_uids`` videos; the remaining clips have private UIDs.
    Returns ``(train, test)``.
    """
    shared = [f"shared{i:03d}" for i in range(shared_uids)]
    test_per = spread_counts(test_shared, shared_uids, np.random.default_rng(1), 1, test_shared)
    train_per = spread_counts(train_shared, shared_uids, np.random.default_rng(2), 1, train_shared)
    train: list[ClipRef] = []
    test: list[ClipRef] = []
    for uid, kt, kr in zip(shared, test_per, train_per):
        test.extend(clips_for(uid, kt))
        train.extend(clips_for(uid, kr, first_segment=kt))
    test.extend(clips_for(f"testonly{i:03d}", 1)[0] for i in range(n_test - test_shared))
    train.extend(clips_for(f"trainonly{i:03d}", 1)[0] for i in range(n_train - train_shared))
    return train, test


def legacy_manifest() -> corpus.SplitManifest:
    train, test = legacy_leak_fixture()
    return corpus.SplitManifest({"training": tuple(train), "testing": tuple(test)})


# --- faces ------------------------------------------------------------------

def canonical_shape() -> np.ndarray:
    """A 68-point face layout in unit coordinates (x right, y down), centred on the nose."""
    pts = []
    # jaw: 17 points along the lower half of an ellipse
    for t in np.linspace(math.pi, 0, 17):
        pts.append((0.5 * math.cos(t), -0.05 + 0.6 * math.sin(t)))
    # eyebrows: 5 + 5
    for cx in (-0.22, 0.22):
        for dx in np.linspace(-0.12, 0.12, 5):
            pts.append((cx + dx, -0.28 - 0.04 * math.cos(dx * 12)))
    # nose: 4 bridge + 5 base
    for y in np.linspace(-0.18, 0.02, 4):
        pts.append((0.0, y))
    for dx in np.linspace(-0.08, 0.08, 5):
        pts.append((dx, 0.08 + 0.02 * abs(dx) * 10))
    # eyes: 6 + 6
    for cx in (-0.2, 0.2):
        for t in np.linspace(0, 2 * math.pi, 7)[:-1]:
            pts.append((cx + 0.08 * math.cos(t), -0.15 + 0.035 * math.sin(t)))
    # mouth: 12 outer + 8 inner
    for t in np.linspace(0, 2 * math.pi, 13)[:-1]:
        pts.append((0.18 * math.cos(t), 0.3 + 0.07 * math.sin(t)))
    for t in np.linspace(0, 2 * math.pi, 9)[:-1]:
        pts.append((0.12 * math.cos(t), 0.3 + 0.03 * math.sin(t)))
    arr = np.array(pts, dtype=np.float64)
    assert arr.shape == (LANDMARK_COUNT, 2)
    return arr


def place_shape(shape: np.ndarray, centre, size: float, angle: float = 0.0) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return size * shape @ rot.T + np.asarray(centre, dtype=np.float64)


def face_box_for(points: np.ndarray, margin: float = 0.1) -> BoundingBox:
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    pad = margin * (hi - lo)
    lo, hi = lo - pad, hi + pad
    return BoundingBox(int(math.floor(lo[0])), int(math.floor(lo[1])),
                       int(math.ceil(hi[0])) + 1, int(math.ceil(hi[1])) + 1)


@dataclass(frozen=True)
class SyntheticFrame:
    clip_id: str
    frame_index: int
    image: np.ndarray
    landmarks: np.ndarray
    face_box: BoundingBox


@dataclass(frozen=True)
class SyntheticStudy:
    """Clips, raw labels and a frame renderer for an end-to-end run."""

    clips: tuple[ClipRef, ...]
    frames_per_clip: int
    raw_labels: dict[str, tuple[float, float, float, float, float]]
    frame_shape: tuple[int, int]
    seed: int
    _faces: dict
    _backgrounds: dict

    def frame(self, clip_id: str, frame_index: int) -> SyntheticFrame:
        face = self._faces[clip_id]
        uid = clip_id.rsplit(".", 2)[0]
        rng = np.random.default_rng([self.seed, abs(hash_str(clip_id)), frame_index])
        h, w = self.frame_shape
        img = self._backgrounds[uid].copy()
        jitter = rng.normal(0, 1.5, size=2)
        pts = place_shape(canonical_shape(), face["centre"] + jitter, face["size"],
                          face["angle"] + rng.normal(0, 0.02))
        _draw_face(img, pts, face["tone"])
        noise = rng.integers(-4, 5, size=img.shape)
        img = np.clip(img.astype(np.int16) + noise, 0, 255).astype(np.uint8)
        return SyntheticFrame(clip_id, frame_index, img, pts, face_box_for(pts))

    def frames(self):
        for clip in self.clips:
            for i in range(self.frames_per_clip):
                yield self.frame(clip.clip_id, i)


def hash_str(s: str) -> int:
    # stable across processes, unlike hash()
    h = 2166136261
    for b in s.encode("utf-8"):
        h = ((h ^ b) * 16777619) & 0xFFFFFFFF
    return h


def _background(rng, shape) -> np.ndarray:
    h, w = shape
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = rng.integers(30, 226, size=3)
    for _ in range(int(rng.integers(3, 8))):
        x0, x1 = sorted(rng.integers(0, w, size=2))
        y0, y1 = sorted(rng.integers(0, h, size=2))
        img[y0:y1 + 1, x0:x1 + 1] = rng.integers(0, 256, size=3)
    return img


def _draw_face(img: np.ndarray, pts: np.ndarray, tone: float) -> None:
    lo = np.floor(pts.min(axis=0)).astype(int)
    hi = np.ceil(pts.max(axis=0)).astype(int)
    h, w = img.shape[:2]
    cx, cy = (lo + hi) / 2
    rx, ry = (hi - lo) / 2 + 1
    y0, y1 = max(lo[1], 0), min(hi[1] + 1, h)
    x0, x1 = max(lo[0], 0), min(hi[0] + 1, w)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    skin = np.array([70 + 170 * tone, 50 + 140 * tone, 40 + 120 * tone])
    img[y0:y1, x0:x1][mask] = skin.astype(np.uint8)
    # darker features around eyes and mouth landmarks
    for p in np.round(pts[36:]).astype(int):
        x, y = p
        if 1 <= x < w - 1 and 1 <= y < h - 1:
            img[y - 1:y + 2, x - 1:x + 2] = (skin * 0.4).astype(np.uint8)


def make_study(n_uids: int = 60, clips_per_uid: tuple[int, int] = (2, 5), n_clips: int | None = 200,
               frames_per_clip: int = 5, frame_shape: tuple[int, int] = (360, 640),
               seed: int = 0) -> SyntheticStudy:
    """Synthetic clips whose trait labels are driven mostly by face tone.

    Each clip gets a latent ``tone`` in [0, 1] that sets the face brightness;
    labels are a fixed mix of ``tone`` plus a weak per-video background term
    and small label noise. If ``n_clips`` is given the clip counts per UID
    are adjusted to hit it exactly.
    """
    rng = np.random.default_rng(seed)
    uids = sorted(random_uids(n_uids, rng, length=8))
    if n_clips is None:
        counts = list(rng.integers(clips_per_uid[0], clips_per_uid[1] + 1, size=n_uids))
    else:
        counts = spread_counts(n_clips, n_uids, rng, clips_per_uid[0], clips_per_uid[1])
    h, w = frame_shape
    loadings = np.array([0.9, 0.7, -0.6, 0.5, -0.8])
    bg_loadings = np.array([0.2, -0.1, 0.15, 0.0, 0.1])
    clips: list[ClipRef] = []
    faces, backgrounds, labels = {}, {}, {}
    for uid, k in zip(uids, counts):
        backgrounds[uid] = _background(rng, frame_shape)
        bg_term = backgrounds[uid].mean() / 255.0 - 0.5
        for ref in clips_for(uid, int(k)):
            clips.append(ref)
            tone = float(rng.uniform(0, 1))
            side = rng.choice([-1, 1])
            faces[ref.clip_id] = {
                "tone": tone,
                "centre": np.array([w / 2 + side * rng.uniform(0.1, 0.25) * w, h * rng.uniform(0.4, 0.55)]),
                "size": float(rng.uniform(0.28, 0.4) * h),
                "angle": float(rng.normal(0, 0.12)),
            }
            raw = 0.5 + 0.4 * loadings * (tone - 0.5) + bg_loadings * bg_term + rng.normal(0, 0.03, N_TRAITS)
            raw = np.clip(raw, 0.0, 1.0)
            raw[4] = 1.0 - raw[4]  # stored as neuroticism, inverted on read
            labels[ref.clip_id] = tuple(float(v) for v in raw)
    return SyntheticStudy(tuple(clips), frames_per_clip, labels, frame_shape, seed, faces, backgrounds)


def write_study(study: SyntheticStudy, root: str | Path) -> dict[str, Path]:
    """Materialise a study as the on-disk inputs the command line expects."""
    root = Path(root)
    frames_dir = root / "frames"
    paths = {
        "manifest": root / "corpus.txt",
        "landmarks": root / "landmarks.csv",
        "labels": root / "labels.csv",
        "frames": frames_dir,
    }
    root.mkdir(parents=True, exist_ok=True)
    corpus.write_corpus_manifest(study.clips, paths["manifest"])
    records = []
    for fr in study.frames():
        files.write_image(files.frame_path(frames_dir, fr.clip_id, fr.frame_index), fr.image)
        records.append(files.LandmarkRecord(fr.clip_id, fr.frame_index, fr.face_box, fr.landmarks))
    files.write_landmarks(records, paths["landmarks"])
    files.write_raw_labels(study.raw_labels, paths["labels"])
    return paths


# --- feature-level fixtures -------------------------------------------------

@dataclass(frozen=True)
class SignalNoiseFixture:
    face_branch: Regressor
    bg_branch: Regressor
    train: list[PairedClipData]
    val: list[PairedClipData]


def signal_noise_fixture(n_train: int = 200, n_val: int = 50, frames: int = 5,
                         dim: int = 64, seed: int = 0) -> SignalNoiseFixture:
    """Two branches: a face branch that predicts labels exactly, a background branch of pure noise.

    Face features are constant within a clip and the label equals the face
    branch output on them, so the face branch is perfect on every frame.
    Background features are redrawn per frame and unrelated to the label.
    Both branches keep their outputs inside (0, 1) for the bulk of inputs.
    """
    rng = np.random.default_rng(seed)
    w_face = rng.normal(0, 1, (dim, N_TRAITS)) * 0.06
    w_bg = rng.normal(0, 1, (dim, N_TRAITS)) * 0.03
    face = Regressor(w_face, 0.5 - 0.5 * w_face.sum(axis=0))
    bg = Regressor(w_bg, 0.5 - 0.5 * w_bg.sum(axis=0))

    def clips(n, prefix):
        out = []
        for i in range(n):
            f = np.repeat(rng.uniform(0, 1, (1, dim)), frames, axis=0)
            b = rng.uniform(0, 1, (frames, dim))
            out.append(PairedClipData(f"{prefix}{i:04d}", f, b, face.predict(f)[0]))
        return out

    return SignalNoiseFixture(face, bg, clips(n_train, "tr"), clips(n_val, "va"))


def linear_clips(n: int, weights: np.ndarray, bias: np.ndarray, frames: int = 3,
                 rng=None, prefix: str = "c") -> list[ClipData]:
    """Clips whose label is an exact linear function of their (frame-constant) features."""
    rng = np.random.default_rng(rng)
    out = []
    for i in range(n):
        x = rng.uniform(0, 1, (1, weights.shape[0]))
        out.append(ClipData(f"{prefix}{i:04d}", np.repeat(x, frames, axis=0), (x @ weights + bias)[0]))
    return out
