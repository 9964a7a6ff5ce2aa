"""Region-conditioned frame preprocessing.

Frames are ``uint8`` arrays of shape ``(height, width, 3)`` in RGB order and
landmarks are ``(68, 2)`` float arrays of ``(x, y)`` pixel coordinates. Pixel
``(row, col)`` has its centre at ``x = col, y = row``.

Four experimental conditions are produced from a frame:

* ``face``: the face warped onto a landmark template, 256x256
* ``background``: the face box filled with the mean colour of the rest of
  the frame, then a 256x256 window taken from the side away from the face
* ``face_bg``: the face and background images of the same frame, used as a pair
* ``entire_frame``: the whole frame resized to 256 rows by 465 columns
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DimensionMismatch,
    EmptyInput,
    FaceCoversFrame,
    FrameTooSmall,
    MalformedInput,
)

LANDMARK_COUNT = 68
FACE_SIZE = 256
BACKGROUND_SIZE = 256
ENTIRE_FRAME_SHAPE = (256, 465)  # rows, cols

CONDITIONS = ("face", "background", "face_bg", "entire_frame")
IMAGE_CONDITIONS = ("face", "background", "entire_frame")


def as_frame(frame) -> np.ndarray:
    arr = np.asarray(frame)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionMismatch(f"expected a non-empty (H, W, 3) RGB frame, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise MalformedInput(f"frames must be uint8, got {arr.dtype}")
    return arr


def as_landmarks(points, count: int | None = LANDMARK_COUNT) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DimensionMismatch(f"landmarks must be (N, 2), got {pts.shape}")
    if count is not None and pts.shape[0] != count:
        raise DimensionMismatch(f"expected {count} landmarks, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise MalformedInput("landmark coordinates must be finite")
    return pts


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel box: columns ``left..right-1``, rows ``top..bottom-1``."""

    left: int
    top: int
    right: int
    bottom: int

    def __post_init__(self):
        if not (self.left < self.right and self.top < self.bottom):
            raise MalformedInput(f"degenerate bounding box {self}")

    @property
    def center_x(self) -> float:
        return (self.left + self.right) / 2

    def clamp(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Clamp to the frame; the result may be empty if the box lies outside it."""
        left = min(max(self.left, 0), width)
        right = min(max(self.right, 0), width)
        top = min(max(self.top, 0), height)
        bottom = min(max(self.bottom, 0), height)
        return left, top, right, bottom

    def scaled(self, sx: float, sy: float) -> "BoundingBox":
        """Box in a resized frame, rounded outward so the face stays covered."""
        left = math.floor(self.left * sx)
        top = math.floor(self.top * sy)
        right = max(math.ceil(self.right * sx), left + 1)
        bottom = max(math.ceil(self.bottom * sy), top + 1)
        return BoundingBox(left, top, right, bottom)

    @classmethod
    def around(cls, points) -> "BoundingBox":
        pts = as_landmarks(points, None)
        x0, y0 = np.floor(pts.min(axis=0)).astype(int)
        x1, y1 = np.ceil(pts.max(axis=0)).astype(int) + 1
        return cls(int(x0), int(y0), int(x1), int(y1))


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> scale * rotation @ p + translation`` for column vectors ``p``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(2), np.zeros(2))

    @classmethod
    def from_params(cls, scale: float, angle: float, tx: float = 0.0, ty: float = 0.0):
        c, s = math.cos(angle), math.sin(angle)
        return cls(float(scale), np.array([[c, -s], [s, c]]), np.array([tx, ty], dtype=float))

    @property
    def angle(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    @property
    def matrix(self) -> np.ndarray:
        """Homogeneous 3x3 form."""
        m = np.eye(3)
        m[:2, :2] = self.scale * self.rotation
        m[:2, 2] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation

    def inverse(self) -> "SimilarityTransform":
        rot_t = self.rotation.T
        inv_scale = 1.0 / self.scale
        return SimilarityTransform(inv_scale, rot_t, -inv_scale * (rot_t @ self.translation))

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """``self ∘ other``: apply ``other`` first."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * (self.rotation @ other.translation) + self.translation,
        )


def estimate_similarity_transform(src, dst) -> SimilarityTransform:
    """Least-squares similarity transform mapping ``src`` points onto ``dst``.

    Closed-form Umeyama solution: SVD of the cross-covariance of the centred
    point sets, with the smallest singular direction flipped when needed so
    the rotation never becomes a reflection.
    """
    src = as_landmarks(src, None)
    dst = as_landmarks(dst, None)
    if src.shape != dst.shape:
        raise DimensionMismatch(f"point sets differ in shape: {src.shape} vs {dst.shape}")
    n = src.shape[0]
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    src_c = src - mu_s
    dst_c = dst - mu_d
    var_s = float(np.sum(src_c ** 2)) / n
    magnitude = max(1.0, float(np.max(np.abs(src)))) if n else 1.0
    if n < 2 or var_s <= (1e-12 * magnitude) ** 2:
        raise DegenerateConfiguration("source points are (numerically) coincident")

    cov = dst_c.T @ src_c / n
    u, d, vt = np.linalg.svd(cov)
    signs = np.ones(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        signs[-1] = -1.0
    rotation = u @ np.diag(signs) @ vt
    scale = float(np.dot(d, signs)) / var_s
    if not scale > 0:
        raise DegenerateConfiguration("fitted scale is not positive")
    translation = mu_d - scale * rotation @ mu_s
    return SimilarityTransform(scale, rotation, translation)


def compute_template(landmark_sets: Iterable) -> np.ndarray:
    """Pointwise mean of a collection of landmark sets."""
    total = None
    count = 0
    for pts in landmark_sets:
        pts = as_landmarks(pts)
        total = pts.copy() if total is None else total + pts
        count += 1
    if total is None:
        raise EmptyInput("cannot build a template from zero landmark sets")
    return total / count


def fit_template_to_output(template, size: int = FACE_SIZE, padding: float = 0.2) -> np.ndarray:
    """Move a template into ``size x size`` output coordinates.

    The template is scaled uniformly so its bounding extent spans
    ``1 - 2*padding`` of the output and is centred. ``make_face_condition``
    expects templates expressed in these output coordinates.
    """
    pts = as_landmarks(template)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise DegenerateConfiguration("template has zero extent")
    s = size * (1 - 2 * padding) / extent
    centre = (lo + hi) / 2
    return (pts - centre) * s + (size - 1) / 2


def _round_to_uint8(values: np.ndarray) -> np.ndarray:
    # round half away from zero; values are non-negative here
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray, mode: str = "constant") -> np.ndarray:
    """Sample ``image`` at real-valued pixel coordinates.

    ``mode="constant"`` treats everything outside the image as black;
    ``mode="edge"`` clamps coordinates to the border. Returns float64 values
    with a trailing channel axis.
    """
    h, w = image.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if mode == "edge":
        xs = np.clip(xs, 0, w - 1)
        ys = np.clip(ys, 0, h - 1)
        padded, off = image, 0
    elif mode == "constant":
        # one black ring on the top/left, two on the bottom/right, so every
        # tap of a coordinate clamped to [-1, w] lands inside the array
        xs = np.clip(xs, -1, w)
        ys = np.clip(ys, -1, h)
        # only the window the samples touch needs padding
        cx0 = int(max(np.floor(xs.min()), 0)) if xs.size else 0
        cy0 = int(max(np.floor(ys.min()), 0)) if ys.size else 0
        cx1 = int(min(np.floor(xs.max()) + 2, w)) if xs.size else w
        cy1 = int(min(np.floor(ys.max()) + 2, h)) if ys.size else h
        if cx1 > cx0 and cy1 > cy0:
            image = image[cy0:cy1, cx0:cx1]
            xs = xs - cx0
            ys = ys - cy0
            h, w = image.shape[:2]
        padded = np.zeros((h + 3, w + 3) + image.shape[2:], dtype=image.dtype)
        padded[1:h + 1, 1:w + 1] = image
        off = 1
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    pw = padded.shape[1]
    # channel-first planes keep the per-sample weights on the contiguous axis
    planes = np.ascontiguousarray(np.moveaxis(padded.reshape(padded.shape[0] * pw, -1), -1, 0), dtype=np.float64)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = (xs - x0).ravel()
    fy = (ys - y0).ravel()
    i00 = ((y0.astype(np.int64) + off) * pw + (x0.astype(np.int64) + off)).ravel()
    if mode == "edge":
        # the +1 taps may step past the border when their weight is zero
        step_x = (x0.ravel() < w - 1).astype(np.int64)
        i01 = i00 + step_x
        i10 = i00 + pw * (y0.ravel() < h - 1)
        i11 = i10 + step_x
    else:
        i01, i10, i11 = i00 + 1, i00 + pw, i00 + pw + 1
    out = np.empty((len(i00), planes.shape[0]))
    for c, plane in enumerate(planes):
        top = plane.take(i00) * (1 - fx) + plane.take(i01) * fx
        bottom = plane.take(i10) * (1 - fx) + plane.take(i11) * fx
        out[:, c] = top * (1 - fy) + bottom * fy
    return out.reshape(xs.shape + (planes.shape[0],))


def warp_similarity(frame, transform: SimilarityTransform, out_shape: tuple[int, int]) -> np.ndarray:
    """Resample ``frame`` so that output pixel ``p`` shows source point ``transform⁻¹(p)``."""
    frame = as_frame(frame)
    rows, cols = out_shape
    yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    grid = np.stack([xx.ravel(), yy.ravel()], axis=1)
    src = transform.inverse().apply(grid)
    vals = bilinear_sample(frame, src[:, 0], src[:, 1], mode="constant")
    return _round_to_uint8(vals).reshape(rows, cols, 3)


def make_face_condition(frame, landmarks, template, size: int = FACE_SIZE) -> np.ndarray:
    """Align the face so its landmarks land on ``template`` and crop ``size x size``.

    ``template`` is given in output pixel coordinates (see
    :func:`fit_template_to_output`). Samples falling outside the frame are black.
    """
    frame = as_frame(frame)
    pts = as_landmarks(landmarks)
    h, w = frame.shape[:2]
    pts = np.clip(pts, [0, 0], [w - 1, h - 1])
    tform = estimate_similarity_transform(pts, as_landmarks(template))
    return warp_similarity(frame, tform, (size, size))


@dataclass(frozen=True)
class BackgroundCondition:
    image: np.ndarray
    fill: tuple[int, int, int]
    anchor: str  # "left" or "right" edge of the frame
    face_covers_frame: bool = False


def background_fill(frame, face_box: BoundingBox) -> tuple[int, int, int]:
    """Per-channel mean of the pixels outside ``face_box``, rounded half away from zero.

    Integer sums keep the result exact and independent of summation order.
    """
    frame = as_frame(frame)
    h, w = frame.shape[:2]
    left, top, right, bottom = face_box.clamp(w, h)
    totals = frame.reshape(-1, 3).sum(axis=0, dtype=np.int64)
    inside = frame[top:bottom, left:right].reshape(-1, 3).sum(axis=0, dtype=np.int64)
    count = h * w - (bottom - top) * (right - left)
    if count == 0:
        raise FaceCoversFrame("face box covers the whole frame")
    outside = totals - inside
    return tuple(int((2 * int(s) + count) // (2 * count)) for s in outside)


def crop_anchor(face_box: BoundingBox, frame_width: int) -> str:
    """Which frame edge the background window starts from.

    A face left of centre gives a right-anchored window; a face at or right of
    centre gives a left-anchored one.
    """
    return "right" if face_box.center_x < frame_width / 2 else "left"


def make_background_condition(frame, face_box: BoundingBox, size: int = BACKGROUND_SIZE,
                              allow_full_cover: bool = False) -> BackgroundCondition:
    frame = as_frame(frame)
    h, w = frame.shape[:2]
    if h < size or w < size:
        raise FrameTooSmall(f"frame {w}x{h} is smaller than the {size}x{size} background window")
    left, top, right, bottom = face_box.clamp(w, h)
    covers = (right - left) * (bottom - top) == w * h
    if covers:
        if not allow_full_cover:
            raise FaceCoversFrame("face box covers the whole frame")
        totals = frame.reshape(-1, 3).sum(axis=0, dtype=np.int64)
        n = h * w
        fill = tuple(int((2 * int(s) + n) // (2 * n)) for s in totals)
    else:
        fill = background_fill(frame, face_box)

    out = frame.copy()
    out[top:bottom, left:right] = np.array(fill, dtype=np.uint8)
    anchor = crop_anchor(face_box, w)
    x0 = w - size if anchor == "right" else 0
    crop = np.ascontiguousarray(out[0:size, x0:x0 + size])
    return BackgroundCondition(crop, fill, anchor, covers)


def resize_bilinear(frame, out_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel centres and edge clamping.

    Done separably (rows, then columns), which is the same bilinear weighting
    as sampling the 2-D grid directly.
    """
    frame = as_frame(frame)
    h, w = frame.shape[:2]
    rows, cols = out_shape
    if (rows, cols) == (h, w):
        return frame.copy()
    ys = np.clip((np.arange(rows) + 0.5) * (h / rows) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(cols) + 0.5) * (w / cols) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = xs - x0
    out = np.empty((rows, cols, frame.shape[2]))
    for c in range(frame.shape[2]):
        plane = frame[:, :, c].astype(np.float64)
        tmp = plane[y0] * (1 - fy) + plane[y1] * fy
        out[:, :, c] = tmp[:, x0] * (1 - fx) + tmp[:, x1] * fx
    return _round_to_uint8(out)


def make_entire_frame_condition(frame) -> np.ndarray:
    return resize_bilinear(frame, ENTIRE_FRAME_SHAPE)


class SigmaAccumulator:
    """Streaming form of :func:`image_set_sigma`.

    Per-position sums and sums of squares are kept as integers, so the final
    value is exact up to one division and one square root and does not depend
    on the order images are added.
    """

    def __init__(self):
        self.count = 0
        self.shape = None
        self._sum = None
        self._sumsq = None

    def add(self, image) -> None:
        arr = np.asarray(image)
        if arr.dtype != np.uint8:
            raise MalformedInput(f"images must be uint8, got {arr.dtype}")
        if self.shape is None:
            self.shape = arr.shape
            self._sum = np.zeros(arr.shape, dtype=np.int64)
            self._sumsq = np.zeros(arr.shape, dtype=np.int64)
        elif arr.shape != self.shape:
            raise DimensionMismatch(f"image shape {arr.shape} differs from {self.shape}")
        a = arr.astype(np.int64)
        self._sum += a
        self._sumsq += a * a
        self.count += 1

    @property
    def sigma(self) -> float:
        if self.count == 0:
            raise EmptyInput("sigma of an empty image set")
        n = self.count
        # sum_i (x_i - S/n)^2 = (n*Q - S^2) / n at each position
        per_pos = n * self._sumsq - self._sum * self._sum
        numerator = int(per_pos.astype(object).sum())
        denominator = n * n * int(np.prod(self.shape))
        return math.sqrt(numerator / denominator)


def image_set_sigma(images: Iterable) -> float:
    """Pooled population standard deviation of an image set about its mean image.

    sigma² is the mean, over images, pixels and channels, of the squared
    deviation from the pixelwise mean image.
    """
    acc = SigmaAccumulator()
    for img in images:
        acc.add(img)
    if acc.count == 0:
        raise EmptyInput("image_set_sigma needs at least one image")
    return acc.sigma


def mean_image(images: Sequence) -> np.ndarray:
    stack = np.stack([np.asarray(i, dtype=np.float64) for i in images])
    return stack.mean(axis=0)
