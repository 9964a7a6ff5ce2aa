from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regionablate import imageops, synthetic
from regionablate.errors import (
    DegenerateConfiguration,
    DimensionMismatch,
    EmptyInput,
    FaceCoversFrame,
    FrameTooSmall,
    MalformedInput,
)
from regionablate.imageops import BoundingBox, SimilarityTransform


def random_points(rng, n=68, spread=100.0):
    return rng.uniform(-spread, spread, size=(n, 2))


def lstsq_similarity(src, dst):
    """Independent oracle: the 4-parameter problem is linear in (a, b, tx, ty)
    with scale*rotation = [[a, -b], [b, a]]."""
    n = len(src)
    A = np.zeros((2 * n, 4))
    A[0::2] = np.column_stack([src[:, 0], -src[:, 1], np.ones(n), np.zeros(n)])
    A[1::2] = np.column_stack([src[:, 1], src[:, 0], np.zeros(n), np.ones(n)])
    a, b, tx, ty = np.linalg.lstsq(A, dst.ravel(), rcond=None)[0]
    return math.hypot(a, b), math.atan2(b, a), np.array([tx, ty])


def bilinear_oracle(img, x, y):
    """Scalar bilinear sample with black outside the image."""
    h, w = img.shape[:2]

    def px(r, c):
        if 0 <= r < h and 0 <= c < w:
            return img[r, c].astype(float)
        return np.zeros(img.shape[2])

    x0, y0 = math.floor(x), math.floor(y)
    fx, fy = x - x0, y - y0
    return ((1 - fx) * (1 - fy) * px(y0, x0) + fx * (1 - fy) * px(y0, x0 + 1)
            + (1 - fx) * fy * px(y0 + 1, x0) + fx * fy * px(y0 + 1, x0 + 1))


# --- similarity transform -----------------------------------------------------

def test_estimate_identity():
    src = random_points(np.random.default_rng(0))
    t = imageops.estimate_similarity_transform(src, src)
    assert t.scale == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(t.rotation, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(t.translation, [0, 0], atol=1e-10)


def test_estimate_rotation_90_and_shift():
    src = random_points(np.random.default_rng(1))
    dst = src @ np.array([[0, -1], [1, 0]]).T + [10, 0]
    t = imageops.estimate_similarity_transform(src, dst)
    assert t.scale == pytest.approx(1.0, abs=1e-12)
    assert t.angle == pytest.approx(math.pi / 2, abs=1e-12)
    assert np.max(np.abs(t.apply(src) - dst)) < 1e-9


def test_estimate_matches_linear_least_squares():
    rng = np.random.default_rng(2)
    src = random_points(rng)
    true = SimilarityTransform.from_params(2.5, math.radians(37), -4, 11)
    t = imageops.estimate_similarity_transform(src, true.apply(src))
    assert t.scale == pytest.approx(2.5, abs=1e-9)
    assert t.angle == pytest.approx(math.radians(37), abs=1e-12)
    np.testing.assert_allclose(t.translation, [-4, 11], atol=1e-9)
    # with noise the closed form still equals the least-squares minimiser
    noisy = true.apply(src) + rng.normal(scale=3.0, size=src.shape)
    t = imageops.estimate_similarity_transform(src, noisy)
    s, ang, tr = lstsq_similarity(src, noisy)
    assert t.scale == pytest.approx(s, rel=1e-10)
    assert t.angle == pytest.approx(ang, abs=1e-10)
    np.testing.assert_allclose(t.translation, tr, atol=1e-8)


def test_estimate_never_reflects():
    src = random_points(np.random.default_rng(3))
    mirrored = src * [-1, 1]
    t = imageops.estimate_similarity_transform(src, mirrored)
    assert np.linalg.det(t.rotation) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(t.rotation.T @ t.rotation, np.eye(2), atol=1e-12)


def test_estimate_degenerate():
    with pytest.raises(DegenerateConfiguration):
        imageops.estimate_similarity_transform(np.full((68, 2), 3.0), random_points(np.random.default_rng(0)))
    with pytest.raises(DimensionMismatch):
        imageops.estimate_similarity_transform(np.zeros((68, 2)), np.zeros((67, 2)))
    with pytest.raises(MalformedInput):
        imageops.estimate_similarity_transform(np.full((68, 2), np.nan), np.zeros((68, 2)))


transforms = st.builds(
    SimilarityTransform.from_params,
    st.floats(0.05, 20), st.floats(-math.pi, math.pi), st.floats(-500, 500), st.floats(-500, 500),
)


@settings(max_examples=200, deadline=None)
@given(transforms)
def test_transform_inverse_round_trip(t):
    pts = random_points(np.random.default_rng(0), 20)
    back = t.inverse().compose(t)
    assert back.scale == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(back.apply(pts) - pts)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(transforms, st.floats(-math.pi, math.pi))
def test_estimate_equivariant_under_rotation(t, angle):
    src = random_points(np.random.default_rng(5))
    dst = t.apply(src)
    r = SimilarityTransform.from_params(1.0, angle)
    base = imageops.estimate_similarity_transform(src, dst)
    rotated = imageops.estimate_similarity_transform(r.apply(src), r.apply(dst))
    assert rotated.scale == pytest.approx(base.scale, rel=1e-9)


def test_compute_template():
    rng = np.random.default_rng(4)
    L = random_points(rng) + 150
    np.testing.assert_array_equal(imageops.compute_template([L, L]), L)
    mirrored = L.copy()
    mirrored[:, 0] = 200 - L[:, 0]
    np.testing.assert_allclose(imageops.compute_template([L, mirrored])[:, 0], 100, atol=1e-12)
    sets = [random_points(rng) for _ in range(3)]
    brute = [[(sets[0][i][k] + sets[1][i][k] + sets[2][i][k]) / 3 for k in range(2)] for i in range(68)]
    np.testing.assert_allclose(imageops.compute_template(sets), brute, atol=1e-12)
    with pytest.raises(EmptyInput):
        imageops.compute_template([])


def test_fit_template_to_output():
    shape = synthetic.canonical_shape()
    t = imageops.fit_template_to_output(shape * 37 + 5, size=256, padding=0.2)
    lo, hi = t.min(axis=0), t.max(axis=0)
    assert max(hi - lo) == pytest.approx(256 * 0.6)
    np.testing.assert_allclose((lo + hi) / 2, [127.5, 127.5])


# --- bilinear sampling ----------------------------------------------------------

def test_bilinear_sample_matches_scalar_oracle():
    rng = np.random.default_rng(6)
    img = rng.integers(0, 256, size=(9, 13, 3), dtype=np.uint8)
    xs = rng.uniform(-3, 16, size=300)
    ys = rng.uniform(-3, 12, size=300)
    got = imageops.bilinear_sample(img, xs, ys, mode="constant")
    for k in range(300):
        np.testing.assert_allclose(got[k], bilinear_oracle(img, xs[k], ys[k]), atol=1e-9)


def test_bilinear_sample_edge_mode_clamps():
    img = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
    got = imageops.bilinear_sample(img, np.array([-5.0, 7.0]), np.array([-5.0, 9.0]), mode="edge")
    np.testing.assert_array_equal(got[0], img[0, 0])
    np.testing.assert_array_equal(got[1], img[1, 1])


# --- face condition -------------------------------------------------------------

def _template():
    return imageops.fit_template_to_output(synthetic.canonical_shape())


def test_face_identity_warp():
    rng = np.random.default_rng(7)
    frame = rng.integers(0, 256, size=(256, 256, 3), dtype=np.uint8)
    tpl = _template()
    out = imageops.make_face_condition(frame, tpl, tpl)
    np.testing.assert_array_equal(out, frame)


def test_face_translated_landmarks_shift_output():
    rng = np.random.default_rng(8)
    frame = rng.integers(0, 256, size=(300, 400, 3), dtype=np.uint8)
    tpl = _template()
    base = imageops.make_face_condition(frame, tpl, tpl)
    shifted = imageops.make_face_condition(frame, tpl + [5, 0], tpl)
    diff = np.abs(shifted[:, :251].astype(int) - base[:, 5:].astype(int))
    assert diff.max() <= 2
    # direct inverse-warp oracle at a handful of output pixels
    t = imageops.estimate_similarity_transform(tpl + [5, 0], tpl).inverse()
    for r, c in [(0, 0), (17, 200), (128, 128), (255, 3), (90, 250)]:
        x, y = t.apply([c, r])
        expect = np.floor(bilinear_oracle(frame, x, y) + 0.5)
        assert np.abs(shifted[r, c] - expect).max() <= 2


def test_face_constant_frame_constant_output():
    frame = np.full((720, 1280, 3), (12, 200, 77), dtype=np.uint8)
    pts = synthetic.place_shape(synthetic.canonical_shape(), (640, 360), 180, angle=0.3)
    out = imageops.make_face_condition(frame, pts, _template())
    assert out.shape == (256, 256, 3)
    assert (out == (12, 200, 77)).all()


def test_face_out_of_frame_is_black():
    frame = np.full((300, 300, 3), 255, dtype=np.uint8)
    # a tiny face in the corner is blown up, so most samples fall outside
    pts = synthetic.place_shape(synthetic.canonical_shape(), (5, 5), 8)
    out = imageops.make_face_condition(frame, pts, _template())
    assert (out == 0).any()


# --- background condition -------------------------------------------------------

def test_background_constant_frame():
    frame = np.full((300, 400, 3), 100, dtype=np.uint8)
    bg = imageops.make_background_condition(frame, BoundingBox(50, 60, 150, 200))
    assert bg.fill == (100, 100, 100)
    assert (bg.image == 100).all() and bg.image.shape == (256, 256, 3)


def test_background_left_face_right_anchored_crop():
    frame = np.zeros((256, 465, 3), dtype=np.uint8)
    frame[:, :, 0] = np.arange(465) % 256
    box = BoundingBox(60, 40, 140, 160)  # centre x = 100 < 232.5
    zeros = np.zeros_like(frame)
    zeros[40:160, 60:140] = 255
    bg = imageops.make_background_condition(zeros, box)
    assert bg.fill == (0, 0, 0)
    assert bg.anchor == "right"
    assert (bg.image == 0).all()
    ramp = imageops.make_background_condition(frame, box)
    np.testing.assert_array_equal(ramp.image[:, :, 0], frame[:256, 209:465, 0])


def test_background_fill_brute_force_checkerboard():
    yy, xx = np.mgrid[0:270, 0:300]
    frame = np.zeros((270, 300, 3), dtype=np.uint8)
    frame[..., 0] = np.where((yy // 7 + xx // 5) % 2, 250, 3)
    frame[..., 1] = (xx * 3 + yy) % 256
    frame[..., 2] = 17
    box = BoundingBox(180, 20, 290, 140)
    vals = [[], [], []]
    for r in range(270):
        for c in range(300):
            if not (20 <= r < 140 and 180 <= c < 290):
                for k in range(3):
                    vals[k].append(int(frame[r, c, k]))
    expect = tuple(math.floor(Fraction(sum(v), len(v)) + Fraction(1, 2)) for v in vals)
    bg = imageops.make_background_condition(frame, box)
    assert bg.fill == expect
    assert bg.anchor == "left"
    # every surviving in-box position carries the fill value exactly
    assert (bg.image[20:140, 180:256] == np.array(expect, dtype=np.uint8)).all()


def test_background_fill_rounds_half_away_from_zero():
    frame = np.zeros((256, 256, 3), dtype=np.uint8)
    # only column 0 lies outside the box: 128 pixels of 1 and 128 of 2
    frame[0::2, 0] = (1, 1, 0)
    frame[1::2, 0] = (2, 2, 1)
    box = BoundingBox(1, 0, 256, 256)
    # means 1.5, 1.5 and 0.5 all round up
    assert imageops.background_fill(frame, box) == (2, 2, 1)
    frame[1::2, 0] = (2, 1, 0)
    # 1.5 -> 2, 1.0 -> 1, 0 -> 0
    assert imageops.background_fill(frame, box) == (2, 1, 0)


@pytest.mark.parametrize("width", [400, 465, 512])
def test_crop_anchor_tie_break(width):
    half = width // 2
    centred = BoundingBox(half - 10, 0, width - half + 10, 10)
    assert centred.center_x == width / 2
    # a centred face is not "left of centre", so the window starts at the left edge
    assert imageops.crop_anchor(centred, width) == "left"
    assert imageops.crop_anchor(BoundingBox(half - 11, 0, width - half + 9, 10), width) == "right"


@given(st.integers(0, 400), st.integers(1, 64), st.integers(256, 600))
def test_crop_anchor_total(left, size, width):
    box = BoundingBox(left, 0, left + size, 5)
    anchor = imageops.crop_anchor(box, width)
    assert anchor == ("right" if box.center_x < width / 2 else "left")


def test_background_errors():
    with pytest.raises(FrameTooSmall):
        imageops.make_background_condition(np.zeros((255, 500, 3), np.uint8), BoundingBox(0, 0, 5, 5))
    frame = np.full((256, 300, 3), 9, dtype=np.uint8)
    everything = BoundingBox(-5, -5, 400, 400)
    with pytest.raises(FaceCoversFrame):
        imageops.make_background_condition(frame, everything)
    bg = imageops.make_background_condition(frame, everything, allow_full_cover=True)
    assert bg.face_covers_frame and bg.fill == (9, 9, 9)


# --- entire frame ---------------------------------------------------------------

def test_entire_frame_identity():
    frame = np.random.default_rng(9).integers(0, 256, size=(256, 465, 3), dtype=np.uint8)
    np.testing.assert_array_equal(imageops.make_entire_frame_condition(frame), frame)


def test_entire_frame_constant():
    frame = np.full((720, 1280, 3), (4, 128, 251), dtype=np.uint8)
    out = imageops.make_entire_frame_condition(frame)
    assert out.shape == (256, 465, 3) and (out == (4, 128, 251)).all()


def test_entire_frame_halving_gradient():
    yy, xx = np.mgrid[0:512, 0:930]
    frame = np.stack([(xx * 255) // 929, (yy * 255) // 511, (xx + yy) % 256], axis=-1).astype(np.uint8)
    out = imageops.make_entire_frame_condition(frame).astype(float)
    # exact 2x reduction: half-pixel centres fall midway between source pixels
    f = frame.astype(float)
    oracle = (f[0::2, 0::2] + f[0::2, 1::2] + f[1::2, 0::2] + f[1::2, 1::2]) / 4
    assert np.abs(out - np.floor(oracle + 0.5)).max() <= 1


# --- sigma ----------------------------------------------------------------------

def sigma_oracle(images):
    n = len(images)
    h, w, c = images[0].shape
    total = Fraction(0)
    for r in range(h):
        for col in range(w):
            for k in range(c):
                vals = [int(img[r, col, k]) for img in images]
                m = Fraction(sum(vals), n)
                total += sum((v - m) ** 2 for v in vals)
    return math.sqrt(total / (n * h * w * c))


def test_sigma_identical_images():
    img = np.random.default_rng(0).integers(0, 256, (5, 6, 3), dtype=np.uint8)
    assert imageops.image_set_sigma([img] * 4) == 0.0


def test_sigma_two_point():
    a = np.zeros((1, 1, 3), np.uint8)
    b = np.full((1, 1, 3), 200, np.uint8)
    assert imageops.image_set_sigma([a, b]) == 100.0


def test_sigma_brute_force_exact():
    rng = np.random.default_rng(10)
    imgs = list(rng.integers(0, 256, size=(10, 8, 8, 3), dtype=np.uint8))
    assert imageops.image_set_sigma(imgs) == sigma_oracle(imgs)


def test_sigma_matches_float_definition():
    rng = np.random.default_rng(12)
    imgs = rng.integers(0, 256, size=(6, 16, 16, 3), dtype=np.uint8)
    mean = imageops.mean_image(list(imgs))
    direct = math.sqrt(float(np.mean((imgs.astype(float) - mean) ** 2)))
    assert imageops.image_set_sigma(imgs) == pytest.approx(direct, rel=1e-12)


@given(st.permutations(list(range(6))))
def test_sigma_permutation_invariant(order):
    imgs = list(np.random.default_rng(13).integers(0, 256, size=(6, 4, 4, 3), dtype=np.uint8))
    assert imageops.image_set_sigma([imgs[i] for i in order]) == imageops.image_set_sigma(imgs)


def test_sigma_errors():
    with pytest.raises(DimensionMismatch):
        imageops.image_set_sigma([np.zeros((2, 2, 3), np.uint8), np.zeros((2, 3, 3), np.uint8)])
    with pytest.raises(EmptyInput):
        imageops.image_set_sigma([])


def test_sigma_aligned_faces_below_heterogeneous_backgrounds():
    study = synthetic.make_study(n_uids=8, n_clips=20, frames_per_clip=2, seed=4)
    frames = list(study.frames())
    tpl = imageops.fit_template_to_output(imageops.compute_template(f.landmarks for f in frames))
    faces, bgs = [], []
    for f in frames:
        faces.append(imageops.make_face_condition(f.image, f.landmarks, tpl))
        bgs.append(imageops.make_background_condition(f.image, f.face_box).image)
    assert imageops.image_set_sigma(faces) <= imageops.image_set_sigma(bgs)
