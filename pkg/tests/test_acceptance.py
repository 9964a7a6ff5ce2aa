"""Acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line; the lines are printed together at
the end of the pytest run (see ``conftest.pytest_terminal_summary``) and
immediately when running with ``-s``.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
from conftest import run

from regionablate import corpus, imageops, pipeline, stats, synthetic, trainkit
from regionablate.files import LandmarkRecord
from regionablate.stats import CorrelationResult
from regionablate.trainkit import TrainConfig

RESULTS: list[str] = []

# published comparison table: (model, comparison, z_obs, p, starred)
PUBLISHED = [
    ("Deep Impression", "face vs. face+bg", 4.91, 4.45e-7, True),
    ("Deep Impression", "face vs. entire frame", 5.96, 1.26e-9, True),
    ("Deep Impression", "face vs. bg", 6.83, 4.06e-12, True),
    ("Deep Impression", "bg vs. face+bg", 1.93, 0.027, False),
    ("Deep Impression", "bg vs. entire frame", 0.89, 0.19, False),
    ("Deep Impression", "face+bg vs. entire frame", 1.04, 0.148, False),
    ("ResNet18 v1", "face vs. face+bg", 0.85, 0.198, False),
    ("ResNet18 v1", "face vs. entire frame", 1.27, 0.103, False),
    ("ResNet18 v1", "face vs. bg", 5.08, 1.76e-7, True),
    ("ResNet18 v1", "bg vs. face+bg", 4.22, 1.10e-5, True),
    ("ResNet18 v1", "bg vs. entire frame", 3.81, 6.47e-5, True),
    ("ResNet18 v1", "face+bg vs. entire frame", 0.41, 0.339, False),
    ("ResNet18 v2", "face vs. face+bg", 3.11, 9.35e-4, True),
    ("ResNet18 v2", "face vs. entire frame", -1.1, 0.136, False),
    ("ResNet18 v2", "face vs. bg", 3.71, 9.51e-5, True),
    ("ResNet18 v2", "bg vs. face+bg", 0.63, 0.266, False),
    ("ResNet18 v2", "bg vs. entire frame", 4.82, 6.83e-7, True),
    ("ResNet18 v2", "face+bg vs. entire frame", -4.2, 1.30e-5, True),
]

P_REL_TOL = 0.15
SE_STATED = 0.034577
SE_TOL = 1e-6
E2E_SECONDS = 60.0
NOISE_SHARE_LIMIT = 0.10


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    RESULTS.append(line)
    print(line)


def test_criterion_1_published_p_values():
    start = time.perf_counter()
    errors = [abs(stats.p_from_z(z) - p) / p for _, _, z, p, _ in PUBLISHED]
    elapsed = time.perf_counter() - start
    ok = max(errors) <= P_REL_TOL and elapsed < 1.0
    record("1 published p-values", ok,
           f"18 rows, max relative error {max(errors):.3f} (limit {P_REL_TOL}), {elapsed * 1e3:.2f} ms")
    assert ok


def test_criterion_2_star_pattern():
    decisions = [stats.significance(p, 0.05, 3)[1] for _, _, _, p, _ in PUBLISHED]
    expected = [star for *_, star in PUBLISHED]
    ok = decisions == expected
    record("2 star pattern", ok, f"{sum(decisions)} starred / {len(decisions) - sum(decisions)} unstarred, "
                                 f"{'matches' if ok else 'differs from'} the published asterisks")
    assert ok


def test_criterion_3_standard_error_formula():
    se = stats.standard_error(1676, 1676)
    ok = se == math.sqrt(2 / 1673)
    record("3a standard error formula", ok, f"SE(1676, 1676) = {se:.10f} = sqrt(2/1673)")
    assert ok


@pytest.mark.xfail(strict=True, reason="the stated decimal 0.034577 is not sqrt(2/1673) = 0.0345754 "
                                       "to within the stated 1e-6; the formula is followed")
def test_criterion_3_standard_error_stated_decimal():
    se = stats.standard_error(1676, 1676)
    ok = abs(se - SE_STATED) <= SE_TOL
    record("3b standard error decimal", ok,
           f"|{se:.7f} - {SE_STATED}| = {abs(se - SE_STATED):.2e} vs tolerance {SE_TOL:g}"
           + ("" if ok else " (stated decimal disagrees with its own formula)"))
    assert ok


def test_criterion_4_reference_split():
    clips = synthetic.reference_corpus(seed=0)
    m = corpus.build_splits(clips, (2060, 500, 500))
    verdict = corpus.verify_disjoint(m)
    ratios = [round(m.clips_per_uid()[s], 2) for s in corpus.SPLIT_NAMES]
    counts = [m.clip_counts[s] for s in corpus.SPLIT_NAMES]
    ok = (verdict.passed and ratios == [3.27, 3.35, 3.16] and counts == [6744, 1676, 1580]
          and len({c.uid for c in clips}) == 3060)
    record("4 grouped split", ok, f"disjoint={verdict.passed}, clips {counts}, vid/UID {ratios}")
    assert ok


def test_criterion_5_leakage(tmp_path):
    train, test = synthetic.legacy_leak_fixture()
    rep = corpus.overlap_stats(train, test)
    corpus.write_split_manifest(synthetic.legacy_manifest(), tmp_path / "legacy.csv")
    (tmp_path / "c.csv").write_text("condition,rho,n\nface,0.5,100\nbackground,0.3,100\n")
    rc = run("evaluate", "--correlations", tmp_path / "c.csv", "--splits", tmp_path / "legacy.csv", "--strict")
    ok = rep.test_contaminated_fraction == 0.83 and rep.train_contaminated_fraction == 0.46 and rc == 2
    record("5 leakage", ok, f"test {rep.test_contaminated_fraction:.0%} / train "
                            f"{rep.train_contaminated_fraction:.0%} contaminated, evaluate --strict exit {rc}")
    assert ok


def test_criterion_6_numerical_properties():
    rng = np.random.default_rng(2024)
    pts = rng.uniform(-200, 200, size=(68, 2))

    # (a) transform round trip
    worst_a = 0.0
    for _ in range(1000):
        t = imageops.SimilarityTransform.from_params(rng.uniform(0.05, 20), rng.uniform(-np.pi, np.pi),
                                                     *rng.uniform(-500, 500, size=2))
        fitted = imageops.estimate_similarity_transform(pts, t.apply(pts))
        worst_a = max(worst_a, float(np.max(np.abs(fitted.inverse().apply(t.apply(pts)) - pts))))

    # (b) analytic vs central finite differences, h = 1e-5
    h = 1e-5
    worst_b = 0.0
    n_points = 0
    while n_points < 100:
        model = trainkit.Regressor(rng.normal(size=(6, 5)), rng.normal(size=5))
        x = rng.uniform(0, 1, size=(3, 6))
        y = rng.uniform(0, 1, size=(3, 5))
        margin = h * (np.abs(x).sum(axis=1, keepdims=True) + 1)
        if not np.all(np.abs(model.forward(x) - y) > 10 * margin):
            continue  # the loss is not differentiable within reach of the perturbation
        n_points += 1
        grads = trainkit.mae_gradients(model, x, y)
        for name in ("weights", "bias"):
            param = getattr(model, name)
            fd = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                plus, minus = model.copy(), model.copy()
                getattr(plus, name)[idx] += h
                getattr(minus, name)[idx] -= h
                fd[idx] = (trainkit.mae_loss(plus, x, y) - trainkit.mae_loss(minus, x, y)) / (2 * h)
            worst_b = max(worst_b, float(np.linalg.norm(grads[name] - fd) / np.linalg.norm(grads[name])))

    # (c) pearson affine invariance and Fisher antisymmetry
    worst_c = 0.0
    for _ in range(200):
        a = rng.normal(size=50)
        b = a + rng.normal(size=50)
        scale, shift = rng.uniform(0.1, 10), rng.uniform(-10, 10)
        worst_c = max(worst_c, abs(stats.pearson(scale * a + shift, b).rho - stats.pearson(a, b).rho))
        r1 = CorrelationResult(rng.uniform(-0.95, 0.95), int(rng.integers(4, 3000)))
        r2 = CorrelationResult(rng.uniform(-0.95, 0.95), int(rng.integers(4, 3000)))
        fwd, rev = stats.compare_correlations(r1, r2), stats.compare_correlations(r2, r1)
        worst_c = max(worst_c, abs(fwd.z_obs + rev.z_obs), abs(fwd.p - rev.p))

    # (d) sigma against an exact rational oracle
    from fractions import Fraction

    exact = 0
    for _ in range(10):
        imgs = rng.integers(0, 256, size=(int(rng.integers(2, 12)), 8, 8, 3))
        n = len(imgs)
        total = Fraction(0)
        for pos in np.ndindex(8, 8, 3):
            vals = [int(img[pos]) for img in imgs]
            m = Fraction(sum(vals), n)
            total += sum((v - m) ** 2 for v in vals)
        oracle = math.sqrt(total / (n * 192))
        exact += imageops.image_set_sigma(list(imgs.astype(np.uint8))) == oracle

    ok = worst_a < 1e-9 and worst_b < 1e-6 and worst_c < 1e-12 and exact == 10
    record("6 numerical properties", ok,
           f"(a) round trip {worst_a:.1e} < 1e-9, (b) gradient rel err {worst_b:.1e} < 1e-6, "
           f"(c) invariance {worst_c:.1e} < 1e-12, (d) sigma exact {exact}/10")
    assert ok


def test_criterion_7_end_to_end_protocol():
    start = time.perf_counter()
    study = synthetic.make_study(n_uids=60, n_clips=200, frames_per_clip=5, seed=0)
    manifest = corpus.build_splits(study.clips, (36, 12, 12))
    records = {}
    frames = []
    for f in study.frames():
        records[(f.clip_id, f.frame_index)] = LandmarkRecord(f.clip_id, f.frame_index, f.face_box, f.landmarks)
        frames.append((f.clip_id, f.frame_index, f.image))
    labels = {k: trainkit.label_transform(v) for k, v in study.raw_labels.items()}
    result = pipeline.run_study(frames, records, manifest, labels, TrainConfig())
    elapsed = time.perf_counter() - start

    fusion = result.models["face_bg"]
    frozen = (fusion.face_branch.to_bytes() == result.models["face"].to_bytes()
              and fusion.bg_branch.to_bytes() == result.models["background"].to_bytes())
    best_ok = True
    for cond, history in result.histories.items():
        best = min(history, key=lambda ck: (ck.val_loss, ck.epoch))
        chosen = result.models[cond].fusion if cond == "face_bg" else result.models[cond]
        best_ok &= chosen.to_bytes() == best.params.to_bytes()
        best_ok &= best.val_loss == min(ck.val_loss for ck in history)
    values = np.array([v.as_tuple() for preds in result.predictions.values() for v in preds.values()])
    in_range = bool(np.all((values >= 0) & (values <= 1)))
    n_clips = sum(manifest.clip_counts.values())
    ok = elapsed < E2E_SECONDS and frozen and best_ok and in_range and n_clips == 200
    record("7 protocol", ok, f"{n_clips} clips x 5 frames in {elapsed:.1f} s (< {E2E_SECONDS:g} s), "
                             f"branches frozen={frozen}, best checkpoint={best_ok}, predictions in [0,1]={in_range}")
    assert ok


def test_criterion_8_noise_branch_suppressed():
    fx = synthetic.signal_noise_fixture()
    before = (fx.face_branch.to_bytes(), fx.bg_branch.to_bytes())
    model, _ = trainkit.train_fusion(fx.face_branch, fx.bg_branch, fx.train, fx.val, TrainConfig(lr=0.01))
    face = np.vstack([c.face for c in fx.val])
    bg = np.vstack([c.background for c in fx.val])
    share = model.bg_share(face, bg)
    ok = share < NOISE_SHARE_LIMIT and (fx.face_branch.to_bytes(), fx.bg_branch.to_bytes()) == before
    record("8 substituted property", ok,
           f"noise-branch share of fused output {share:.3f} < {NOISE_SHARE_LIMIT}; absolute correlations, "
           "sigma_face/sigma_bg and the real-corpus background finding need the original videos "
           "and are not reproduced")
    assert ok
