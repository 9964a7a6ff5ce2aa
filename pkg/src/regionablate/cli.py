"""Command-line entry point.

Subcommands mirror the stages of a study::

    regionablate split       --manifest corpus.txt --quotas 2060,500,500 --out splits/
    regionablate preprocess  --splits splits/ --landmarks lm.csv --frames frames/ --out images/
    regionablate train       --condition face --splits splits/ --images images/ --labels gt.csv --out models/
    regionablate predict     --condition face --splits splits/ --images images/ --checkpoint models/face.ckpt.json --out preds/
    regionablate evaluate    --predictions preds/ --labels gt.csv --splits splits/ --out report.json
    regionablate sigma       --images images/face

Exit status: 0 success, 2 validation or leakage failure, 3 malformed input,
4 numerical degeneracy.

A ``--config`` file of flat ``key=value`` lines supplies defaults; flags on
the command line override it.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import corpus, files, imageops, pipeline, stats
from .errors import MalformedInput, RegionAblateError, ValidationError
from .report import build_report
from .trainkit import (
    FusionModel,
    TrainConfig,
    extract_features,
    load_checkpoint,
    save_checkpoint,
    select_best,
)

log = logging.getLogger("regionablate")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_MALFORMED = 3
EXIT_NUMERICAL = 4


def _quotas(text: str) -> corpus.SplitQuota:
    try:
        parts = [int(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"quotas must be three integers, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"quotas must be three integers, got {text!r}")
    return corpus.SplitQuota(*parts)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _add_guard(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--strict", dest="guard", action="store_const", const="strict",
                   help="fail (exit 2) when splits share source videos")
    g.add_argument("--allow-leakage", dest="guard", action="store_const", const="allow",
                   help="continue on leaky splits; reports are watermarked CONFOUNDED")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--seed", type=int, default=d.rng_seed)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--momentum", type=float, default=d.momentum)
    p.add_argument("--validate-every", type=int, default=d.validate_every)
    p.add_argument("--batch-size", type=int, default=d.batch_size)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regionablate", description="Region ablation study tools.")
    parser.add_argument("--config", help="key=value defaults file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="build leakage-free splits from a corpus manifest")
    p.add_argument("--manifest", required=True, help="one clip filename per line")
    p.add_argument("--quotas", type=_quotas, required=True, help="training,testing,validation UID counts")
    p.add_argument("--out", required=True, help="directory for <split>.csv files")
    p.add_argument("--legacy", help="an existing split manifest to audit for overlap")
    p.add_argument("--pattern", default=corpus.DEFAULT_PATTERN.pattern,
                   help="regex with named groups uid and segment")
    _add_guard(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("preprocess", help="write face / background / entire-frame images")
    p.add_argument("--splits", "--manifest", dest="splits", required=True)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--frames", required=True, help="directory of <clip_id>/<frame_index>.png")
    p.add_argument("--out", required=True)
    p.add_argument("--condition", choices=imageops.IMAGE_CONDITIONS, action="append",
                   help="restrict to these conditions (repeatable)")
    p.add_argument("--workers", type=int, default=1, help="frames processed in parallel")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one condition")
    p.add_argument("--condition", choices=imageops.CONDITIONS, required=True)
    p.add_argument("--splits", "--manifest", dest="splits", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--face-checkpoint")
    p.add_argument("--bg-checkpoint")
    _add_train_flags(p)
    _add_guard(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-video predictions for one condition")
    p.add_argument("--condition", choices=imageops.CONDITIONS, required=True)
    p.add_argument("--splits", "--manifest", dest="splits", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="testing", choices=corpus.SPLIT_NAMES)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="correlations, pairwise comparisons and the report")
    p.add_argument("--predictions", help="directory of <condition>.csv prediction files")
    p.add_argument("--correlations", help="CSV of stored condition,rho,n values instead of predictions")
    p.add_argument("--labels")
    p.add_argument("--splits", "--manifest", dest="splits", required=True)
    p.add_argument("--images", help="condition image tree; adds sigma statistics")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--num-models", type=int, default=3)
    _add_guard(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sigma", help="spread of an image set around its mean image")
    p.add_argument("--images", required=True, help="directory of equally sized images")
    p.set_defaults(func=cmd_sigma)
    return parser


def read_config(path: str | Path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MalformedInput(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    if "strict" in values or "allow_leakage" in values:
        strict = _bool(values.pop("strict", "false"))
        allow = _bool(values.pop("allow_leakage", "false"))
        if strict or allow:
            values["guard"] = "allow" if allow else "strict"
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in subparsers.choices.values():
        dests = {a.dest for a in sp._actions}
        applicable = {k: v for k, v in values.items() if k in dests}
        # argparse converts string defaults through the option's type
        sp.set_defaults(**applicable)
        for action in sp._actions:
            if action.dest in applicable:
                action.required = False
    known_dests = {a.dest for sp in subparsers.choices.values() for a in sp._actions}
    unknown = sorted(set(values) - known_dests)
    if unknown:
        raise MalformedInput(f"unknown config key(s): {', '.join(unknown)}")


def _guard(args, default: str) -> bool:
    """True when leakage is allowed."""
    return (args.guard or default) == "allow"


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, lr=args.lr, momentum=args.momentum,
                       validate_every=args.validate_every, rng_seed=args.seed,
                       batch_size=args.batch_size)


# --- split ------------------------------------------------------------------

def cmd_split(args) -> int:
    clips = corpus.read_corpus_manifest(args.manifest, args.pattern)
    manifest = corpus.build_splits(clips, args.quotas)
    paths = corpus.write_split_files(manifest, args.out)
    verdict = corpus.verify_disjoint(manifest)
    ratios = manifest.clips_per_uid()
    print(f"{'split':<12}{'clips':>8}{'UIDs':>8}{'vid/UID':>9}")
    for name in manifest.splits:
        print(f"{name:<12}{manifest.clip_counts[name]:>8}{manifest.uid_counts[name]:>8}{ratios[name]:>9.2f}")
    print(f"verdict: {'pass' if verdict.passed else 'FAIL'}")
    for p in paths:
        log.info("wrote %s", p)

    status = EXIT_OK
    if args.legacy:
        legacy = corpus.read_split_manifest(args.legacy)
        report = corpus.overlap_stats(list(legacy["training"]), list(legacy["testing"]))
        print(f"legacy split: {report.test_contaminated_fraction:.0%} of testing clips share a source "
              f"video with {report.train_contaminated_fraction:.0%} of training clips "
              f"({len(report.shared_uids)} shared UIDs)")
        if report.shared_uids and args.guard == "strict":
            status = EXIT_VALIDATION
    return status


# --- preprocess -------------------------------------------------------------

def _preprocess_frame(job) -> str:
    """Write the condition images of one frame; returns a log status."""
    frame_file, record, template, targets = job
    try:
        images = pipeline.condition_images(files.read_image(frame_file), record, template)
    except (ValueError, ArithmeticError) as exc:
        return f"skipped: {exc}"
    for cond, path in targets.items():
        files.write_image(path, images[cond])
    return "ok"


def cmd_preprocess(args) -> int:
    manifest = corpus.read_split_manifest(args.splits)
    records, problems = files.read_landmarks(args.landmarks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    conditions = args.condition or list(imageops.IMAGE_CONDITIONS)
    template = pipeline.training_template(records, [c.clip_id for c in manifest["training"]])
    np.savetxt(out / "template.csv", template, delimiter=",", fmt="%.17g")

    frames_dir = Path(args.frames)
    # status per (clip_id, frame_index), filled in manifest order
    status: dict[tuple[str, int], str] = {}
    jobs = []
    for clip in manifest.all_clips():
        clip_dir = frames_dir / clip.clip_id
        frame_files = sorted(clip_dir.glob("*.png"), key=lambda p: int(p.stem)) if clip_dir.is_dir() else []
        if not frame_files:
            status[(clip.clip_id, -1)] = "skipped: no frames"
        for fp in frame_files:
            key = (clip.clip_id, int(fp.stem))
            targets = {c: files.condition_image_path(out, key[0], key[1], c) for c in conditions}
            if all(t.exists() for t in targets.values()):
                status[key] = "exists"
            elif key not in records:
                status[key] = "skipped: no landmark record"
            else:
                status[key] = ""
                jobs.append((key, (fp, records[key], template, targets)))

    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_preprocess_frame, [j for _, j in jobs], chunksize=8))
    else:
        results = [_preprocess_frame(j) for _, j in jobs]
    for (key, _), res in zip(jobs, results):
        status[key] = res

    usable: dict[str, int] = {}
    log_lines = [f"# landmark file: {p}" for p in problems]
    for (cid, idx), st in status.items():
        ok = st in ("ok", "exists")
        usable[cid] = usable.get(cid, 0) + ok
        if idx >= 0:
            log_lines.append(f"{cid}\t{idx}\t{st}")
        else:
            log_lines.append(f"{cid}\t-\t{st}")
    exclusions = [cid for cid, n in usable.items() if n == 0]
    n_frames = sum(1 for _, idx in status if idx >= 0)
    n_written = sum(1 for st in status.values() if st == "ok")
    n_present = sum(1 for st in status.values() if st == "exists")

    (out / "preprocess.log").write_text("".join(l + "\n" for l in log_lines), encoding="utf-8")
    (out / "exclusions.txt").write_text("".join(c + "\n" for c in exclusions), encoding="utf-8")
    print(f"frames: {n_frames}  written: {n_written}  already present: {n_present}  "
          f"skipped: {n_frames - n_written - n_present}  excluded clips: {len(exclusions)}")
    return EXIT_OK


# --- train / predict --------------------------------------------------------

def load_features(images_dir, condition: str, clip_ids) -> dict[str, np.ndarray]:
    listing = files.list_condition_images(images_dir, condition)
    out = {}
    for cid in clip_ids:
        entries = listing.get(cid)
        if entries:
            out[cid] = np.stack([extract_features(files.read_image(p)) for _, p in entries])
    return out


def _features_for(args, condition: str, clip_ids) -> pipeline.ConditionFeatures:
    feats = pipeline.ConditionFeatures()
    needed = ("face", "background") if condition == "face_bg" else (condition,)
    for cond in needed:
        feats.features[cond] = load_features(args.images, cond, clip_ids)
        if not feats.features[cond]:
            raise MalformedInput(f"no {cond} images found under {args.images}")
    if condition == "face_bg":
        # pair frames by index; a frame missing either image is dropped from both
        face_list = files.list_condition_images(args.images, "face")
        bg_list = files.list_condition_images(args.images, "background")
        for cid in list(feats.features["face"]):
            f_idx = [i for i, _ in face_list.get(cid, [])]
            b_idx = [i for i, _ in bg_list.get(cid, [])]
            if f_idx != b_idx:
                common = sorted(set(f_idx) & set(b_idx))
                feats.features["face"][cid] = feats.features["face"][cid][[f_idx.index(i) for i in common]]
                feats.features["background"][cid] = feats.features["background"][cid][
                    [b_idx.index(i) for i in common]]
    return feats


def _checkpoint_path(out_dir, condition: str) -> Path:
    return Path(out_dir) / f"{condition}.ckpt.json"


def cmd_train(args) -> int:
    manifest = corpus.read_split_manifest(args.splits)
    pipeline.check_splits(manifest, _guard(args, "strict"))
    labels = stats.read_trait_table(args.labels)
    config = _train_config(args)
    ids = [c.clip_id for c in manifest["training"]] + [c.clip_id for c in manifest["validation"]]
    feats = _features_for(args, args.condition, ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    branches = None
    if args.condition == "face_bg":
        face_path = args.face_checkpoint or _checkpoint_path(out, "face")
        bg_path = args.bg_checkpoint or _checkpoint_path(out, "background")
        branches = {"face": load_checkpoint(face_path)[0], "background": load_checkpoint(bg_path)[0]}
    model, history = pipeline.train_condition(args.condition, feats, manifest, labels, config,
                                              branches=branches)
    best = select_best(history)
    save_checkpoint(_checkpoint_path(out, args.condition), model, config=config, epoch=best.epoch,
                    val_loss=best.val_loss, condition=args.condition)
    with open(out / f"{args.condition}.history.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for ck in history:
            w.writerow([ck.epoch, repr(ck.train_loss), repr(ck.val_loss)])
    print(f"{args.condition}: best epoch {best.epoch}, validation MAE {best.val_loss:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    manifest = corpus.read_split_manifest(args.splits)
    ckpt = args.checkpoint
    model, _ = load_checkpoint(ckpt)
    if (args.condition == "face_bg") != isinstance(model, FusionModel):
        raise ValidationError(f"checkpoint {ckpt} does not hold a {args.condition} model")
    ids = [c.clip_id for c in manifest[args.split]]
    feats = _features_for(args, args.condition, ids)
    preds = pipeline.predict_clips(model, args.condition, feats, ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats.write_trait_table(sorted(preds.items()), out / f"{args.condition}.csv")
    print(f"{args.condition}: {len(preds)} videos predicted")
    return EXIT_OK


# --- evaluate / sigma -------------------------------------------------------

def read_correlations(path) -> dict[str, stats.CorrelationResult]:
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or {"condition", "rho", "n"} - set(reader.fieldnames):
            raise MalformedInput(f"{path}: expected columns condition,rho,n")
        for row in reader:
            try:
                out[row["condition"]] = stats.CorrelationResult(float(row["rho"]), int(row["n"]))
            except ValueError as exc:
                raise MalformedInput(f"{path}: {exc}") from None
    unknown = set(out) - set(imageops.CONDITIONS)
    if unknown:
        raise MalformedInput(f"{path}: unknown condition(s) {sorted(unknown)}")
    return out


def cmd_evaluate(args) -> int:
    manifest = corpus.read_split_manifest(args.splits)
    allow = _guard(args, "strict")
    verdict = pipeline.check_splits(manifest, allow)
    tables = {}
    correlations = None
    if args.correlations:
        correlations = read_correlations(args.correlations)
    elif args.predictions:
        if not args.labels:
            raise MalformedInput("--labels is required with --predictions")
        truth = stats.read_trait_table(args.labels)
        for cond in imageops.CONDITIONS:
            path = Path(args.predictions) / f"{cond}.csv"
            if path.exists():
                tables[cond] = stats.PredictionTable.join(stats.read_trait_table(path), truth)
        if not tables:
            raise MalformedInput(f"no <condition>.csv files in {args.predictions}")
    else:
        raise MalformedInput("give --predictions or --correlations")

    sigma = {}
    if args.images:
        for cond in pipeline.SIGMA_CONDITIONS:
            listing = files.list_condition_images(args.images, cond)
            paths = [p for entries in sorted(listing.items()) for _, p in entries[1]] if listing else []
            if paths:
                sigma[cond] = imageops.image_set_sigma(files.read_image(p) for p in paths)

    report = build_report(tables, correlations=correlations, alpha=args.alpha,
                          num_models=args.num_models, sigma=sigma,
                          split_verdict="pass" if verdict.passed else "FAIL",
                          shared_uids=verdict.shared_uids, confounded=not verdict.passed)
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
    print(report.format_text(), end="")
    return EXIT_OK


def cmd_sigma(args) -> int:
    root = Path(args.images)
    paths = sorted(p for p in root.rglob("*") if p.suffix.lower() in (".png", ".bmp", ".tif", ".tiff"))
    if not paths:
        raise MalformedInput(f"no images under {root}")
    sigma = imageops.image_set_sigma(files.read_image(p) for p in paths)
    print(f"sigma = {sigma:.4f} over {len(paths)} images")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except RegionAblateError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())
