"""Clip identities, grouped splits and cross-split leakage checks.

A corpus is a flat list of clip filenames of the form ``<video>.<segment>.<ext>``.
Several clips cut from one source video share the same UID, and a split is
only leakage-free when no UID appears in more than one partition.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

from .errors import DuplicateClip, EmptySplit, MalformedClipName, MalformedInput, QuotaMismatch

SPLIT_NAMES = ("training", "testing", "validation")

# Everything before the final ".<digits>.<ext>" is the group key.
DEFAULT_PATTERN = re.compile(r"^(?P<uid>.+)\.(?P<segment>\d+)\.(?P<ext>[^./\\]+)$")

MANIFEST_COLUMNS = ("clip_id", "uid", "segment", "split")


@dataclass(frozen=True, order=True)
class ClipRef:
    clip_id: str
    uid: str
    segment: int

    def __post_init__(self):
        if not self.uid or not self.clip_id.startswith(self.uid):
            raise MalformedClipName(f"uid {self.uid!r} is not a prefix of {self.clip_id!r}")
        if self.segment < 0:
            raise MalformedClipName(f"negative segment in {self.clip_id!r}")


class SplitQuota(NamedTuple):
    training: int
    testing: int
    validation: int


@dataclass(frozen=True)
class SplitManifest:
    """Partition of a corpus into named splits.

    ``splits`` maps each split name to its clips, ordered by (uid, segment).
    Manifests read from disk may describe a legacy (leaky) partition, so
    disjointness is checked by :func:`verify_disjoint`, not enforced here.
    """

    splits: Mapping[str, tuple[ClipRef, ...]]

    def __post_init__(self):
        seen: dict[str, str] = {}
        for name, clips in self.splits.items():
            for clip in clips:
                if clip.clip_id in seen:
                    raise DuplicateClip(
                        f"{clip.clip_id!r} listed in both {seen[clip.clip_id]!r} and {name!r}"
                    )
                seen[clip.clip_id] = name

    def __getitem__(self, name: str) -> tuple[ClipRef, ...]:
        return self.splits.get(name, ())

    @property
    def uid_counts(self) -> dict[str, int]:
        return {name: len({c.uid for c in clips}) for name, clips in self.splits.items()}

    @property
    def clip_counts(self) -> dict[str, int]:
        return {name: len(clips) for name, clips in self.splits.items()}

    def clips_per_uid(self) -> dict[str, float]:
        """Mean number of clips per UID in each split (the vid/UID ratio)."""
        uids = self.uid_counts
        return {
            name: (len(clips) / uids[name] if uids[name] else 0.0)
            for name, clips in self.splits.items()
        }

    def uids(self, name: str) -> set[str]:
        return {c.uid for c in self[name]}

    def split_of(self) -> dict[str, str]:
        """Map clip_id -> split name."""
        return {c.clip_id: name for name, clips in self.splits.items() for c in clips}

    def all_clips(self) -> list[ClipRef]:
        return [c for clips in self.splits.values() for c in clips]


@dataclass(frozen=True)
class DisjointVerdict:
    passed: bool
    shared_uids: tuple[str, ...] = ()

    def __bool__(self):
        return self.passed


@dataclass(frozen=True)
class OverlapReport:
    test_contaminated_fraction: float
    train_contaminated_fraction: float
    shared_uids: tuple[str, ...] = field(default=())
    test_contaminated: int = 0
    train_contaminated: int = 0


def parse_clip_id(filename: str, pattern: re.Pattern | str = DEFAULT_PATTERN) -> ClipRef:
    """Split a clip filename into its source-video UID and segment number.

    >>> parse_clip_id("Gx72a.003.mp4")
    ClipRef(clip_id='Gx72a.003.mp4', uid='Gx72a', segment=3)

    ``pattern`` must define the named groups ``uid`` and ``segment``.
    """
    if isinstance(pattern, str):
        pattern = re.compile(pattern)
    name = filename.strip()
    m = pattern.match(name)
    if m is None:
        raise MalformedClipName(f"clip name {filename!r} does not match {pattern.pattern!r}")
    return ClipRef(clip_id=name, uid=m.group("uid"), segment=int(m.group("segment")))


def ingest(filenames: Iterable[str], pattern: re.Pattern | str = DEFAULT_PATTERN) -> list[ClipRef]:
    """Parse many filenames, rejecting duplicated (uid, segment) pairs."""
    clips = [parse_clip_id(f, pattern) for f in filenames]
    check_unique(clips)
    return clips


def check_unique(clips: Iterable[ClipRef]) -> None:
    counts = Counter((c.uid, c.segment) for c in clips)
    dups = sorted(k for k, n in counts.items() if n > 1)
    if dups:
        uid, seg = dups[0]
        raise DuplicateClip(f"{len(dups)} duplicated (uid, segment) pair(s), first: ({uid!r}, {seg})")


def _uid_key(uid: str) -> bytes:
    # raw bytes, no locale collation
    return uid.encode("utf-8")


def build_splits(clips: Iterable[ClipRef], uid_quota: SplitQuota | tuple[int, int, int]) -> SplitManifest:
    """Assign whole source videos to training/testing/validation.

    UIDs are sorted bytewise and handed out sequentially: the first
    ``uid_quota[0]`` go to training, the next ``uid_quota[1]`` to testing and
    the rest to validation. Within a split clips are ordered by UID, then
    segment.
    """
    quota = SplitQuota(*uid_quota)
    if any(q < 0 for q in quota):
        raise QuotaMismatch(f"negative quota in {tuple(quota)}")
    clips = list(clips)
    check_unique(clips)
    by_uid: dict[str, list[ClipRef]] = {}
    for c in clips:
        by_uid.setdefault(c.uid, []).append(c)
    uids = sorted(by_uid, key=_uid_key)
    if sum(quota) != len(uids):
        raise QuotaMismatch(
            f"quotas {tuple(quota)} sum to {sum(quota)} but the corpus has {len(uids)} UIDs"
        )

    splits: dict[str, tuple[ClipRef, ...]] = {}
    start = 0
    for name, n in zip(SPLIT_NAMES, quota):
        members = []
        for uid in uids[start:start + n]:
            members.extend(sorted(by_uid[uid], key=lambda c: (c.segment, c.clip_id)))
        splits[name] = tuple(members)
        start += n
    return SplitManifest(splits)


def verify_disjoint(manifest: SplitManifest) -> DisjointVerdict:
    """Check that no UID is shared between any two splits."""
    if not any(manifest.splits.values()):
        raise EmptySplit("manifest contains no clips")
    names = list(manifest.splits)
    shared: set[str] = set()
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            shared |= manifest.uids(a) & manifest.uids(b)
    if shared:
        return DisjointVerdict(False, tuple(sorted(shared, key=_uid_key)))
    return DisjointVerdict(True)


def overlap_stats(train: list[ClipRef], test: list[ClipRef]) -> OverlapReport:
    """Fraction of clips in each split whose source video also feeds the other split."""
    if not train or not test:
        raise EmptySplit("overlap_stats needs two non-empty splits")
    shared = {c.uid for c in train} & {c.uid for c in test}
    n_test = sum(c.uid in shared for c in test)
    n_train = sum(c.uid in shared for c in train)
    return OverlapReport(
        test_contaminated_fraction=n_test / len(test),
        train_contaminated_fraction=n_train / len(train),
        shared_uids=tuple(sorted(shared, key=_uid_key)),
        test_contaminated=n_test,
        train_contaminated=n_train,
    )


# --- file formats -----------------------------------------------------------

def read_corpus_manifest(path: str | Path, pattern: re.Pattern | str = DEFAULT_PATTERN) -> list[ClipRef]:
    """One clip filename per line; blank lines and ``#`` comments are ignored."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    names = [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    return ingest(names, pattern)


def write_corpus_manifest(clips: Iterable[ClipRef | str], path: str | Path) -> None:
    names = [c.clip_id if isinstance(c, ClipRef) else c for c in clips]
    Path(path).write_text("".join(n + "\n" for n in names), encoding="utf-8", newline="\n")


def _write_rows(rows, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        w.writerows(rows)


def write_split_manifest(manifest: SplitManifest, path: str | Path) -> None:
    rows = [(c.clip_id, c.uid, c.segment, name)
            for name, clips in manifest.splits.items() for c in clips]
    _write_rows(rows, Path(path))


def write_split_files(manifest: SplitManifest, out_dir: str | Path) -> list[Path]:
    """Write one ``<split>.csv`` per split, same columns as the combined manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, clips in manifest.splits.items():
        p = out_dir / f"{name}.csv"
        _write_rows([(c.clip_id, c.uid, c.segment, name) for c in clips], p)
        paths.append(p)
    return paths


def read_split_manifest(path: str | Path) -> SplitManifest:
    """Read a split manifest from a CSV file or a directory of ``<split>.csv`` files."""
    path = Path(path)
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    if not files:
        raise MalformedInput(f"no split files found in {path}")
    splits: dict[str, list[ClipRef]] = {}
    for f in files:
        with open(f, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or set(MANIFEST_COLUMNS) - set(reader.fieldnames):
                raise MalformedInput(f"{f}: expected columns {','.join(MANIFEST_COLUMNS)}")
            for row in reader:
                try:
                    segment = int(row["segment"])
                except ValueError:
                    raise MalformedInput(f"{f}: bad segment {row['segment']!r}") from None
                clip = ClipRef(row["clip_id"], row["uid"], segment)
                splits.setdefault(row["split"], []).append(clip)
    ordered = {n: tuple(splits.pop(n)) for n in SPLIT_NAMES if n in splits}
    ordered.update({n: tuple(v) for n, v in sorted(splits.items())})
    return SplitManifest(ordered)
