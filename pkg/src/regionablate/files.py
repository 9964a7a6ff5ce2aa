"""On-disk formats: frames, condition images, landmark records and label tables.

Layout conventions:

* frames: ``<frames_dir>/<clip_id>/<frame_index>.png``
* condition images: ``<images_dir>/<condition>/<clip_id>.<frame_index>.<condition>.png``
* landmarks: CSV with ``clip_id, frame_index, left, top, right, bottom`` and
  then ``x0, y0, ..., x67, y67``
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image

from .errors import MalformedInput
from .imageops import LANDMARK_COUNT, BoundingBox

LANDMARK_HEADER = (
    ["clip_id", "frame_index", "left", "top", "right", "bottom"]
    + [f"{axis}{i}" for i in range(LANDMARK_COUNT) for axis in ("x", "y")]
)
RAW_LABEL_HEADER = ["video_id", "O", "C", "E", "A", "N"]

_CONDITION_FILE = re.compile(r"^(?P<clip>.+)\.(?P<frame>\d+)\.(?P<cond>[a-z_]+)\.png$")


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_image(path: str | Path, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed compression settings and no metadata, so equal pixels give equal bytes
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path, format="PNG", compress_level=1)


def frame_path(frames_dir: str | Path, clip_id: str, frame_index: int) -> Path:
    return Path(frames_dir) / clip_id / f"{frame_index}.png"


def condition_image_path(images_dir: str | Path, clip_id: str, frame_index: int, condition: str) -> Path:
    return Path(images_dir) / condition / f"{clip_id}.{frame_index}.{condition}.png"


def list_condition_images(images_dir: str | Path, condition: str) -> dict[str, list[tuple[int, Path]]]:
    """Map clip_id -> sorted ``(frame_index, path)`` for one condition."""
    out: dict[str, list[tuple[int, Path]]] = {}
    d = Path(images_dir) / condition
    if not d.is_dir():
        return out
    for p in d.iterdir():
        m = _CONDITION_FILE.match(p.name)
        if m and m.group("cond") == condition:
            out.setdefault(m.group("clip"), []).append((int(m.group("frame")), p))
    for v in out.values():
        v.sort()
    return out


@dataclass(frozen=True)
class LandmarkRecord:
    clip_id: str
    frame_index: int
    face_box: BoundingBox
    points: np.ndarray  # (68, 2)


def write_landmarks(records: Iterable[LandmarkRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LANDMARK_HEADER)
        for r in records:
            b = r.face_box
            w.writerow([r.clip_id, r.frame_index, b.left, b.top, b.right, b.bottom,
                        *(repr(float(v)) for v in np.asarray(r.points).ravel())])


def read_landmarks(path: str | Path) -> tuple[dict[tuple[str, int], LandmarkRecord], list[str]]:
    """Parse a landmark file.

    Returns the valid records keyed by ``(clip_id, frame_index)`` and a list
    of problems for rows that could not be used (bad numbers, wrong point
    count, non-finite coordinates, degenerate boxes).
    """
    records: dict[tuple[str, int], LandmarkRecord] = {}
    problems: list[str] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:6] != LANDMARK_HEADER[:6]:
            raise MalformedInput(f"{path}: expected header starting {','.join(LANDMARK_HEADER[:6])}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                clip_id, idx = row[0], int(row[1])
                box = BoundingBox(*(int(v) for v in row[2:6]))
                coords = [float(v) for v in row[6:]]
                if len(coords) != 2 * LANDMARK_COUNT or not all(math.isfinite(c) for c in coords):
                    raise ValueError(f"need {LANDMARK_COUNT} finite (x, y) pairs")
            except (ValueError, IndexError) as exc:
                problems.append(f"line {lineno}: {exc}")
                continue
            records[(clip_id, idx)] = LandmarkRecord(
                clip_id, idx, box, np.array(coords, dtype=np.float64).reshape(LANDMARK_COUNT, 2))
    return records, problems


def write_raw_labels(labels: Mapping[str, tuple], path: str | Path) -> None:
    """Ground-truth annotations with raw (non-inverted) neuroticism."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_LABEL_HEADER)
        for vid in sorted(labels):
            w.writerow([vid, *(repr(float(v)) for v in labels[vid])])
