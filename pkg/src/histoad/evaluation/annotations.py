"""Region annotations and patch ground truth.

Annotation files are JSON lists of ``{"kind": ..., "polygon": [[x, y], ...]}``.
A patch is labelled by where its center falls: inside a diagnosis-defining
region makes it anomalous, inside an other-anomalous region excludes it from
patch-level metrics, anywhere else makes it normal. Artifact regions produce a
separate boolean stream. Insideness uses the even-odd rule with points on an
edge counted as inside.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from ..errors import InvalidInputError
from ..features.io import Label
from ..preprocessing.tiler import PatchCoord

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Point = Tuple[float, float]


class AnnotationKind(str, Enum):
    DIAGNOSIS_DEFINING = "diagnosis_defining"
    OTHER_ANOMALOUS = "other_anomalous"
    ARTIFACT = "artifact"


class PatchTruth(str, Enum):
    NORMAL = "normal"
    ANOMALOUS = "anomalous"
    EXCLUDED = "excluded"

    def as_label(self) -> Label:
        """Feature-file label; excluded patches become ``unknown``."""
        return {PatchTruth.NORMAL: Label.NORMAL, PatchTruth.ANOMALOUS: Label.ANOMALOUS}.get(self, Label.UNKNOWN)


def _signed_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class Region:
    """Annotated polygon. A repeated closing vertex is dropped on construction."""
    kind: AnnotationKind
    polygon: Tuple[Point, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", AnnotationKind(self.kind))
        pts = tuple((float(x), float(y)) for x, y in self.polygon)
        if len(pts) >= 2 and pts[0] == pts[-1]:
            pts = pts[:-1]
        if len(pts) < 3:
            raise InvalidInputError(f"Degenerate polygon: {len(pts)} distinct vertices")
        arr = np.asarray(pts)
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("Polygon vertices must be finite")
        if _signed_area(arr) == 0.0:
            raise InvalidInputError("Degenerate polygon: zero area")
        object.__setattr__(self, "polygon", pts)

    @property
    def vertices(self) -> np.ndarray:
        return np.asarray(self.polygon, dtype=np.float64)

    @classmethod
    def rectangle(cls, kind: AnnotationKind, x: float, y: float, width: float, height: float) -> "Region":
        return cls(kind, ((x, y), (x + width, y), (x + width, y + height), (x, y + height)))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "polygon": [[_plain(x), _plain(y)] for x, y in self.polygon]}

    @classmethod
    def from_dict(cls, data: dict) -> "Region":
        try:
            return cls(AnnotationKind(data["kind"]), tuple(tuple(p) for p in data["polygon"]))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, InvalidInputError):
                raise
            raise InvalidInputError(f"Malformed annotation {data!r}: {e}") from e

    def contains(self, points: np.ndarray) -> np.ndarray:
        return points_in_polygon(points, self.vertices)


def _plain(v: float):
    return int(v) if float(v).is_integer() else v


def points_in_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd containment of each point; points on an edge count as inside."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    px, py = pts[:, 0:1], pts[:, 1:2]
    x1, y1 = vertices[:, 0][None, :], vertices[:, 1][None, :]
    x2, y2 = np.roll(vertices[:, 0], -1)[None, :], np.roll(vertices[:, 1], -1)[None, :]

    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    within = ((np.minimum(x1, x2) <= px) & (px <= np.maximum(x1, x2))
              & (np.minimum(y1, y2) <= py) & (py <= np.maximum(y1, y2)))
    on_edge = np.any((cross == 0.0) & within, axis=1)

    straddles = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    crossings = np.sum(straddles & (px < x_cross), axis=1)
    return on_edge | (crossings % 2 == 1)


def point_in_polygon(x: float, y: float, polygon: Sequence[Point]) -> bool:
    return bool(points_in_polygon(np.array([[x, y]]), np.asarray(polygon, dtype=np.float64))[0])


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    def on_segment(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2, o3, o4 = orient(p1, p2, p3), orient(p1, p2, p4), orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_segment(p1, p2, p3)) or (o2 == 0 and on_segment(p1, p2, p4))
            or (o3 == 0 and on_segment(p3, p4, p1)) or (o4 == 0 and on_segment(p3, p4, p2)))


def is_simple(polygon: Sequence[Point]) -> bool:
    """True when no two non-adjacent edges of the closed polygon touch."""
    pts = list(polygon)
    n = len(pts)
    edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def read_annotations(path: PathLike) -> List[Region]:
    """Parse an annotation JSON file.

    Raises:
        FileNotFoundError: If the file does not exist.
        InvalidInputError: On malformed JSON or a degenerate polygon.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Annotation file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, list):
        raise InvalidInputError(f"{path}: expected a list of regions")
    return [Region.from_dict(item) for item in data]


def write_annotations(regions: Iterable[Region], path: PathLike) -> None:
    payload = [r.to_dict() for r in regions]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


@dataclass
class PatchLabels:
    """Ground truth per patch plus the artifact stream, aligned with the input coordinates."""
    truth: List[PatchTruth]
    artifact: np.ndarray

    def labels(self) -> List[Label]:
        return [t.as_label() for t in self.truth]

    def counts(self) -> dict:
        return {t.value: sum(1 for v in self.truth if v is t) for t in PatchTruth}


def patch_labels_from_annotations(coords: Sequence[PatchCoord], regions: Sequence[Region],
                                  patch_size: int) -> PatchLabels:
    """Label patches by the annotation regions containing their centers."""
    if not coords:
        return PatchLabels([], np.zeros(0, dtype=bool))
    centers = np.array([c.center(patch_size) for c in coords], dtype=np.float64)
    n = len(coords)

    def hits(kind: AnnotationKind) -> np.ndarray:
        out = np.zeros(n, dtype=bool)
        for region in regions:
            if region.kind is kind:
                out |= region.contains(centers)
        return out

    anomalous = hits(AnnotationKind.DIAGNOSIS_DEFINING)
    other = hits(AnnotationKind.OTHER_ANOMALOUS)
    truth = [PatchTruth.ANOMALOUS if a else PatchTruth.EXCLUDED if o else PatchTruth.NORMAL
             for a, o in zip(anomalous, other)]
    return PatchLabels(truth, hits(AnnotationKind.ARTIFACT))
