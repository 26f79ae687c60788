"""Per-patch score tables and slide-level aggregation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

from ..errors import ConfigurationError, InvalidInputError
from ..features.io import PatchMeta
from ..preprocessing.tiler import PatchCoord

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
SCORE_FIELDS = ("slide_id", "x", "y", "score")


@dataclass(frozen=True)
class AggregationConfig:
    """Slide score = mean of the top ``top_fraction`` patch scores."""
    top_fraction: float = 0.10

    def __post_init__(self):
        if not 0.0 < self.top_fraction <= 1.0:
            raise ConfigurationError(f"top_fraction must lie in (0, 1], got {self.top_fraction}")

    def top_count(self, n: int) -> int:
        """``max(1, ceil(top_fraction * n))``; guards against float noise in the product."""
        return max(1, math.ceil(self.top_fraction * n - 1e-9))


@dataclass
class ScoreTable:
    """Patch scores keyed by ``(slide_id, x, y)``."""
    coords: List[PatchCoord] = field(default_factory=list)
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        if len(self.coords) != self.scores.size:
            raise InvalidInputError(f"{len(self.coords)} coordinates but {self.scores.size} scores")
        if not np.all(np.isfinite(self.scores)):
            raise InvalidInputError("Scores must be finite")
        if len(set(self.coords)) != len(self.coords):
            raise InvalidInputError("Duplicate (slide_id, x, y) keys in score table")

    def __len__(self) -> int:
        return len(self.coords)

    @classmethod
    def from_meta(cls, meta: Sequence[PatchMeta], scores) -> "ScoreTable":
        return cls([PatchCoord(m.slide_id, m.x, m.y) for m in meta], scores)

    def slide_ids(self) -> List[str]:
        return sorted({c.slide_id for c in self.coords})

    def by_slide(self) -> Dict[str, "ScoreTable"]:
        groups: Dict[str, List[int]] = {}
        for i, c in enumerate(self.coords):
            groups.setdefault(c.slide_id, []).append(i)
        return {sid: ScoreTable([self.coords[i] for i in idx], self.scores[idx])
                for sid, idx in sorted(groups.items())}

    def score_of(self, coord: PatchCoord) -> float:
        return float(self.scores[self.coords.index(coord)])

    @staticmethod
    def concat(tables: Iterable["ScoreTable"]) -> "ScoreTable":
        tables = list(tables)
        coords = [c for t in tables for c in t.coords]
        scores = np.concatenate([t.scores for t in tables]) if tables else np.zeros(0)
        return ScoreTable(coords, scores)

    def to_csv(self, path: PathLike) -> None:
        """Write ``slide_id,x,y,score`` with scores at 9 significant digits."""
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SCORE_FIELDS)
            for c, s in zip(self.coords, self.scores):
                writer.writerow([c.slide_id, c.x, c.y, f"{s:.9g}"])

    @classmethod
    def from_csv(cls, path: PathLike) -> "ScoreTable":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Score table not found: {path}")
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or tuple(reader.fieldnames) != SCORE_FIELDS:
                raise InvalidInputError(f"{path}: expected header {','.join(SCORE_FIELDS)}")
            coords, scores = [], []
            for line_no, row in enumerate(reader, start=2):
                try:
                    coords.append(PatchCoord(row["slide_id"], int(row["x"]), int(row["y"])))
                    scores.append(float(row["score"]))
                except ValueError as e:
                    raise InvalidInputError(f"{path}:{line_no}: {e}") from e
        return cls(coords, np.asarray(scores))


def aggregate_slide(table: ScoreTable, cfg: AggregationConfig = AggregationConfig()) -> float:
    """Mean of the ``m`` highest patch scores of one slide.

    Patches are ranked by score descending, then ``x``, then ``y``, so the
    selected set is fixed even under ties.

    Raises:
        InvalidInputError: If the table is empty or spans several slides.
    """
    if len(table) == 0:
        raise InvalidInputError("Cannot aggregate a slide without patches")
    if len({c.slide_id for c in table.coords}) > 1:
        raise InvalidInputError("aggregate_slide expects the patches of a single slide")
    xs = np.array([c.x for c in table.coords])
    ys = np.array([c.y for c in table.coords])
    order = np.lexsort((ys, xs, -table.scores))
    m = cfg.top_count(len(table))
    return float(np.mean(table.scores[order[:m]]))


def aggregate_table(table: ScoreTable, cfg: AggregationConfig = AggregationConfig()) -> Dict[str, float]:
    """Slide score for every slide in ``table``, keyed and ordered by slide id."""
    return {sid: aggregate_slide(sub, cfg) for sid, sub in table.by_slide().items()}


def write_slide_scores(scores: Dict[str, float], path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["slide_id", "score"])
        for sid in sorted(scores):
            writer.writerow([sid, f"{scores[sid]:.9g}"])


def read_slide_scores(path: PathLike) -> Dict[str, float]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Slide score file not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        try:
            return {row["slide_id"]: float(row["score"]) for row in reader}
        except (KeyError, ValueError) as e:
            raise InvalidInputError(f"{path}: malformed slide score file ({e})") from e
