"""Ranking metrics over labelled anomaly scores.

AUROC is the Mann-Whitney statistic with average ranks for ties, i.e.
``P(anomalous > normal) + 0.5 * P(equal)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from ..errors import InvalidInputError
from ..features.io import Label

logger = logging.getLogger(__name__)


def _is_anomalous(label) -> bool:
    if isinstance(label, (bool, np.bool_)):
        return bool(label)
    if isinstance(label, (int, np.integer)):
        if label not in (0, 1):
            raise InvalidInputError(f"Numeric labels must be 0 or 1, got {label}")
        return label == 1
    value = Label(label)
    if value is Label.UNKNOWN:
        raise InvalidInputError("Label 'unknown' cannot take part in a ranking metric")
    return value is Label.ANOMALOUS


class LabeledScores:
    """Scores with normal/anomalous labels and optional diagnosis groups.

    Labels may be given as ``Label`` values, the strings ``normal`` and
    ``anomalous``, booleans, or 0/1.
    """

    def __init__(self, scores: Sequence[float], labels: Sequence, groups: Optional[Sequence[Optional[str]]] = None):
        self.scores = np.asarray(scores, dtype=np.float64).ravel()
        self.anomalous = np.array([_is_anomalous(l) for l in labels], dtype=bool)
        if self.anomalous.size != self.scores.size:
            raise InvalidInputError(f"{self.scores.size} scores but {self.anomalous.size} labels")
        self.groups = None if groups is None else list(groups)
        if self.groups is not None and len(self.groups) != self.scores.size:
            raise InvalidInputError(f"{self.scores.size} scores but {len(self.groups)} group tags")

    def __len__(self) -> int:
        return int(self.scores.size)

    @property
    def n_anomalous(self) -> int:
        return int(self.anomalous.sum())

    @property
    def n_normal(self) -> int:
        return len(self) - self.n_anomalous

    def subset(self, mask: np.ndarray) -> "LabeledScores":
        groups = None if self.groups is None else [g for g, keep in zip(self.groups, mask) if keep]
        return LabeledScores(self.scores[mask], self.anomalous[mask], groups)


def auroc_arrays(scores, anomalous) -> float:
    """AUROC of ``scores`` for the boolean ``anomalous`` labels.

    Raises:
        InvalidInputError: If only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    anomalous = np.asarray(anomalous, dtype=bool)
    n_anom = int(anomalous.sum())
    n_norm = anomalous.size - n_anom
    if n_anom == 0 or n_norm == 0:
        raise InvalidInputError(
            f"single-class input: AUROC needs both classes (normal={n_norm}, anomalous={n_anom})"
        )
    ranks = rankdata(scores, method="average")
    u = float(ranks[anomalous].sum()) - n_anom * (n_anom + 1) / 2.0
    return u / (n_anom * n_norm)


def auroc(data: LabeledScores) -> float:
    return auroc_arrays(data.scores, data.anomalous)


def pairwise_auroc(scores, anomalous) -> float:
    """O(n^2) reference AUROC by counting pairs; used to cross-check :func:`auroc`."""
    scores = np.asarray(scores, dtype=np.float64)
    anomalous = np.asarray(anomalous, dtype=bool)
    pos, neg = scores[anomalous], scores[~anomalous]
    if pos.size == 0 or neg.size == 0:
        raise InvalidInputError("single-class input")
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins) / (pos.size * neg.size)


@dataclass(frozen=True)
class SensitivityResult:
    """Detection threshold keeping at least ``target`` of the anomalies."""
    target: float
    threshold: float
    sensitivity: float
    automatable_fraction: float

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "threshold": self.threshold,
            "sensitivity": self.sensitivity,
            "automatable_fraction": self.automatable_fraction,
        }


def sensitivity_threshold(data: LabeledScores, target_sensitivity: float) -> SensitivityResult:
    """Largest threshold ``t`` whose detection rate (scores ``>= t``) reaches the target.

    The automatable fraction is the share of normal samples scoring strictly
    below ``t``.

    Raises:
        InvalidInputError: If either class is empty or the target is not in (0, 1].
    """
    if not 0.0 < target_sensitivity <= 1.0:
        raise InvalidInputError(f"target_sensitivity must lie in (0, 1], got {target_sensitivity}")
    anomalous = data.scores[data.anomalous]
    normal = data.scores[~data.anomalous]
    if anomalous.size == 0 or normal.size == 0:
        raise InvalidInputError(
            f"single-class input: thresholds need both classes (normal={normal.size}, anomalous={anomalous.size})"
        )
    m = max(1, math.ceil(target_sensitivity * anomalous.size - 1e-9))
    t = float(np.sort(anomalous)[::-1][m - 1])
    return SensitivityResult(
        target=float(target_sensitivity),
        threshold=t,
        sensitivity=float(np.count_nonzero(anomalous >= t)) / anomalous.size,
        automatable_fraction=float(np.count_nonzero(normal < t)) / normal.size,
    )


def group_report(data: LabeledScores, groups: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """AUROC per diagnosis group: all normals against the anomalies of that group.

    Groups without anomalous samples are skipped with a warning.
    """
    if data.groups is None:
        raise InvalidInputError("group_report needs group tags")
    anomalous_groups = sorted({g for g, a in zip(data.groups, data.anomalous) if a and g})
    wanted = anomalous_groups if groups is None else list(groups)
    normal = ~data.anomalous
    report = {}
    for group in wanted:
        in_group = np.array([a and g == group for g, a in zip(data.groups, data.anomalous)], dtype=bool)
        if not in_group.any():
            logger.warning("Skipping group '%s': no anomalous samples", group)
            continue
        mask = normal | in_group
        report[group] = auroc_arrays(data.scores[mask], data.anomalous[mask])
    return report


def artifact_auroc(scores, artifact, normal) -> float:
    """AUROC of artifact patches against normal patches.

    Values below 0.5 mean artifacts score lower than normal tissue.
    """
    scores = np.asarray(scores, dtype=np.float64)
    artifact = np.asarray(artifact, dtype=bool)
    normal = np.asarray(normal, dtype=bool) & ~artifact
    mask = artifact | normal
    return auroc_arrays(scores[mask], artifact[mask])
