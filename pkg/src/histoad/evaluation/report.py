"""Evaluation reports: per-fold results and their summary.

``EvalReport.to_json`` is byte-stable: keys are sorted and floats are written
with 12 significant digits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .metrics import SensitivityResult


def _round(value):
    if isinstance(value, float):
        if not math.isfinite(value):
            return None
        return float(f"{value:.12g}")
    if isinstance(value, dict):
        return {k: _round(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round(v) for v in value]
    return value


def mean_std(values: Sequence[float]) -> Dict[str, float]:
    """Mean and population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {"mean": math.nan, "std": math.nan, "n": 0}
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=0)), "n": int(arr.size)}


@dataclass
class FoldResult:
    """Metrics of one evaluation split."""
    fold: int
    n_train_slides: int
    n_test_normal: int
    n_test_anomalous: int
    slide_auroc: float
    group_aurocs: Dict[str, float] = field(default_factory=dict)
    thresholds: List[SensitivityResult] = field(default_factory=list)
    patch_auroc: Optional[float] = None
    artifact_auroc: Optional[float] = None
    slide_scores: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "n_train_slides": self.n_train_slides,
            "n_test_normal": self.n_test_normal,
            "n_test_anomalous": self.n_test_anomalous,
            "slide_auroc": self.slide_auroc,
            "group_aurocs": dict(sorted(self.group_aurocs.items())),
            "thresholds": [t.to_dict() for t in self.thresholds],
            "patch_auroc": self.patch_auroc,
            "artifact_auroc": self.artifact_auroc,
            "slide_scores": dict(sorted(self.slide_scores.items())),
        }


@dataclass
class EvalReport:
    """Fold results plus the method that produced them."""
    method: str
    folds: List[FoldResult]
    seed: Optional[int] = None

    @property
    def fold_aurocs(self) -> List[float]:
        return [f.slide_auroc for f in self.folds]

    @property
    def auroc(self) -> Dict[str, float]:
        return mean_std(self.fold_aurocs)

    @property
    def patch_auroc(self) -> Optional[Dict[str, float]]:
        values = [f.patch_auroc for f in self.folds if f.patch_auroc is not None]
        return mean_std(values) if values else None

    @property
    def artifact_auroc(self) -> Optional[Dict[str, float]]:
        values = [f.artifact_auroc for f in self.folds if f.artifact_auroc is not None]
        return mean_std(values) if values else None

    def group_summary(self) -> Dict[str, Dict[str, float]]:
        """Mean and std of each group's AUROC over the folds that report it."""
        names = sorted({g for f in self.folds for g in f.group_aurocs})
        return {g: mean_std([f.group_aurocs[g] for f in self.folds if g in f.group_aurocs]) for g in names}

    def threshold_summary(self) -> List[Dict[str, float]]:
        """Per sensitivity target: mean threshold, sensitivity and automatable fraction."""
        targets = sorted({t.target for f in self.folds for t in f.thresholds}, reverse=True)
        out = []
        for target in targets:
            rows = [t for f in self.folds for t in f.thresholds if t.target == target]
            out.append({
                "target": target,
                "threshold": mean_std([r.threshold for r in rows])["mean"],
                "sensitivity": mean_std([r.sensitivity for r in rows])["mean"],
                "automatable_fraction": mean_std([r.automatable_fraction for r in rows]),
            })
        return out

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "n_folds": len(self.folds),
            "fold_aurocs": self.fold_aurocs,
            "auroc": self.auroc,
            "patch_auroc": self.patch_auroc,
            "artifact_auroc": self.artifact_auroc,
            "groups": self.group_summary(),
            "thresholds": self.threshold_summary(),
            "folds": [f.to_dict() for f in self.folds],
        }

    def to_json(self) -> str:
        return json.dumps(_round(self.to_dict()), sort_keys=True, indent=2) + "\n"

    def format_table(self) -> str:
        """Plain-text summary for the terminal."""
        overall = self.auroc
        lines = [
            f"Method: {self.method}    folds: {len(self.folds)}",
            f"Slide AUROC: {overall['mean']:.4f} +/- {overall['std']:.4f}",
            "Per fold: " + ", ".join(f"{v:.4f}" for v in self.fold_aurocs),
        ]
        if self.patch_auroc:
            lines.append(f"Patch AUROC: {self.patch_auroc['mean']:.4f} +/- {self.patch_auroc['std']:.4f}")
        if self.artifact_auroc:
            lines.append(f"Artifact AUROC: {self.artifact_auroc['mean']:.4f} +/- {self.artifact_auroc['std']:.4f}")
        groups = self.group_summary()
        if groups:
            width = max(len("Group"), *(len(g) for g in groups))
            lines += ["", f"{'Group':<{width}}  AUROC mean   std", f"{'-' * width}  ----------  ------"]
            for name, stats in groups.items():
                lines.append(f"{name:<{width}}  {stats['mean']:>10.4f}  {stats['std']:.4f}")
        thresholds = self.threshold_summary()
        if thresholds:
            lines += ["", "Sensitivity  Threshold   Automatable", "-----------  ----------  -----------"]
            for row in thresholds:
                lines.append(f"{row['target']:>11.2f}  {row['threshold']:>10.4f}  "
                             f"{row['automatable_fraction']['mean']:>11.4f}")
        return "\n".join(lines) + "\n"
