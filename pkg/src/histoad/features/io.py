"""Feature matrices, the binary feature file and slide manifests.

Feature file layout (little-endian)::

    magic  b"HADF"
    u16    version (1)
    u16    flags (0)
    u32    D
    u64    N
    f32    N*D values, row-major
    u64    byte length of the metadata block
    bytes  JSON lines, one object per row:
           slide_id, x, y, tissue_class, label
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from ..errors import FeatureFileError, InvalidInputError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAGIC = b"HADF"
VERSION = 1
_HEADER = struct.Struct("<4sHHIQ")
_U64 = struct.Struct("<Q")


class TissueClass(str, Enum):
    NORMAL_TARGET = "normal_target"
    NEAR_OE = "near_oe"
    FAR_OE = "far_oe"
    EVAL = "eval"


class Label(str, Enum):
    NORMAL = "normal"
    ANOMALOUS = "anomalous"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class PatchMeta:
    """Per-row metadata of a feature matrix."""
    slide_id: str
    x: int
    y: int
    tissue_class: TissueClass = TissueClass.EVAL
    label: Label = Label.UNKNOWN

    def to_dict(self) -> dict:
        return {
            "slide_id": self.slide_id,
            "x": self.x,
            "y": self.y,
            "tissue_class": self.tissue_class.value,
            "label": self.label.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PatchMeta":
        return cls(
            slide_id=str(data["slide_id"]),
            x=int(data["x"]),
            y=int(data["y"]),
            tissue_class=TissueClass(data["tissue_class"]),
            label=Label(data["label"]),
        )


@dataclass
class FeatureMatrix:
    """N patch embeddings of width D with per-row metadata.

    ``rows`` is always a C-contiguous ``float32`` array of shape ``(N, D)``.
    """
    rows: np.ndarray
    meta: List[PatchMeta] = field(default_factory=list)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float32)
        if rows.ndim != 2:
            raise InvalidInputError(f"Feature rows must be 2-D, got shape {rows.shape}")
        if rows.shape[1] < 1:
            raise InvalidInputError("Feature dimension must be positive")
        if len(self.meta) != rows.shape[0]:
            raise InvalidInputError(
                f"Metadata length {len(self.meta)} does not match {rows.shape[0]} rows"
            )
        self.rows = np.ascontiguousarray(rows)

    @classmethod
    def empty(cls, dim: int) -> "FeatureMatrix":
        return cls(rows=np.zeros((0, dim), dtype=np.float32), meta=[])

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    def subset(self, indices: Sequence[int]) -> "FeatureMatrix":
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureMatrix(rows=self.rows[idx], meta=[self.meta[i] for i in idx.tolist()])

    def where(self, predicate) -> "FeatureMatrix":
        """Rows whose metadata satisfies ``predicate``, in order."""
        return self.subset([i for i, m in enumerate(self.meta) if predicate(m)])

    def slide_ids(self) -> List[str]:
        """Distinct slide ids in first-seen order."""
        return list(dict.fromkeys(m.slide_id for m in self.meta))

    def by_slide(self) -> Dict[str, "FeatureMatrix"]:
        groups: Dict[str, List[int]] = {}
        for i, m in enumerate(self.meta):
            groups.setdefault(m.slide_id, []).append(i)
        return {sid: self.subset(idx) for sid, idx in groups.items()}

    def relabel(self, tissue_class: Optional[TissueClass] = None,
                label: Optional[Label] = None) -> "FeatureMatrix":
        meta = [
            PatchMeta(m.slide_id, m.x, m.y,
                      tissue_class if tissue_class is not None else m.tissue_class,
                      label if label is not None else m.label)
            for m in self.meta
        ]
        return FeatureMatrix(rows=self.rows.copy(), meta=meta)

    @staticmethod
    def concat(matrices: Sequence["FeatureMatrix"], dim: Optional[int] = None) -> "FeatureMatrix":
        matrices = list(matrices)
        if not matrices:
            if dim is None:
                raise InvalidInputError("Cannot concatenate zero matrices without a dimension")
            return FeatureMatrix.empty(dim)
        dims = {m.dim for m in matrices}
        if len(dims) != 1:
            raise InvalidInputError(f"Feature dimensions differ: {sorted(dims)}")
        rows = np.concatenate([m.rows for m in matrices], axis=0)
        meta = [pm for m in matrices for pm in m.meta]
        return FeatureMatrix(rows=rows, meta=meta)


def write_features(matrix: FeatureMatrix, path: PathLike) -> None:
    """Write ``matrix`` in the binary feature file format."""
    n, d = matrix.rows.shape
    meta_blob = "".join(
        json.dumps(m.to_dict(), separators=(",", ":")) + "\n" for m in matrix.meta
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, 0, d, n))
        f.write(matrix.rows.astype("<f4", copy=False).tobytes(order="C"))
        f.write(_U64.pack(len(meta_blob)))
        f.write(meta_blob)


def read_features(path: PathLike, expected_dim: Optional[int] = None) -> FeatureMatrix:
    """Read a feature file.

    Args:
        path: File written by :func:`write_features`.
        expected_dim: When given, the file's D must match it.

    Raises:
        FileNotFoundError: If the file does not exist.
        FeatureFileError: With ``code`` ``magic``, ``version``, ``dim``,
            ``truncated`` or ``metadata`` depending on the defect.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Feature file not found: {path}")
    data = path.read_bytes()
    where = str(path)
    if len(data) < _HEADER.size:
        if not MAGIC.startswith(data[:4]):
            raise FeatureFileError("magic", "Not a feature file", where)
        raise FeatureFileError("truncated", "File shorter than its header", where)
    magic, version, _flags, d, n = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FeatureFileError("magic", f"Bad magic {magic!r}", where)
    if version != VERSION:
        raise FeatureFileError("version", f"Unsupported version {version}", where)
    if d < 1:
        raise FeatureFileError("dim", "Declared dimension is zero", where)
    if expected_dim is not None and d != expected_dim:
        raise FeatureFileError("dim", f"Expected D={expected_dim}, file declares D={d}", where)

    offset = _HEADER.size
    payload = n * d * 4
    if len(data) < offset + payload:
        present = (len(data) - offset) // (4 * d)
        raise FeatureFileError("truncated", f"Declared N={n} but only {present} rows present", where)
    rows = np.frombuffer(data, dtype="<f4", count=n * d, offset=offset).reshape(n, d)
    offset += payload

    if len(data) < offset + _U64.size:
        raise FeatureFileError("truncated", "Missing metadata length", where)
    (meta_len,) = _U64.unpack_from(data, offset)
    offset += _U64.size
    if len(data) < offset + meta_len:
        raise FeatureFileError("truncated", "Metadata block shorter than declared", where)
    try:
        lines = data[offset:offset + meta_len].decode("utf-8").splitlines()
        meta = [PatchMeta.from_dict(json.loads(line)) for line in lines if line]
    except (UnicodeDecodeError, ValueError, KeyError) as e:
        raise FeatureFileError("metadata", f"Malformed metadata: {e}", where) from e
    if len(meta) != n:
        raise FeatureFileError("metadata", f"{len(meta)} metadata rows for N={n}", where)
    return FeatureMatrix(rows=rows.astype(np.float32), meta=meta)


@dataclass(frozen=True)
class ManifestEntry:
    """One line of a slide manifest."""
    slide_id: str
    path: Path
    tissue_class: TissueClass
    label: Label
    diagnosis_group: str = ""


MANIFEST_FIELDS = ("slide_id", "path", "tissue_class", "label", "diagnosis_group")


def read_manifest(path: PathLike) -> List[ManifestEntry]:
    """Parse a ``slide_id,path,tissue_class,label,diagnosis_group`` CSV.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    entries = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(MANIFEST_FIELDS[:4]) - set(reader.fieldnames or [])
        if missing:
            raise InvalidInputError(f"Manifest {path} lacks columns: {', '.join(sorted(missing))}")
        for lineno, row in enumerate(reader, start=2):
            try:
                file_path = Path(row["path"])
                if not file_path.is_absolute():
                    file_path = path.parent / file_path
                entries.append(ManifestEntry(
                    slide_id=row["slide_id"],
                    path=file_path,
                    tissue_class=TissueClass(row["tissue_class"]),
                    label=Label(row["label"]),
                    diagnosis_group=(row.get("diagnosis_group") or "").strip(),
                ))
            except ValueError as e:
                raise InvalidInputError(f"Manifest {path} line {lineno}: {e}") from e
    return entries


def write_manifest(entries: Iterable[ManifestEntry], path: PathLike) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for e in entries:
            try:
                rel = e.path.relative_to(path.parent)
            except ValueError:
                rel = e.path
            writer.writerow([e.slide_id, rel.as_posix(), e.tissue_class.value, e.label.value,
                             e.diagnosis_group])


def load_entries(entries: Sequence[ManifestEntry], dim: Optional[int] = None) -> FeatureMatrix:
    """Concatenate the feature files of several manifest entries.

    Every row takes the entry's slide id and tissue class. Rows without a
    patch-level label inherit ``normal`` from normal slides; on anomalous
    slides they stay ``unknown`` since only annotations localise anomalies.
    """
    matrices = []
    for entry in entries:
        m = read_features(entry.path, expected_dim=dim)
        dim = m.dim
        meta = [
            PatchMeta(entry.slide_id, pm.x, pm.y, entry.tissue_class, _row_label(pm.label, entry.label))
            for pm in m.meta
        ]
        matrices.append(FeatureMatrix(rows=m.rows, meta=meta))
    return FeatureMatrix.concat(matrices, dim=dim)


def _row_label(patch_label: Label, slide_label: Label) -> Label:
    if patch_label != Label.UNKNOWN:
        return patch_label
    return Label.NORMAL if slide_label == Label.NORMAL else Label.UNKNOWN
