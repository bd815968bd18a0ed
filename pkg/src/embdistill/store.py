"""Bit-exact persistence and validated ingestion of embedding sets.

A set lives in one directory:

    manifest.json   version, n, d, class_names, provenance, checksum
    meta.jsonl      one JSON object per row, in row order
    emb.bin         raw little-endian float32 values, row-major, n*d*4 bytes

The checksum is 64-bit FNV-1a over the bytes of ``emb.bin``. Writing a set
and reading it back yields a bit-identical copy. Sets are treated as
immutable after load; writes own their directory exclusively.

Optional per-row metadata (label, center_id, tissue_class) is stored as
JSON null when absent; operations that need a field fail fast naming it.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ._validation import describe_index, first_nonfinite
from .errors import DataValidationError
from .fileio import atomic_write_bytes, atomic_write_text, fnv1a64_hex

FORMAT_VERSION = 1
_META_FIELDS = ("sample_id", "bag_id", "label", "center_id", "tissue_class")


@dataclass
class SampleMeta:
    """Per-row metadata; sample_id must be unique within a set."""

    sample_id: str
    bag_id: str = ""
    label: int | None = None
    center_id: str | None = None
    tissue_class: int | None = None

    def to_json_obj(self):
        return {
            "sample_id": self.sample_id,
            "bag_id": self.bag_id,
            "label": self.label,
            "center_id": self.center_id,
            "tissue_class": self.tissue_class,
        }

    @classmethod
    def from_json_obj(cls, obj):
        if not isinstance(obj, dict):
            raise DataValidationError("metadata entry is not a JSON object")
        sample_id = obj.get("sample_id")
        if not isinstance(sample_id, str) or not sample_id:
            raise DataValidationError("metadata entry missing a non-empty sample_id")
        bag_id = obj.get("bag_id", "")
        if bag_id is None:
            bag_id = ""
        label = obj.get("label")
        center_id = obj.get("center_id")
        tissue_class = obj.get("tissue_class")
        for name, value in (("label", label), ("tissue_class", tissue_class)):
            if value is not None and not isinstance(value, int):
                raise DataValidationError(f"{name} must be an integer or null, got {value!r}")
        return cls(sample_id, str(bag_id), label, center_id, tissue_class)


@dataclass
class EmbeddingSet:
    """n x d float32 embedding matrix with row-aligned metadata."""

    data: np.ndarray
    meta: list[SampleMeta]
    class_names: list[str] = field(default_factory=list)
    provenance: str = ""

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def sample_ids(self) -> list[str]:
        return [m.sample_id for m in self.meta]

    def validate(self):
        if self.data.ndim != 2:
            raise DataValidationError(f"embedding data must be 2-dimensional, got shape {self.data.shape}")
        n, d = self.data.shape
        if n < 1 or d < 1:
            raise DataValidationError(f"invariant violation: need n >= 1 and d >= 1, got n={n}, d={d}")
        idx = first_nonfinite(self.data)
        if idx is not None:
            raise DataValidationError(f"non-finite embedding value at {describe_index(idx)}")
        if len(self.meta) != n:
            raise DataValidationError(f"metadata length {len(self.meta)} does not match row count {n}")
        seen = set()
        for i, m in enumerate(self.meta):
            if m.sample_id in seen:
                raise DataValidationError(f"duplicate sample_id {m.sample_id!r} at row {i}")
            seen.add(m.sample_id)
            if m.label is not None:
                if m.label < 0:
                    raise DataValidationError(f"negative label at row {i}")
                if self.class_names and m.label >= len(self.class_names):
                    raise DataValidationError(
                        f"label {m.label} at row {i} out of range for {len(self.class_names)} classes"
                    )
            if m.tissue_class is not None and m.tissue_class < 0:
                raise DataValidationError(f"negative tissue_class at row {i}")
        return self

    def _column(self, name, missing_ok=False):
        values = [getattr(m, name) for m in self.meta]
        if not missing_ok:
            missing = [m.sample_id for m, v in zip(self.meta, values) if v is None]
            if missing:
                shown = ", ".join(missing[:5])
                raise DataValidationError(
                    f"{len(missing)} rows are missing required field '{name}' (e.g. {shown})"
                )
        return values

    def label_array(self) -> np.ndarray:
        return np.asarray(self._column("label"), dtype=np.int64)

    def tissue_array(self) -> np.ndarray:
        return np.asarray(self._column("tissue_class"), dtype=np.int64)

    def center_array(self) -> np.ndarray:
        return np.asarray(self._column("center_id"), dtype=object)


def write_embedding_set(es: EmbeddingSet, path):
    """Write a validated set to a directory; see module docstring for layout."""
    es.validate()
    payload = np.ascontiguousarray(es.data, dtype="<f4").tobytes()
    checksum = fnv1a64_hex(payload)
    meta_lines = "".join(
        json.dumps(m.to_json_obj(), separators=(",", ":")) + "\n" for m in es.meta
    )
    manifest = {
        "version": FORMAT_VERSION,
        "n": es.n,
        "d": es.d,
        "class_names": list(es.class_names),
        "provenance": es.provenance,
        "checksum": checksum,
    }
    os.makedirs(path, exist_ok=True)
    atomic_write_bytes(os.path.join(path, "emb.bin"), payload)
    atomic_write_text(os.path.join(path, "meta.jsonl"), meta_lines)
    # manifest last, so a directory without one is recognizably incomplete
    atomic_write_text(os.path.join(path, "manifest.json"), json.dumps(manifest, indent=2) + "\n")


def read_embedding_set(path) -> EmbeddingSet:
    """Read and validate a set directory produced by write_embedding_set."""
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise DataValidationError(f"no embedding set at {path!s}: missing manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise DataValidationError(f"malformed manifest.json in {path!s}: {e}") from e
    try:
        n = int(manifest["n"])
        d = int(manifest["d"])
        checksum = manifest["checksum"]
        class_names = list(manifest.get("class_names", []))
        provenance = str(manifest.get("provenance", ""))
    except (KeyError, TypeError, ValueError) as e:
        raise DataValidationError(f"manifest.json in {path!s} is missing or mistypes a field: {e}") from e
    if n < 1 or d < 1:
        raise DataValidationError(f"invariant violation in manifest: need n >= 1 and d >= 1, got n={n}, d={d}")

    with open(os.path.join(path, "emb.bin"), "rb") as f:
        payload = f.read()
    expected = n * d * 4
    if len(payload) != expected:
        raise DataValidationError(
            f"emb.bin size mismatch: expected {expected} bytes for {n}x{d} float32, found {len(payload)}"
        )
    actual_checksum = fnv1a64_hex(payload)
    if actual_checksum != checksum:
        raise DataValidationError(
            f"checksum mismatch for emb.bin: manifest says {checksum}, content hashes to {actual_checksum}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(n, d).copy()

    meta = []
    with open(os.path.join(path, "meta.jsonl"), "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataValidationError(f"malformed metadata line {lineno}: {e}") from e
            try:
                meta.append(SampleMeta.from_json_obj(obj))
            except DataValidationError as e:
                raise DataValidationError(f"metadata line {lineno}: {e}") from e

    es = EmbeddingSet(data=data, meta=meta, class_names=class_names, provenance=provenance)
    return es.validate()


@dataclass
class AlignedPairs:
    """Row pairing of two sets matched by sample_id, in first-set row order."""

    pairs: list[tuple[int, int]]
    n_first_unmatched: int
    n_second_unmatched: int

    def first_rows(self) -> np.ndarray:
        return np.asarray([i for i, _ in self.pairs], dtype=np.intp)

    def second_rows(self) -> np.ndarray:
        return np.asarray([j for _, j in self.pairs], dtype=np.intp)


def align_pairs(first: EmbeddingSet, second: EmbeddingSet) -> AlignedPairs:
    """Match rows of two sets by sample_id; unmatched rows are dropped and counted."""
    second_index = {m.sample_id: j for j, m in enumerate(second.meta)}
    pairs = []
    for i, m in enumerate(first.meta):
        j = second_index.get(m.sample_id)
        if j is not None:
            pairs.append((i, j))
    if not pairs:
        raise DataValidationError("no sample_id is shared between the two sets; nothing to pair")
    return AlignedPairs(
        pairs=pairs,
        n_first_unmatched=first.n - len(pairs),
        n_second_unmatched=second.n - len(pairs),
    )


def group_by_bag(es: EmbeddingSet) -> list[tuple[str, list[int]]]:
    """Partition row indices by bag_id, groups ordered by first occurrence."""
    offenders = [m.sample_id for m in es.meta if not m.bag_id]
    if offenders:
        shown = ", ".join(offenders[:10])
        raise DataValidationError(f"{len(offenders)} rows have an empty bag_id (e.g. {shown})")
    groups: dict[str, list[int]] = {}
    for i, m in enumerate(es.meta):
        groups.setdefault(m.bag_id, []).append(i)
    return list(groups.items())


def ingest_csv(csv_path, class_names=(), provenance="") -> EmbeddingSet:
    """Build a set from a CSV with columns sample_id,bag_id,label,center_id,tissue_class
    followed by d embedding value columns. Empty cells in the optional columns mean absent.
    """
    with open(csv_path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{csv_path!s} is empty") from None
        if tuple(h.strip() for h in header[:5]) != _META_FIELDS:
            raise DataValidationError(
                f"CSV header must start with {','.join(_META_FIELDS)}, got {header[:5]}"
            )
        d = len(header) - 5
        if d < 1:
            raise DataValidationError("CSV has no embedding value columns")

        meta, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5 + d:
                raise DataValidationError(f"CSV line {lineno}: expected {5 + d} fields, got {len(row)}")
            sample_id, bag_id, label_s, center_s, tissue_s = (cell.strip() for cell in row[:5])
            if not sample_id:
                raise DataValidationError(f"CSV line {lineno}: empty sample_id")
            try:
                label = int(label_s) if label_s else None
                tissue = int(tissue_s) if tissue_s else None
            except ValueError as e:
                raise DataValidationError(f"CSV line {lineno}: {e}") from e
            try:
                values = [float(cell) for cell in row[5:]]
            except ValueError as e:
                raise DataValidationError(f"CSV line {lineno}: {e}") from e
            meta.append(SampleMeta(sample_id, bag_id, label, center_s or None, tissue))
            rows.append(values)

    if not rows:
        raise DataValidationError(f"{csv_path!s} has a header but no data rows")
    es = EmbeddingSet(
        data=np.asarray(rows, dtype=np.float32),
        meta=meta,
        class_names=list(class_names),
        provenance=provenance,
    )
    return es.validate()
