"""Embedding memory: records, label catalog, and the on-disk format.

The memory is immutable after construction and safe to share across
concurrent readers. Vectors are stored L2-normalized so cosine similarity
reduces to a dot product.

Binary memory file layout (all integers little-endian):

    magic      4 bytes  b"RARM"
    version    u16      currently 1
    dimension  u32
    count      u64      number of records
    catalog    u32 name count, then per name: u16 byte length + UTF-8 bytes
    records    per record: id u64, modality u8 (0=image, 1=text),
               label_id u32, dimension x f32

A line-delimited JSON interchange format is also accepted for ingestion:
one object per line with fields ``id``, ``modality``, ``label``, ``vector``.
"""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    BadMagic,
    InvariantViolation,
    Truncated,
    UnsupportedVersion,
)
from .validation import UNIT_NORM_TOL, as_matrix, normalize, normalize_rows

MAGIC = b"RARM"
VERSION = 1


class Modality(enum.Enum):
    IMAGE = 0
    TEXT = 1

    @classmethod
    def from_wire(cls, code: int) -> "Modality":
        try:
            return cls(code)
        except ValueError:
            raise InvariantViolation(f"unknown modality code {code}") from None

    @classmethod
    def parse(cls, name: str) -> "Modality":
        try:
            return cls[name.upper()]
        except KeyError:
            raise InvariantViolation(f"unknown modality {name!r}") from None

    def __str__(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class EmbeddingRecord:
    """One stored vector with its modality and category label."""

    id: int
    modality: Modality
    label_id: int
    vector: np.ndarray


class LabelCatalog:
    """Ordered list of category names; the label id is the position.

    Names are matched by exact string, case- and whitespace-sensitive, so
    ranking-output validation is unambiguous.
    """

    def __init__(self, names: Sequence[str]):
        names = tuple(names)
        for name in names:
            if not isinstance(name, str) or not name:
                raise InvariantViolation(f"catalog names must be non-empty strings, got {name!r}")
        if len(set(names)) != len(names):
            raise InvariantViolation("catalog contains duplicate names")
        self._names = names
        self._index = {name: i for i, name in enumerate(names)}

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def id_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise InvariantViolation(f"label {name!r} not in catalog") from None

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __getitem__(self, label_id: int) -> str:
        return self._names[label_id]

    def __len__(self) -> int:
        return len(self._names)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelCatalog) and self._names == other._names

    def __repr__(self) -> str:
        return f"LabelCatalog({len(self)} names)"


class MemoryStore:
    """Immutable collection of embedding records over one catalog.

    Internally columnar (ids, modalities, label ids, one vector matrix) so
    similarity scans are single matrix products.
    """

    def __init__(
        self,
        dimension: int,
        ids: np.ndarray,
        modalities: np.ndarray,
        label_ids: np.ndarray,
        vectors: np.ndarray,
        catalog: LabelCatalog,
        validate: bool = True,
    ):
        self.dimension = int(dimension)
        self.ids = np.ascontiguousarray(ids, dtype=np.uint64)
        self.modalities = np.ascontiguousarray(modalities, dtype=np.uint8)
        self.label_ids = np.ascontiguousarray(label_ids, dtype=np.uint32)
        self.vectors = as_matrix(vectors) if vectors.size else vectors.reshape(0, dimension).astype(np.float32)
        self.catalog = catalog
        for arr in (self.ids, self.modalities, self.label_ids, self.vectors):
            arr.setflags(write=False)
        if validate:
            self._validate()

    def _validate(self) -> None:
        n = len(self.ids)
        if self.dimension <= 0:
            raise InvariantViolation(f"dimension must be positive, got {self.dimension}")
        if not (len(self.modalities) == len(self.label_ids) == self.vectors.shape[0] == n):
            raise InvariantViolation("columnar arrays disagree on record count")
        if n and self.vectors.shape[1] != self.dimension:
            raise InvariantViolation(
                f"vectors have dimension {self.vectors.shape[1]}, store declares {self.dimension}"
            )
        if len(np.unique(self.ids)) != n:
            raise InvariantViolation("record ids are not unique")
        if np.any(self.label_ids >= len(self.catalog)):
            bad = int(self.ids[int(np.argmax(self.label_ids >= len(self.catalog)))])
            raise InvariantViolation(f"record {bad} references a label outside the catalog")
        if np.any(self.modalities > 1):
            raise InvariantViolation("modality codes must be 0 (image) or 1 (text)")
        if n:
            norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                bad = int(np.argmax(np.abs(norms - 1.0)))
                raise InvariantViolation(
                    f"record {int(self.ids[bad])} is not unit-norm (|v| = {norms[bad]:.8f})"
                )

    @classmethod
    def from_records(
        cls, records: Iterable[EmbeddingRecord], catalog: LabelCatalog, dimension: int | None = None
    ) -> "MemoryStore":
        records = list(records)
        if dimension is None:
            if not records:
                raise InvariantViolation("dimension required for an empty store")
            dimension = int(records[0].vector.shape[0])
        ids = np.array([r.id for r in records], dtype=np.uint64)
        mods = np.array([r.modality.value for r in records], dtype=np.uint8)
        labels = np.array([r.label_id for r in records], dtype=np.uint32)
        if records:
            vectors = np.stack([as_matrix(r.vector, dimension)[0] for r in records])
        else:
            vectors = np.zeros((0, dimension), dtype=np.float32)
        return cls(dimension, ids, mods, labels, vectors, catalog)

    def record(self, row: int) -> EmbeddingRecord:
        return EmbeddingRecord(
            id=int(self.ids[row]),
            modality=Modality.from_wire(int(self.modalities[row])),
            label_id=int(self.label_ids[row]),
            vector=self.vectors[row],
        )

    def records(self) -> Iterator[EmbeddingRecord]:
        for row in range(len(self)):
            yield self.record(row)

    def label_of_row(self, row: int) -> str:
        return self.catalog[int(self.label_ids[row])]

    def position_of(self, record_id: int) -> int:
        """Row index of a record id (lookup table built lazily, store is frozen)."""
        lookup = self.__dict__.get("_pos_lookup")
        if lookup is None:
            lookup = {int(rid): p for p, rid in enumerate(self.ids)}
            self.__dict__["_pos_lookup"] = lookup
        return lookup[record_id]

    def distinct_label_count(self) -> int:
        return len(np.unique(self.label_ids)) if len(self) else 0

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MemoryStore):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and self.catalog == other.catalog
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.modalities, other.modalities)
            and np.array_equal(self.label_ids, other.label_ids)
            and self.vectors.tobytes() == other.vectors.tobytes()
        )

    def __repr__(self) -> str:
        return f"MemoryStore(d={self.dimension}, records={len(self)}, labels={len(self.catalog)})"


def write_memory_file(store: MemoryStore, path) -> int:
    """Serialize ``store`` to ``path``; returns bytes written.

    The store is re-validated first so invalid stores never reach disk.
    """
    store._validate()
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<HIQ", VERSION, store.dimension, len(store))
    buf += struct.pack("<I", len(store.catalog))
    for name in store.catalog.names:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise InvariantViolation(f"catalog name too long ({len(raw)} bytes)")
        buf += struct.pack("<H", len(raw))
        buf += raw
    for row in range(len(store)):
        buf += struct.pack(
            "<QBI", int(store.ids[row]), int(store.modalities[row]), int(store.label_ids[row])
        )
        buf += store.vectors[row].astype("<f4", copy=False).tobytes()
    data = bytes(buf)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


class _Cursor:
    """Bounds-checked reader over a bytes buffer."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated(f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_memory_file(path) -> MemoryStore:
    """Read a memory file; the result round-trips ``write_memory_file`` bit-exactly."""
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data)
    if cur.take(4) != MAGIC:
        raise BadMagic(f"{path}: not a memory file")
    (version,) = cur.unpack("<H")
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version} (reader supports {VERSION})")
    dimension, count = cur.unpack("<IQ")
    (name_count,) = cur.unpack("<I")
    names = []
    for _ in range(name_count):
        (nbytes,) = cur.unpack("<H")
        names.append(cur.take(nbytes).decode("utf-8"))
    catalog = LabelCatalog(names)
    ids = np.empty(count, dtype=np.uint64)
    mods = np.empty(count, dtype=np.uint8)
    labels = np.empty(count, dtype=np.uint32)
    vectors = np.empty((count, dimension), dtype=np.float32)
    for row in range(count):
        ids[row], mods[row], labels[row] = cur.unpack("<QBI")
        vectors[row] = np.frombuffer(cur.take(4 * dimension), dtype="<f4")
    if cur.pos != len(data):
        raise InvariantViolation(f"{path}: {len(data) - cur.pos} trailing bytes")
    return MemoryStore(dimension, ids, mods, labels, vectors, catalog)


def load_records_jsonl(path, renormalize: bool = True) -> MemoryStore:
    """Build a store from the line-delimited interchange format.

    Each line is an object with fields ``id``, ``modality`` ("image"/"text"),
    ``label`` (category name), and ``vector``. The catalog is the labels in
    order of first appearance. Vectors are normalized at ingestion unless
    ``renormalize`` is disabled.
    """
    ids: list[int] = []
    mods: list[int] = []
    label_names: list[str] = []
    rows: list[np.ndarray] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvariantViolation(f"{path}:{lineno}: invalid JSON ({exc})") from None
            for field in ("id", "modality", "label", "vector"):
                if field not in obj:
                    raise InvariantViolation(f"{path}:{lineno}: missing field {field!r}")
            ids.append(int(obj["id"]))
            mods.append(Modality.parse(str(obj["modality"])).value)
            label_names.append(str(obj["label"]))
            vec = np.asarray(obj["vector"], dtype=np.float32)
            rows.append(normalize(vec) if renormalize else vec)
    if not rows:
        raise InvariantViolation(f"{path}: no records")
    seen: dict[str, int] = {}
    for name in label_names:
        if name not in seen:
            seen[name] = len(seen)
    catalog = LabelCatalog(list(seen))
    labels = np.array([seen[name] for name in label_names], dtype=np.uint32)
    vectors = np.stack(rows)
    return MemoryStore(
        vectors.shape[1],
        np.array(ids, dtype=np.uint64),
        np.array(mods, dtype=np.uint8),
        labels,
        vectors,
        catalog,
    )


def store_from_arrays(
    vectors,
    labels: Sequence[str],
    modality: Modality = Modality.IMAGE,
    ids: Sequence[int] | None = None,
    catalog: LabelCatalog | None = None,
    renormalize: bool = True,
) -> MemoryStore:
    """Convenience builder from a matrix and parallel label names."""
    matrix = as_matrix(vectors)
    if len(labels) != matrix.shape[0]:
        raise InvariantViolation(f"{matrix.shape[0]} vectors but {len(labels)} labels")
    if renormalize:
        matrix = normalize_rows(matrix)
    if catalog is None:
        catalog = LabelCatalog(sorted(set(labels)))
    label_ids = np.array([catalog.id_of(name) for name in labels], dtype=np.uint32)
    if ids is None:
        ids_arr = np.arange(matrix.shape[0], dtype=np.uint64)
    else:
        ids_arr = np.array(list(ids), dtype=np.uint64)
    mods = np.full(matrix.shape[0], modality.value, dtype=np.uint8)
    return MemoryStore(matrix.shape[1], ids_arr, mods, label_ids, matrix, catalog)
