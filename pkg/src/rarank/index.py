"""Exact and approximate nearest-neighbor search over a MemoryStore.

``brute_force_knn`` is the exact scan used as oracle and as last-resort
fallback. ``HnswIndex`` is the sklearn-style approximate index: ``fit`` builds
the graph (optionally behind a seeded random projection), ``search`` collects
candidates in graph space and then re-scores them with full-dimension cosine,
so reported similarities are always exact even when the candidate set is not.

Index persistence layout (little-endian):

    magic      4 bytes  b"RARI"
    version    u16      currently 1
    params     m u32, ef_construction u32, ef_search u32, seed u64, dim u32
    projection flag u8; when 1: out_dim u32, seed u64,
               out_dim x dim f32 row-major matrix
    entry      u64 record id
    layers     count u8, then per layer: node count u64 and per node
               (id u64, degree u16, neighbor ids u64...), ascending id

The file stores the graph only; loading requires the originating store, and
reduced-space vectors are recomputed from the stored projection matrix.
"""
from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import (
    BadMagic,
    DimensionMismatch,
    EmptyStore,
    InvariantViolation,
    UnsupportedVersion,
)
from .hnsw import HnswGraph, HnswParams, build_graph, search_graph
from .projection import RandomProjection
from .store import MemoryStore, Modality, _Cursor
from .validation import as_vector

INDEX_MAGIC = b"RARI"
INDEX_VERSION = 1

# Stores at or below this width are indexed without reduction; shrinking
# already-small vectors costs recall for no speed win.
REDUCE_MIN_DIM = 64


@dataclass(frozen=True)
class NeighborList:
    """Top-k hits as (record id, exact cosine), best first.

    Sorted by similarity descending with ties broken by ascending id;
    ``exact`` is True when produced by the brute-force scan.
    """

    entries: tuple[tuple[int, float], ...]
    k: int
    exact: bool

    def __post_init__(self):
        if len(self.entries) > self.k:
            raise InvariantViolation(f"{len(self.entries)} entries for k={self.k}")
        keys = [(-sim, rid) for rid, sim in self.entries]
        if keys != sorted(keys):
            raise InvariantViolation("entries are not in (similarity desc, id asc) order")

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(rid for rid, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def _top_entries(ids: np.ndarray, sims: np.ndarray, k: int) -> tuple[tuple[int, float], ...]:
    order = np.lexsort((ids, -sims))[:k]
    return tuple((int(ids[i]), float(sims[i])) for i in order)


def brute_force_knn(
    store: MemoryStore, query, k: int, modality: Modality | None = None
) -> NeighborList:
    """Exact top-k by cosine over every record passing the modality filter."""
    if k < 1:
        raise InvariantViolation(f"k must be >= 1, got {k}")
    q = as_vector(query, store.dimension)
    if len(store) == 0:
        raise EmptyStore("store has no records")
    sims = store.vectors @ q
    ids = store.ids
    if modality is not None:
        mask = store.modalities == modality.value
        if not mask.any():
            raise EmptyStore(f"store has no {modality} records")
        sims = sims[mask]
        ids = ids[mask]
    return NeighborList(entries=_top_entries(ids, sims, k), k=k, exact=True)


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-12)
    return (matrix.astype(np.float64) / norms).astype(np.float32)


class HnswIndex(BaseEstimator):
    """Approximate index with graph search in (optionally reduced) space.

    Parameters mirror :class:`~rarank.hnsw.HnswParams` plus the reduction
    policy: ``reduce="auto"`` projects to ``out_dim`` (default ceil(d/9))
    whenever the store dimension exceeds 64, ``True`` always projects,
    ``False`` never does.
    """

    def __init__(
        self,
        m: int = 16,
        ef_construction: int = 200,
        ef_search: int = 256,
        seed: int = 0,
        reduce: bool | str = "auto",
        out_dim: int | None = None,
    ):
        self.m = m
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self.seed = seed
        self.reduce = reduce
        self.out_dim = out_dim

    @property
    def params(self) -> HnswParams:
        return HnswParams(
            m=self.m, ef_construction=self.ef_construction, ef_search=self.ef_search, seed=self.seed
        )

    def _should_reduce(self, dim: int) -> bool:
        if self.reduce == "auto":
            return dim > REDUCE_MIN_DIM
        return bool(self.reduce)

    def fit(self, store: MemoryStore, projection: RandomProjection | None = None) -> "HnswIndex":
        """Build the graph over ``store``; pass a fitted projection to override policy."""
        if len(store) == 0:
            raise EmptyStore("cannot index an empty store")
        params = self.params  # validates hyperparameters
        if projection is not None:
            if projection.in_dim_ != store.dimension:
                raise DimensionMismatch(
                    f"projection expects dimension {projection.in_dim_}, store has {store.dimension}"
                )
            self.projection_ = projection
        elif self._should_reduce(store.dimension):
            self.projection_ = RandomProjection(out_dim=self.out_dim, seed=self.seed).fit(
                store.vectors
            )
        else:
            self.projection_ = None
        if self.projection_ is not None:
            space = _unit_rows(self.projection_.transform(store.vectors))
        else:
            space = store.vectors
        self.store_ = store
        self.space_ = space
        self.graph_ = build_graph(space, store.ids, params)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "graph_"):
            raise NotFittedError("HnswIndex is not fitted")

    def search(self, query, k: int, ef: int | None = None) -> NeighborList:
        """Approximate top-k: collect max(ef, k) candidates, re-score exactly."""
        self._check_fitted()
        if k < 1:
            raise InvariantViolation(f"k must be >= 1, got {k}")
        q = as_vector(query, self.store_.dimension)
        beam = max(self.ef_search if ef is None else int(ef), k)
        if self.projection_ is not None:
            gq = self.projection_.transform_vector(q)
            norm = max(float(np.linalg.norm(gq.astype(np.float64))), 1e-12)
            gq = (gq.astype(np.float64) / norm).astype(np.float32)
        else:
            gq = q
        hits = search_graph(self.graph_, self.space_, gq, beam)
        pos = [p for _, _, p in hits]
        sims = self.store_.vectors[pos] @ q
        ids = self.store_.ids[pos]
        return NeighborList(entries=_top_entries(ids, sims, k), k=k, exact=False)

    # -- structural checks used by the test suite ---------------------------

    def degree_bounds_ok(self) -> bool:
        self._check_fitted()
        graph = self.graph_
        for level in range(graph.max_level + 1):
            cap = 2 * self.m if level == 0 else self.m
            members = graph.layer_members(level)
            if np.any(graph.degrees[level, members] > cap):
                return False
        return True

    def layer0_reachable_fraction(self) -> float:
        """Fraction of nodes reachable from the entry point on layer 0."""
        self._check_fitted()
        graph = self.graph_
        n = graph.node_count()
        seen = np.zeros(n, dtype=bool)
        queue: deque[int] = deque([graph.entry])
        seen[graph.entry] = True
        while queue:
            pos = queue.popleft()
            deg = graph.degrees[0, pos]
            for nb in graph.adjacency[0, pos, :deg]:
                if not seen[nb]:
                    seen[nb] = True
                    queue.append(nb)
        return float(seen.sum()) / n

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> int:
        self._check_fitted()
        graph = self.graph_
        store = self.store_
        buf = bytearray()
        buf += INDEX_MAGIC
        buf += struct.pack("<H", INDEX_VERSION)
        buf += struct.pack(
            "<IIIQI", self.m, self.ef_construction, self.ef_search, int(self.seed), store.dimension
        )
        if self.projection_ is None:
            buf += struct.pack("<B", 0)
        else:
            proj = self.projection_
            buf += struct.pack("<BIQ", 1, proj.out_dim_, int(proj.seed))
            buf += proj.matrix_.astype("<f4", copy=False).tobytes()
        buf += struct.pack("<Q", int(graph.ids[graph.entry]))
        buf += struct.pack("<B", graph.max_level + 1)
        id_order = sorted(range(graph.node_count()), key=lambda p: int(graph.ids[p]))
        for level in range(graph.max_level + 1):
            members = [p for p in id_order if graph.levels[p] >= level]
            buf += struct.pack("<Q", len(members))
            for p in members:
                links = graph.neighbors(level, p)
                buf += struct.pack("<QH", int(graph.ids[p]), len(links))
                for nb in links:
                    buf += struct.pack("<Q", int(graph.ids[nb]))
        data = bytes(buf)
        with open(path, "wb") as fh:
            fh.write(data)
        return len(data)

    @classmethod
    def load(cls, path, store: MemoryStore) -> "HnswIndex":
        with open(path, "rb") as fh:
            data = fh.read()
        cur = _Cursor(data)
        if cur.take(4) != INDEX_MAGIC:
            raise BadMagic(f"{path}: not an index file")
        (version,) = cur.unpack("<H")
        if version != INDEX_VERSION:
            raise UnsupportedVersion(f"{path}: version {version} (reader supports {INDEX_VERSION})")
        m, efc, efs, seed, dim = cur.unpack("<IIIQI")
        if dim != store.dimension:
            raise DimensionMismatch(f"index built for d={dim}, store has d={store.dimension}")
        (have_proj,) = cur.unpack("<B")
        projection = None
        if have_proj:
            out_dim, proj_seed = cur.unpack("<IQ")
            raw = cur.take(4 * out_dim * dim)
            matrix = np.frombuffer(raw, dtype="<f4").reshape(out_dim, dim).copy()
            projection = RandomProjection.from_matrix(matrix, seed=int(proj_seed))
        (entry_id,) = cur.unpack("<Q")
        (layer_count,) = cur.unpack("<B")
        pos_of = {int(rid): p for p, rid in enumerate(store.ids)}
        if int(entry_id) not in pos_of:
            raise InvariantViolation(f"{path}: entry point {entry_id} not in the store")
        n = len(store)
        levels = np.full(n, -1, dtype=np.int64)
        adjacency = np.zeros((max(layer_count, 1), n, 2 * m + 1), dtype=np.int32)
        degrees = np.zeros((max(layer_count, 1), n), dtype=np.int32)
        for level in range(layer_count):
            (node_count,) = cur.unpack("<Q")
            cap = 2 * m if level == 0 else m
            for _ in range(node_count):
                rid, degree = cur.unpack("<QH")
                if rid not in pos_of:
                    raise InvariantViolation(f"{path}: node {rid} not present in the store")
                if degree > cap:
                    raise InvariantViolation(f"{path}: node {rid} degree {degree} exceeds cap {cap}")
                p = pos_of[rid]
                levels[p] = level
                for t in range(degree):
                    (nb,) = cur.unpack("<Q")
                    if nb not in pos_of:
                        raise InvariantViolation(f"{path}: neighbor {nb} not in the store")
                    adjacency[level, p, t] = pos_of[nb]
                degrees[level, p] = degree
        if cur.pos != len(data):
            raise InvariantViolation(f"{path}: {len(data) - cur.pos} trailing bytes")
        if np.any(levels < 0):
            raise InvariantViolation(f"{path}: layer 0 does not cover every record")
        idx = cls(m=m, ef_construction=efc, ef_search=efs, seed=int(seed))
        idx.projection_ = projection
        idx.store_ = store
        idx.space_ = (
            _unit_rows(projection.transform(store.vectors))
            if projection is not None
            else store.vectors
        )
        idx.graph_ = HnswGraph(
            params=idx.params,
            ids=np.ascontiguousarray(store.ids, dtype=np.int64),
            levels=levels,
            adjacency=adjacency,
            degrees=degrees,
            entry=pos_of[int(entry_id)],
        )
        return idx
