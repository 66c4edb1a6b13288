"""Candidate-category retrieval in image-to-image and image-to-text modes."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBank, InvariantViolation
from .index import HnswIndex, brute_force_knn
from .store import LabelCatalog, MemoryStore, Modality
from .validation import as_matrix, as_vector

DEFAULT_PROMPT_TEMPLATE = "a photo of a {class}"

# Retry ladder for i2i: double the beam up to this many times before the
# exact fallback scan, so the worst case stays bounded.
MAX_EF_RETRIES = 4


class RetrievalMode(enum.Enum):
    IMAGE_TO_IMAGE = "i2i"
    IMAGE_TO_TEXT = "i2t"


@dataclass(frozen=True)
class CandidateList:
    """Ordered distinct categories with their best similarity, best first.

    ``insufficient`` flags lists that could not reach k distinct categories
    because the memory holds fewer labels than requested.
    """

    candidates: tuple[tuple[str, float], ...]
    mode: RetrievalMode
    k: int
    insufficient: bool = False

    def __post_init__(self):
        names = [name for name, _ in self.candidates]
        if len(set(names)) != len(names):
            raise InvariantViolation("candidate categories must be distinct")
        if len(self.candidates) > self.k:
            raise InvariantViolation(f"{len(self.candidates)} candidates for k={self.k}")
        sims = [sim for _, sim in self.candidates]
        if any(sims[i] < sims[i + 1] for i in range(len(sims) - 1)):
            raise InvariantViolation("candidates must be sorted by similarity descending")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.candidates)

    def similarity_of(self, name: str) -> float:
        for cand, sim in self.candidates:
            if cand == name:
                return sim
        raise KeyError(name)

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass
class TextBank:
    """One unit text embedding per catalog entry, for image-to-text retrieval."""

    catalog: LabelCatalog
    vectors: np.ndarray
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE

    def __post_init__(self):
        self.vectors = as_matrix(self.vectors)
        if self.vectors.shape[0] != len(self.catalog):
            raise InvariantViolation(
                f"bank has {self.vectors.shape[0]} vectors for {len(self.catalog)} names"
            )
        norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
        if len(self.catalog) and np.any(np.abs(norms - 1.0) > 1e-6):
            raise InvariantViolation("bank vectors must be unit-norm")

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def from_store(cls, store: MemoryStore, prompt_template: str = DEFAULT_PROMPT_TEMPLATE) -> "TextBank":
        """Collect the store's text records, exactly one per catalog entry."""
        rows = np.flatnonzero(store.modalities == Modality.TEXT.value)
        if rows.size == 0:
            raise EmptyBank("store holds no text records")
        by_label: dict[int, int] = {}
        for row in rows:
            label = int(store.label_ids[row])
            if label in by_label:
                raise InvariantViolation(
                    f"label {store.catalog[label]!r} has more than one text record"
                )
            by_label[label] = int(row)
        missing = [store.catalog[i] for i in range(len(store.catalog)) if i not in by_label]
        if missing:
            raise InvariantViolation(f"labels without a text record: {missing[:5]}")
        order = [by_label[i] for i in range(len(store.catalog))]
        return cls(store.catalog, store.vectors[order].copy(), prompt_template)


def _distinct_by_label(store: MemoryStore, neighbor_entries) -> list[tuple[str, float]]:
    out: list[tuple[str, float]] = []
    seen: set[str] = set()
    for rid, sim in neighbor_entries:
        name = store.label_of_row(store.position_of(rid))
        if name not in seen:
            seen.add(name)
            out.append((name, sim))
    return out


def retrieve_categories_i2i(index: HnswIndex, query, k: int) -> CandidateList:
    """Top-k distinct categories from nearest stored images.

    Walks neighbors best-first keeping each category's first (= best)
    similarity. When the beam yields fewer than k distinct labels, ef doubles
    up to four times, then an exact scan decides; fewer than k labels in the
    whole store returns everything with the ``insufficient`` flag.
    """
    if k < 1:
        raise InvariantViolation(f"k must be >= 1, got {k}")
    store = index.store_
    ef = max(index.ef_search, k)
    for _ in range(MAX_EF_RETRIES + 1):
        hits = index.search(query, k=ef, ef=ef)
        distinct = _distinct_by_label(store, hits.entries)
        if len(distinct) >= k:
            return CandidateList(tuple(distinct[:k]), RetrievalMode.IMAGE_TO_IMAGE, k)
        if ef >= len(store):
            break
        ef *= 2
    exact = brute_force_knn(store, query, k=len(store))
    distinct = _distinct_by_label(store, exact.entries)
    if len(distinct) >= k:
        return CandidateList(tuple(distinct[:k]), RetrievalMode.IMAGE_TO_IMAGE, k)
    return CandidateList(tuple(distinct), RetrievalMode.IMAGE_TO_IMAGE, k, insufficient=True)


def retrieve_categories_i2t(bank: TextBank, query, k: int) -> CandidateList:
    """Exact top-k categories by cosine against the text bank.

    With k=1 this is the plain contrastive zero-shot classifier: the argmax
    of cosine(query, class text embedding) over the catalog.
    """
    if k < 1:
        raise InvariantViolation(f"k must be >= 1, got {k}")
    if len(bank.catalog) == 0:
        raise EmptyBank("text bank is empty")
    q = as_vector(query, bank.dimension)
    sims = bank.vectors @ q
    order = np.lexsort((np.arange(len(sims)), -sims))
    take = order[: min(k, len(sims))]
    cands = tuple((bank.catalog[int(i)], float(sims[i])) for i in take)
    insufficient = len(cands) < k
    return CandidateList(cands, RetrievalMode.IMAGE_TO_TEXT, k, insufficient=insufficient)
