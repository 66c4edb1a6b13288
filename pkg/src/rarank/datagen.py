"""Ranking-format fine-tuning dataset built from two disjoint stores.

For every query in the second store, the generator pulls an exact top-pool
neighborhood from the first store, samples candidate subsets, keeps the ones
that contain the query's own category, and emits prompts whose shuffled
candidate list must be re-sorted back into similarity order. No training
happens here; the output is a line-delimited file ready for instruction
tuning harnesses.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import CatalogMismatch, DimensionMismatch, InvariantViolation, PoolTooSmall
from .index import brute_force_knn
from .rank import PromptStyle, build_ranking_prompt
from .store import MemoryStore


@dataclass(frozen=True)
class DatagenParams:
    """Generation knobs: 20-neighbor pools, 16 subsets of 5 by default."""

    pool: int = 20
    sets_per_query: int = 16
    k: int = 5
    seed: int = 0
    target_order: str = "similarity"  # or "gt_first" (alternative reading, off by default)

    def __post_init__(self):
        if self.k < 1 or self.k > self.pool:
            raise InvariantViolation(f"k must be in [1, pool], got k={self.k} pool={self.pool}")
        if self.sets_per_query < 1:
            raise InvariantViolation("sets_per_query must be >= 1")
        if self.target_order not in ("similarity", "gt_first"):
            raise InvariantViolation(f"unknown target_order {self.target_order!r}")


@dataclass(frozen=True)
class FinetuneEntry:
    query_id: int
    image_ref: str
    prompt: str
    shuffled_candidates: tuple[str, ...]
    target_ordering: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "query_id": self.query_id,
                "image_ref": self.image_ref,
                "prompt": self.prompt,
                "shuffled_candidates": list(self.shuffled_candidates),
                "target_ordering": list(self.target_ordering),
            },
            ensure_ascii=False,
            sort_keys=True,
        )


def _query_rng(seed: int, query_id: int) -> np.random.Generator:
    # Seeded per query so output does not depend on scheduling or query order.
    return np.random.default_rng(np.random.PCG64(np.random.SeedSequence([seed, query_id])))


def _sample_subsets(pool: int, k: int, count: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Distinct k-subsets of range(pool), uniform without replacement."""
    total = math.comb(pool, k)
    if total <= count:
        return list(itertools.combinations(range(pool), k))
    if total <= 4 * count:
        universe = list(itertools.combinations(range(pool), k))
        picks = rng.choice(total, size=count, replace=False)
        return [universe[int(i)] for i in picks]
    chosen: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    while len(chosen) < count:
        subset = tuple(sorted(int(x) for x in rng.choice(pool, size=k, replace=False)))
        if subset not in seen:
            seen.add(subset)
            chosen.append(subset)
    return chosen


def generate_ranking_dataset(
    store_a: MemoryStore,
    store_b: MemoryStore,
    params: DatagenParams,
    image_ref_template: str = "{id}",
) -> list[FinetuneEntry]:
    """Generate entries for every query in ``store_b`` against ``store_a``.

    Retained subsets contain at least one neighbor of the query's category;
    the target ordering is the subset's distinct categories in descending
    neighbor similarity and the prompt shows a seeded shuffle of it. Entries
    are deduplicated per query on the subset's category multiset. Output is
    deterministic for a fixed seed, byte for byte.
    """
    if store_a.catalog != store_b.catalog:
        raise CatalogMismatch("stores must share one label catalog")
    if store_a.dimension != store_b.dimension:
        raise DimensionMismatch(
            f"stores disagree on dimension ({store_a.dimension} vs {store_b.dimension})"
        )
    if set(int(i) for i in store_a.ids) & set(int(i) for i in store_b.ids):
        raise InvariantViolation("store record ids must be disjoint")
    if len(store_a) < params.pool:
        raise PoolTooSmall(f"pool={params.pool} but the neighbor store has {len(store_a)} records")

    entries: list[FinetuneEntry] = []
    rows_by_id = sorted(range(len(store_b)), key=lambda r: int(store_b.ids[r]))
    for row in rows_by_id:
        query_id = int(store_b.ids[row])
        gt_name = store_b.label_of_row(row)
        neighbors = brute_force_knn(store_a, store_b.vectors[row], k=params.pool)
        labels = [
            store_a.label_of_row(store_a.position_of(rid)) for rid, _ in neighbors.entries
        ]
        rng = _query_rng(params.seed, query_id)
        subsets = _sample_subsets(params.pool, params.k, params.sets_per_query, rng)
        seen_multisets: set[tuple[str, ...]] = set()
        for subset in subsets:
            subset_labels = [labels[i] for i in subset]  # ascending rank = similarity order
            if gt_name not in subset_labels:
                continue
            multiset = tuple(sorted(subset_labels))
            if multiset in seen_multisets:
                continue
            seen_multisets.add(multiset)
            target: list[str] = []
            for name in subset_labels:
                if name not in target:
                    target.append(name)
            if params.target_order == "gt_first":
                target.remove(gt_name)
                target.insert(0, gt_name)
            shuffled = list(target)
            rng.shuffle(shuffled)
            prompt = build_ranking_prompt(shuffled, PromptStyle.PLAIN)
            entries.append(
                FinetuneEntry(
                    query_id=query_id,
                    image_ref=image_ref_template.format(id=query_id),
                    prompt=prompt.text,
                    shuffled_candidates=tuple(shuffled),
                    target_ordering=tuple(target),
                )
            )
    return entries


def write_entries_jsonl(entries, path) -> int:
    """Write entries one JSON object per line; returns bytes written."""
    payload = "".join(entry.to_json() + "\n" for entry in entries)
    data = payload.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)
